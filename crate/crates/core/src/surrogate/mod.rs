//! Gaussian-process surrogate over (weights, fidelity).

mod gp;
mod hyperfit;
mod kernel;

pub use gp::{gp_condition_append, gp_fit, gp_predict, GpModel, Prediction, JITTER_LADDER};
pub use hyperfit::{fit_hyperparameters, fit_model, HyperBounds, HyperFit, HyperFitOptions};
pub use kernel::{kernel_fidelity, kernel_joint, kernel_matern52, ExpDecay, GpHyperparams, GpInput, OutputScaling};
