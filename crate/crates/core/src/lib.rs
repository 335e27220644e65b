//! Closed-loop MPC weight tuning with time-aligned multi-fidelity Bayesian
//! optimization and early stopping of unpromising episodes.

pub mod acquisition;
pub mod controller;
pub mod error;
pub mod harness;
pub mod optim;
pub mod plant;
pub mod space;
pub mod stopping;
pub mod surrogate;

pub use error::{Error, Result};
pub use space::{Fidelity, Observation, ParamBounds, ParamVector, N_PARAMS};
