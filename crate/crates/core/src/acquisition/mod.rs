//! Choosing the next weights: trace-aware knowledge gradient for the
//! multi-fidelity methods, expected improvement for the single-fidelity
//! baseline, and incumbent bookkeeping.

mod ei;
mod kg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Observation, ParamVector};

pub use ei::{expected_improvement_at, select_next_ei};
pub use kg::{expected_loss, select_next, takg, KgContext, McEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub n_fantasies: usize,
    pub n_inner_candidates: usize,
    pub n_restarts: usize,
    /// How many of the best restarts get a local polish.
    pub n_polish: usize,
    /// Evaluation budget of one local polish.
    pub polish_evals: usize,
    /// Smallest coordinate step of the polish, in unit-cube coordinates.
    pub polish_min_step: f64,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            n_fantasies: 64,
            n_inner_candidates: 256,
            n_restarts: 16,
            n_polish: 3,
            polish_evals: 40,
            polish_min_step: 1e-3,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fantasies == 0 || self.n_inner_candidates == 0 || self.n_restarts == 0 {
            return Err(Error::Config(
                "acquisition.n_fantasies, n_inner_candidates and n_restarts must be at least 1".into(),
            ));
        }
        if !(self.polish_min_step > 0.0) {
            return Err(Error::Config("acquisition.polish_min_step must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Best target-fidelity value seen so far and where it was observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub g_star: f64,
    pub theta_star: ParamVector,
}

/// Fold a finished episode into the incumbent. `None` for `observation`
/// means the episode produced no target-fidelity value and changes nothing.
pub fn update_incumbent(inc: Option<Incumbent>, observation: Option<&Observation>) -> Result<Option<Incumbent>> {
    let Some(obs) = observation else {
        return Ok(inc);
    };
    if !obs.s.is_target() {
        return Err(Error::InvalidArgument(format!(
            "incumbent updates need a target-fidelity observation, got s = {}",
            obs.s.value()
        )));
    }
    Ok(match inc {
        Some(current) if current.g_star >= obs.g => Some(current),
        _ => Some(Incumbent {
            g_star: obs.g,
            theta_star: obs.theta,
        }),
    })
}
