//! Checkpoint rules that end an episode early: two surrogate-based tests
//! against the incumbent, and a state-convergence test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::acquisition::Incumbent;
use crate::error::{Error, Result};
use crate::plant::StateVector;
use crate::space::{Fidelity, ParamVector};
use crate::surrogate::GpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopRule {
    Ucb,
    Ei,
    Convergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Continue,
    StopUnpromising,
    StopConverged,
}

/// The surrogate rule in force for a run; UCB and EI are never combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GpRule {
    #[default]
    None,
    Ucb,
    Ei,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingConfig {
    pub beta: f64,
    /// EI threshold as a fraction of `|G*|`.
    pub tau_ei_relative: f64,
    pub epsilon: f64,
    /// Characteristic scale of each state component for the convergence norm.
    pub state_scale: [f64; 4],
    /// Treat the partial cost of an episode stopped by the convergence rule
    /// as its final value when updating the incumbent. The remaining cost of
    /// a converged state is taken to be zero.
    pub converged_counts_as_final: bool,
    /// Set from the campaign method, not from config files.
    #[serde(skip)]
    pub gp_rule: GpRule,
    #[serde(skip)]
    pub convergence: bool,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            beta: 2.0,
            tau_ei_relative: 0.01,
            epsilon: 0.05,
            state_scale: [1.0; 4],
            converged_counts_as_final: true,
            gp_rule: GpRule::None,
            convergence: false,
        }
    }
}

impl StoppingConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("tau_ei_relative", self.tau_ei_relative), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("stopping.{name} must be positive, got {v}")));
            }
        }
        if self.state_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("stopping.state_scale entries must be positive".into()));
        }
        Ok(())
    }

    /// Absolute EI threshold for the current incumbent.
    pub fn tau_ei(&self, g_star: f64) -> f64 {
        self.tau_ei_relative * g_star.abs()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopDiagnostics {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub criterion: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub verdict: Verdict,
    pub rule: Option<StopRule>,
    pub diagnostics: StopDiagnostics,
}

impl StopDecision {
    pub fn proceed() -> Self {
        StopDecision {
            verdict: Verdict::Continue,
            rule: None,
            diagnostics: StopDiagnostics::default(),
        }
    }

    pub fn is_stop(&self) -> bool {
        self.verdict != Verdict::Continue
    }

    fn decide(stop: bool, verdict: Verdict, rule: StopRule, diagnostics: StopDiagnostics) -> Self {
        if stop {
            StopDecision { verdict, rule: Some(rule), diagnostics }
        } else {
            StopDecision { verdict: Verdict::Continue, rule: None, diagnostics }
        }
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Closed-form `E[max(g − G*, 0)]` for `g ~ N(mean, sd²)`; a point mass when
/// `sd = 0`.
pub fn expected_improvement(mean: f64, sd: f64, g_star: f64) -> f64 {
    if sd <= 0.0 {
        return (mean - g_star).max(0.0);
    }
    let z = (mean - g_star) / sd;
    let n = standard_normal();
    ((mean - g_star) * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// UCB test from a target-fidelity prediction.
pub fn ucb_rule(mean: f64, sd: f64, g_star: f64, beta: f64) -> StopDecision {
    let ucb = mean + beta * sd;
    let diag = StopDiagnostics { mean: Some(mean), sd: Some(sd), criterion: Some(ucb) };
    StopDecision::decide(ucb < g_star, Verdict::StopUnpromising, StopRule::Ucb, diag)
}

/// EI test from a target-fidelity prediction.
pub fn ei_rule(mean: f64, sd: f64, g_star: f64, tau: f64) -> StopDecision {
    let ei = expected_improvement(mean, sd, g_star);
    let diag = StopDiagnostics { mean: Some(mean), sd: Some(sd), criterion: Some(ei) };
    StopDecision::decide(ei < tau, Verdict::StopUnpromising, StopRule::Ei, diag)
}

pub fn ucb_stop(model: &GpModel, theta: &ParamVector, inc: &Incumbent, cfg: &StoppingConfig) -> StopDecision {
    let p = model.predict(theta, Fidelity::TARGET);
    ucb_rule(p.mean, p.sd(), inc.g_star, cfg.beta)
}

pub fn ei_stop(model: &GpModel, theta: &ParamVector, inc: &Incumbent, cfg: &StoppingConfig) -> StopDecision {
    let p = model.predict(theta, Fidelity::TARGET);
    ei_rule(p.mean, p.sd(), inc.g_star, cfg.tau_ei(inc.g_star))
}

/// Scaled Euclidean distance between `state` and `target`.
pub fn state_error_norm(state: &StateVector, target: &StateVector, scale: &[f64; 4]) -> f64 {
    (0..4).map(|i| ((state[i] - target[i]) / scale[i]).powi(2)).sum::<f64>().sqrt()
}

pub fn convergence_stop(state: &StateVector, target: &StateVector, cfg: &StoppingConfig) -> StopDecision {
    let err = state_error_norm(state, target, &cfg.state_scale);
    let diag = StopDiagnostics { criterion: Some(err), ..StopDiagnostics::default() };
    StopDecision::decide(err < cfg.epsilon, Verdict::StopConverged, StopRule::Convergence, diag)
}

/// Convergence first, then the configured surrogate rule. Surrogate rules are
/// skipped while there is no incumbent.
pub fn evaluate_all(
    model: &GpModel,
    theta: &ParamVector,
    inc: Option<&Incumbent>,
    state: &StateVector,
    target: &StateVector,
    cfg: &StoppingConfig,
) -> StopDecision {
    if cfg.convergence {
        let d = convergence_stop(state, target, cfg);
        if d.is_stop() {
            return d;
        }
    }
    match (cfg.gp_rule, inc) {
        (GpRule::Ucb, Some(inc)) => ucb_stop(model, theta, inc, cfg),
        (GpRule::Ei, Some(inc)) => ei_stop(model, theta, inc, cfg),
        _ => StopDecision::proceed(),
    }
}
