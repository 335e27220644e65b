use serde::{Deserialize, Serialize};

use super::dynamics::{closed_loop_stage_cost, step, CartPoleParams, StateVector};
use crate::controller::{policy, ControllerMemory, MpcConfig};
use crate::error::{Error, Result};
use crate::space::{Fidelity, Observation, ParamVector};
use crate::stopping::StopDecision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Episode length `M` in closed-loop steps.
    pub steps: usize,
    /// Number of evenly spaced checkpoints `L`.
    pub checkpoints: usize,
    pub x0: StateVector,
    pub target: StateVector,
    /// Diagonal of the closed-loop cost weight.
    pub q_cl: [f64; 4],
    /// Any state component beyond this magnitude aborts the episode.
    pub blowup_limit: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            steps: 80,
            checkpoints: 10,
            x0: [1.0, 0.3, 0.0, 0.0],
            target: [0.0; 4],
            q_cl: [1.0, 1.0, 0.1, 0.1],
            blowup_limit: 1e3,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.checkpoints == 0 || !self.steps.is_multiple_of(self.checkpoints) {
            return Err(Error::Config(format!(
                "episode.steps ({}) must be a positive multiple of episode.checkpoints ({})",
                self.steps, self.checkpoints
            )));
        }
        if self.q_cl.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
            return Err(Error::Config("episode.q_cl entries must be non-negative".into()));
        }
        if self.x0.iter().chain(&self.target).any(|v| !v.is_finite()) {
            return Err(Error::Config("episode.x0 and episode.target must be finite".into()));
        }
        if !(self.blowup_limit > 0.0) {
            return Err(Error::Config("episode.blowup_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn segment(&self) -> usize {
        self.steps / self.checkpoints
    }

    /// Checkpoint steps `k_l = l·M/L`.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        (1..=self.checkpoints).map(|l| l * self.segment()).collect()
    }

    /// Fidelity at checkpoint step `k`, as `k/M`.
    pub fn fidelity_at(&self, k: usize) -> Result<Fidelity> {
        Fidelity::level(k, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub theta: ParamVector,
    pub states: Vec<StateVector>,
    pub inputs: Vec<f64>,
    pub observations: Vec<Observation>,
    pub stop: StopDecision,
    pub steps_used: usize,
    /// Set when the simulation blew up; observations before it are kept.
    pub failure: Option<String>,
}

impl EpisodeTrace {
    pub fn completed(&self) -> bool {
        self.failure.is_none() && !self.stop.is_stop()
    }

    /// The observation at the target fidelity, present only if the episode ran
    /// to the end.
    pub fn target_observation(&self) -> Option<Observation> {
        self.observations.last().copied().filter(|o| o.s.is_target())
    }
}

/// Receives every checkpoint observation except the last one (the episode
/// ends there anyway) and decides whether to continue.
pub trait CheckpointHook {
    fn on_checkpoint(&mut self, theta: &ParamVector, state: &StateVector, observation: &Observation) -> Result<StopDecision>;
}

/// A hook that never stops.
pub struct RunToEnd;

impl CheckpointHook for RunToEnd {
    fn on_checkpoint(&mut self, _: &ParamVector, _: &StateVector, _: &Observation) -> Result<StopDecision> {
        Ok(StopDecision::proceed())
    }
}

/// Run one closed-loop episode under the MPC policy with weights `theta`.
///
/// The partial performance at checkpoint `k_l` is `−Σ_{k=0}^{k_l} l_cl(x_k)`,
/// a prefix sum over the states visited so far.
pub fn run_episode<H: CheckpointHook + ?Sized>(
    theta: &ParamVector,
    cfg: &EpisodeConfig,
    mpc: &MpcConfig,
    plant: &CartPoleParams,
    hook: &mut H,
) -> Result<EpisodeTrace> {
    cfg.validate()?;
    let segment = cfg.segment();
    let mut trace = EpisodeTrace {
        theta: *theta,
        states: vec![cfg.x0],
        inputs: Vec::with_capacity(cfg.steps),
        observations: Vec::with_capacity(cfg.checkpoints),
        stop: StopDecision::proceed(),
        steps_used: 0,
        failure: None,
    };
    let mut memory = ControllerMemory::default();
    let mut x = cfg.x0;
    let mut cost_sum = closed_loop_stage_cost(&x, 0.0, &cfg.q_cl);
    for k in 0..cfg.steps {
        let (u, next_memory) = policy(&x, theta, mpc, &memory)?;
        memory = next_memory;
        let next = step(&x, u, plant);
        trace.inputs.push(u);
        trace.steps_used += 1;
        if next.iter().any(|v| !v.is_finite() || v.abs() > cfg.blowup_limit) {
            log::warn!("episode with theta {:?} blew up at step {}", theta.0, k + 1);
            trace.failure = Some(Error::SimulationBlowup { step: k + 1 }.to_string());
            return Ok(trace);
        }
        x = next;
        trace.states.push(x);
        cost_sum += closed_loop_stage_cost(&x, u, &cfg.q_cl);

        let reached = k + 1;
        if reached % segment == 0 {
            let obs = Observation::new(*theta, cfg.fidelity_at(reached)?, -cost_sum);
            trace.observations.push(obs);
            if reached < cfg.steps {
                let decision = hook.on_checkpoint(theta, &x, &obs)?;
                if decision.is_stop() {
                    trace.stop = decision;
                    return Ok(trace);
                }
            }
        }
    }
    Ok(trace)
}
