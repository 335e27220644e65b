use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CampaignConfig, Method};
use crate::acquisition::{select_next, select_next_ei, update_incumbent, Incumbent};
use crate::error::{Error, Result};
use crate::plant::{run_episode, CheckpointHook, EpisodeTrace, StateVector};
use crate::space::{Fidelity, Observation, ParamBounds, ParamVector};
use crate::stopping::{evaluate_all, StopDecision, StoppingConfig, Verdict};
use crate::surrogate::{fit_hyperparameters, GpHyperparams, GpModel, OutputScaling};

/// One checkpoint value as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub s: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InitialDesign,
    Acquisition,
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub method: Method,
    pub seed: u64,
    pub iteration: usize,
    pub phase: Phase,
    pub theta: ParamVector,
    pub steps_used: usize,
    pub stop: StopDecision,
    pub failure: Option<String>,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Incumbent value after this episode; `None` until a target-fidelity
    /// value exists.
    pub incumbent: Option<f64>,
    pub incumbent_theta: Option<ParamVector>,
    pub cumulative_steps: usize,
    /// Surrogate hyperparameters after the refit that follows this episode.
    pub hyperparams: Option<GpHyperparams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub method: Method,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    /// Wall-clock seconds per episode (selection, episode and refit). Kept out
    /// of the JSONL so logs stay byte-reproducible.
    pub timings: Vec<f64>,
}

impl RunLog {
    pub fn total_steps(&self) -> usize {
        self.episodes.last().map_or(0, |e| e.cumulative_steps)
    }

    pub fn final_incumbent(&self) -> Option<f64> {
        self.episodes.last().and_then(|e| e.incumbent)
    }

    pub fn observation_count(&self) -> usize {
        self.episodes.iter().map(|e| e.checkpoints.len()).sum()
    }
}

/// Deterministic per-purpose seed derivation (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DESIGN: u64 = 1;
const ACQUISITION: u64 = 2;
const HYPERFIT: u64 = 3;

/// The initial Latin-hypercube design; depends only on the seed and bounds
/// so all methods start from the same points.
pub fn initial_design(bounds: &ParamBounds, size: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DESIGN, 0));
    bounds.latin_hypercube(size, &mut rng)
}

/// Checkpoint hook that folds each new partial observation into a private
/// copy of the surrogate before applying the stopping rules.
struct SurrogateStopper<'a> {
    model: Option<GpModel>,
    incumbent: Option<&'a Incumbent>,
    cfg: StoppingConfig,
    target: StateVector,
}

impl CheckpointHook for SurrogateStopper<'_> {
    fn on_checkpoint(&mut self, theta: &ParamVector, state: &StateVector, observation: &Observation) -> Result<StopDecision> {
        let Some(model) = self.model.as_mut() else {
            return Ok(StopDecision::proceed());
        };
        if self.cfg.gp_rule != crate::stopping::GpRule::None && self.incumbent.is_some() {
            *model = model.condition_on(*observation)?;
        }
        Ok(evaluate_all(model, theta, self.incumbent, state, &self.target, &self.cfg))
    }
}

/// The last partial observation of a convergence-stopped episode, moved to
/// the target fidelity. Only used for the incumbent, never as GP data.
fn converged_final_value(trace: &EpisodeTrace, cfg: &StoppingConfig) -> Option<Observation> {
    let converged = trace.failure.is_none() && trace.stop.verdict == Verdict::StopConverged;
    if !(converged && cfg.converged_counts_as_final) {
        return None;
    }
    trace.observations.last().map(|o| Observation::new(o.theta, Fidelity::TARGET, o.g))
}

struct Campaign<'a> {
    cfg: &'a CampaignConfig,
    seed: u64,
    fidelities: Vec<Fidelity>,
    data: Vec<Observation>,
    hyper: GpHyperparams,
    model: Option<GpModel>,
    incumbent: Option<Incumbent>,
    cumulative: usize,
    log: RunLog,
}

impl Campaign<'_> {
    fn refit(&mut self, iteration: usize, phase: Phase) -> Result<()> {
        if self.data.is_empty() {
            return Ok(());
        }
        let values: Vec<f64> = self.data.iter().map(|o| o.g).collect();
        let init = self.hyper.with_output(OutputScaling::from_values(&values));
        let hyper = if self.data.len() >= 2 {
            let fit = fit_hyperparameters(
                &self.cfg.bounds,
                &self.data,
                init,
                &self.cfg.gp.bounds,
                self.cfg.gp.options_for(iteration, phase == Phase::InitialDesign),
                derive_seed(self.seed, HYPERFIT, iteration as u64),
            )?;
            fit.hyper
        } else {
            init
        };
        self.hyper = hyper;
        self.model = Some(GpModel::fit(self.cfg.bounds, &self.data, hyper)?);
        Ok(())
    }

    fn select(&self, iteration: usize) -> Result<ParamVector> {
        let acq = self.cfg.acquisition.with_seed(derive_seed(self.seed, ACQUISITION, iteration as u64));
        let Some(model) = &self.model else {
            let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
            return Ok(self.cfg.bounds.uniform(&mut rng));
        };
        if self.cfg.method.is_multi_fidelity() {
            select_next(model, &self.fidelities, &acq)
        } else {
            match &self.incumbent {
                Some(inc) => select_next_ei(model, inc.g_star, &acq),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
                    Ok(self.cfg.bounds.uniform(&mut rng))
                }
            }
        }
    }

    fn execute(&mut self, iteration: usize, phase: Phase, theta: ParamVector, started: Instant) -> Result<()> {
        let cfg = self.cfg;
        let stopping = match phase {
            Phase::InitialDesign => StoppingConfig { gp_rule: Default::default(), convergence: false, ..cfg.stopping },
            Phase::Acquisition => cfg.effective_stopping(),
        };
        let mut hook = SurrogateStopper {
            model: self.model.clone(),
            incumbent: self.incumbent.as_ref(),
            cfg: stopping,
            target: cfg.episode.target,
        };
        let trace = run_episode(&theta, &cfg.episode, &cfg.effective_mpc(), &cfg.plant, &mut hook)?;
        self.absorb(iteration, phase, &trace, started)
    }

    fn absorb(&mut self, iteration: usize, phase: Phase, trace: &EpisodeTrace, started: Instant) -> Result<()> {
        let target = trace.target_observation();
        if self.cfg.method.is_multi_fidelity() {
            self.data.extend(trace.observations.iter().copied());
        } else if let Some(obs) = target {
            self.data.push(obs);
        }
        let final_value = target.or_else(|| converged_final_value(trace, &self.cfg.stopping));
        self.incumbent = update_incumbent(self.incumbent, final_value.as_ref())?;
        self.cumulative += trace.steps_used;
        self.refit(iteration, phase)?;
        let checkpoints = if self.cfg.method.is_multi_fidelity() {
            trace.observations.iter().map(|o| CheckpointRecord { s: o.s.value(), g: o.g }).collect()
        } else {
            target.iter().map(|o| CheckpointRecord { s: o.s.value(), g: o.g }).collect()
        };
        self.log.episodes.push(EpisodeRecord {
            method: self.cfg.method,
            seed: self.seed,
            iteration,
            phase,
            theta: trace.theta,
            steps_used: trace.steps_used,
            stop: trace.stop,
            failure: trace.failure.clone(),
            checkpoints,
            incumbent: self.incumbent.map(|i| i.g_star),
            incumbent_theta: self.incumbent.map(|i| i.theta_star),
            cumulative_steps: self.cumulative,
            hyperparams: self.model.as_ref().map(|m| *m.hyperparams()),
        });
        self.log.timings.push(started.elapsed().as_secs_f64());
        log::info!(
            "{} seed {} episode {:>3}: steps {:>2} cumulative {:>5} incumbent {:?}",
            self.cfg.method,
            self.seed,
            iteration,
            trace.steps_used,
            self.cumulative,
            self.incumbent.map(|i| i.g_star)
        );
        Ok(())
    }
}

/// Run one tuning campaign for `cfg.method` with the given seed.
///
/// Initial design episodes run to completion; afterwards each episode is
/// chosen by the method's acquisition and may be stopped early. The loop
/// ends once the cumulative closed-loop steps reach the budget, so the final
/// episode may overshoot it by at most one episode length.
pub fn run_campaign(cfg: &CampaignConfig, seed: u64) -> Result<RunLog> {
    cfg.validate()?;
    let mut campaign = Campaign {
        cfg,
        seed,
        fidelities: Fidelity::grid(cfg.episode.checkpoints)?,
        data: Vec::new(),
        hyper: cfg.gp.initial(cfg.method.is_multi_fidelity()),
        model: None,
        incumbent: None,
        cumulative: 0,
        log: RunLog {
            method: cfg.method,
            seed,
            episodes: Vec::new(),
            timings: Vec::new(),
        },
    };
    let mut iteration = 0;
    for theta in initial_design(&cfg.bounds, cfg.initial_design_size, seed) {
        if campaign.cumulative >= cfg.budget {
            break;
        }
        campaign.execute(iteration, Phase::InitialDesign, theta, Instant::now())?;
        iteration += 1;
    }
    while campaign.cumulative < cfg.budget {
        let started = Instant::now();
        let theta = campaign.select(iteration)?;
        campaign.execute(iteration, Phase::Acquisition, theta, started)?;
        iteration += 1;
    }
    Ok(campaign.log)
}

/// Single-fidelity black-box baseline: EI acquisition, full episodes, one
/// target-fidelity observation per episode.
pub fn run_baseline(cfg: &CampaignConfig, seed: u64) -> Result<RunLog> {
    if cfg.method != Method::BaselineBo {
        return Err(Error::Config(format!("run_baseline needs method BASELINE_BO, got {}", cfg.method)));
    }
    run_campaign(cfg, seed)
}

/// Step function of the incumbent against cumulative steps, one point per
/// episode that has an incumbent.
pub fn best_so_far_curve(log: &RunLog) -> Vec<(usize, f64)> {
    log.episodes
        .iter()
        .filter_map(|e| e.incumbent.map(|g| (e.cumulative_steps, g)))
        .collect()
}

/// Run every `(method, seed)` pair of `methods` × `cfg.seeds`, in parallel
/// when threads are available. Output order is by method, then seed, and does
/// not depend on scheduling.
pub fn run_methods(cfg: &CampaignConfig, methods: &[Method]) -> Result<Vec<RunLog>> {
    cfg.validate()?;
    let jobs: Vec<(CampaignConfig, u64)> = methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (cfg.clone().with_method(m), s)))
        .collect();
    jobs.par_iter().map(|(c, seed)| run_campaign(c, *seed)).collect()
}
