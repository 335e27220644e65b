use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::controller::MpcConfig;
use crate::error::{Error, Result};
use crate::plant::{CartPoleParams, EpisodeConfig};
use crate::space::{ParamBounds, N_PARAMS};
use crate::stopping::{GpRule, StoppingConfig};
use crate::surrogate::{ExpDecay, GpHyperparams, HyperBounds, HyperFitOptions, OutputScaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    BaselineBo,
    TsiNoStop,
    TsiEi,
    TsiEiC,
    TsiUcbC,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::BaselineBo, Method::TsiNoStop, Method::TsiEi, Method::TsiEiC, Method::TsiUcbC];

    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineBo => "BASELINE_BO",
            Method::TsiNoStop => "TSI_NO_STOP",
            Method::TsiEi => "TSI_EI",
            Method::TsiEiC => "TSI_EI_C",
            Method::TsiUcbC => "TSI_UCB_C",
        }
    }

    pub fn is_multi_fidelity(self) -> bool {
        self != Method::BaselineBo
    }

    pub fn gp_rule(self) -> GpRule {
        match self {
            Method::BaselineBo | Method::TsiNoStop => GpRule::None,
            Method::TsiEi | Method::TsiEiC => GpRule::Ei,
            Method::TsiUcbC => GpRule::Ucb,
        }
    }

    pub fn uses_convergence(self) -> bool {
        matches!(self, Method::TsiEiC | Method::TsiUcbC)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected one of BASELINE_BO, TSI_NO_STOP, TSI_EI, TSI_EI_C, TSI_UCB_C")))
    }
}

/// Surrogate initialization and evidence-maximization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSettings {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub decay_alpha: f64,
    pub decay_beta: f64,
    pub bounds: HyperBounds,
    /// Multi-start search used for the initial design and every
    /// `full_refit_every` episodes.
    pub fit: HyperFitOptions,
    /// Local search from the previous hyperparameters, used in between.
    pub refit: HyperFitOptions,
    /// `1` makes every refit a full search.
    pub full_refit_every: usize,
}

impl Default for GpSettings {
    fn default() -> Self {
        let h = GpHyperparams::default();
        let decay = ExpDecay::default();
        GpSettings {
            lengthscale: h.lengthscales[0],
            signal_variance: h.signal_variance,
            noise_variance: h.noise_variance,
            decay_alpha: decay.alpha,
            decay_beta: decay.beta,
            bounds: HyperBounds::default(),
            fit: HyperFitOptions::default(),
            refit: HyperFitOptions {
                restarts: 1,
                local_searches: 1,
                max_iter: 10,
            },
            full_refit_every: 10,
        }
    }
}

impl GpSettings {
    /// Search options for the refit after episode `iteration`.
    pub fn options_for(&self, iteration: usize, initial_design: bool) -> &HyperFitOptions {
        if initial_design || iteration.is_multiple_of(self.full_refit_every.max(1)) {
            &self.fit
        } else {
            &self.refit
        }
    }

    pub fn initial(&self, multi_fidelity: bool) -> GpHyperparams {
        GpHyperparams {
            lengthscales: [self.lengthscale; N_PARAMS],
            signal_variance: self.signal_variance,
            noise_variance: self.noise_variance,
            fidelity: multi_fidelity.then_some(ExpDecay {
                alpha: self.decay_alpha,
                beta: self.decay_beta,
            }),
            output: OutputScaling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub method: Method,
    /// Total closed-loop steps per run.
    pub budget: usize,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub initial_design_size: usize,
    pub bounds: ParamBounds,
    pub plant: CartPoleParams,
    pub episode: EpisodeConfig,
    pub mpc: MpcConfig,
    pub acquisition: AcquisitionConfig,
    pub stopping: StoppingConfig,
    pub gp: GpSettings,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            method: Method::TsiEiC,
            budget: 4000,
            n_runs: 10,
            seeds: (0..10).collect(),
            initial_design_size: 3,
            bounds: ParamBounds::default(),
            plant: CartPoleParams::default(),
            episode: EpisodeConfig::default(),
            mpc: MpcConfig::default(),
            acquisition: AcquisitionConfig::default(),
            stopping: StoppingConfig::default(),
            gp: GpSettings::default(),
        }
    }
}

impl CampaignConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.n_runs = seeds.len();
        self.seeds = seeds;
        self
    }

    /// Stopping rules implied by the method, on top of the configured
    /// thresholds.
    pub fn effective_stopping(&self) -> StoppingConfig {
        StoppingConfig {
            gp_rule: self.method.gp_rule(),
            convergence: self.method.uses_convergence(),
            ..self.stopping
        }
    }

    /// MPC settings with the prediction model tied to the plant.
    pub fn effective_mpc(&self) -> MpcConfig {
        MpcConfig { model: self.plant, ..self.mpc }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if self.n_runs != self.seeds.len() {
            return Err(Error::Config(format!(
                "n_runs ({}) must equal the number of seeds ({})",
                self.n_runs,
                self.seeds.len()
            )));
        }
        if self.initial_design_size == 0 {
            return Err(Error::Config("initial_design_size must be at least 1".into()));
        }
        self.bounds.validate()?;
        self.plant.validate()?;
        self.episode.validate()?;
        self.effective_mpc().validate()?;
        self.acquisition.validate()?;
        self.stopping.validate()?;
        self.gp.bounds.validate()?;
        self.gp.initial(true).validate()?;
        for (key, opts) in [("gp.fit", &self.gp.fit), ("gp.refit", &self.gp.refit)] {
            if opts.restarts == 0 || opts.local_searches == 0 {
                return Err(Error::Config(format!("{key}.restarts and {key}.local_searches must be at least 1")));
            }
        }
        if self.gp.full_refit_every == 0 {
            return Err(Error::Config("gp.full_refit_every must be at least 1".into()));
        }
        Ok(())
    }
}
