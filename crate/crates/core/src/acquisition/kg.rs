use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::AcquisitionConfig;
use crate::error::{Error, Result};
use crate::optim::coordinate_ascent;
use crate::space::{Fidelity, ParamVector, N_PARAMS};
use crate::surrogate::{GpInput, GpModel, JITTER_LADDER};

const CANDIDATE_STREAM: u64 = 0;
const FANTASY_STREAM: u64 = 1;
const START_STREAM: u64 = 2;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything about a knowledge-gradient evaluation that does not depend on
/// the candidate weights: inner candidate set, its posterior, and the fixed
/// standard-normal draws shared by every candidate.
pub struct KgContext<'a> {
    model: &'a GpModel,
    fidelities: Vec<f64>,
    candidates: Vec<GpInput>,
    candidate_mean: DVector<f64>,
    /// `L⁻¹ K(X, C)` for the inner candidates.
    whitened: DMatrix<f64>,
    best_mean: f64,
    normals: DMatrix<f64>,
    noise: f64,
    free_dims: Vec<usize>,
}

impl<'a> KgContext<'a> {
    pub fn new(model: &'a GpModel, fidelities: &[Fidelity], cfg: &AcquisitionConfig) -> Result<Self> {
        cfg.validate()?;
        let bounds = *model.bounds();
        let free_dims = bounds.free_dims();
        let mut rng = stream(cfg.seed, CANDIDATE_STREAM);
        let mut units = bounds.latin_hypercube_unit(cfg.n_inner_candidates, &mut rng);
        for obs in model.data() {
            let u = bounds.to_unit(&obs.theta);
            if !units.contains(&u) {
                units.push(u);
            }
        }
        let at_target = |u: [f64; N_PARAMS]| GpInput { u, s: 1.0 };
        let mut candidates: Vec<GpInput> = units.into_iter().map(at_target).collect();

        // Polish the current posterior-mean maximizer so the inner minimum is
        // not limited by the discretization.
        let mean_at = |u: &[f64]| {
            let u: [f64; N_PARAMS] = u.try_into().expect("unit vector has N_PARAMS entries");
            model.mean_standardized(&at_target(u))
        };
        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (model.mean_standardized(c), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut polished: Option<(f64, Vec<f64>)> = None;
        if !model.is_empty() && !free_dims.is_empty() {
            for &(value, idx) in scored.iter().take(cfg.n_polish) {
                let r = coordinate_ascent(mean_at, &candidates[idx].u, value, &free_dims, 0.05, cfg.polish_min_step, 5 * cfg.polish_evals);
                if polished.as_ref().is_none_or(|(v, _)| r.value > *v) {
                    polished = Some((r.value, r.x));
                }
            }
        }
        if let Some((_, u)) = polished {
            candidates.push(at_target(u.try_into().expect("unit vector has N_PARAMS entries")));
        }

        let candidate_mean = DVector::from_iterator(candidates.len(), candidates.iter().map(|c| model.mean_standardized(c)));
        let best_mean = candidate_mean.max();
        let whitened = if model.is_empty() {
            DMatrix::zeros(0, candidates.len())
        } else {
            model
                .cholesky_factor()
                .solve_lower_triangular(&model.cross_matrix(&candidates))
                .expect("cholesky factor has a positive diagonal")
        };
        let mut frng = stream(cfg.seed, FANTASY_STREAM);
        let q = fidelities.len();
        let normals = DMatrix::from_fn(cfg.n_fantasies, q, |_, _| StandardNormal.sample(&mut frng));
        Ok(KgContext {
            model,
            fidelities: fidelities.iter().map(|s| s.value()).collect(),
            candidates,
            candidate_mean,
            whitened,
            best_mean,
            normals,
            noise: model.hyperparams().noise_variance + model.jitter(),
            free_dims,
        })
    }

    /// Same inner discretization with `n_fantasies` fresh fantasy draws from
    /// `seed`. Separates Monte Carlo noise from candidate-set variation.
    pub fn with_fantasies(mut self, n_fantasies: usize, seed: u64) -> Result<Self> {
        if n_fantasies == 0 {
            return Err(Error::InvalidArgument("n_fantasies must be at least 1".into()));
        }
        let mut frng = stream(seed, FANTASY_STREAM);
        self.normals = DMatrix::from_fn(n_fantasies, self.fidelities.len(), |_, _| StandardNormal.sample(&mut frng));
        Ok(self)
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Current minimum expected loss at the target fidelity, observed units.
    pub fn baseline_loss(&self) -> f64 {
        -self.model.hyperparams().output.restore(self.best_mean)
    }

    /// Per-fantasy improvements `max_c m_f(c) − max_c m(c)` on the
    /// standardized scale; the inner set also contains `(u, 1)`.
    fn fantasy_gains(&self, u: &[f64; N_PARAMS]) -> Result<Vec<f64>> {
        let model = self.model;
        let hyper = model.hyperparams();
        let q = self.fidelities.len();
        let f = self.normals.nrows();
        if q == 0 {
            return Ok(vec![0.0; f]);
        }
        // Trace points plus the target-fidelity point of the candidate itself.
        let mut points: Vec<GpInput> = self.fidelities.iter().map(|&s| GpInput { u: *u, s }).collect();
        points.push(GpInput { u: *u, s: 1.0 });
        let prior = DMatrix::from_fn(q + 1, q + 1, |i, j| joint(&points[i], &points[j], hyper));
        let v = if model.is_empty() {
            DMatrix::zeros(0, q + 1)
        } else {
            model
                .cholesky_factor()
                .solve_lower_triangular(&model.cross_matrix(&points))
                .expect("cholesky factor has a positive diagonal")
        };
        let posterior = &prior - v.tr_mul(&v);
        let own_mean = if model.is_empty() { 0.0 } else { model.mean_standardized(&points[q]) };

        let sigma = posterior.view((0, 0), (q, q)).into_owned();
        let l_s = factor_with_jitter(sigma, self.noise)?;

        let nc = self.candidates.len();
        let vs = v.columns(0, q);
        let mut cross = DMatrix::from_fn(nc + 1, q, |c, j| {
            if c < nc {
                joint(&self.candidates[c], &points[j], hyper)
            } else {
                posterior[(q, j)]
            }
        });
        if !model.is_empty() {
            let reduce = self.whitened.tr_mul(&vs);
            let mut top = cross.rows_mut(0, nc);
            top -= reduce;
        }
        // Fantasy mean shift per unit normal: cross · L_S⁻ᵀ.
        let shift_t = l_s
            .solve_lower_triangular(&cross.transpose())
            .expect("factor has a positive diagonal");
        let shifts = &self.normals * shift_t;

        let best_now = self.best_mean.max(own_mean);
        let gains = (0..f)
            .map(|r| {
                let mut best = own_mean + shifts[(r, nc)];
                for c in 0..nc {
                    best = best.max(self.candidate_mean[c] + shifts[(r, c)]);
                }
                best - best_now
            })
            .collect();
        Ok(gains)
    }

    fn estimate(&self, u: &[f64; N_PARAMS]) -> Result<McEstimate> {
        let gains = self.fantasy_gains(u)?;
        let n = gains.len() as f64;
        let mean = gains.iter().sum::<f64>() / n;
        let var = if gains.len() > 1 {
            gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let scale = self.model.hyperparams().output.scale;
        Ok(McEstimate {
            mean: mean * scale,
            std_error: (var / n).sqrt() * scale,
        })
    }

    /// Knowledge gradient at `theta`, in observed units.
    pub fn takg(&self, theta: &ParamVector) -> Result<McEstimate> {
        self.estimate(&self.model.bounds().to_unit(theta))
    }

    /// Expected minimal loss after observing the trace at `theta`.
    pub fn expected_loss(&self, theta: &ParamVector) -> Result<McEstimate> {
        let kg = self.takg(theta)?;
        Ok(McEstimate {
            mean: self.baseline_loss() - kg.mean,
            std_error: kg.std_error,
        })
    }

    fn takg_unit(&self, u: &[f64]) -> f64 {
        let u: [f64; N_PARAMS] = u.try_into().expect("unit vector has N_PARAMS entries");
        self.estimate(&u).map_or(f64::NAN, |e| e.mean)
    }

    /// Multi-start maximization of the knowledge gradient over the box.
    pub fn maximize(&self, cfg: &AcquisitionConfig) -> Result<(ParamVector, f64)> {
        let bounds = self.model.bounds();
        let mut rng = stream(cfg.seed, START_STREAM);
        let starts = bounds.latin_hypercube_unit(cfg.n_restarts, &mut rng);
        let mut scored: Vec<(f64, [f64; N_PARAMS])> = starts.iter().map(|u| (self.takg_unit(u), *u)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut best: Option<(f64, [f64; N_PARAMS])> = scored.iter().find(|(v, _)| v.is_finite()).copied();
        if !self.free_dims.is_empty() {
            for &(value, u) in scored.iter().filter(|(v, _)| v.is_finite()).take(cfg.n_polish) {
                let r = coordinate_ascent(|x| self.takg_unit(x), &u, value, &self.free_dims, 0.1, cfg.polish_min_step, cfg.polish_evals);
                if best.is_none_or(|(b, _)| r.value > b) {
                    best = Some((r.value, r.x.try_into().expect("unit vector has N_PARAMS entries")));
                }
            }
        }
        match best {
            Some((value, u)) => Ok((bounds.from_unit(&u), value)),
            None => {
                log::warn!("knowledge gradient was non-finite at every start; sampling uniformly");
                Ok((bounds.uniform(&mut rng), f64::NAN))
            }
        }
    }
}

fn joint(a: &GpInput, b: &GpInput, h: &crate::surrogate::GpHyperparams) -> f64 {
    crate::surrogate::kernel_joint(a, b, h).expect("kernel inputs are finite")
}

fn factor_with_jitter(sigma: DMatrix<f64>, noise: f64) -> Result<DMatrix<f64>> {
    let q = sigma.nrows();
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        let mut m = sigma.clone();
        for i in 0..q {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c.unpack());
        }
    }
    Err(Error::IllConditionedGram {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Knowledge gradient of observing the trace of `theta` at `fidelities`.
pub fn takg(model: &GpModel, theta: &ParamVector, fidelities: &[Fidelity], cfg: &AcquisitionConfig) -> Result<McEstimate> {
    KgContext::new(model, fidelities, cfg)?.takg(theta)
}

/// Expected minimal target-fidelity loss after observing the trace.
pub fn expected_loss(model: &GpModel, theta: &ParamVector, fidelities: &[Fidelity], cfg: &AcquisitionConfig) -> Result<McEstimate> {
    KgContext::new(model, fidelities, cfg)?.expected_loss(theta)
}

/// Next weights to evaluate: the knowledge-gradient maximizer for a trace
/// observed at `fidelities`.
pub fn select_next(model: &GpModel, fidelities: &[Fidelity], cfg: &AcquisitionConfig) -> Result<ParamVector> {
    let ctx = KgContext::new(model, fidelities, cfg)?;
    Ok(ctx.maximize(cfg)?.0)
}
