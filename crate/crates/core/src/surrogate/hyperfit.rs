//! Evidence maximization for the kernel hyperparameters.
//!
//! The search runs over log-hyperparameters inside a box. Several starts are
//! screened by their log marginal likelihood and the most promising ones are
//! refined with projected L-BFGS on the analytic gradient. The output
//! scaling is held fixed; only kernel parameters move.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{cholesky_solve, gp_input, gram_matrix, GpModel};
use super::kernel::{decay_unchecked, matern52_profile, ExpDecay, GpHyperparams, GpInput, SQRT5};
use crate::error::{Error, Result};
use crate::optim::lbfgs_box;
use crate::space::{Observation, ParamBounds, N_PARAMS};

/// Box bounds for the hyperparameter search (natural scale; searched in log-space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
    pub decay_alpha: (f64, f64),
    pub decay_beta: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        HyperBounds {
            lengthscale: (0.03, 5.0),
            signal_variance: (0.05, 20.0),
            // The plant is deterministic; a loose upper bound lets the fit explain
            // real cost differences away as noise.
            noise_variance: (1e-6, 1e-3),
            decay_alpha: (0.05, 20.0),
            decay_beta: (0.01, 20.0),
        }
    }
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lengthscale", self.lengthscale),
            ("signal_variance", self.signal_variance),
            ("noise_variance", self.noise_variance),
            ("decay_alpha", self.decay_alpha),
            ("decay_beta", self.decay_beta),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "hyperparameter bound {name} must satisfy 0 < lower <= upper, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperFitOptions {
    /// Number of screened starting points, the initial guess included.
    pub restarts: usize,
    /// How many of the best screened starts are refined locally.
    pub local_searches: usize,
    pub max_iter: usize,
}

impl Default for HyperFitOptions {
    fn default() -> Self {
        HyperFitOptions {
            restarts: 8,
            local_searches: 2,
            max_iter: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperFit {
    pub hyper: GpHyperparams,
    pub log_likelihood: f64,
    pub init_log_likelihood: f64,
    /// `false` when no start beat the initial guess; `hyper` is then the
    /// initial guess unchanged.
    pub improved: bool,
}

struct Objective<'a> {
    inputs: &'a [GpInput],
    targets: DVector<f64>,
    template: GpHyperparams,
    log_scale: f64,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        N_PARAMS + 2 + if self.template.fidelity.is_some() { 2 } else { 0 }
    }

    fn decode(&self, z: &[f64]) -> GpHyperparams {
        let mut h = self.template;
        for d in 0..N_PARAMS {
            h.lengthscales[d] = z[d].exp();
        }
        h.signal_variance = z[N_PARAMS].exp();
        h.noise_variance = z[N_PARAMS + 1].exp();
        if h.fidelity.is_some() {
            h.fidelity = Some(ExpDecay {
                alpha: z[N_PARAMS + 2].exp(),
                beta: z[N_PARAMS + 3].exp(),
            });
        }
        h
    }

    fn encode(&self, h: &GpHyperparams) -> Vec<f64> {
        let mut z: Vec<f64> = h.lengthscales.iter().map(|l| l.ln()).collect();
        z.push(h.signal_variance.ln());
        z.push(h.noise_variance.max(1e-300).ln());
        if let Some(decay) = h.fidelity {
            z.push(decay.alpha.ln());
            z.push(decay.beta.ln());
        }
        z
    }

    /// Log marginal likelihood on the observed scale, or `-inf` if the gram
    /// matrix does not factorize.
    fn value(&self, h: &GpHyperparams) -> f64 {
        let n = self.inputs.len();
        let mut k = gram_matrix(self.inputs, h);
        for i in 0..n {
            k[(i, i)] += h.noise_variance;
        }
        let Some(chol) = k.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let l = chol.unpack();
        let alpha = cholesky_solve(&l, &self.targets);
        self.lml(&l, &alpha)
    }

    fn lml(&self, l: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
        let n = self.inputs.len() as f64;
        let log_det_half: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.targets.dot(alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - n * self.log_scale
    }

    /// Negative log marginal likelihood and its gradient in `z`.
    fn negative_with_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let h = self.decode(z);
        let n = self.inputs.len();
        let dim = self.dim();
        let mut k = gram_matrix(self.inputs, &h);
        for i in 0..n {
            k[(i, i)] += h.noise_variance;
        }
        let Some(chol) = k.cholesky() else {
            return (f64::INFINITY, vec![0.0; dim]);
        };
        let l = chol.unpack();
        let alpha = cholesky_solve(&l, &self.targets);
        let value = self.lml(&l, &alpha);
        let kinv = inverse_from_factor(&l);

        let mut grad = vec![0.0; dim];
        let sf2 = h.signal_variance;
        for j in 0..n {
            for i in j..n {
                let weight = (alpha[i] * alpha[j] - kinv[(i, j)]) * if i == j { 0.5 } else { 1.0 };
                if i == j {
                    grad[N_PARAMS + 1] += weight * h.noise_variance;
                }
                let (a, b) = (&self.inputs[i], &self.inputs[j]);
                let mut zsq = [0.0; N_PARAMS];
                let mut r2 = 0.0;
                for d in 0..N_PARAMS {
                    let t = (a.u[d] - b.u[d]) / h.lengthscales[d];
                    zsq[d] = t * t;
                    r2 += zsq[d];
                }
                let r = r2.sqrt();
                let ks = match &h.fidelity {
                    Some(decay) => decay_unchecked(a.s, b.s, decay),
                    None => 1.0,
                };
                let base = sf2 * matern52_profile(r) * ks;
                grad[N_PARAMS] += weight * base;
                let radial = sf2 * ks * (5.0 / 3.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
                for d in 0..N_PARAMS {
                    grad[d] += weight * radial * zsq[d];
                }
                if let Some(decay) = &h.fidelity {
                    let sum = a.s + b.s + decay.beta;
                    grad[N_PARAMS + 2] += weight * base * decay.alpha * (decay.beta.ln() - sum.ln());
                    grad[N_PARAMS + 3] += weight * base * decay.alpha * (a.s + b.s) / sum;
                }
            }
        }
        // `weight` already carries the 1/2 on the diagonal; off-diagonal pairs
        // count twice in the trace and once here, so the factors line up.
        (-value, grad.into_iter().map(|g| -g).collect())
    }
}

/// `K⁻¹ = L⁻ᵀ L⁻¹` from a lower Cholesky factor. Only the lower triangle
/// is filled; callers read `(i, j)` with `i ≥ j`.
fn inverse_from_factor(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    // Columns of L⁻¹ by column-oriented forward substitution.
    let mut linv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let col = linv.column_mut(j);
        let x = col.data.into_slice_mut();
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / l[(k, k)];
            x[k] = xk;
            if xk != 0.0 {
                let lk = &l.as_slice()[k * n + k + 1..(k + 1) * n];
                for (xi, li) in x[k + 1..].iter_mut().zip(lk) {
                    *xi -= xk * li;
                }
            }
        }
    }
    let mut kinv = DMatrix::<f64>::zeros(n, n);
    let data = linv.as_slice();
    for j in 0..n {
        for i in j..n {
            // L⁻¹ is lower triangular, so rows above i contribute nothing.
            let a = &data[i * n + i..(i + 1) * n];
            let b = &data[j * n + i..(j + 1) * n];
            kinv[(i, j)] = dot(a, b);
        }
    }
    kinv
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for t in 0..4 {
            acc[t] += a[4 * c + t] * b[4 * c + t];
        }
    }
    let tail: f64 = a[4 * chunks..].iter().zip(&b[4 * chunks..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn search_box(template: &GpHyperparams, hb: &HyperBounds) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![hb.lengthscale.0.ln(); N_PARAMS];
    let mut upper = vec![hb.lengthscale.1.ln(); N_PARAMS];
    for (lo, hi) in [hb.signal_variance, hb.noise_variance] {
        lower.push(lo.ln());
        upper.push(hi.ln());
    }
    if template.fidelity.is_some() {
        for (lo, hi) in [hb.decay_alpha, hb.decay_beta] {
            lower.push(lo.ln());
            upper.push(hi.ln());
        }
    }
    (lower, upper)
}

/// Maximize the log marginal likelihood of `data` starting from `init`.
///
/// The returned hyperparameters never have a lower likelihood than `init`.
/// The output scaling of `init` is kept as is.
pub fn fit_hyperparameters(
    bounds: &ParamBounds,
    data: &[Observation],
    init: GpHyperparams,
    hb: &HyperBounds,
    opts: &HyperFitOptions,
    seed: u64,
) -> Result<HyperFit> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "hyperparameter fitting needs at least 2 observations, got {}",
            data.len()
        )));
    }
    init.validate()?;
    hb.validate()?;
    let inputs: Vec<GpInput> = data.iter().map(|o| gp_input(bounds, &o.theta, o.s)).collect();
    let objective = Objective {
        inputs: &inputs,
        targets: DVector::from_iterator(data.len(), data.iter().map(|o| init.output.standardize(o.g))),
        template: init,
        log_scale: init.output.scale.ln(),
    };
    let init_lml = objective.value(&init);
    let (lower, upper) = search_box(&init, hb);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![objective.encode(&init)];
    for (i, v) in starts[0].iter_mut().enumerate() {
        *v = v.clamp(lower[i], upper[i]);
    }
    for _ in 1..opts.restarts.max(1) {
        starts.push((0..lower.len()).map(|i| rng.gen_range(lower[i]..=upper[i])).collect());
    }
    let mut screened: Vec<(f64, Vec<f64>)> = starts
        .into_iter()
        .map(|z| (objective.value(&objective.decode(&z)), z))
        .collect();
    // The clamped initial guess is always refined; the remaining local
    // searches go to the best of the other starts.
    let first = screened.remove(0);
    screened.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut chosen = vec![first];
    chosen.extend(screened.into_iter().take(opts.local_searches.saturating_sub(1)));

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (screen_value, z0) in chosen {
        if !screen_value.is_finite() {
            continue;
        }
        let result = lbfgs_box(|z| objective.negative_with_gradient(z), &z0, &lower, &upper, opts.max_iter);
        let value = -result.value;
        if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, result.x));
        }
    }

    match best {
        Some((value, z)) if value > init_lml || !init_lml.is_finite() => {
            let hyper = objective.decode(&z);
            // Score with the same routine the caller will see.
            let lml = objective.value(&hyper);
            Ok(HyperFit {
                hyper,
                log_likelihood: lml,
                init_log_likelihood: init_lml,
                improved: true,
            })
        }
        _ => {
            log::warn!("hyperparameter search did not improve on the initial guess (lml {init_lml:.4})");
            Ok(HyperFit {
                hyper: init,
                log_likelihood: init_lml,
                init_log_likelihood: init_lml,
                improved: false,
            })
        }
    }
}

/// Convenience: fit hyperparameters and condition a model on the same data.
pub fn fit_model(
    bounds: &ParamBounds,
    data: &[Observation],
    init: GpHyperparams,
    hb: &HyperBounds,
    opts: &HyperFitOptions,
    seed: u64,
) -> Result<(GpModel, HyperFit)> {
    let fit = fit_hyperparameters(bounds, data, init, hb, opts, seed)?;
    let model = GpModel::fit(*bounds, data, fit.hyper)?;
    Ok((model, fit))
}
