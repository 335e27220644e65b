use nalgebra::{DMatrix, DVector};

use super::kernel::{joint_unchecked, GpHyperparams, GpInput};
use crate::error::{Error, Result};
use crate::space::{Fidelity, Observation, ParamBounds, ParamVector};

/// Diagonal jitter ladder tried, in order, when the gram matrix fails to
/// factorize.
pub const JITTER_LADDER: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Posterior marginal at a single input, on the observed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Exact GP posterior over `(θ, s)` with a cached Cholesky factor.
///
/// Models are immutable; conditioning returns a new model.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub(crate) hyper: GpHyperparams,
    pub(crate) bounds: ParamBounds,
    pub(crate) data: Vec<Observation>,
    pub(crate) inputs: Vec<GpInput>,
    /// Standardized targets `(g − offset) / scale`.
    pub(crate) targets: DVector<f64>,
    /// Lower factor of `K + (σ² + jitter) I`.
    pub(crate) chol: DMatrix<f64>,
    pub(crate) alpha: DVector<f64>,
    pub(crate) jitter: f64,
}

impl GpModel {
    pub fn empty(bounds: ParamBounds, hyper: GpHyperparams) -> Result<Self> {
        hyper.validate()?;
        Ok(GpModel {
            hyper,
            bounds,
            data: Vec::new(),
            inputs: Vec::new(),
            targets: DVector::zeros(0),
            chol: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            jitter: 0.0,
        })
    }

    /// Condition the prior on `data`. The noise variance is used as given;
    /// jitter from [`JITTER_LADDER`] is only added if factorization fails.
    pub fn fit(bounds: ParamBounds, data: &[Observation], hyper: GpHyperparams) -> Result<Self> {
        hyper.validate()?;
        if data.iter().any(|o| !o.g.is_finite()) {
            return Err(Error::InvalidArgument("observation values must be finite".into()));
        }
        let inputs: Vec<GpInput> = data.iter().map(|o| gp_input(&bounds, &o.theta, o.s)).collect();
        let targets = DVector::from_iterator(data.len(), data.iter().map(|o| hyper.output.standardize(o.g)));
        let gram = gram_matrix(&inputs, &hyper);
        let (chol, jitter) = factorize(gram, hyper.noise_variance)?;
        let alpha = cholesky_solve(&chol, &targets);
        Ok(GpModel {
            hyper,
            bounds,
            data: data.to_vec(),
            inputs,
            targets,
            chol,
            alpha,
            jitter,
        })
    }

    /// Add one observation by extending the Cholesky factor with a new row.
    /// Falls back to a full refactorization when the new pivot is not
    /// safely positive.
    pub fn condition_on(&self, obs: Observation) -> Result<Self> {
        if !obs.g.is_finite() {
            return Err(Error::InvalidArgument("observation value must be finite".into()));
        }
        let n = self.data.len();
        let x = gp_input(&self.bounds, &obs.theta, obs.s);
        let kvec = self.cross_covariance(&x);
        let diag = joint_unchecked(&x, &x, &self.hyper) + self.hyper.noise_variance + self.jitter;
        let row = forward_substitute(&self.chol, &kvec);
        let pivot2 = diag - row.norm_squared();

        let mut data = self.data.clone();
        data.push(obs);
        if !(pivot2 > 1e-10 * diag) {
            return Self::fit(self.bounds, &data, self.hyper);
        }

        let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = row[j];
        }
        chol[(n, n)] = pivot2.sqrt();

        let mut inputs = self.inputs.clone();
        inputs.push(x);
        let mut targets = self.targets.clone().resize_vertically(n + 1, 0.0);
        targets[n] = self.hyper.output.standardize(obs.g);
        let alpha = cholesky_solve(&chol, &targets);
        Ok(GpModel {
            hyper: self.hyper,
            bounds: self.bounds,
            data,
            inputs,
            targets,
            chol,
            alpha,
            jitter: self.jitter,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn data(&self) -> &[Observation] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn input(&self, theta: &ParamVector, s: Fidelity) -> GpInput {
        gp_input(&self.bounds, theta, s)
    }

    pub fn predict(&self, theta: &ParamVector, s: Fidelity) -> Prediction {
        self.predict_input(&self.input(theta, s))
    }

    pub fn predict_input(&self, x: &GpInput) -> Prediction {
        let (mean, var) = self.predict_standardized(x);
        let out = self.hyper.output;
        Prediction {
            mean: out.restore(mean),
            variance: var * out.scale * out.scale,
        }
    }

    /// Posterior mean and latent variance on the standardized scale.
    pub(crate) fn predict_standardized(&self, x: &GpInput) -> (f64, f64) {
        let prior = joint_unchecked(x, x, &self.hyper);
        if self.data.is_empty() {
            return (0.0, prior);
        }
        let kvec = self.cross_covariance(x);
        let mean = kvec.dot(&self.alpha);
        let v = forward_substitute(&self.chol, &kvec);
        (mean, (prior - v.norm_squared()).max(0.0))
    }

    /// Posterior mean on the standardized scale, skipping the variance solve.
    pub(crate) fn mean_standardized(&self, x: &GpInput) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.cross_covariance(x).dot(&self.alpha)
    }

    /// Joint posterior over several inputs, on the observed scale. The
    /// returned covariance is for the latent function (no observation noise).
    pub fn predict_joint(&self, xs: &[GpInput]) -> (DVector<f64>, DMatrix<f64>) {
        let (mean, cov) = self.joint_standardized(xs);
        let out = self.hyper.output;
        (mean.map(|m| out.restore(m)), cov * (out.scale * out.scale))
    }

    pub(crate) fn joint_standardized(&self, xs: &[GpInput]) -> (DVector<f64>, DMatrix<f64>) {
        let q = xs.len();
        let mut cov = DMatrix::from_fn(q, q, |i, j| joint_unchecked(&xs[i], &xs[j], &self.hyper));
        if self.data.is_empty() {
            return (DVector::zeros(q), cov);
        }
        let cross = self.cross_matrix(xs);
        let mean = cross.tr_mul(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a positive diagonal");
        cov -= v.tr_mul(&v);
        (mean, cov)
    }

    /// `k(X, x)` against every training input.
    pub(crate) fn cross_covariance(&self, x: &GpInput) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| joint_unchecked(xi, x, &self.hyper)),
        )
    }

    /// `K(X, P)` as an `n × |P|` matrix.
    pub(crate) fn cross_matrix(&self, xs: &[GpInput]) -> DMatrix<f64> {
        DMatrix::from_fn(self.inputs.len(), xs.len(), |i, j| {
            joint_unchecked(&self.inputs[i], &xs[j], &self.hyper)
        })
    }

    /// Log marginal likelihood of the observed values under this model,
    /// on the observed scale.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len() as f64;
        if self.data.is_empty() {
            return 0.0;
        }
        let log_det_half: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.targets.dot(&self.alpha)
            - log_det_half
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
            - n * self.hyper.output.scale.ln()
    }
}

pub(crate) fn gp_input(bounds: &ParamBounds, theta: &ParamVector, s: Fidelity) -> GpInput {
    GpInput {
        u: bounds.to_unit(theta),
        s: s.value(),
    }
}

pub(crate) fn gram_matrix(inputs: &[GpInput], hyper: &GpHyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut gram = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let k = joint_unchecked(&inputs[i], &inputs[j], hyper);
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }
    gram
}

/// Cholesky of `gram + noise I`, escalating diagonal jitter on failure.
/// Returns the lower factor (upper triangle zeroed) and the jitter used.
pub(crate) fn factorize(gram: DMatrix<f64>, noise: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = gram.nrows();
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        let mut m = gram.clone();
        for i in 0..n {
            m[(i, i)] += noise + jitter;
        }
        if let Some(chol) = m.cholesky() {
            if jitter > 0.0 {
                log::debug!("gram factorization needed jitter {jitter:e} (n = {n})");
            }
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::IllConditionedGram {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let w = forward_substitute(l, b);
    l.tr_solve_lower_triangular(&w)
        .expect("cholesky factor has a positive diagonal")
}

/// Condition `model` on `data` with the model's hyperparameters.
pub fn gp_fit(bounds: ParamBounds, data: &[Observation], hyper: GpHyperparams) -> Result<GpModel> {
    GpModel::fit(bounds, data, hyper)
}

pub fn gp_predict(model: &GpModel, theta: &ParamVector, s: Fidelity) -> Prediction {
    model.predict(theta, s)
}

pub fn gp_condition_append(model: &GpModel, obs: Observation) -> Result<GpModel> {
    model.condition_on(obs)
}
