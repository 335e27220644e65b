//! Covariance functions over the joint (parameter, fidelity) input.
//!
//! The parameter part is an ARD Matérn 5/2 kernel on unit-cube coordinates.
//! The fidelity part is the exponential-decay kernel
//! `β^α / (s + s' + β)^α`, the covariance of a mixture of exponentially
//! decaying curves with Gamma(α, β)-distributed rates. The joint kernel is
//! their product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::N_PARAMS;

pub(crate) const SQRT5: f64 = 2.236_067_977_499_79;

/// Shape `alpha` and offset `beta` of the exponential-decay fidelity kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpDecay {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ExpDecay {
    fn default() -> Self {
        ExpDecay {
            alpha: 1.0,
            beta: 0.5,
        }
    }
}

/// Affine map between observed performance values and the standardized
/// scale the kernel works on: `g = offset + scale * y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub offset: f64,
    pub scale: f64,
}

impl Default for OutputScaling {
    fn default() -> Self {
        OutputScaling {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

impl OutputScaling {
    /// Mean and (population) standard deviation of the observed values. A
    /// degenerate spread falls back to unit scale.
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return OutputScaling::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        OutputScaling {
            offset: mean,
            scale: if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 },
        }
    }

    pub fn standardize(&self, g: f64) -> f64 {
        (g - self.offset) / self.scale
    }

    pub fn restore(&self, y: f64) -> f64 {
        self.offset + self.scale * y
    }
}

/// Kernel hyperparameters. Everything except `output` lives on the
/// standardized output scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscales: [f64; N_PARAMS],
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// `None` drops the fidelity factor (single-fidelity model).
    pub fidelity: Option<ExpDecay>,
    pub output: OutputScaling,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        GpHyperparams {
            lengthscales: [0.3; N_PARAMS],
            signal_variance: 1.0,
            noise_variance: 1e-4,
            fidelity: Some(ExpDecay::default()),
            output: OutputScaling::default(),
        }
    }
}

impl GpHyperparams {
    pub fn single_fidelity() -> Self {
        GpHyperparams {
            fidelity: None,
            ..GpHyperparams::default()
        }
    }

    pub fn with_output(mut self, output: OutputScaling) -> Self {
        self.output = output;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        for (d, l) in self.lengthscales.iter().enumerate() {
            positive(&format!("lengthscale {d}"), *l)?;
        }
        positive("signal variance", self.signal_variance)?;
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if let Some(decay) = self.fidelity {
            positive("decay alpha", decay.alpha)?;
            positive("decay beta", decay.beta)?;
        }
        positive("output scale", self.output.scale)?;
        if !self.output.offset.is_finite() {
            return Err(Error::InvalidArgument("output offset must be finite".into()));
        }
        Ok(())
    }
}

/// A point of the joint input space as seen by the kernel: unit-cube
/// parameter coordinates plus the raw fidelity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpInput {
    pub u: [f64; N_PARAMS],
    pub s: f64,
}

#[inline]
pub(crate) fn scaled_distance(a: &[f64; N_PARAMS], b: &[f64; N_PARAMS], lengthscales: &[f64; N_PARAMS]) -> f64 {
    let mut r2 = 0.0;
    for d in 0..N_PARAMS {
        let z = (a[d] - b[d]) / lengthscales[d];
        r2 += z * z;
    }
    r2.sqrt()
}

/// Unit-variance Matérn 5/2 profile as a function of the scaled distance.
#[inline]
pub(crate) fn matern52_profile(r: f64) -> f64 {
    let sr = SQRT5 * r;
    (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

#[inline]
pub(crate) fn decay_unchecked(s1: f64, s2: f64, decay: &ExpDecay) -> f64 {
    (decay.alpha * (decay.beta.ln() - (s1 + s2 + decay.beta).ln())).exp()
}

#[inline]
pub(crate) fn joint_unchecked(a: &GpInput, b: &GpInput, h: &GpHyperparams) -> f64 {
    let r = scaled_distance(&a.u, &b.u, &h.lengthscales);
    let ks = match &h.fidelity {
        Some(decay) => decay_unchecked(a.s, b.s, decay),
        None => 1.0,
    };
    h.signal_variance * matern52_profile(r) * ks
}

/// `σ_f² (1 + √5 r + 5r²/3) exp(−√5 r)` on unit-cube coordinates.
pub fn kernel_matern52(a: &[f64; N_PARAMS], b: &[f64; N_PARAMS], h: &GpHyperparams) -> Result<f64> {
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite kernel input".into()));
    }
    if h.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "lengthscales must be positive, got {:?}",
            h.lengthscales
        )));
    }
    Ok(h.signal_variance * matern52_profile(scaled_distance(a, b, &h.lengthscales)))
}

/// Exponential-decay covariance between two fidelities. Returns `1` for a
/// single-fidelity model.
pub fn kernel_fidelity(s1: f64, s2: f64, h: &GpHyperparams) -> Result<f64> {
    if !(s1 > 0.0 && s1 <= 1.0 && s2 > 0.0 && s2 <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fidelities must lie in (0, 1], got ({s1}, {s2})"
        )));
    }
    match &h.fidelity {
        None => Ok(1.0),
        Some(decay) => {
            if !(decay.alpha > 0.0 && decay.beta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "decay kernel parameters must be positive, got {decay:?}"
                )));
            }
            Ok(decay_unchecked(s1, s2, decay))
        }
    }
}

/// Product of the parameter and fidelity kernels.
pub fn kernel_joint(a: &GpInput, b: &GpInput, h: &GpHyperparams) -> Result<f64> {
    Ok(kernel_matern52(&a.u, &b.u, h)? * kernel_fidelity(a.s, b.s, h)?)
}
