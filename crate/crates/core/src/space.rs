//! Search-space primitives shared by the surrogate, the acquisition and the
//! harness: controller weights, fidelities, observations and box bounds.
//!
//! The surrogate never sees raw weights. Each weight is mapped to log-space
//! and then affinely onto `[0, 1]`, so that a unit step in the kernel input
//! corresponds to a constant multiplicative change of the weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tuned controller weights (four state weights plus one input weight).
pub const N_PARAMS: usize = 5;

/// Controller weights `θ`: `θ[0..4]` is the diagonal of the MPC state weight,
/// `θ[4]` the scalar input weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub [f64; N_PARAMS]);

impl ParamVector {
    pub fn new(theta: [f64; N_PARAMS]) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "controller weights must be finite and strictly positive, got {theta:?}"
            )));
        }
        Ok(ParamVector(theta))
    }

    pub fn state_weights(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn input_weight(&self) -> f64 {
        self.0[4]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ParamVector(self.0.map(|v| v * factor))
    }
}

/// Position along the closed-loop time axis, `s ∈ (0, 1]`; `s = 1` is the
/// complete episode.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fidelity(f64);

impl Fidelity {
    pub const TARGET: Fidelity = Fidelity(1.0);

    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fidelity must lie in (0, 1], got {s}"
            )));
        }
        Ok(Fidelity(s))
    }

    /// Grid level `level / levels`, computed as a single division so that
    /// `k / M` and `l / L` produce bit-identical values.
    pub fn level(level: usize, levels: usize) -> Result<Self> {
        if levels == 0 || level == 0 || level > levels {
            return Err(Error::InvalidArgument(format!(
                "fidelity level {level} outside 1..={levels}"
            )));
        }
        Ok(Fidelity(level as f64 / levels as f64))
    }

    /// The uniform grid `{1/L, 2/L, …, 1}`.
    pub fn grid(levels: usize) -> Result<Vec<Self>> {
        (1..=levels).map(|l| Self::level(l, levels)).collect()
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_target(self) -> bool {
        self.0 == 1.0
    }
}

/// One partial-performance observation `(θ, s, ḡ(θ, s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub theta: ParamVector,
    pub s: Fidelity,
    pub g: f64,
}

impl Observation {
    pub fn new(theta: ParamVector, s: Fidelity, g: f64) -> Self {
        Observation { theta, s, g }
    }
}

/// Box bounds on the controller weights, searched in log-space.
///
/// A coordinate with `lower == upper` is pinned: it maps to unit coordinate
/// `0` and is skipped by searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            lower: [1e-2; N_PARAMS],
            upper: [1e2; N_PARAMS],
        }
    }
}

impl ParamBounds {
    pub fn new(lower: [f64; N_PARAMS], upper: [f64; N_PARAMS]) -> Result<Self> {
        let bounds = ParamBounds { lower, upper };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..N_PARAMS {
            let (lo, hi) = (self.lower[d], self.upper[d]);
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!(
                    "parameter bound {d} must satisfy 0 < lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_pinned(&self, d: usize) -> bool {
        self.lower[d] == self.upper[d]
    }

    /// Indices of coordinates that are free to move.
    pub fn free_dims(&self) -> Vec<usize> {
        (0..N_PARAMS).filter(|&d| !self.is_pinned(d)).collect()
    }

    pub fn contains(&self, theta: &ParamVector) -> bool {
        theta
            .0
            .iter()
            .enumerate()
            .all(|(d, v)| *v >= self.lower[d] && *v <= self.upper[d])
    }

    /// Log-space affine map onto `[0, 1]^5`. Values outside the box map
    /// outside the unit cube; nothing is clamped here.
    pub fn to_unit(&self, theta: &ParamVector) -> [f64; N_PARAMS] {
        let mut u = [0.0; N_PARAMS];
        for d in 0..N_PARAMS {
            if self.is_pinned(d) {
                continue;
            }
            let (lo, hi) = (self.lower[d].ln(), self.upper[d].ln());
            u[d] = (theta.0[d].ln() - lo) / (hi - lo);
        }
        u
    }

    /// Inverse of [`to_unit`](Self::to_unit), clamping the unit coordinates
    /// into `[0, 1]` so the result always lies in the box.
    pub fn from_unit(&self, u: &[f64; N_PARAMS]) -> ParamVector {
        let mut theta = [0.0; N_PARAMS];
        for d in 0..N_PARAMS {
            if self.is_pinned(d) {
                theta[d] = self.lower[d];
                continue;
            }
            let (lo, hi) = (self.lower[d].ln(), self.upper[d].ln());
            let t = u[d].clamp(0.0, 1.0);
            theta[d] = (lo + t * (hi - lo)).exp().clamp(self.lower[d], self.upper[d]);
        }
        ParamVector(theta)
    }

    /// Latin-hypercube sample of `n` points in the unit cube. Pinned
    /// coordinates are left at `0`.
    pub fn latin_hypercube_unit<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<[f64; N_PARAMS]> {
        let mut points = vec![[0.0; N_PARAMS]; n];
        if n == 0 {
            return points;
        }
        for d in self.free_dims() {
            let mut strata: Vec<usize> = (0..n).collect();
            // Fisher-Yates on the strata so every coordinate gets its own permutation.
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                strata.swap(i, j);
            }
            for (point, stratum) in points.iter_mut().zip(strata) {
                point[d] = (stratum as f64 + rng.gen::<f64>()) / n as f64;
            }
        }
        points
    }

    pub fn latin_hypercube<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<ParamVector> {
        self.latin_hypercube_unit(n, rng)
            .iter()
            .map(|u| self.from_unit(u))
            .collect()
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut u = [0.0; N_PARAMS];
        for d in self.free_dims() {
            u[d] = rng.gen::<f64>();
        }
        self.from_unit(&u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_vector_rejects_non_positive() {
        assert!(ParamVector::new([1.0, 1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(ParamVector::new([1.0, f64::NAN, 1.0, 1.0, 1.0]).is_err());
        assert!(ParamVector::new([1.0; 5]).is_ok());
    }

    #[test]
    fn fidelity_grid_matches_step_ratio() {
        let grid = Fidelity::grid(10).unwrap();
        assert_eq!(grid.len(), 10);
        assert!(grid[9].is_target());
        for (l, s) in grid.iter().enumerate() {
            let k = (l + 1) * 8;
            assert_eq!(s.value(), k as f64 / 80.0);
        }
        assert!(Fidelity::new(0.0).is_err());
        assert!(Fidelity::new(1.5).is_err());
    }

    #[test]
    fn unit_map_round_trips() {
        let b = ParamBounds::default();
        let theta = ParamVector([0.05, 3.0, 17.0, 99.0, 0.01]);
        let back = b.from_unit(&b.to_unit(&theta));
        for d in 0..N_PARAMS {
            assert!((back.0[d] - theta.0[d]).abs() < 1e-12 * theta.0[d]);
        }
    }

    #[test]
    fn pinned_coordinates_stay_fixed() {
        let b = ParamBounds::new([2.0, 1.0, 1.0, 1.0, 1.0], [2.0, 10.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(b.free_dims(), vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for theta in b.latin_hypercube(20, &mut rng) {
            assert_eq!(theta.0[0], 2.0);
            assert!(b.contains(&theta));
        }
    }

    #[test]
    fn latin_hypercube_hits_every_stratum() {
        let b = ParamBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let pts = b.latin_hypercube_unit(n, &mut rng);
        for d in 0..N_PARAMS {
            let mut seen = vec![false; n];
            for p in &pts {
                seen[(p[d] * n as f64).floor() as usize] = true;
            }
            assert!(seen.iter().all(|s| *s));
        }
    }
}
