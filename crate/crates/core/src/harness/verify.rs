//! Oracle comparisons run by `cltune verify`. Each check recomputes a value
//! by an independent route and reports the worst discrepancy.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix1, Matrix1x4, Matrix4, Matrix4x1, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::acquisition::{select_next, AcquisitionConfig, KgContext};
use crate::controller::{solve_ocp, MpcConfig};
use crate::plant::{energy, step, step_substepped, CartPoleParams, StateVector};
use crate::space::{Fidelity, Observation, ParamBounds, ParamVector};
use crate::stopping::expected_improvement;
use crate::surrogate::{gp_condition_append, gp_fit, gp_predict, kernel_joint, GpHyperparams, GpModel, OutputScaling};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed discrepancy, in the units of `tolerance`.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn below(name: &'static str, error: f64, tolerance: f64, detail: String) -> Self {
        Check {
            name,
            error,
            tolerance,
            passed: error < tolerance,
            detail,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} error {:.3e} tol {:.1e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance,
            self.detail
        )
    }
}

pub type Oracle = fn() -> Check;

/// Every registered oracle, in report order.
pub const ORACLES: [(&str, Oracle); 7] = [
    ("gp_dense_solve", gp_dense_solve),
    ("gp_append_vs_refit", gp_append_vs_refit),
    ("gp_lml_density", gp_lml_density),
    ("ei_monte_carlo", ei_monte_carlo),
    ("takg_grid_scan", takg_grid_scan),
    ("riccati_lqr", riccati_lqr),
    ("energy_conservation", energy_conservation),
];

/// Run the oracles whose name contains `filter` (all if `None`).
pub fn verify(filter: Option<&str>) -> Vec<Check> {
    ORACLES
        .iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(_, oracle)| oracle())
        .collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, bounds: &ParamBounds, n: usize) -> (Vec<Observation>, GpHyperparams) {
    let data: Vec<Observation> = (0..n)
        .map(|_| {
            let theta = bounds.uniform(rng);
            let s = Fidelity::level(rng.gen_range(1..=10), 10).expect("level within grid");
            Observation::new(theta, s, -rng.gen_range(1.0..50.0))
        })
        .collect();
    let g: Vec<f64> = data.iter().map(|o| o.g).collect();
    let hyper = GpHyperparams {
        noise_variance: 1e-3,
        ..GpHyperparams::default()
    }
    .with_output(OutputScaling::from_values(&g));
    (data, hyper)
}

fn dense_gram(model: &GpModel) -> DMatrix<f64> {
    let h = model.hyperparams();
    let xs: Vec<_> = model.data().iter().map(|o| model.input(&o.theta, o.s)).collect();
    let n = xs.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| kernel_joint(&xs[i], &xs[j], h).expect("finite inputs"));
    for i in 0..n {
        k[(i, i)] += h.noise_variance + model.jitter();
    }
    k
}

/// Posterior mean and variance by an LU solve of the dense system, compared
/// with the Cholesky-based prediction. `alpha_shift` is added to every
/// weight of the cached solution before it is used; a non-zero shift must
/// make the check fail.
pub fn gp_dense_solve_with(alpha_shift: f64) -> Check {
    let bounds = ParamBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (data, hyper) = random_dataset(&mut rng, &bounds, 20);
        let model = gp_fit(bounds, &data, hyper).expect("well-conditioned dataset");
        let h = *model.hyperparams();
        let lu = dense_gram(&model).lu();
        let y = DVector::from_iterator(data.len(), data.iter().map(|o| h.output.standardize(o.g)));
        let dense_alpha = lu.solve(&y).expect("non-singular gram");
        let alpha = model.alpha().add_scalar(alpha_shift);
        for _ in 0..5 {
            let theta = bounds.uniform(&mut rng);
            let s = Fidelity::level(rng.gen_range(1..=10), 10).expect("level within grid");
            let q = model.input(&theta, s);
            let kstar = DVector::from_iterator(
                data.len(),
                data.iter().map(|o| kernel_joint(&model.input(&o.theta, o.s), &q, &h).expect("finite inputs")),
            );
            let b = lu.solve(&kstar).expect("non-singular gram");
            let mean = h.output.restore(kstar.dot(&dense_alpha));
            let var = (kernel_joint(&q, &q, &h).expect("finite inputs") - kstar.dot(&b)) * h.output.scale.powi(2);
            let p = gp_predict(&model, &theta, s);
            let from_alpha = h.output.restore(kstar.dot(&alpha));
            for (got, want) in [(p.mean, mean), (p.variance, var), (from_alpha, mean)] {
                worst = worst.max((got - want).abs() / (1.0 + want.abs()));
            }
        }
    }
    Check::below("gp_dense_solve", worst, 1e-10, "100 datasets x 5 queries, relative".into())
}

pub fn gp_dense_solve() -> Check {
    gp_dense_solve_with(0.0)
}

pub fn gp_append_vs_refit() -> Check {
    let bounds = ParamBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (data, hyper) = random_dataset(&mut rng, &bounds, 21);
        let base = gp_fit(bounds, &data[..20], hyper).expect("well-conditioned dataset");
        let appended = gp_condition_append(&base, data[20]).expect("append succeeds");
        let refit = gp_fit(bounds, &data, hyper).expect("well-conditioned dataset");
        for _ in 0..5 {
            let theta = bounds.uniform(&mut rng);
            let s = Fidelity::level(rng.gen_range(1..=10), 10).expect("level within grid");
            let (a, r) = (gp_predict(&appended, &theta, s), gp_predict(&refit, &theta, s));
            worst = worst
                .max((a.mean - r.mean).abs() / (1.0 + r.mean.abs()))
                .max((a.variance - r.variance).abs() / (1.0 + r.variance.abs()));
        }
    }
    Check::below("gp_append_vs_refit", worst, 1e-8, "20 datasets, 20+1 points".into())
}

pub fn gp_lml_density() -> Check {
    let bounds = ParamBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (data, hyper) = random_dataset(&mut rng, &bounds, 15);
        let model = gp_fit(bounds, &data, hyper).expect("well-conditioned dataset");
        let scale2 = hyper.output.scale.powi(2);
        let cov = dense_gram(&model) * scale2;
        let n = data.len();
        let r = DVector::from_iterator(n, data.iter().map(|o| o.g - hyper.output.offset));
        let lu = cov.clone().lu();
        let quad = r.dot(&lu.solve(&r).expect("non-singular covariance"));
        let log_det = lu.determinant().ln();
        let density = -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let lml = model.log_marginal_likelihood();
        worst = worst.max((lml - density).abs() / (1.0 + density.abs()));
    }
    Check::below("gp_lml_density", worst, 1e-8, "20 datasets vs Gaussian log density".into())
}

/// Closed-form EI against 1e5-sample Monte Carlo on 50 triples, in units of
/// the Monte Carlo standard error. Also checks EI at Z = 0 against σ·φ(0).
pub fn ei_monte_carlo() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let samples = 100_000;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.gen_range(-20.0..0.0);
        let sd = rng.gen_range(0.05..5.0);
        let g_star = m + sd * rng.gen_range(-2.0..2.0);
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..samples {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = (m + sd * z - g_star).max(0.0);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / samples as f64;
        let se = ((sum2 / samples as f64 - mean * mean).max(0.0) / samples as f64).sqrt();
        worst = worst.max((expected_improvement(m, sd, g_star) - mean).abs() / (se + 1e-12));
    }
    let at_zero = (expected_improvement(-3.0, 2.0, -3.0) - 2.0 * 0.398_942_280_401_432_7).abs();
    let mut check = Check::below("ei_monte_carlo", worst, 3.0, format!("50 triples, standard errors; Z = 0 off by {at_zero:.1e}"));
    check.passed &= at_zero < 1e-12;
    check
}

/// Knowledge-gradient maximizer on a slice with four pinned coordinates
/// against a 1e4-point grid scan of the same estimator.
pub fn takg_grid_scan() -> Check {
    let mut lower = [1.0; 5];
    let mut upper = [1.0; 5];
    lower[0] = 1e-2;
    upper[0] = 1e2;
    let bounds = ParamBounds::new(lower, upper).expect("valid slice bounds");
    let at = |u: f64| bounds.from_unit(&[u, 0.0, 0.0, 0.0, 0.0]);
    let truth = |u: f64| -10.0 - 8.0 * (u - 0.62).powi(2) + (6.0 * u).sin();
    let mut data = Vec::new();
    for &u in &[0.02, 0.25, 0.5, 0.98] {
        for l in 1..=10 {
            let s = Fidelity::level(l, 10).expect("level within grid");
            data.push(Observation::new(at(u), s, truth(u) * s.value()));
        }
    }
    let g: Vec<f64> = data.iter().map(|o| o.g).collect();
    let hyper = GpHyperparams {
        lengthscales: [0.2; 5],
        noise_variance: 1e-4,
        ..GpHyperparams::default()
    }
    .with_output(OutputScaling::from_values(&g));
    let model = gp_fit(bounds, &data, hyper).expect("well-conditioned dataset");
    let fidelities = Fidelity::grid(10).expect("valid grid");
    let cfg = AcquisitionConfig {
        n_fantasies: 64,
        n_inner_candidates: 64,
        seed: 5,
        ..AcquisitionConfig::default()
    };
    let ctx = KgContext::new(&model, &fidelities, &cfg).expect("context builds");
    let n = 10_000;
    let (mut best_u, mut best_v) = (0.0, f64::NEG_INFINITY);
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        let v = ctx.takg(&at(u)).expect("finite estimate").mean;
        if v > best_v {
            best_u = u;
            best_v = v;
        }
    }
    let chosen = select_next(&model, &fidelities, &cfg).expect("selection succeeds");
    let chosen_u = bounds.to_unit(&chosen)[0];
    let chosen_v = ctx.takg(&chosen).expect("finite estimate").mean;
    // Grid resolution in the value: the largest change of the estimator
    // between neighbouring grid points near the argmax.
    let step = 1.0 / n as f64;
    let slack = [-step, step]
        .iter()
        .map(|d| (ctx.takg(&at((best_u + d).clamp(0.0, 1.0))).expect("finite estimate").mean - best_v).abs())
        .fold(0.0, f64::max);
    let gap = (best_v - chosen_v).max(0.0);
    let mut check = Check::below(
        "takg_grid_scan",
        (chosen_u - best_u).abs(),
        cfg.polish_min_step + step,
        format!("selected u {chosen_u:.4}, grid argmax u {best_u:.4}, value gap {gap:.2e}"),
    );
    // A distant tie is fine as long as the value matches within resolution.
    check.passed |= gap <= slack + 1e-12;
    check
}

/// Central-difference linearization of the discrete plant step at the origin.
pub fn linearize(p: &CartPoleParams) -> (Matrix4<f64>, Matrix4x1<f64>) {
    let h = 1e-6;
    let mut a = Matrix4::zeros();
    for j in 0..4 {
        let (mut xp, mut xm): (StateVector, StateVector) = ([0.0; 4], [0.0; 4]);
        xp[j] = h;
        xm[j] = -h;
        let (fp, fm) = (step(&xp, 0.0, p), step(&xm, 0.0, p));
        for i in 0..4 {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let (fp, fm) = (step(&[0.0; 4], h, p), step(&[0.0; 4], -h, p));
    (a, Matrix4x1::from_fn(|i, _| (fp[i] - fm[i]) / (2.0 * h)))
}

/// Infinite-horizon discrete LQR gain by Riccati fixed-point iteration.
pub fn dlqr(a: &Matrix4<f64>, b: &Matrix4x1<f64>, q: &Matrix4<f64>, r: f64) -> Matrix1x4<f64> {
    let mut p = *q;
    for _ in 0..100_000 {
        let s = Matrix1::new(r) + b.transpose() * p * b;
        let k = (b.transpose() * p * a) / s[(0, 0)];
        let next = q + a.transpose() * p * a - a.transpose() * p * b * k;
        let diff = (next - p).abs().max();
        p = next;
        if diff < 1e-13 * p.abs().max() {
            break;
        }
    }
    let s = r + (b.transpose() * p * b)[(0, 0)];
    (b.transpose() * p * a) / s
}

pub fn riccati_lqr() -> Check {
    let cfg = MpcConfig::default();
    let w = [100.0, 100.0, 1.0, 1.0, 0.01];
    let (a, b) = linearize(&cfg.model);
    let q = Matrix4::from_diagonal(&Vector4::new(w[0], w[1], w[2], w[3]));
    let k = dlqr(&a, &b, &q, w[4]);
    let x0: StateVector = [0.0, 0.01, 0.0, 0.0];
    let lqr_u = -(k * Vector4::from(x0))[(0, 0)];
    let sol = solve_ocp(&x0, &ParamVector(w), &cfg, None).expect("ocp solves");
    let rel = (sol.inputs[0] - lqr_u).abs() / lqr_u.abs();
    Check::below("riccati_lqr", rel, 0.10, format!("mpc {:.5} vs lqr {lqr_u:.5}, relative", sol.inputs[0]))
}

/// Relative drift of the unforced energy over 1 s at a 1e-4 step.
pub fn energy_conservation() -> Check {
    let p = CartPoleParams::default();
    let mut x: StateVector = [0.0, 2.5, 0.3, -1.0];
    let e0 = energy(&x, &p);
    let mut worst: f64 = 0.0;
    let substeps = (p.dt / 1e-4).round() as usize;
    for _ in 0..(1.0 / p.dt).round() as usize {
        x = step_substepped(&x, 0.0, &p, substeps);
        worst = worst.max((energy(&x, &p) - e0).abs() / e0.abs());
    }
    Check::below("energy_conservation", worst, 1e-3, "1 s unforced, dt 1e-4, relative".into())
}
