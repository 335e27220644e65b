use cltune::controller::{solve_ocp, MpcConfig};
use cltune::plant::{step, CartPoleParams, StateVector};
use cltune::ParamVector;
use nalgebra::{Matrix1, Matrix4, Matrix4x1};

/// Central-difference linearization of the discrete plant step at the origin.
pub fn linearize(p: &CartPoleParams) -> (Matrix4<f64>, Matrix4x1<f64>) {
    let h = 1e-6;
    let mut a = Matrix4::zeros();
    for j in 0..4 {
        let mut xp: StateVector = [0.0; 4];
        let mut xm: StateVector = [0.0; 4];
        xp[j] = h;
        xm[j] = -h;
        let (fp, fm) = (step(&xp, 0.0, p), step(&xm, 0.0, p));
        for i in 0..4 {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let (fp, fm) = (step(&[0.0; 4], h, p), step(&[0.0; 4], -h, p));
    let b = Matrix4x1::from_fn(|i, _| (fp[i] - fm[i]) / (2.0 * h));
    (a, b)
}

/// Infinite-horizon discrete LQR gain by Riccati fixed-point iteration.
pub fn dlqr(a: &Matrix4<f64>, b: &Matrix4x1<f64>, q: &Matrix4<f64>, r: f64) -> nalgebra::Matrix1x4<f64> {
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

/// Weights whose closed loop settles well inside the 20-step horizon, so the
/// finite-horizon first input is close to the infinite-horizon one.
const THETA: [f64; 5] = [100.0, 100.0, 1.0, 1.0, 0.01];

#[test]
fn first_input_matches_lqr_for_small_perturbation() {
    let cfg = MpcConfig::default();
    let theta = ParamVector(THETA);
    let (a, b) = linearize(&cfg.model);
    let q = Matrix4::from_diagonal(&nalgebra::Vector4::new(THETA[0], THETA[1], THETA[2], THETA[3]));
    let k = dlqr(&a, &b, &q, THETA[4]);
    let x0: StateVector = [0.0, 0.01, 0.0, 0.0];
    let lqr_u = -(k * nalgebra::Vector4::from(x0))[(0, 0)];
    let sol = solve_ocp(&x0, &theta, &cfg, None).unwrap();
    let rel = (sol.inputs[0] - lqr_u).abs() / lqr_u.abs();
    assert!(rel < 0.10, "mpc {} vs lqr {lqr_u}", sol.inputs[0]);
}
