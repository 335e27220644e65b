use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cart-pole state `(cart position, pole angle, cart velocity, pole angular
/// velocity)`; angle `0` is upright.
pub type StateVector = [f64; 4];

/// Physical constants of the frictionless cart-pole and its sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's centre of mass.
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.81,
            dt: 0.05,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("half_length", self.half_length),
            ("gravity", self.gravity),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("plant.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn total_mass(&self) -> f64 {
        self.cart_mass + self.pole_mass
    }
}

/// Continuous-time derivative of the frictionless cart-pole under force `u`.
pub fn dynamics(x: &StateVector, u: f64, p: &CartPoleParams) -> StateVector {
    let [_, phi, v, omega] = *x;
    let (sin, cos) = phi.sin_cos();
    let m = p.total_mass();
    let ml = p.pole_mass * p.half_length;
    let temp = (u + ml * omega * omega * sin) / m;
    let phi_acc = (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / m));
    let pos_acc = temp - ml * phi_acc * cos / m;
    [v, omega, pos_acc, phi_acc]
}

fn axpy(x: &StateVector, h: f64, k: &StateVector) -> StateVector {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]]
}

/// One classical Runge-Kutta step of length `h` with the input held constant.
pub fn rk4(x: &StateVector, u: f64, p: &CartPoleParams, h: f64) -> StateVector {
    let k1 = dynamics(x, u, p);
    let k2 = dynamics(&axpy(x, 0.5 * h, &k1), u, p);
    let k3 = dynamics(&axpy(x, 0.5 * h, &k2), u, p);
    let k4 = dynamics(&axpy(x, h, &k3), u, p);
    let mut next = *x;
    for i in 0..4 {
        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    next
}

/// Advance the plant by one sampling period `p.dt` (zero-order hold).
pub fn step(x: &StateVector, u: f64, p: &CartPoleParams) -> StateVector {
    rk4(x, u, p, p.dt)
}

/// `substeps` RK4 steps covering one sampling period.
pub fn step_substepped(x: &StateVector, u: f64, p: &CartPoleParams, substeps: usize) -> StateVector {
    let h = p.dt / substeps as f64;
    (0..substeps).fold(*x, |acc, _| rk4(&acc, u, p, h))
}

/// Mechanical energy (kinetic plus potential, pivot height as reference).
pub fn energy(x: &StateVector, p: &CartPoleParams) -> f64 {
    let [_, phi, v, omega] = *x;
    let l = p.half_length;
    let (sin, cos) = phi.sin_cos();
    // Centre-of-mass velocity of the pole: horizontal v + lω cosφ, vertical −lω sinφ.
    let kinetic = 0.5 * p.cart_mass * v * v
        + 0.5 * p.pole_mass * ((v + l * omega * cos).powi(2) + (l * omega * sin).powi(2))
        + 0.5 * (p.pole_mass * l * l / 3.0) * omega * omega;
    kinetic + p.pole_mass * p.gravity * l * cos
}

/// Closed-loop stage cost `xᵀ diag(q) x`; the input does not enter.
pub fn closed_loop_stage_cost(x: &StateVector, _u: f64, q: &[f64; 4]) -> f64 {
    (0..4).map(|i| q[i] * x[i] * x[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_and_hanging_equilibria() {
        let p = CartPoleParams::default();
        assert_eq!(dynamics(&[3.7, 0.0, 0.0, 0.0], 0.0, &p), [0.0; 4]);
        let d = dynamics(&[0.0, std::f64::consts::PI, 0.0, 0.0], 0.0, &p);
        assert!(d.iter().all(|v| v.abs() < 1e-14));
        let x = [0.2, 0.0, 0.0, 0.0];
        assert_eq!(step(&x, 0.0, &p), x);
    }

    fn fd_relative_error(x: &StateVector, u: f64, p: &CartPoleParams, reference: &StateVector) -> f64 {
        let next = step(x, u, p);
        let scale = reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (0..4).map(|i| ((next[i] - x[i]) / p.dt - reference[i]).abs() / scale).fold(0.0, f64::max)
    }

    #[test]
    fn step_approaches_derivative_for_small_dt() {
        let p = CartPoleParams { dt: 1e-6, ..CartPoleParams::default() };
        // The forward difference carries an O(dt·|ḟ|) term, so the plain check
        // uses a slowly varying state.
        let x = [0.3, 0.02, 0.8, -0.1];
        assert!(fd_relative_error(&x, 0.2, &p, &dynamics(&x, 0.2, &p)) < 1e-6);
        // Against the midpoint derivative the difference is O(dt²) anywhere.
        let fast = [0.3, 0.4, -0.5, 1.2];
        let d = dynamics(&fast, 2.0, &p);
        let mid = dynamics(&std::array::from_fn(|i| fast[i] + 0.5 * p.dt * d[i]), 2.0, &p);
        assert!(fd_relative_error(&fast, 2.0, &p, &mid) < 1e-8);
    }

    fn substep_gap(x: &StateVector, u: f64, p: &CartPoleParams) -> f64 {
        let coarse = step(x, u, p);
        let fine = step_substepped(x, u, p, 10);
        (0..4).map(|i| (coarse[i] - fine[i]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rk4_local_error_is_fifth_order() {
        let p = CartPoleParams::default();
        let half = CartPoleParams { dt: p.dt / 2.0, ..p };
        let x = [1.0, 0.3, 0.0, 0.0];
        let (e1, e2) = (substep_gap(&x, 3.0, &p), substep_gap(&x, 3.0, &half));
        assert!(e1 < 1e-5, "{e1}");
        // Halving dt divides the local error by about 2^5.
        let ratio = e1 / e2;
        assert!((24.0..40.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn unforced_energy_is_conserved() {
        let p = CartPoleParams { dt: 1e-4, ..CartPoleParams::default() };
        let mut x = [0.0, 0.8, 0.5, -1.0];
        let e0 = energy(&x, &p);
        for _ in 0..10_000 {
            x = step(&x, 0.0, &p);
        }
        assert!(((energy(&x, &p) - e0) / e0).abs() < 1e-3);
    }

    #[test]
    fn stage_cost_hand_values() {
        let q = [1.0, 1.0, 0.1, 0.1];
        assert_eq!(closed_loop_stage_cost(&[0.0; 4], 5.0, &q), 0.0);
        assert_eq!(closed_loop_stage_cost(&[0.0, 1.0, 0.0, 0.0], 0.0, &[1.0; 4]), 1.0);
        assert!((closed_loop_stage_cost(&[1.0, 0.5, 2.0, 0.0], 0.0, &q) - 1.65).abs() < 1e-15);
    }
}
