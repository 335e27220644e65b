//! Weight-parameterized MPC for the cart-pole, solved by box-constrained iLQR.
//!
//! The prediction model is the plant's own RK4 step. Stage cost is
//! `xᵀQx + R u²` with `Q = diag(θ₀..θ₃)`, `R = θ₄`, and the terminal cost
//! reuses `Q`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{step, CartPoleParams, StateVector};
use crate::space::ParamVector;

type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub u_max: f64,
    pub max_iter: usize,
    /// Relative cost decrease below which iLQR stops.
    pub tolerance: f64,
    /// Prediction model; set from the plant so the two never disagree.
    #[serde(skip)]
    pub model: CartPoleParams,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 20,
            u_max: 15.0,
            max_iter: 100,
            tolerance: 1e-9,
            model: CartPoleParams::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("mpc.horizon must be at least 1".into()));
        }
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return Err(Error::Config(format!("mpc.u_max must be positive, got {}", self.u_max)));
        }
        if self.max_iter == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::Config("mpc.max_iter must be >= 1 and mpc.tolerance >= 0".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<f64>,
    pub states: Vec<StateVector>,
    pub cost: f64,
    pub converged: bool,
    /// Cost after initialization and after every accepted iLQR step.
    pub cost_history: Vec<f64>,
}

impl OcpSolution {
    /// Inputs shifted one step forward, padded with zero.
    pub fn shifted_inputs(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.inputs.iter().skip(1).copied().collect();
        u.push(0.0);
        u
    }
}

/// `xᵀ diag(θ₀..θ₃) x + θ₄ u²`.
pub fn stage_cost(x: &StateVector, u: f64, theta: &ParamVector) -> f64 {
    terminal_cost(x, theta) + theta.input_weight() * u * u
}

fn terminal_cost(x: &StateVector, theta: &ParamVector) -> f64 {
    let q = theta.state_weights();
    (0..4).map(|i| q[i] * x[i] * x[i]).sum()
}

fn rollout(x0: &StateVector, inputs: &[f64], model: &CartPoleParams) -> Vec<StateVector> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    for &u in inputs {
        let next = step(states.last().unwrap(), u, model);
        states.push(next);
    }
    states
}

fn trajectory_cost(states: &[StateVector], inputs: &[f64], theta: &ParamVector) -> f64 {
    let running: f64 = inputs.iter().zip(states).map(|(u, x)| stage_cost(x, *u, theta)).sum();
    running + terminal_cost(states.last().unwrap(), theta)
}

/// Central-difference Jacobians `(A, B)` of the discrete step.
fn linearize(x: &StateVector, u: f64, model: &CartPoleParams) -> (Mat4, [f64; 4]) {
    let mut a = [[0.0; 4]; 4];
    for j in 0..4 {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (step(&xp, u, model), step(&xm, u, model));
        for i in 0..4 {
            a[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let h = 1e-6 * u.abs().max(1.0);
    let (fp, fm) = (step(x, u + h, model), step(x, u - h, model));
    let b = std::array::from_fn(|i| (fp[i] - fm[i]) / (2.0 * h));
    (a, b)
}

struct Gains {
    k: Vec<f64>,
    gain: Vec<[f64; 4]>,
}

/// Backward Riccati sweep; `None` when the regularized `Q_uu` is not positive.
fn backward_pass(
    states: &[StateVector],
    inputs: &[f64],
    jac: &[(Mat4, [f64; 4])],
    theta: &ParamVector,
    u_max: f64,
    mu: f64,
) -> Option<Gains> {
    let n = inputs.len();
    let q = theta.state_weights();
    let r = theta.input_weight();
    let xn = states[n];
    let mut vx: [f64; 4] = std::array::from_fn(|i| 2.0 * q[i] * xn[i]);
    let mut vxx: Mat4 = [[0.0; 4]; 4];
    for i in 0..4 {
        vxx[i][i] = 2.0 * q[i];
    }
    let mut k = vec![0.0; n];
    let mut gain = vec![[0.0; 4]; n];
    for t in (0..n).rev() {
        let (a, b) = &jac[t];
        let x = &states[t];
        let u = inputs[t];
        // Vxx·A and Vxx·B
        let mut va = [[0.0; 4]; 4];
        let mut vb = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                va[i][j] = (0..4).map(|m| vxx[i][m] * a[m][j]).sum();
            }
            vb[i] = (0..4).map(|m| vxx[i][m] * b[m]).sum();
        }
        let mut qx = [0.0; 4];
        let mut qxx = [[0.0; 4]; 4];
        let mut qux = [0.0; 4];
        for i in 0..4 {
            qx[i] = 2.0 * q[i] * x[i] + (0..4).map(|m| a[m][i] * vx[m]).sum::<f64>();
            for j in 0..4 {
                qxx[i][j] = (0..4).map(|m| a[m][i] * va[m][j]).sum();
            }
            qxx[i][i] += 2.0 * q[i];
            qux[i] = (0..4).map(|m| b[m] * va[m][i]).sum();
        }
        let qu = 2.0 * r * u + (0..4).map(|m| b[m] * vx[m]).sum::<f64>();
        let quu = 2.0 * r + (0..4).map(|m| b[m] * vb[m]).sum::<f64>();
        let quu_reg = quu + mu;
        if !(quu_reg > 0.0) || !quu_reg.is_finite() {
            return None;
        }
        let mut kt = -qu / quu_reg;
        let mut gt: [f64; 4] = std::array::from_fn(|i| -qux[i] / quu_reg);
        // Scalar input: if the step leaves the box the input is saturated, so
        // the feedback gain is dropped for this stage.
        let target = u + kt;
        if target.abs() > u_max {
            kt = target.clamp(-u_max, u_max) - u;
            gt = [0.0; 4];
        }
        for i in 0..4 {
            vx[i] = qx[i] + gt[i] * quu * kt + gt[i] * qu + qux[i] * kt;
            for j in 0..4 {
                vxx[i][j] = qxx[i][j] + gt[i] * quu * gt[j] + gt[i] * qux[j] + qux[i] * gt[j];
            }
        }
        for i in 0..4 {
            for j in 0..i {
                let avg = 0.5 * (vxx[i][j] + vxx[j][i]);
                vxx[i][j] = avg;
                vxx[j][i] = avg;
            }
        }
        k[t] = kt;
        gain[t] = gt;
    }
    Some(Gains { k, gain })
}

/// Solve the finite-horizon OCP from `x0`.
///
/// Starts from `warm_start` inputs when given (padded or truncated to the
/// horizon and clamped into the box), otherwise from zero input. The cost
/// never increases from one accepted iterate to the next.
pub fn solve_ocp(x0: &StateVector, theta: &ParamVector, cfg: &MpcConfig, warm_start: Option<&[f64]>) -> Result<OcpSolution> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial state must be finite, got {x0:?}")));
    }
    let n = cfg.horizon;
    let mut inputs: Vec<f64> = match warm_start {
        Some(w) => (0..n).map(|t| w.get(t).copied().unwrap_or(0.0).clamp(-cfg.u_max, cfg.u_max)).collect(),
        None => vec![0.0; n],
    };
    let mut states = rollout(x0, &inputs, &cfg.model);
    let mut cost = trajectory_cost(&states, &inputs, theta);
    let mut history = vec![cost];
    let mut converged = false;
    // Levenberg damping on Q_uu, relative to the input weight so that a
    // common scaling of θ leaves the iterates unchanged.
    let mu_unit = 2.0 * theta.input_weight();
    let mut mu = 0.0;

    for _ in 0..cfg.max_iter {
        if cost <= f64::MIN_POSITIVE {
            converged = true;
            break;
        }
        let jac: Vec<(Mat4, [f64; 4])> = (0..n).map(|t| linearize(&states[t], inputs[t], &cfg.model)).collect();
        let mut accepted = None;
        while mu <= 1e10 * mu_unit {
            let Some(gains) = backward_pass(&states, &inputs, &jac, theta, cfg.u_max, mu) else {
                mu = (mu * 10.0).max(1e-6 * mu_unit);
                continue;
            };
            let mut alpha = 1.0;
            for _ in 0..12 {
                let mut x = *x0;
                let mut new_inputs = Vec::with_capacity(n);
                let mut new_states = Vec::with_capacity(n + 1);
                new_states.push(x);
                for t in 0..n {
                    let dx: f64 = (0..4).map(|i| gains.gain[t][i] * (x[i] - states[t][i])).sum();
                    let u = (inputs[t] + alpha * gains.k[t] + dx).clamp(-cfg.u_max, cfg.u_max);
                    x = step(&x, u, &cfg.model);
                    new_inputs.push(u);
                    new_states.push(x);
                }
                let new_cost = trajectory_cost(&new_states, &new_inputs, theta);
                if new_cost.is_finite() && new_cost < cost {
                    accepted = Some((new_inputs, new_states, new_cost));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            // Line search exhausted: damp harder, or stop if the step is
            // already negligible.
            if gains.k.iter().all(|k| k.abs() < 1e-12 * cfg.u_max) {
                break;
            }
            mu = (mu * 10.0).max(1e-6 * mu_unit);
        }
        let Some((new_inputs, new_states, new_cost)) = accepted else {
            // No descent direction left: a local minimum if the gradient step
            // vanished, otherwise the solver stalled.
            converged = mu <= 1e10 * mu_unit;
            break;
        };
        let decrease = cost - new_cost;
        inputs = new_inputs;
        states = new_states;
        cost = new_cost;
        history.push(cost);
        mu = if mu > 0.0 { mu / 10.0 } else { 0.0 };
        if mu < 1e-6 * mu_unit {
            mu = 0.0;
        }
        if decrease <= cfg.tolerance * (history[history.len() - 2]) {
            converged = true;
            break;
        }
    }
    Ok(OcpSolution {
        inputs,
        states,
        cost,
        converged,
        cost_history: history,
    })
}

/// Warm-start memory carried from one control step to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerMemory {
    pub previous: Option<OcpSolution>,
}

/// Receding-horizon policy: solve, apply the first input, keep the solution
/// for the next call.
pub fn policy(x: &StateVector, theta: &ParamVector, cfg: &MpcConfig, memory: &ControllerMemory) -> Result<(f64, ControllerMemory)> {
    let warm = memory.previous.as_ref().map(|s| s.shifted_inputs());
    let solution = solve_ocp(x, theta, cfg, warm.as_deref())?;
    if !solution.converged {
        log::debug!("iLQR did not converge at state {x:?}; applying best iterate");
    }
    let u = solution.inputs[0].clamp(-cfg.u_max, cfg.u_max);
    Ok((u, ControllerMemory { previous: Some(solution) }))
}
