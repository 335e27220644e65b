//! Small bound-constrained local optimizers used for hyperparameter fitting
//! and acquisition maximization.

/// Result of a local search.
#[derive(Debug, Clone)]
pub struct LocalOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Projected limited-memory BFGS minimizing `f`, where `f` returns the value
/// and gradient. Each accepted step strictly decreases `f`; a non-finite
/// value is treated as a failed trial point.
pub fn lbfgs_box<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], max_iter: usize) -> LocalOptimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const MEMORY: usize = 6;
    let dim = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut grad) = f(&x);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return LocalOptimum { x, value: fx, evaluations };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    for _ in 0..max_iter {
        // Freeze coordinates sitting on a bound with the gradient pushing outward.
        let active: Vec<bool> = (0..dim)
            .map(|i| (x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0))
            .collect();
        let free_grad: Vec<f64> = (0..dim).map(|i| if active[i] { 0.0 } else { grad[i] }).collect();
        let gnorm = free_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-8 {
            break;
        }

        // Two-loop recursion.
        let mut q = free_grad.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1.0 / gnorm.max(1.0);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        let mut dir: Vec<f64> = (0..dim).map(|i| if active[i] { 0.0 } else { -q[i] }).collect();
        if dot(&dir, &free_grad) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            let scale = 1.0 / gnorm.max(1.0);
            dir = free_grad.iter().map(|g| -g * scale).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = (0..dim).map(|i| x[i] + step * dir[i]).collect();
            project(&mut trial, lower, upper);
            let moved: Vec<f64> = (0..dim).map(|i| trial[i] - x[i]).collect();
            let decrease = dot(&grad, &moved);
            if moved.iter().all(|m| m.abs() < 1e-14) {
                break;
            }
            let (ft, gt) = f(&trial);
            evaluations += 1;
            if ft.is_finite() && ft < fx && ft <= fx + 1e-4 * decrease.min(0.0) {
                accepted = Some((trial, ft, gt, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt, moved)) = accepted else {
            break;
        };
        let ydiff: Vec<f64> = (0..dim).map(|i| gt[i] - grad[i]).collect();
        let curvature = dot(&moved, &ydiff);
        if curvature > 1e-12 {
            s_hist.push(moved);
            y_hist.push(ydiff);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let improvement = fx - ft;
        x = trial;
        fx = ft;
        grad = gt;
        if improvement < 1e-9 * (1.0 + fx.abs()) {
            break;
        }
    }
    LocalOptimum { x, value: fx, evaluations }
}

/// Compass search maximizing `f` over the coordinates listed in `dims`,
/// inside `[0, 1]`. Steps halve whenever no coordinate move improves.
pub fn coordinate_ascent<F>(
    mut f: F,
    x0: &[f64],
    start_value: f64,
    dims: &[usize],
    initial_step: f64,
    min_step: f64,
    max_evals: usize,
) -> LocalOptimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = start_value;
    let mut step = initial_step;
    let mut evaluations = 0;
    'outer: while step >= min_step {
        let mut improved = false;
        for &d in dims {
            for sign in [1.0, -1.0] {
                if evaluations >= max_evals {
                    break 'outer;
                }
                let candidate = (x[d] + sign * step).clamp(0.0, 1.0);
                if candidate == x[d] {
                    continue;
                }
                let mut trial = x.clone();
                trial[d] = candidate;
                let ft = f(&trial);
                evaluations += 1;
                if ft.is_finite() && ft > fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    LocalOptimum { x, value: fx, evaluations }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lbfgs_finds_rosenbrock_minimum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let r = lbfgs_box(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], 500);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn lbfgs_respects_bounds() {
        let f = |x: &[f64]| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]);
        let r = lbfgs_box(f, &[0.0], &[-1.0], &[1.0], 50);
        assert!((r.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coordinate_ascent_climbs_concave_bowl() {
        let f = |x: &[f64]| -((x[0] - 0.3).powi(2) + (x[1] - 0.8).powi(2));
        let x0 = [0.5, 0.5];
        let r = coordinate_ascent(f, &x0, f(&x0), &[0, 1], 0.25, 1e-4, 10_000);
        assert!((r.x[0] - 0.3).abs() < 1e-3 && (r.x[1] - 0.8).abs() < 1e-3);
    }
}
