use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AcquisitionConfig;
use crate::error::Result;
use crate::optim::coordinate_ascent;
use crate::space::{Fidelity, ParamVector, N_PARAMS};
use crate::stopping::expected_improvement;
use crate::surrogate::{GpInput, GpModel};

/// Expected improvement over `g_star` of the target-fidelity value at `theta`.
pub fn expected_improvement_at(model: &GpModel, theta: &ParamVector, g_star: f64) -> f64 {
    let p = model.predict(theta, Fidelity::TARGET);
    expected_improvement(p.mean, p.sd(), g_star)
}

fn ei_unit(model: &GpModel, u: &[f64], g_star: f64) -> f64 {
    let u: [f64; N_PARAMS] = u.try_into().expect("unit vector has N_PARAMS entries");
    let p = model.predict_input(&GpInput { u, s: 1.0 });
    expected_improvement(p.mean, p.sd(), g_star)
}

/// Single-fidelity baseline acquisition: maximize expected improvement by
/// screening a Latin-hypercube sample and polishing the best points.
pub fn select_next_ei(model: &GpModel, g_star: f64, cfg: &AcquisitionConfig) -> Result<ParamVector> {
    cfg.validate()?;
    let bounds = model.bounds();
    let free = bounds.free_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = bounds.latin_hypercube_unit(cfg.n_inner_candidates.max(cfg.n_restarts), &mut rng);
    let mut scored: Vec<(f64, [f64; N_PARAMS])> = starts.iter().map(|u| (ei_unit(model, u, g_star), *u)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored.iter().find(|(v, _)| v.is_finite()).copied();
    if !free.is_empty() {
        for &(value, u) in scored.iter().filter(|(v, _)| v.is_finite()).take(cfg.n_polish) {
            let r = coordinate_ascent(|x| ei_unit(model, x, g_star), &u, value, &free, 0.1, cfg.polish_min_step, 5 * cfg.polish_evals);
            if best.is_none_or(|(b, _)| r.value > b) {
                best = Some((r.value, r.x.try_into().expect("unit vector has N_PARAMS entries")));
            }
        }
    }
    Ok(match best {
        Some((_, u)) => bounds.from_unit(&u),
        None => {
            log::warn!("expected improvement was non-finite at every start; sampling uniformly");
            bounds.uniform(&mut rng)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Observation, ParamBounds};
    use crate::surrogate::{GpHyperparams, OutputScaling};

    #[test]
    fn ei_prefers_unexplored_over_worst_point() {
        let b = ParamBounds::default();
        let data = vec![
            Observation::new(ParamVector([1.0; 5]), Fidelity::TARGET, -3.0),
            Observation::new(ParamVector([10.0; 5]), Fidelity::TARGET, -30.0),
        ];
        let h = GpHyperparams {
            fidelity: None,
            noise_variance: 1e-6,
            ..GpHyperparams::default()
        }
        .with_output(OutputScaling::from_values(&[-3.0, -30.0]));
        let model = GpModel::fit(b, &data, h).unwrap();
        let worst = expected_improvement_at(&model, &ParamVector([10.0; 5]), -3.0);
        assert!(worst < 1e-3);
        let next = select_next_ei(&model, -3.0, &AcquisitionConfig::default()).unwrap();
        assert!(b.contains(&next));
        assert!(expected_improvement_at(&model, &next, -3.0) > worst);
        assert_eq!(next, select_next_ei(&model, -3.0, &AcquisitionConfig::default()).unwrap());
    }
}
