use cltune::controller::{policy, ControllerMemory, MpcConfig};
use cltune::plant::{
    closed_loop_stage_cost, run_episode, step, CartPoleParams, CheckpointHook, EpisodeConfig, EpisodeTrace, RunToEnd,
    StateVector,
};
use cltune::stopping::{convergence_stop, StopDecision, StoppingConfig};
use cltune::{Observation, ParamVector, Result};
use proptest::prelude::*;

struct ConvergenceOnly(StoppingConfig);

impl CheckpointHook for ConvergenceOnly {
    fn on_checkpoint(&mut self, _: &ParamVector, state: &StateVector, _: &Observation) -> Result<StopDecision> {
        Ok(convergence_stop(state, &[0.0; 4], &self.0))
    }
}

fn run(theta: [f64; 5]) -> EpisodeTrace {
    run_episode(
        &ParamVector(theta),
        &EpisodeConfig::default(),
        &MpcConfig::default(),
        &CartPoleParams::default(),
        &mut RunToEnd,
    )
    .unwrap()
}

/// `−Σ_{k=0}^{k_l} l_cl(x_k)` straight from the stored states.
fn prefix_cost(trace: &EpisodeTrace, k: usize, q: &[f64; 4]) -> f64 {
    let mut sum = 0.0;
    for x in &trace.states[..=k] {
        sum += x.iter().zip(q).map(|(v, w)| w * v * v).sum::<f64>();
    }
    -sum
}

#[test]
fn checkpoints_are_prefix_sums_of_the_stored_trajectory() {
    let cfg = EpisodeConfig::default();
    for theta in [[1.0; 5], [50.0, 10.0, 0.1, 0.1, 0.05], [0.02, 3.0, 40.0, 0.5, 2.0]] {
        let trace = run(theta);
        assert_eq!(trace.observations.len(), cfg.checkpoints);
        for (obs, k) in trace.observations.iter().zip(cfg.checkpoint_steps()) {
            let want = prefix_cost(&trace, k, &cfg.q_cl);
            assert!((obs.g - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {want}", obs.g);
        }
        for w in trace.observations.windows(2) {
            assert!(w[1].g <= w[0].g);
        }
    }
}

#[test]
fn segment_increments_match_per_segment_sums() {
    let cfg = EpisodeConfig::default();
    let trace = run([10.0, 10.0, 1.0, 1.0, 0.1]);
    let seg = cfg.segment();
    for l in 1..trace.observations.len() {
        let segment: f64 = (l * seg + 1..=(l + 1) * seg)
            .map(|k| closed_loop_stage_cost(&trace.states[k], trace.inputs[k - 1], &cfg.q_cl))
            .sum();
        let diff = trace.observations[l - 1].g - segment - trace.observations[l].g;
        assert!(diff.abs() < 1e-12 * trace.observations[l].g.abs().max(1.0));
    }
}

#[test]
fn run_to_end_uses_every_step_and_ends_at_the_target_fidelity() {
    let cfg = EpisodeConfig::default();
    let trace = run([1.0; 5]);
    assert_eq!(trace.steps_used, cfg.steps);
    assert_eq!(trace.inputs.len(), cfg.steps);
    assert!(trace.completed());
    let last = trace.target_observation().unwrap();
    assert!(last.s.is_target());
    let full = prefix_cost(&trace, cfg.steps, &cfg.q_cl);
    assert!((last.g - full).abs() <= 1e-12 * full.abs());
}

#[test]
fn huge_epsilon_stops_at_the_first_checkpoint() {
    let cfg = EpisodeConfig::default();
    let stopping = StoppingConfig {
        epsilon: 1e6,
        convergence: true,
        ..StoppingConfig::default()
    };
    let trace = run_episode(
        &ParamVector([1.0; 5]),
        &cfg,
        &MpcConfig::default(),
        &CartPoleParams::default(),
        &mut ConvergenceOnly(stopping),
    )
    .unwrap();
    assert_eq!(trace.steps_used, cfg.segment());
    assert_eq!(trace.observations.len(), 1);
    assert!(trace.stop.is_stop());
    assert!(trace.target_observation().is_none());
}

#[test]
fn replaying_the_inputs_reproduces_the_states() {
    let trace = run([5.0, 20.0, 0.5, 0.5, 0.2]);
    let p = CartPoleParams::default();
    let mut x = EpisodeConfig::default().x0;
    assert_eq!(trace.states[0], x);
    for (k, u) in trace.inputs.iter().enumerate() {
        x = step(&x, *u, &p);
        assert_eq!(trace.states[k + 1], x);
    }
}

#[test]
fn episode_matches_a_hand_written_closed_loop() {
    let theta = ParamVector([3.0, 30.0, 0.3, 0.3, 0.05]);
    let trace = run(theta.0);
    let (mpc, p) = (MpcConfig::default(), CartPoleParams::default());
    let mut x = EpisodeConfig::default().x0;
    let mut memory = ControllerMemory::default();
    for k in 0..EpisodeConfig::default().steps {
        let (u, next) = policy(&x, &theta, &mpc, &memory).unwrap();
        memory = next;
        assert_eq!(u, trace.inputs[k]);
        x = step(&x, u, &p);
    }
    assert_eq!(x, *trace.states.last().unwrap());
}

#[test]
fn blowup_is_reported_and_keeps_earlier_observations() {
    let cfg = EpisodeConfig {
        blowup_limit: 1.05,
        ..EpisodeConfig::default()
    };
    // A nearly free input lets the controller push the cart hard, so the
    // tight limit trips within the episode.
    let trace = run_episode(
        &ParamVector([100.0, 0.01, 0.01, 0.01, 0.01]),
        &cfg,
        &MpcConfig::default(),
        &CartPoleParams::default(),
        &mut RunToEnd,
    )
    .unwrap();
    assert!(trace.failure.is_some());
    assert!(!trace.completed());
    assert_eq!(trace.inputs.len(), trace.steps_used);
    assert_eq!(trace.observations.len(), trace.steps_used / cfg.segment());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn episodes_are_deterministic_and_costs_non_increasing(
        logw in prop::array::uniform5(-2.0..2.0f64),
    ) {
        let theta = logw.map(|v| 10f64.powf(v));
        let a = run(theta);
        let b = run(theta);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.steps_used <= EpisodeConfig::default().steps);
        for w in a.observations.windows(2) {
            prop_assert!(w[1].g <= w[0].g);
        }
    }
}
