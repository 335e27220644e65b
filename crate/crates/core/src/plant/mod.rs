//! Cart-pole plant and closed-loop episode execution.

mod dynamics;
mod episode;

pub use dynamics::{
    closed_loop_stage_cost, dynamics, energy, rk4, step, step_substepped, CartPoleParams, StateVector,
};
pub use episode::{run_episode, CheckpointHook, EpisodeConfig, EpisodeTrace, RunToEnd};
