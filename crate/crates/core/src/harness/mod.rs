//! Tuning campaigns, their configuration, logs and reports.

mod campaign;
mod config;
mod report;
mod verify;

pub use campaign::{
    best_so_far_curve, derive_seed, initial_design, run_baseline, run_campaign, run_methods, CheckpointRecord, EpisodeRecord, Phase,
    RunLog,
};
pub use config::{CampaignConfig, GpSettings, Method};
pub use report::{
    aggregate_envelope, curves_csv, curves_svg, emit_report, jsonl_string, log_path, median, method_envelopes,
    read_jsonl, read_logs, step_grid, value_at, write_curves, write_jsonl, EnvelopePoint, CSV_HEADER,
};
pub use verify::{
    dlqr, gp_dense_solve_with, linearize, verify, Check, Oracle, ORACLES,
};
