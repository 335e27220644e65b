use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cltune::harness::{self, CampaignConfig, Method, RunLog};
use cltune::Result;

#[derive(Parser)]
#[command(name = "cltune", about = "Closed-loop MPC weight tuning with trace-aware multi-fidelity BO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over the configured seeds (or a single `--seed`).
    Run(RunArgs),
    /// Run all five methods over the configured seeds and write the report.
    Ablate(CommonArgs),
    /// Aggregate JSONL logs under `--out` into curves.csv and curves.svg.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the oracle comparison suite.
    Verify {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        only: Option<String>,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Total closed-loop step budget per run.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    method: Option<Method>,
}

fn load_config(path: Option<&Path>) -> Result<CampaignConfig> {
    match path {
        Some(p) => CampaignConfig::load(p),
        None => Ok(CampaignConfig::default()),
    }
}

fn effective_config(args: &CommonArgs, method: Option<Method>) -> Result<CampaignConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = method {
        cfg = cfg.with_method(m);
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(s) = args.seed {
        cfg = cfg.with_seeds(vec![s]);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(logs: &[RunLog]) {
    for log in logs {
        let secs: f64 = log.timings.iter().sum();
        println!(
            "{:<12} seed {:>3}: {:>3} episodes, {:>5} steps, incumbent {}, {:.1} s",
            log.method.name(),
            log.seed,
            log.episodes.len(),
            log.total_steps(),
            log.final_incumbent().map_or("none".into(), |g| format!("{g:.6}")),
            secs
        );
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = effective_config(&args.common, args.method)?;
            if args.common.dump_config {
                print!("{}", cfg.to_toml_string());
                return Ok(true);
            }
            let logs = harness::run_methods(&cfg, &[cfg.method])?;
            summarize(&logs);
            harness::emit_report(&logs, &args.common.out, cfg.episode.segment())?;
            Ok(true)
        }
        Command::Ablate(args) => {
            let base = effective_config(&args, None)?;
            if args.dump_config {
                print!("{}", base.to_toml_string());
                return Ok(true);
            }
            let logs = harness::run_methods(&base, &Method::ALL)?;
            summarize(&logs);
            harness::emit_report(&logs, &args.out, base.episode.segment())?;
            Ok(true)
        }
        Command::Report { out, config } => {
            let cfg = load_config(config.as_deref())?;
            let logs = harness::read_logs(&out)?;
            for p in harness::write_curves(&logs, &out, cfg.episode.segment())? {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Verify { only } => {
            let report = cltune::harness::verify(only.as_deref());
            for check in &report {
                println!("{check}");
            }
            Ok(report.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
