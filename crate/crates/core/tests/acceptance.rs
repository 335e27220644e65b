//! Acceptance suite. Prints one PASS/FAIL line per criterion and always
//! exits successfully; the lines are the result.
//!
//! Set `CLTUNE_ACCEPTANCE_LOGS=<dir>` to score logs from an earlier
//! `cltune ablate --out <dir>` instead of running the ablation here.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use cltune::controller::{solve_ocp, MpcConfig};
use cltune::harness::{
    self, best_so_far_curve, median, step_grid, value_at, CampaignConfig, Method, RunLog,
};
use cltune::plant::{run_episode, step, step_substepped, CartPoleParams, RunToEnd, StateVector};
use cltune::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(line: &Line) {
    println!(
        "criterion {:>2} [{}] {}: {}",
        line.id,
        if line.passed { "PASS" } else { "FAIL" },
        line.name,
        line.detail
    );
}

fn of(logs: &[RunLog], m: Method) -> Vec<&RunLog> {
    logs.iter().filter(|l| l.method == m).collect()
}

fn finals(logs: &[&RunLog]) -> Vec<f64> {
    logs.iter().map(|l| l.final_incumbent().unwrap_or(f64::NEG_INFINITY)).collect()
}

fn median_of(mut v: Vec<f64>) -> f64 {
    median(&mut v)
}

fn ablation(cfg: &CampaignConfig) -> Vec<RunLog> {
    if let Some(dir) = std::env::var_os("CLTUNE_ACCEPTANCE_LOGS") {
        let logs = harness::read_logs(Path::new(&dir)).expect("readable logs");
        println!("scoring {} logs from {}", logs.len(), Path::new(&dir).display());
        return logs;
    }
    let started = Instant::now();
    let logs = harness::run_methods(cfg, &Method::ALL).expect("ablation runs");
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    harness::emit_report(&logs, &out, cfg.episode.segment()).expect("report written");
    println!(
        "ablation: {} campaigns in {:.0} s, report in {}",
        logs.len(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    logs
}

fn resource_savings(cfg: &CampaignConfig, logs: &[RunLog]) -> Line {
    let target = median_of(finals(&of(logs, Method::BaselineBo)));
    let steps: Vec<f64> = of(logs, Method::TsiEiC)
        .iter()
        .map(|l| {
            l.episodes
                .iter()
                .find(|e| e.incumbent.is_some_and(|g| g >= target))
                .map_or(f64::INFINITY, |e| e.cumulative_steps as f64)
        })
        .collect();
    let med = median_of(steps);
    let limit = 0.75 * cfg.budget as f64;
    Line {
        id: 1,
        name: "resource savings",
        passed: med <= limit,
        detail: format!("TSI_EI_C reaches the baseline median final {target:.4} after a median {med} steps (limit {limit})"),
    }
}

fn equal_budget(logs: &[RunLog]) -> Line {
    let tsi = of(logs, Method::TsiEiC);
    let base = of(logs, Method::BaselineBo);
    let (mt, mb) = (median_of(finals(&tsi)), median_of(finals(&base)));
    let wins = tsi
        .iter()
        .filter(|t| {
            base.iter()
                .find(|b| b.seed == t.seed)
                .is_some_and(|b| t.final_incumbent() >= b.final_incumbent())
        })
        .count();
    Line {
        id: 2,
        name: "equal-budget performance",
        passed: mt >= mb && wins >= 7,
        detail: format!("median final TSI_EI_C {mt:.4} vs BASELINE_BO {mb:.4}; TSI_EI_C ahead on {wins}/{} seeds (need 7)", tsi.len()),
    }
}

fn ablation_ordering(cfg: &CampaignConfig, logs: &[RunLog]) -> Line {
    let grid = step_grid(logs, cfg.episode.segment());
    let median_curve = |m: Method| -> Vec<f64> {
        let curves: Vec<Vec<(usize, f64)>> = of(logs, m).into_iter().map(best_so_far_curve).collect();
        grid.iter()
            .map(|&s| {
                let mut v: Vec<f64> = curves.iter().filter_map(|c| value_at(c, s)).collect();
                median(&mut v)
            })
            .collect()
    };
    let (tsi, base) = (median_curve(Method::TsiNoStop), median_curve(Method::BaselineBo));
    let from = grid.len() / 2;
    let dominated = (from..grid.len()).filter(|&i| tsi[i] >= base[i]).count();
    Line {
        id: 3,
        name: "ablation ordering",
        passed: dominated == grid.len() - from,
        detail: format!(
            "TSI_NO_STOP median >= BASELINE_BO median on {dominated}/{} points of the final half of the grid; final {:.4} vs {:.4}",
            grid.len() - from,
            tsi.last().copied().unwrap_or(f64::NAN),
            base.last().copied().unwrap_or(f64::NAN)
        ),
    }
}

fn ei_vs_ucb(logs: &[RunLog]) -> Line {
    let ei = median_of(finals(&of(logs, Method::TsiEiC)));
    let ucb = median_of(finals(&of(logs, Method::TsiUcbC)));
    let base = finals(&of(logs, Method::BaselineBo));
    let width = base.iter().copied().fold(f64::NEG_INFINITY, f64::max) - base.iter().copied().fold(f64::INFINITY, f64::min);
    Line {
        id: 4,
        name: "EI vs UCB similarity",
        passed: (ei - ucb).abs() < width,
        detail: format!("|{ei:.4} - {ucb:.4}| = {:.4} vs baseline envelope width {width:.4}", (ei - ucb).abs()),
    }
}

fn verify_line(id: u8, name: &'static str, checks: &[&str]) -> Line {
    let results: Vec<_> = checks
        .iter()
        .flat_map(|c| harness::verify(Some(c)))
        .collect();
    Line {
        id,
        name,
        passed: !results.is_empty() && results.iter().all(|c| c.passed),
        detail: results
            .iter()
            .map(|c| format!("{} {:.2e} (tol {:.0e})", c.name, c.error, c.tolerance))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

/// Replays every logged episode without stopping and compares the logged
/// checkpoint values with prefix sums of the replayed trajectory.
fn cost_structure(cfg: &CampaignConfig, logs: &[RunLog]) -> Line {
    let mpc = cfg.effective_mpc();
    let seg = cfg.episode.segment();
    let (mut worst, mut checked, mut completed) = (0.0f64, 0usize, 0usize);
    for log in logs {
        for e in &log.episodes {
            let replay = run_episode(&e.theta, &cfg.episode, &mpc, &cfg.plant, &mut RunToEnd).expect("replay runs");
            let mut prefix = Vec::with_capacity(replay.states.len());
            let mut sum = 0.0;
            for x in &replay.states {
                sum += x.iter().zip(&cfg.episode.q_cl).map(|(v, q)| q * v * v).sum::<f64>();
                prefix.push(-sum);
            }
            for c in &e.checkpoints {
                let k = (c.s * cfg.episode.steps as f64).round() as usize;
                if k < prefix.len() {
                    worst = worst.max((c.g - prefix[k]).abs() / prefix[k].abs().max(1.0));
                    checked += 1;
                } else {
                    worst = f64::INFINITY;
                }
            }
            if e.failure.is_none() && e.steps_used == cfg.episode.steps {
                let last = e.checkpoints.last().expect("completed episodes have checkpoints");
                let full = prefix[cfg.episode.steps];
                worst = worst.max((last.g - full).abs() / full.abs().max(1.0));
                completed += 1;
            }
            if log.method.is_multi_fidelity() && e.checkpoints.len() != e.steps_used / seg {
                worst = f64::INFINITY;
            }
        }
    }
    Line {
        id: 7,
        name: "cost structure",
        passed: worst <= 1e-12,
        detail: format!("{checked} checkpoints and {completed} completed episodes replayed, worst relative error {worst:.2e} (tol 1e-12)"),
    }
}

fn controller_sanity() -> Line {
    let lqr = harness::verify(Some("riccati")).remove(0);
    let cfg = MpcConfig::default();
    let eq = solve_ocp(&[0.0; 4], &ParamVector([1.0; 5]), &cfg, None).expect("ocp solves");
    let u_eq = eq.inputs[0].abs();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut monotone = 0;
    for _ in 0..20 {
        let x: StateVector = [rng.gen_range(-1.5..1.5), rng.gen_range(-0.4..0.4), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let theta = ParamVector(std::array::from_fn(|_| 10f64.powf(rng.gen_range(-2.0..2.0))));
        let sol = solve_ocp(&x, &theta, &cfg, None).expect("ocp solves");
        if sol.cost_history.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    Line {
        id: 8,
        name: "controller sanity",
        passed: lqr.passed && u_eq < 1e-6 && monotone == 20,
        detail: format!(
            "first input vs LQR {:.2}% (tol 10%); equilibrium input {u_eq:.1e} (tol 1e-6); monotone iLQR cost on {monotone}/20 starts",
            100.0 * lqr.error
        ),
    }
}

fn dynamics_sanity(cfg: &CampaignConfig) -> Line {
    let energy = harness::verify(Some("energy")).remove(0);
    let p: CartPoleParams = cfg.plant;
    let trace = run_episode(&ParamVector([1.0; 5]), &cfg.episode, &cfg.effective_mpc(), &p, &mut RunToEnd).expect("episode runs");
    let mut doubling = 0.0f64;
    for (x, u) in trace.states.iter().zip(&trace.inputs) {
        let (one, fine) = (step(x, *u, &p), step_substepped(x, *u, &p, 10));
        doubling = one.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(doubling, f64::max);
    }
    Line {
        id: 9,
        name: "dynamics sanity",
        passed: energy.passed && doubling < 1e-8,
        detail: format!(
            "energy drift {:.1e} (tol 1e-3); RK4 at dt {} vs dt/10 along a closed-loop trajectory {doubling:.2e} (tol 1e-8)",
            energy.error, p.dt
        ),
    }
}

fn determinism() -> Line {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("determinism");
    let run = |tag: &str| -> Option<Vec<u8>> {
        let out = root.join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_cltune"))
            .args(["run", "--seed", "7", "--out"])
            .arg(&out)
            .stdout(Stdio::null())
            .status()
            .ok()?;
        status.success().then_some(())?;
        std::fs::read(harness::log_path(&out, CampaignConfig::default().method, 7)).ok()
    };
    let (a, b) = (run("a"), run("b"));
    let same = a.is_some() && a == b;
    Line {
        id: 10,
        name: "determinism",
        passed: same,
        detail: format!(
            "`run --seed 7` twice: {} bytes vs {} bytes, {}",
            a.as_ref().map_or(0, Vec::len),
            b.as_ref().map_or(0, Vec::len),
            if same { "identical" } else { "different" }
        ),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let cfg = CampaignConfig::default();
    let logs = ablation(&cfg);
    let lines = [
        resource_savings(&cfg, &logs),
        equal_budget(&logs),
        ablation_ordering(&cfg, &logs),
        ei_vs_ucb(&logs),
        verify_line(5, "GP correctness", &["gp_dense_solve", "gp_append"]),
        verify_line(6, "EI closed form", &["ei_monte_carlo"]),
        cost_structure(&cfg, &logs),
        controller_sanity(),
        dynamics_sanity(&cfg),
        determinism(),
    ];
    for line in &lines {
        report(line);
    }
    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
}
