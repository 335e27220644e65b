use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::campaign::{best_so_far_curve, EpisodeRecord, RunLog};
use super::config::Method;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "method,step,min,median,max";

/// Envelope of several best-so-far curves at one grid step. Fields are NaN
/// when no run has an incumbent yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint {
    pub step: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Value of a step-function curve at `step`, carrying the last observation
/// forward. `None` before the first point.
pub fn value_at(curve: &[(usize, f64)], step: usize) -> Option<f64> {
    let idx = curve.partition_point(|(s, _)| *s <= step);
    idx.checked_sub(1).map(|i| curve[i].1)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Pointwise min, median and max of `curves` on `grid`. A curve that ended
/// before a grid step contributes its final value there.
pub fn aggregate_envelope(curves: &[Vec<(usize, f64)>], grid: &[usize]) -> Vec<EnvelopePoint> {
    grid.iter()
        .map(|&step| {
            let mut values: Vec<f64> = curves.iter().filter_map(|c| value_at(c, step)).collect();
            let min = values.iter().copied().reduce(f64::min).unwrap_or(f64::NAN);
            let max = values.iter().copied().reduce(f64::max).unwrap_or(f64::NAN);
            EnvelopePoint {
                step,
                min,
                median: median(&mut values),
                max,
            }
        })
        .collect()
}

/// Common step grid: multiples of `segment` up to the largest cumulative
/// step count in `logs`.
pub fn step_grid(logs: &[RunLog], segment: usize) -> Vec<usize> {
    let last = logs.iter().map(RunLog::total_steps).max().unwrap_or(0);
    let segment = segment.max(1);
    (1..=last.div_ceil(segment)).map(|i| i * segment).collect()
}

/// Best-so-far envelopes per method on a shared grid.
pub fn method_envelopes(logs: &[RunLog], segment: usize) -> BTreeMap<Method, Vec<EnvelopePoint>> {
    let grid = step_grid(logs, segment);
    let mut by_method: BTreeMap<Method, Vec<Vec<(usize, f64)>>> = BTreeMap::new();
    for log in logs {
        by_method.entry(log.method).or_default().push(best_so_far_curve(log));
    }
    by_method
        .into_iter()
        .map(|(m, curves)| (m, aggregate_envelope(&curves, &grid)))
        .collect()
}

pub fn jsonl_string(log: &RunLog) -> Result<String> {
    let mut out = String::new();
    for record in &log.episodes {
        let line = serde_json::to_string(record).map_err(|e| Error::Log {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn log_path(out_dir: &Path, method: Method, seed: u64) -> PathBuf {
    out_dir.join(method.name()).join(format!("seed{seed}.jsonl"))
}

pub fn write_jsonl(log: &RunLog, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, jsonl_string(log)?).map_err(|e| Error::io(path, e))
}

/// Parse one JSONL run log. Timings are not stored and come back empty.
pub fn read_jsonl(path: &Path) -> Result<RunLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record = serde_json::from_str(line).map_err(|e| Error::Log {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        episodes.push(record);
    }
    let first = episodes.first().ok_or_else(|| Error::Log {
        path: path.to_path_buf(),
        message: "no episodes".into(),
    })?;
    Ok(RunLog {
        method: first.method,
        seed: first.seed,
        episodes,
        timings: Vec::new(),
    })
}

/// Read every `<METHOD>/seed<k>.jsonl` under `dir`, sorted by method and seed.
pub fn read_logs(dir: &Path) -> Result<Vec<RunLog>> {
    let mut logs = Vec::new();
    for method in Method::ALL {
        let sub = dir.join(method.name());
        if !sub.is_dir() {
            continue;
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            logs.push(read_jsonl(&p)?);
        }
    }
    logs.sort_by_key(|l| (l.method, l.seed));
    Ok(logs)
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NaN".into()
    }
}

pub fn curves_csv(envelopes: &BTreeMap<Method, Vec<EnvelopePoint>>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (method, points) in envelopes {
        for p in points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                method.name(),
                p.step,
                fmt_value(p.min),
                fmt_value(p.median),
                fmt_value(p.max)
            );
        }
    }
    out
}

const COLORS: [&str; 5] = ["#444444", "#1f77b4", "#2ca02c", "#d62728", "#9467bd"];

pub fn curves_svg(envelopes: &BTreeMap<Method, Vec<EnvelopePoint>>) -> String {
    let (w, h, pad) = (720.0, 440.0, 60.0);
    let finite = |p: &&EnvelopePoint| p.min.is_finite() && p.max.is_finite();
    let all: Vec<&EnvelopePoint> = envelopes.values().flatten().filter(finite).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    if all.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let x_max = all.iter().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
    let mut y_lo = all.iter().map(|p| p.min).fold(f64::INFINITY, f64::min);
    let mut y_hi = all.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    if y_hi - y_lo < 1e-12 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let sx = |s: usize| pad + (w - 2.0 * pad) * s as f64 / x_max;
    let sy = |v: f64| h - pad - (h - 2.0 * pad) * (v - y_lo) / (y_hi - y_lo);
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">closed-loop steps (0 to {x_max})</text>",
        w / 2.0,
        h - 20.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{pad}\" y=\"{}\">best so far ({:.3} to {:.3})</text>",
        pad - 20.0,
        y_lo,
        y_hi
    );
    for (i, (method, points)) in envelopes.iter().enumerate() {
        let color = COLORS[Method::ALL.iter().position(|m| m == method).unwrap_or(i) % COLORS.len()];
        let pts: Vec<&EnvelopePoint> = points.iter().filter(finite).collect();
        if pts.is_empty() {
            continue;
        }
        let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.step), sy(p.max)));
        let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.step), sy(p.min)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
            band.join(" ")
        );
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.step), sy(p.median))).collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            line.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            w - pad - 100.0,
            pad + 16.0 * i as f64,
            method.name()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write per-run JSONL logs plus `curves.csv` and `curves.svg` into
/// `out_dir`. Returns the paths written.
pub fn emit_report(logs: &[RunLog], out_dir: &Path, segment: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for log in logs {
        let path = log_path(out_dir, log.method, log.seed);
        write_jsonl(log, &path)?;
        written.push(path);
    }
    written.extend(write_curves(logs, out_dir, segment)?);
    Ok(written)
}

/// Only the aggregate files, for logs already on disk.
pub fn write_curves(logs: &[RunLog], out_dir: &Path, segment: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let envelopes = method_envelopes(logs, segment);
    let csv = out_dir.join("curves.csv");
    fs::write(&csv, curves_csv(&envelopes)).map_err(|e| Error::io(&csv, e))?;
    let svg = out_dir.join("curves.svg");
    fs::write(&svg, curves_svg(&envelopes)).map_err(|e| Error::io(&svg, e))?;
    Ok(vec![csv, svg])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carried_forward_lookup() {
        let c = vec![(8, -5.0), (16, -4.0), (40, -1.0)];
        assert_eq!(value_at(&c, 7), None);
        assert_eq!(value_at(&c, 8), Some(-5.0));
        assert_eq!(value_at(&c, 39), Some(-4.0));
        assert_eq!(value_at(&c, 1000), Some(-1.0));
    }

    #[test]
    fn single_curve_envelope_is_the_curve() {
        let c = vec![(8, -5.0), (16, -4.0)];
        let env = aggregate_envelope(std::slice::from_ref(&c), &[8, 16]);
        for (p, (_, v)) in env.iter().zip(&c) {
            assert_eq!((p.min, p.median, p.max), (*v, *v, *v));
        }
    }

    #[test]
    fn two_constant_curves() {
        let a = vec![(8, -3.0)];
        let b = vec![(8, -5.0)];
        for p in aggregate_envelope(&[a, b], &[8, 16, 24]) {
            assert_eq!((p.min, p.median, p.max), (-5.0, -4.0, -3.0));
        }
    }

    #[test]
    fn envelope_max_never_decreases_once_runs_are_carried_forward() {
        let a = vec![(8, -3.0), (80, -1.0)];
        let b = vec![(40, -5.0), (48, -2.0)];
        let env = aggregate_envelope(&[a, b], &(1..=12).map(|i| i * 8).collect::<Vec<_>>());
        for w in env.windows(2) {
            assert!(w[1].max >= w[0].max);
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn empty_logs_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[], dir.path(), 8).unwrap();
        let csv = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(csv, format!("{CSV_HEADER}\n"));
    }
}
