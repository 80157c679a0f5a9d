//! CSV output of logged evaluation points and their aggregation over seeds.

use std::fmt::Write as _;
use std::path::Path;

use strange_marl::trainer::MetricsRow;

use crate::error::{CliError, Result};

/// Formats `v` with at most six significant digits, in plain decimal
/// notation for magnitudes in [1e-5, 1e6) and scientific otherwise.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..6).contains(&exp) {
        trim_zeros(format!("{v:.*}", (5 - exp) as usize))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn cell(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

/// Renders rows as CSV: a fixed header, then one line per row. Missing
/// values are empty fields.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = MetricsRow::COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let v = r.values();
        let _ = write!(out, "{},{}", r.env_steps, r.episodes);
        for x in &v[2..] {
            out.push(',');
            out.push_str(&cell(*x));
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(CliError::io(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_metrics(&text).map_err(|msg| CliError::Metrics { path: path.into(), msg })
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if header != MetricsRow::COLUMNS.join(",") {
        return Err(format!("unexpected header {header:?}"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != MetricsRow::COLUMNS.len() {
                return Err(format!("line {}: expected {} fields, found {}", i + 2, MetricsRow::COLUMNS.len(), f.len()));
            }
            let opt = |k: usize| -> Result<Option<f64>, String> {
                if f[k].is_empty() {
                    return Ok(None);
                }
                f[k].parse().map(Some).map_err(|_| format!("line {}: bad number {:?}", i + 2, f[k]))
            };
            let req = |k: usize| opt(k)?.ok_or_else(|| format!("line {}: {} is required", i + 2, MetricsRow::COLUMNS[k]));
            let int = |k: usize| f[k].parse::<u64>().map_err(|_| format!("line {}: bad count {:?}", i + 2, f[k]));
            Ok(MetricsRow {
                env_steps: int(0)?,
                episodes: int(1)?,
                train_loss_goal: opt(2)?,
                train_loss_exp: opt(3)?,
                mean_r_int: opt(4)?,
                epsilon: req(5)?,
                eval_return_mean: req(6)?,
                eval_episode_length_mean: req(7)?,
                eval_win_or_solve_rate: req(8)?,
                q_goal_mean: opt(9)?,
                q_exp_mean: opt(10)?,
            })
        })
        .collect()
}

/// Mean and normal-approximation 95% confidence half-width
/// `1.96 * s / sqrt(n)` with the sample standard deviation `s`. The
/// half-width is `None` for fewer than two values.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, Option<f64>)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, Some(1.96 * var.sqrt() / (n as f64).sqrt())))
}

/// Aggregate over seeds, one line per evaluation index. Columns are
/// `point,n` followed by `<metric>_mean,<metric>_ci95` for every metrics
/// column; `n` is the number of seeds that logged the point.
pub fn aggregate_csv(runs: &[Vec<MetricsRow>]) -> String {
    let mut out = String::from("point,n");
    for c in MetricsRow::COLUMNS {
        let _ = write!(out, ",{c}_mean,{c}_ci95");
    }
    out.push('\n');
    let points = runs.iter().map(Vec::len).max().unwrap_or(0);
    for p in 0..points {
        let rows: Vec<[Option<f64>; 11]> = runs.iter().filter_map(|r| r.get(p)).map(MetricsRow::values).collect();
        let _ = write!(out, "{p},{}", rows.len());
        for k in 0..MetricsRow::COLUMNS.len() {
            let vals: Vec<f64> = rows.iter().filter_map(|v| v[k]).collect();
            let (mean, ci) = match mean_ci95(&vals) {
                Some((m, ci)) => (Some(m), ci),
                None => (None, None),
            };
            let _ = write!(out, ",{},{}", cell(mean), cell(ci));
        }
        out.push('\n');
    }
    out
}
