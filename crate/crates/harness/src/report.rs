//! Aggregated tables and the label-curve CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ebm_ssl::pipelines::Method;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::grid::{missing_runs, plan, read_results, results_path, Row};
use crate::tasks::TaskName;

pub const GRID_FILE: &str = "results_grid.txt";
pub const IMPROVEMENT_FILE: &str = "improvements.txt";
pub const CURVE_FILE: &str = "label_curve.csv";

/// Relative reduction, in percent, of the error `100 − metric` when a
/// percentage metric moves from `baseline` to `improved`.
pub fn relative_error_reduction(baseline: f64, improved: f64) -> f64 {
    let (eb, ei) = (100.0 - baseline, 100.0 - improved);
    100.0 * (eb - ei) / eb
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Some(Summary { mean, std, n })
}

type StatKey = (TaskName, u64, u64, Method, String);

/// Per-cell value lists, keyed by `(task, proportion, ratio, method, metric)`.
pub struct Aggregate {
    cells: BTreeMap<StatKey, Vec<f64>>,
}

impl Aggregate {
    pub fn new(rows: &[Row]) -> Self {
        let mut cells: BTreeMap<StatKey, Vec<f64>> = BTreeMap::new();
        for r in rows {
            cells
                .entry((
                    r.task,
                    r.proportion.to_bits(),
                    r.ul_ratio.to_bits(),
                    r.method,
                    r.metric.clone(),
                ))
                .or_default()
                .push(r.value);
        }
        Self { cells }
    }

    pub fn values(&self, task: TaskName, p: f64, r: f64, method: Method, metric: &str) -> &[f64] {
        self.cells
            .get(&(task, p.to_bits(), r.to_bits(), method, metric.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    /// Summary of a cell; the supervised baseline is looked up at ratio 0.
    pub fn get(&self, task: TaskName, p: f64, r: f64, method: Method, metric: &str) -> Option<Summary> {
        let r = if method == Method::Supervised { 0.0 } else { r };
        summarize(self.values(task, p, r, method, metric))
    }

    /// Per-seed values ordered by seed.
    pub fn by_seed(rows: &[Row], task: TaskName, p: f64, r: f64, method: Method, metric: &str) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = rows
            .iter()
            .filter(|x| {
                x.task == task && x.proportion == p && x.ul_ratio == r && x.method == method && x.metric == metric
            })
            .map(|x| (x.seed, x.value))
            .collect();
        v.sort_by_key(|x| x.0);
        v
    }
}

fn pct(p: f64) -> String {
    format!("{}%", (p * 100.0 * 1e6).round() / 1e6)
}

fn cell_text(s: Option<Summary>) -> String {
    match s {
        None => "-".into(),
        Some(s) => match s.std {
            Some(sd) => format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * sd),
            None => format!("{:.2} ± n/a", 100.0 * s.mean),
        },
    }
}

fn ratios_with_zero(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut r = vec![0.0];
    r.extend(cfg.ul_ratios.iter().copied().filter(|&x| x > 0.0));
    r
}

/// Mean ± std of each method, one block of rows per proportion. Ratio 0
/// holds the supervised baseline; positive ratios hold pre-training and
/// joint training.
pub fn results_grid(cfg: &ExperimentConfig, agg: &Aggregate) -> String {
    let mut out = String::new();
    let w = 18;
    let _ = write!(out, "{:<9}{:<7}", "labeled", "U/L");
    for t in &cfg.tasks {
        let _ = write!(out, "| {:<w2$}", format!("{t} ({}, %)", t.primary_metric()), w2 = 2 * w);
    }
    out.push('\n');
    let _ = write!(out, "{:<16}", "");
    for _ in &cfg.tasks {
        let _ = write!(out, "| {:<w$}{:<w$}", "pre.", "joint");
    }
    out.push('\n');
    for &p in &cfg.proportions {
        for (i, &r) in ratios_with_zero(cfg).iter().enumerate() {
            let label = if i == 0 { pct(p) } else { String::new() };
            let _ = write!(out, "{:<9}{:<7}", label, r);
            for &t in &cfg.tasks {
                let m = t.primary_metric();
                if r == 0.0 {
                    let _ = write!(
                        out,
                        "| {:<w2$}",
                        cell_text(agg.get(t, p, 0.0, Method::Supervised, m)),
                        w2 = 2 * w
                    );
                } else {
                    let _ = write!(
                        out,
                        "| {:<w$}{:<w$}",
                        cell_text(agg.get(t, p, r, Method::PretrainFinetune, m)),
                        cell_text(agg.get(t, p, r, Method::Joint, m))
                    );
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Relative error reduction of joint training over the supervised baseline
/// and over pre-training, from cell means.
pub fn improvement_grid(cfg: &ExperimentConfig, agg: &Aggregate) -> String {
    let mut out = String::new();
    let w = 10;
    let _ = write!(
        out,
        "{:<9}{:<7}| {:<tw$}| {:<tw$}",
        "labeled",
        "U/L",
        "joint over sup.",
        "joint over pre.",
        tw = w * cfg.tasks.len()
    );
    out.push('\n');
    let _ = write!(out, "{:<16}", "");
    for _ in 0..2 {
        out.push_str("| ");
        for t in &cfg.tasks {
            let _ = write!(out, "{:<w$}", t.name());
        }
    }
    out.push('\n');
    let rel = |t: TaskName, p: f64, r: f64, base: Method| -> String {
        let m = t.primary_metric();
        match (agg.get(t, p, r, base, m), agg.get(t, p, r, Method::Joint, m)) {
            (Some(b), Some(j)) => format!("{:.1}", relative_error_reduction(100.0 * b.mean, 100.0 * j.mean)),
            _ => "-".into(),
        }
    };
    for &p in &cfg.proportions {
        for (i, &r) in cfg.ul_ratios.iter().filter(|&&r| r > 0.0).enumerate() {
            let label = if i == 0 { pct(p) } else { String::new() };
            let _ = write!(out, "{:<9}{:<7}", label, r);
            for base in [Method::Supervised, Method::PretrainFinetune] {
                out.push_str("| ");
                for &t in &cfg.tasks {
                    let _ = write!(out, "{:<w$}", rel(t, p, r, base));
                }
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub task: TaskName,
    pub method: Method,
    pub ul_ratio: f64,
    pub proportion: f64,
    pub metric: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

/// Metric against labeling proportion for every method and ratio.
pub fn label_curve(cfg: &ExperimentConfig, agg: &Aggregate) -> Vec<CurvePoint> {
    let mut pts = Vec::new();
    for &t in &cfg.tasks {
        let metric = t.primary_metric();
        for &method in &cfg.methods {
            let ratios = if method == Method::Supervised {
                vec![0.0]
            } else {
                cfg.ul_ratios.iter().copied().filter(|&r| r > 0.0).collect()
            };
            for r in ratios {
                for &p in &cfg.proportions {
                    if let Some(s) = agg.get(t, p, r, method, metric) {
                        pts.push(CurvePoint {
                            task: t,
                            method,
                            ul_ratio: r,
                            proportion: p,
                            metric: metric.to_string(),
                            mean: s.mean,
                            std: s.std,
                            n: s.n,
                        });
                    }
                }
            }
        }
    }
    pts
}

/// Writes the two tables and the curve CSV next to the results; fails with
/// [`HarnessError::Incomplete`] (after writing) if any planned run is missing.
pub fn write_report(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let rows = read_results(&results_path(out))?;
    let agg = Aggregate::new(&rows);
    let grid = results_grid(cfg, &agg);
    let imp = improvement_grid(cfg, &agg);
    fs::write(out.join(GRID_FILE), &grid).map_err(HarnessError::io(out.join(GRID_FILE)))?;
    fs::write(out.join(IMPROVEMENT_FILE), &imp).map_err(HarnessError::io(out.join(IMPROVEMENT_FILE)))?;
    let mut w = csv::Writer::from_path(out.join(CURVE_FILE))?;
    for p in label_curve(cfg, &agg) {
        w.serialize(p)?;
    }
    w.flush().map_err(HarnessError::io(out.join(CURVE_FILE)))?;
    let missing = missing_runs(cfg, out);
    if missing > 0 {
        return Err(HarnessError::Incomplete {
            missing,
            total: plan(cfg).len(),
        });
    }
    Ok(format!("{grid}\n{imp}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_reduction_examples() {
        assert!((relative_error_reduction(90.0, 95.0) - 50.0).abs() < 1e-12);
        assert_eq!(relative_error_reduction(80.0, 80.0), 0.0);
        assert!(relative_error_reduction(80.0, 70.0) < 0.0);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[7.0]).unwrap().std, None);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn single_cell_single_seed_table() {
        let cfg = ExperimentConfig {
            seeds: 1,
            force_single_seed: true,
            tasks: vec![TaskName::Mixture],
            proportions: vec![0.5],
            ul_ratios: vec![0.0],
            methods: vec![Method::Supervised],
            ..ExperimentConfig::default()
        };
        let rows = vec![Row {
            task: TaskName::Mixture,
            proportion: 0.5,
            ul_ratio: 0.0,
            method: Method::Supervised,
            seed: 0,
            metric: "accuracy".into(),
            value: 0.9,
        }];
        let text = results_grid(&cfg, &Aggregate::new(&rows));
        assert_eq!(text.matches("90.00 ± n/a").count(), 1);
        assert_eq!(text.matches('±').count(), 1);
    }
}
