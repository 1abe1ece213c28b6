//! Grid expansion, resumable sweeps and the results CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ebm_ssl::pipelines::{train, train_resumable, EvalSet, Method, Metrics, TrainConfig, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::tasks::{derive_seed, instance, SeedUse, TaskName};

pub const RESULTS_FILE: &str = "results.csv";
pub const SWEEP_FILE: &str = "lambda_sweep.csv";
const RUNS_DIR: &str = "runs";

/// One line of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub task: TaskName,
    pub proportion: f64,
    pub ul_ratio: f64,
    pub method: Method,
    pub seed: usize,
    pub metric: String,
    pub value: f64,
}

/// A result line that also records the joint-training weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: TaskName,
    pub proportion: f64,
    pub ul_ratio: f64,
    pub method: Method,
    pub lambda: Option<f64>,
    pub seed: usize,
    pub metric: String,
    pub value: f64,
}

impl SweepRow {
    fn row(&self) -> Row {
        Row {
            task: self.task,
            proportion: self.proportion,
            ul_ratio: self.ul_ratio,
            method: self.method,
            seed: self.seed,
            metric: self.metric.clone(),
            value: self.value,
        }
    }
}

/// One training run of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunKey {
    pub task: TaskName,
    pub proportion: f64,
    pub ul_ratio: f64,
    pub method: Method,
    pub lambda: Option<f64>,
    pub replicate: usize,
}

impl RunKey {
    pub fn id(&self) -> String {
        let mut s = format!("{}_p{}_r{}_{}", self.task, self.proportion, self.ul_ratio, self.method);
        if let Some(l) = self.lambda {
            s.push_str(&format!("_l{l}"));
        }
        s.push_str(&format!("_s{}", self.replicate));
        s
    }

    /// Training settings of this run.
    pub fn train_config(&self, cfg: &ExperimentConfig) -> TrainConfig {
        let base = cfg.train_config(self.task);
        TrainConfig {
            method: self.method,
            unsup_weight: self.lambda.unwrap_or(base.unsup_weight),
            seed: derive_seed(cfg.seed, self.task, SeedUse::Train, self.replicate),
            ..base
        }
    }
}

/// All runs of a grid. The supervised baseline ignores unlabeled data, so
/// it runs once per proportion at ratio 0; the other methods run at every
/// positive ratio, joint training once per λ.
pub fn plan(cfg: &ExperimentConfig) -> Vec<RunKey> {
    let mut keys = Vec::new();
    for &task in &cfg.tasks {
        for &p in &cfg.proportions {
            for replicate in 0..cfg.seeds {
                let key = |method, ul_ratio, lambda| RunKey {
                    task,
                    proportion: p,
                    ul_ratio,
                    method,
                    lambda,
                    replicate,
                };
                if cfg.methods.contains(&Method::Supervised) {
                    keys.push(key(Method::Supervised, 0.0, None));
                }
                for &r in cfg.ul_ratios.iter().filter(|&&r| r > 0.0) {
                    if cfg.methods.contains(&Method::PretrainFinetune) {
                        keys.push(key(Method::PretrainFinetune, r, None));
                    }
                    if cfg.methods.contains(&Method::Joint) {
                        for l in cfg.lambdas_for(task) {
                            keys.push(key(Method::Joint, r, Some(l)));
                        }
                    }
                }
            }
        }
    }
    keys
}

fn metric_rows(key: &RunKey, m: &Metrics) -> Vec<SweepRow> {
    let row = |metric: &str, value: f64| SweepRow {
        task: key.task,
        proportion: key.proportion,
        ul_ratio: key.ul_ratio,
        method: key.method,
        lambda: key.lambda,
        seed: key.replicate,
        metric: metric.to_string(),
        value,
    };
    let mut rows = vec![row("accuracy", m.accuracy)];
    match key.task {
        TaskName::Mixture => rows.push(row("error_rate", 1.0 - m.accuracy)),
        TaskName::Hmm => {
            if let Some(f) = m.span_f1 {
                rows.push(row("span_f1", f));
            }
        }
    }
    rows
}

/// Trains and evaluates one run, optionally checkpointing to `checkpoint`.
pub fn execute(cfg: &ExperimentConfig, key: &RunKey, checkpoint: Option<&Path>) -> Result<(TrainedModel, EvalSet)> {
    let inst = instance(cfg, key.task, key.proportion, key.ul_ratio, key.replicate)?;
    let tc = key.train_config(cfg);
    let model = match checkpoint {
        Some(path) => train_resumable(&inst.data, &tc, None, path, cfg.checkpoint_every)?,
        None => train(&inst.data, &tc, None)?,
    };
    Ok((model, inst.test))
}

pub fn run_one(cfg: &ExperimentConfig, key: &RunKey, checkpoint: Option<&Path>) -> Result<Vec<SweepRow>> {
    let (model, test) = execute(cfg, key, checkpoint)?;
    Ok(metric_rows(key, &model.evaluate(&test)?))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(HarnessError::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn read_results(path: &Path) -> Result<Vec<Row>> {
    read_csv(path)
}

pub fn write_results(path: &Path, rows: &[Row]) -> Result<()> {
    write_csv(path, rows)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub total: usize,
    pub ran: usize,
    pub reused: usize,
    /// Runs that raised an error, with the message; their cells stay empty.
    pub failed: Vec<(String, String)>,
    /// `(task, proportion, ratio) → λ` chosen for joint training.
    pub chosen_lambda: Vec<(TaskName, f64, f64, f64)>,
}

/// Runs every grid run that has no result file under `out/runs`, then
/// writes the results and λ-sweep CSVs.
///
/// A finished run leaves `runs/<id>.csv`; an interrupted one leaves
/// `runs/<id>.ckpt` and resumes from it. A run that errors is recorded in
/// [`SweepSummary::failed`] and the sweep moves on. `progress` sees each
/// run id and whether it was reused.
pub fn sweep(cfg: &ExperimentConfig, out: &Path, mut progress: impl FnMut(&RunKey, bool)) -> Result<SweepSummary> {
    cfg.validate()?;
    let dir = out.join(RUNS_DIR);
    fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    let keys = plan(cfg);
    let mut summary = SweepSummary {
        total: keys.len(),
        ..Default::default()
    };
    let mut all = Vec::new();
    for key in &keys {
        let done = dir.join(format!("{}.csv", key.id()));
        let rows = if done.exists() {
            summary.reused += 1;
            progress(key, true);
            read_csv(&done)?
        } else {
            let ck = dir.join(format!("{}.ckpt", key.id()));
            let rows = match run_one(cfg, key, Some(&ck)) {
                Ok(rows) => rows,
                Err(e) => {
                    summary.failed.push((key.id(), e.to_string()));
                    continue;
                }
            };
            write_csv(&done, &rows)?;
            let _ = fs::remove_file(&ck);
            summary.ran += 1;
            progress(key, false);
            rows
        };
        all.extend(rows);
    }
    write_csv(&out.join(SWEEP_FILE), &all)?;
    let (rows, chosen) = select_lambdas(cfg, &all);
    summary.chosen_lambda = chosen;
    write_results(&out.join(RESULTS_FILE), &rows)?;
    Ok(summary)
}

type CellKey = (TaskName, u64, u64);

fn cell(task: TaskName, p: f64, r: f64) -> CellKey {
    (task, p.to_bits(), r.to_bits())
}

/// Keeps, per `(task, proportion, ratio)`, the joint-training λ with the
/// best mean primary metric (earliest on ties) and drops the λ column.
pub fn select_lambdas(cfg: &ExperimentConfig, rows: &[SweepRow]) -> (Vec<Row>, Vec<(TaskName, f64, f64, f64)>) {
    let mut sums: BTreeMap<CellKey, Vec<(f64, f64, usize)>> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.method == Method::Joint && r.metric == r.task.primary_metric())
    {
        let l = r.lambda.unwrap_or(f64::NAN);
        let entry = sums.entry(cell(r.task, r.proportion, r.ul_ratio)).or_default();
        match entry.iter_mut().find(|(x, _, _)| x.to_bits() == l.to_bits()) {
            Some(e) => {
                e.1 += r.value;
                e.2 += 1;
            }
            None => entry.push((l, r.value, 1)),
        }
    }
    let mut best: BTreeMap<CellKey, f64> = BTreeMap::new();
    let mut chosen = Vec::new();
    for &task in &cfg.tasks {
        for &p in &cfg.proportions {
            for &r in &cfg.ul_ratios {
                let Some(cands) = sums.get(&cell(task, p, r)) else {
                    continue;
                };
                let mut pick = cands[0];
                for &c in &cands[1..] {
                    if c.1 / c.2 as f64 > pick.1 / pick.2 as f64 {
                        pick = c;
                    }
                }
                best.insert(cell(task, p, r), pick.0);
                chosen.push((task, p, r, pick.0));
            }
        }
    }
    let out = rows
        .iter()
        .filter(|r| {
            r.method != Method::Joint
                || best
                    .get(&cell(r.task, r.proportion, r.ul_ratio))
                    .is_some_and(|l| r.lambda.unwrap_or(f64::NAN).to_bits() == l.to_bits())
        })
        .map(SweepRow::row)
        .collect();
    (out, chosen)
}

/// Number of planned runs without a result file.
pub fn missing_runs(cfg: &ExperimentConfig, out: &Path) -> usize {
    plan(cfg)
        .iter()
        .filter(|k| !out.join(RUNS_DIR).join(format!("{}.csv", k.id())).exists())
        .count()
}

pub fn results_path(out: &Path) -> PathBuf {
    out.join(RESULTS_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_runs_supervised_once_per_proportion() {
        let cfg = ExperimentConfig {
            seeds: 2,
            proportions: vec![0.1, 1.0],
            ul_ratios: vec![0.0, 5.0, 10.0],
            lambdas: vec![0.1, 1.0],
            tasks: vec![TaskName::Mixture],
            ..ExperimentConfig::default()
        };
        let keys = plan(&cfg);
        let count = |m| keys.iter().filter(|k| k.method == m).count();
        assert_eq!(count(Method::Supervised), 2 * 2);
        assert_eq!(count(Method::PretrainFinetune), 2 * 2 * 2);
        assert_eq!(count(Method::Joint), 2 * 2 * 2 * 2);
        let ids: std::collections::BTreeSet<String> = keys.iter().map(RunKey::id).collect();
        assert_eq!(ids.len(), keys.len());
        assert!(keys
            .iter()
            .filter(|k| k.method == Method::Supervised)
            .all(|k| k.ul_ratio == 0.0));
    }

    #[test]
    fn best_lambda_by_mean() {
        let cfg = ExperimentConfig {
            tasks: vec![TaskName::Hmm],
            proportions: vec![0.1],
            ul_ratios: vec![5.0],
            ..ExperimentConfig::default()
        };
        let row = |lambda: f64, seed, value| SweepRow {
            task: TaskName::Hmm,
            proportion: 0.1,
            ul_ratio: 5.0,
            method: Method::Joint,
            lambda: Some(lambda),
            seed,
            metric: "accuracy".into(),
            value,
        };
        let rows = vec![
            row(0.1, 0, 0.5),
            row(0.1, 1, 0.9),
            row(0.5, 0, 0.8),
            row(0.5, 1, 0.7),
            row(1.0, 0, 0.75),
            row(1.0, 1, 0.75),
        ];
        let (kept, chosen) = select_lambdas(&cfg, &rows);
        assert_eq!(chosen, vec![(TaskName::Hmm, 0.1, 5.0, 0.5)]);
        assert_eq!(kept.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.8, 0.7]);
    }
}
