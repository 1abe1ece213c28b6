//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so a file only lists what it changes. Training
//! settings for each task live under `[mixture.train]` and `[hmm.train]` and
//! accept every `TrainConfig` field; `modality`, `method`, `seed` and
//! `unsup_weight` there are overwritten per run.

use std::path::Path;

use ebm_ssl::data::{HmmSpec, MixtureSpec};
use ebm_ssl::pipelines::{Method, Modality, NceConfig, OptimConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::tasks::TaskName;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureTask {
    pub spec: MixtureSpec,
    /// Points per class in the full labeled set; proportions are taken of this.
    pub full_per_class: usize,
    pub test_per_class: usize,
    pub train: TrainConfig,
}

impl Default for MixtureTask {
    fn default() -> Self {
        Self {
            spec: MixtureSpec::default(),
            full_per_class: 200,
            test_per_class: 500,
            train: TrainConfig {
                modality: Modality::Continuous,
                unlabeled_batch: 64,
                optim: OptimConfig {
                    lr: 0.02,
                    ..OptimConfig::default()
                },
                log_every: 0,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmTask {
    pub spec: HmmSpec,
    /// Sequences in the full labeled set.
    pub full: usize,
    pub test: usize,
    pub train: TrainConfig,
}

impl Default for HmmTask {
    fn default() -> Self {
        Self {
            spec: HmmSpec::default(),
            full: 1000,
            test: 500,
            train: TrainConfig {
                modality: Modality::Sequence,
                labeled_batch: 8,
                unlabeled_batch: 8,
                unsup_weight: 1.0,
                nce: NceConfig::default(),
                log_every: 0,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; every data and training seed derives from it.
    pub seed: u64,
    /// Replicates per grid cell.
    pub seeds: usize,
    /// Allow `seeds = 1`; standard deviations are then reported as n/a.
    pub force_single_seed: bool,
    pub tasks: Vec<TaskName>,
    pub proportions: Vec<f64>,
    /// Unlabeled-to-labeled ratios. The supervised baseline runs once per
    /// proportion and is reported under ratio 0.
    pub ul_ratios: Vec<f64>,
    pub methods: Vec<Method>,
    /// Joint-training weights tried per cell; the best mean is reported.
    /// Empty means the task's `unsup_weight`.
    pub lambdas: Vec<f64>,
    /// Checkpoint interval of in-progress runs, in steps.
    pub checkpoint_every: usize,
    pub mixture: MixtureTask,
    pub hmm: HmmTask,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 10,
            force_single_seed: false,
            tasks: vec![TaskName::Mixture, TaskName::Hmm],
            proportions: vec![0.02, 0.1, 1.0],
            ul_ratios: vec![50.0],
            methods: Method::ALL.to_vec(),
            lambdas: vec![0.1, 0.5, 1.0],
            checkpoint_every: 100,
            mixture: MixtureTask::default(),
            hmm: HmmTask::default(),
        }
    }
}

impl ExperimentConfig {
    /// A grid small enough to run in seconds, covering every axis.
    pub fn smoke() -> Self {
        let mut cfg = Self {
            seeds: 2,
            proportions: vec![0.1, 1.0],
            ul_ratios: vec![0.0, 2.0],
            lambdas: vec![0.5, 1.0],
            checkpoint_every: 7,
            ..Self::default()
        };
        cfg.mixture.full_per_class = 20;
        cfg.mixture.test_per_class = 25;
        let m = &mut cfg.mixture.train;
        m.steps = 20;
        m.pretrain_steps = 20;
        m.unlabeled_batch = 16;
        m.hidden = vec![8];
        m.chain.particles = 16;
        m.chain.steps = 5;
        cfg.hmm.full = 30;
        cfg.hmm.test = 20;
        let h = &mut cfg.hmm.train;
        h.steps = 10;
        h.pretrain_steps = 10;
        h.nce.nu = 2;
        h.nce.refresh_every = 4;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.tasks.is_empty() || self.proportions.is_empty() || self.ul_ratios.is_empty() || self.methods.is_empty()
        {
            return bad("tasks, proportions, ul_ratios and methods must be non-empty");
        }
        if self.seeds == 0 || (self.seeds == 1 && !self.force_single_seed) {
            return bad("seeds must be at least 2 (set force_single_seed for 1)");
        }
        if self.proportions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad("proportions must lie in (0, 1]");
        }
        if self.ul_ratios.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return bad("ul_ratios must be finite and non-negative");
        }
        if self.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return bad("lambdas must be finite and non-negative");
        }
        if has_duplicates(&self.proportions) || has_duplicates(&self.ul_ratios) || has_duplicates(&self.lambdas) {
            return bad("grid axes must not repeat values");
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("methods must not repeat");
        }
        if self.mixture.full_per_class == 0
            || self.mixture.test_per_class == 0
            || self.hmm.full == 0
            || self.hmm.test == 0
        {
            return bad("dataset sizes must be positive");
        }
        self.mixture.spec.validate()?;
        self.hmm.spec.validate()?;
        self.mixture.train.validate()?;
        self.hmm.train.validate()?;
        Ok(())
    }

    /// Training settings of `task`, with the fields a run owns left at placeholders.
    pub fn train_config(&self, task: TaskName) -> TrainConfig {
        match task {
            TaskName::Mixture => TrainConfig {
                modality: Modality::Continuous,
                ..self.mixture.train.clone()
            },
            TaskName::Hmm => TrainConfig {
                modality: Modality::Sequence,
                ..self.hmm.train.clone()
            },
        }
    }

    pub fn lambdas_for(&self, task: TaskName) -> Vec<f64> {
        if self.lambdas.is_empty() {
            vec![self.train_config(task).unsup_weight]
        } else {
            self.lambdas.clone()
        }
    }
}

fn has_duplicates(v: &[f64]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_override_nested_fields() {
        let cfg = ExperimentConfig::from_toml(
            "seeds = 3\nproportions = [0.5]\n[hmm.train.nce]\nnu = 4\n[mixture.spec]\nstd = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, 3);
        assert_eq!(cfg.hmm.train.nce.nu, 4);
        assert_eq!(cfg.hmm.train.nce.mix, 0.5);
        assert_eq!(cfg.mixture.spec.std, 0.5);
        assert_eq!(cfg.mixture.spec.classes, 4);
    }

    #[test]
    fn rejects_bad_grids() {
        for text in [
            "seeds = 1",
            "proportions = []",
            "proportions = [0.0]",
            "ul_ratios = [-1.0]",
            "methods = [\"joint\", \"joint\"]",
            "lambdas = [0.5, 0.5]",
            "unknown_key = 1",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
        assert!(ExperimentConfig::from_toml("seeds = 1\nforce_single_seed = true").is_ok());
    }
}
