//! End-to-end training procedures: supervised baseline, pre-training with
//! fine-tuning, and joint training, for both continuous and sequence data.

pub mod metrics;
mod optim;
mod run;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use optim::{Momentum, OptimConfig};
pub use run::LogRow;

use crate::data::{ContinuousDataset, SequenceDataset, SslSplit};
use crate::diffcore::ParamStore;
use crate::ebm::JointSeqEnergy;
use crate::error::{Error, Result};
use crate::potentials::{classifier_logits, Activation, ClassifierNet};
use crate::samplers::ChainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Continuous,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Supervised,
    PretrainFinetune,
    Joint,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Supervised, Method::PretrainFinetune, Method::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::PretrainFinetune => "pretrain_finetune",
            Method::Joint => "joint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub latent: usize,
    pub hidden: usize,
    pub lr: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent: 2,
            hidden: 16,
            lr: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NceConfig {
    /// Noise samples per data sample.
    pub nu: usize,
    /// Refresh the noise model every this many steps; 0 never refreshes.
    pub refresh_every: usize,
    pub mix: f64,
    pub dynamic: bool,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self {
            nu: 10,
            refresh_every: 500,
            mix: 0.5,
            dynamic: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub modality: Modality,
    pub method: Method,
    /// Supervised (or fine-tuning) steps.
    pub steps: usize,
    /// Unsupervised steps before fine-tuning.
    pub pretrain_steps: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Weight λ of the unlabeled term in joint training.
    pub unsup_weight: f64,
    pub freeze_encoder: bool,
    pub optim: OptimConfig,
    /// Hidden layer sizes of the continuous network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Embedding (and recurrent state) size of the sequence encoder.
    pub embed_dim: usize,
    pub tied_embeddings: bool,
    pub learned_start: bool,
    /// Penalty `α·mean(u²)` on data and sample potentials of continuous models.
    pub energy_l2: f64,
    pub chain: ChainConfig,
    pub generator: Option<GeneratorConfig>,
    pub nce: NceConfig,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            modality: Modality::Continuous,
            method: Method::Supervised,
            steps: 300,
            pretrain_steps: 300,
            labeled_batch: 16,
            unlabeled_batch: 32,
            unsup_weight: 0.5,
            freeze_encoder: true,
            optim: OptimConfig::default(),
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            embed_dim: 8,
            tied_embeddings: true,
            learned_start: false,
            energy_l2: 0.0,
            chain: ChainConfig::default(),
            generator: Some(GeneratorConfig::default()),
            nce: NceConfig::default(),
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unsup_weight < 0.0 || !self.unsup_weight.is_finite() {
            return Err(Error::invalid(format!("λ must be ≥ 0, got {}", self.unsup_weight)));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.hidden.is_empty() || self.embed_dim == 0 {
            return Err(Error::invalid("network sizes must be positive"));
        }
        if self.nce.nu == 0 || !(0.0..1.0).contains(&self.nce.mix) {
            return Err(Error::invalid("NCE needs ν ≥ 1 and mix in [0, 1)"));
        }
        self.chain.validate()
    }
}

/// Training data of one run.
#[derive(Clone, Debug)]
pub enum TaskData {
    Continuous {
        split: SslSplit<Vec<f64>, usize>,
        classes: usize,
    },
    Sequence {
        split: SslSplit<Vec<usize>, Vec<usize>>,
        vocab: usize,
        labels: usize,
        max_len: usize,
        label_names: Option<Vec<String>>,
    },
}

impl TaskData {
    pub fn modality(&self) -> Modality {
        match self {
            TaskData::Continuous { .. } => Modality::Continuous,
            TaskData::Sequence { .. } => Modality::Sequence,
        }
    }

    fn labeled_len(&self) -> usize {
        match self {
            TaskData::Continuous { split, .. } => split.labeled.len(),
            TaskData::Sequence { split, .. } => split.labeled.len(),
        }
    }

    fn unlabeled_len(&self) -> usize {
        match self {
            TaskData::Continuous { split, .. } => split.unlabeled.len(),
            TaskData::Sequence { split, .. } => split.unlabeled.len(),
        }
    }
}

/// Held-out data for evaluation.
#[derive(Clone, Debug)]
pub enum EvalSet {
    Continuous(ContinuousDataset),
    Sequence(SequenceDataset),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Present for sequence tasks with BIO-shaped label names.
    pub span_f1: Option<f64>,
}

/// The predictor a run produces.
#[derive(Clone, Debug)]
pub enum Network {
    Classifier(ClassifierNet),
    Tagger {
        model: JointSeqEnergy,
        label_names: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub method: Method,
    pub network: Network,
    pub params: ParamStore,
    /// Metrics on the labeled training set at the end of training.
    pub train_metrics: Metrics,
    pub log: Vec<LogRow>,
}

impl TrainedModel {
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let Network::Classifier(net) = &self.network else {
            return Err(Error::invalid("not a classifier"));
        };
        let logits = classifier_logits(net, &self.params, x)?;
        let mut best = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        Ok(best)
    }

    pub fn predict_tags(&self, x: &[usize]) -> Result<Vec<usize>> {
        let Network::Tagger { model, .. } = &self.network else {
            return Err(Error::invalid("not a sequence tagger"));
        };
        model.decode(&self.params, x)
    }

    pub fn evaluate(&self, set: &EvalSet) -> Result<Metrics> {
        match (set, &self.network) {
            (EvalSet::Continuous(d), Network::Classifier(net)) => {
                if let Some(&y) = d.ys.iter().find(|&&y| y >= net.classes()) {
                    return Err(Error::invalid(format!("label {y} outside the model's label set")));
                }
                let pred = d.xs.iter().map(|x| self.predict_class(x)).collect::<Result<Vec<_>>>()?;
                Ok(Metrics {
                    accuracy: metrics::accuracy(&pred, &d.ys)?,
                    span_f1: None,
                })
            }
            (EvalSet::Sequence(d), Network::Tagger { model, label_names }) => {
                if d.ys.iter().flatten().any(|&y| y >= model.labels()) {
                    return Err(Error::invalid("labels outside the model's label set"));
                }
                let pred = d.xs.iter().map(|x| self.predict_tags(x)).collect::<Result<Vec<_>>>()?;
                let span_f1 = match label_names {
                    Some(n) if metrics::is_bio(n) => Some(metrics::span_f1(&pred, &d.ys, n)?.f1),
                    _ => None,
                };
                Ok(Metrics {
                    accuracy: metrics::token_accuracy(&pred, &d.ys)?,
                    span_f1,
                })
            }
            _ => Err(Error::invalid("evaluation set modality does not match the model")),
        }
    }
}

/// Trains with `cfg.method`.
pub fn train(task: &TaskData, cfg: &TrainConfig, dev: Option<&EvalSet>) -> Result<TrainedModel> {
    run::Run::start(task, cfg, dev)?.finish(None)
}

/// As [`train`], saving state to `checkpoint` every `every` steps and
/// resuming from it when it exists.
pub fn train_resumable(
    task: &TaskData,
    cfg: &TrainConfig,
    dev: Option<&EvalSet>,
    checkpoint: &Path,
    every: usize,
) -> Result<TrainedModel> {
    let run = if checkpoint.exists() {
        run::Run::resume(task, cfg, dev, checkpoint)?
    } else {
        run::Run::start(task, cfg, dev)?
    };
    run.finish(Some((checkpoint, every.max(1))))
}

/// Runs at most `steps` steps from `checkpoint` (or from scratch) and saves the state.
pub fn train_partial(task: &TaskData, cfg: &TrainConfig, checkpoint: &Path, steps: usize) -> Result<()> {
    let mut run = if checkpoint.exists() {
        run::Run::resume(task, cfg, None, checkpoint)?
    } else {
        run::Run::start(task, cfg, None)?
    };
    run.advance(steps)?;
    run.save(checkpoint)
}

fn with_method(cfg: &TrainConfig, method: Method) -> TrainConfig {
    TrainConfig { method, ..cfg.clone() }
}

/// Supervised baseline; the unlabeled set is ignored.
pub fn train_supervised(task: &TaskData, cfg: &TrainConfig) -> Result<TrainedModel> {
    if task.labeled_len() == 0 {
        return Err(Error::Empty("labeled set"));
    }
    train(task, &with_method(cfg, Method::Supervised), None)
}

/// Unsupervised pre-training of a potential, then a new head on its features.
pub fn train_pretrain_finetune(task: &TaskData, cfg: &TrainConfig) -> Result<TrainedModel> {
    if task.unlabeled_len() == 0 {
        return Err(Error::Empty("unlabeled set"));
    }
    train(task, &with_method(cfg, Method::PretrainFinetune), None)
}

/// Conditional likelihood on labeled data plus λ times a marginal
/// likelihood surrogate on unlabeled data, under one joint model.
pub fn train_joint(task: &TaskData, cfg: &TrainConfig) -> Result<TrainedModel> {
    if cfg.unsup_weight < 0.0 {
        return Err(Error::invalid("λ must be ≥ 0"));
    }
    train(task, &with_method(cfg, Method::Joint), None)
}
