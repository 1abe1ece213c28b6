//! Synthetic task instances for one grid cell and replicate.

use std::fmt;
use std::str::FromStr;

use ebm_ssl::data::{bio_names, gen_mixture, sample_mixture, split_per_class, split_with_pool, Hmm, SslSplit};
use ebm_ssl::pipelines::{EvalSet, TaskData};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Mixture,
    Hmm,
}

impl TaskName {
    pub const ALL: [TaskName; 2] = [TaskName::Mixture, TaskName::Hmm];

    pub fn name(self) -> &'static str {
        match self {
            TaskName::Mixture => "mixture",
            TaskName::Hmm => "hmm",
        }
    }

    /// Metric used for λ selection, tables and curves.
    pub fn primary_metric(self) -> &'static str {
        "accuracy"
    }

    fn tag(self) -> u64 {
        match self {
            TaskName::Mixture => 1,
            TaskName::Hmm => 2,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown task {s:?}")))
    }
}

/// Purposes a derived seed can serve; each gets its own stream.
#[derive(Clone, Copy, Debug)]
pub enum SeedUse {
    Generator = 0,
    Labeled = 1,
    Pool = 2,
    Test = 3,
    Split = 4,
    Train = 5,
}

/// Seed for `(task, use, replicate)` under the global seed.
pub fn derive_seed(global: u64, task: TaskName, purpose: SeedUse, replicate: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(task.tag() * 16 + purpose as u64);
    rng.set_word_pos(2 * replicate as u128);
    rng.next_u64()
}

pub struct Instance {
    pub data: TaskData,
    pub test: EvalSet,
    /// Generating HMM of sequence tasks, for Bayes-rate comparisons.
    pub hmm: Option<Hmm>,
}

/// The generating HMM of the sequence task; fixed for a global seed.
pub fn task_hmm(cfg: &ExperimentConfig) -> Result<Hmm> {
    Ok(Hmm::random(
        &cfg.hmm.spec,
        derive_seed(cfg.seed, TaskName::Hmm, SeedUse::Generator, 0),
    )?)
}

/// Builds replicate `replicate` of `task` at labeling proportion `p` and
/// unlabeled ratio `r`.
///
/// The full labeled set and its shuffle depend only on the replicate, so the
/// labeled subsets of growing proportions are nested and identical across
/// ratios and methods. Unlabeled items come from a separate pool drawn from
/// the same distribution.
pub fn instance(cfg: &ExperimentConfig, task: TaskName, p: f64, r: f64, replicate: usize) -> Result<Instance> {
    let seed = |u| derive_seed(cfg.seed, task, u, replicate);
    match task {
        TaskName::Mixture => {
            let m = &cfg.mixture;
            let full = gen_mixture(&m.spec, m.full_per_class, seed(SeedUse::Labeled))?;
            let per_class = ((p * m.full_per_class as f64) - 1e-9).ceil().max(1.0) as usize;
            let mut split = split_per_class(&full, per_class, 0.0, seed(SeedUse::Split))?;
            let need = (r * split.labeled.len() as f64).round() as usize;
            if need > 0 {
                let per = need.div_ceil(m.spec.classes);
                let mut rng = ChaCha8Rng::seed_from_u64(seed(SeedUse::Pool));
                let pool = sample_mixture(&m.spec, per, &mut rng)?;
                split.unlabeled = pool.xs.into_iter().take(need).collect();
            }
            split.proportion = p;
            split.ratio = r;
            let test = gen_mixture(&m.spec, m.test_per_class, seed(SeedUse::Test))?;
            Ok(Instance {
                data: TaskData::Continuous {
                    split,
                    classes: m.spec.classes,
                },
                test: EvalSet::Continuous(test),
                hmm: None,
            })
        }
        TaskName::Hmm => {
            let h = &cfg.hmm;
            let hmm = task_hmm(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed(SeedUse::Labeled));
            let full = hmm.sample(&mut rng, h.full);
            let nl = ((p * h.full as f64) - 1e-9).ceil().max(1.0);
            let need = (r * nl).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed(SeedUse::Pool));
            let pool = hmm.sample(&mut rng, need).xs;
            let split: SslSplit<Vec<usize>, Vec<usize>> = split_with_pool(&full, &pool, p, r, seed(SeedUse::Split))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed(SeedUse::Test));
            let test = hmm.sample(&mut rng, h.test);
            Ok(Instance {
                data: TaskData::Sequence {
                    split,
                    vocab: h.spec.vocab,
                    labels: h.spec.states,
                    max_len: h.spec.max_len,
                    label_names: h.spec.bio.then(|| bio_names(h.spec.states)),
                },
                test: EvalSet::Sequence(test),
                hmm: Some(hmm),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled_len(d: &TaskData) -> usize {
        match d {
            TaskData::Continuous { split, .. } => split.labeled.len(),
            TaskData::Sequence { split, .. } => split.labeled.len(),
        }
    }

    fn unlabeled_len(d: &TaskData) -> usize {
        match d {
            TaskData::Continuous { split, .. } => split.unlabeled.len(),
            TaskData::Sequence { split, .. } => split.unlabeled.len(),
        }
    }

    #[test]
    fn sizes_follow_proportion_and_ratio() {
        let cfg = ExperimentConfig::default();
        let m = instance(&cfg, TaskName::Mixture, 0.02, 50.0, 0).unwrap();
        assert_eq!(labeled_len(&m.data), 16);
        assert_eq!(unlabeled_len(&m.data), 800);
        let h = instance(&cfg, TaskName::Hmm, 0.02, 50.0, 0).unwrap();
        assert_eq!(labeled_len(&h.data), 20);
        assert_eq!(unlabeled_len(&h.data), 1000);
        let h0 = instance(&cfg, TaskName::Hmm, 0.02, 0.0, 0).unwrap();
        assert_eq!(unlabeled_len(&h0.data), 0);
    }

    #[test]
    fn labeled_sets_are_nested_and_ratio_free() {
        let cfg = ExperimentConfig::default();
        for task in TaskName::ALL {
            let small = instance(&cfg, task, 0.02, 0.0, 3).unwrap();
            let small_r = instance(&cfg, task, 0.02, 5.0, 3).unwrap();
            let big = instance(&cfg, task, 0.1, 0.0, 3).unwrap();
            match (&small.data, &small_r.data, &big.data) {
                (
                    TaskData::Continuous { split: a, .. },
                    TaskData::Continuous { split: b, .. },
                    TaskData::Continuous { split: c, .. },
                ) => {
                    assert_eq!(a.labeled, b.labeled);
                    assert!(a.labeled.xs.iter().all(|x| c.labeled.xs.contains(x)));
                }
                (
                    TaskData::Sequence { split: a, .. },
                    TaskData::Sequence { split: b, .. },
                    TaskData::Sequence { split: c, .. },
                ) => {
                    assert_eq!(a.labeled, b.labeled);
                    assert_eq!(a.labeled.xs[..], c.labeled.xs[..a.labeled.len()]);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn replicates_and_global_seeds_differ() {
        let a = derive_seed(0, TaskName::Hmm, SeedUse::Train, 0);
        assert_ne!(a, derive_seed(0, TaskName::Hmm, SeedUse::Train, 1));
        assert_ne!(a, derive_seed(1, TaskName::Hmm, SeedUse::Train, 0));
        assert_ne!(a, derive_seed(0, TaskName::Mixture, SeedUse::Train, 0));
        assert_ne!(a, derive_seed(0, TaskName::Hmm, SeedUse::Test, 0));
        assert_eq!(a, derive_seed(0, TaskName::Hmm, SeedUse::Train, 0));
    }
}
