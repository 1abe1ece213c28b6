//! Synthetic datasets and labeled/unlabeled splits.

mod hmm;
mod io;
mod mixture;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use hmm::{bio_names, gen_hmm, Hmm, HmmSpec, SequenceDataset};
pub use io::{read_continuous, read_sequences, write_continuous, write_sequences};
pub use mixture::{gen_mixture, sample_mixture, ContinuousDataset, MixtureSpec};

use crate::error::{Error, Result};

/// Parallel lists of observations and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<X, Y> {
    pub xs: Vec<X>,
    pub ys: Vec<Y>,
}

impl<X, Y> Default for LabeledSet<X, Y> {
    fn default() -> Self {
        Self {
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }
}

impl<X: Clone, Y: Clone> LabeledSet<X, Y> {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i].clone()).collect(),
        }
    }
}

/// Classes present in a label (one for a class label, several for a label sequence).
pub trait ClassLabels {
    fn classes(&self) -> Vec<usize>;
}

impl ClassLabels for usize {
    fn classes(&self) -> Vec<usize> {
        vec![*self]
    }
}

impl ClassLabels for Vec<usize> {
    fn classes(&self) -> Vec<usize> {
        self.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SslSplit<X, Y> {
    pub labeled: LabeledSet<X, Y>,
    /// Observations only; their labels are never copied.
    pub unlabeled: Vec<X>,
    pub proportion: f64,
    pub ratio: f64,
}

fn class_set<Y: ClassLabels>(ys: &[Y]) -> BTreeSet<usize> {
    ys.iter().flat_map(ClassLabels::classes).collect()
}

const MAX_RESAMPLES: usize = 1000;

/// Shuffled indices whose first `n` cover every class of `ys`.
fn covering_draw<Y: ClassLabels>(ys: &[Y], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let all = class_set(ys);
    for _ in 0..MAX_RESAMPLES {
        let mut idx: Vec<usize> = (0..ys.len()).collect();
        idx.shuffle(rng);
        let got: BTreeSet<usize> = idx[..n].iter().flat_map(|&i| ys[i].classes()).collect();
        if got == all {
            return Ok(idx);
        }
    }
    Err(Error::invalid(format!(
        "no labeled subset of size {n} covering all {} classes found",
        all.len()
    )))
}

fn sizes(n: usize, p: f64, r: f64) -> Result<(usize, usize)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!(
            "labeling proportion must lie in (0, 1], got {p}"
        )));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("U/L ratio must be non-negative, got {r}")));
    }
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    // Tolerance keeps e.g. 0.1 × 100 from rounding up to 11.
    let labeled = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let unlabeled = (r * labeled as f64).round() as usize;
    Ok((labeled.min(n), unlabeled))
}

/// Labeled subset of `⌈p·N⌉` items covering every class, and `r·|labeled|`
/// unlabeled items drawn from the remainder.
pub fn split<X: Clone, Y: Clone + ClassLabels>(
    data: &LabeledSet<X, Y>,
    p: f64,
    r: f64,
    seed: u64,
) -> Result<SslSplit<X, Y>> {
    let (nl, nu) = sizes(data.len(), p, r)?;
    if nl + nu > data.len() {
        return Err(Error::PoolExhausted(format!(
            "{nl} labeled + {nu} unlabeled exceeds {} items",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = covering_draw(&data.ys, nl, &mut rng)?;
    Ok(SslSplit {
        labeled: data.subset(&idx[..nl]),
        unlabeled: idx[nl..nl + nu].iter().map(|&i| data.xs[i].clone()).collect(),
        proportion: p,
        ratio: r,
    })
}

/// As [`split`], with unlabeled items drawn from a separate pool.
pub fn split_with_pool<X: Clone, Y: Clone + ClassLabels>(
    data: &LabeledSet<X, Y>,
    pool: &[X],
    p: f64,
    r: f64,
    seed: u64,
) -> Result<SslSplit<X, Y>> {
    let (nl, nu) = sizes(data.len(), p, r)?;
    if nu > pool.len() {
        return Err(Error::PoolExhausted(format!(
            "{nu} unlabeled requested, pool has {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = covering_draw(&data.ys, nl, &mut rng)?;
    let mut pidx: Vec<usize> = (0..pool.len()).collect();
    pidx.shuffle(&mut rng);
    Ok(SslSplit {
        labeled: data.subset(&idx[..nl]),
        unlabeled: pidx[..nu].iter().map(|&i| pool[i].clone()).collect(),
        proportion: p,
        ratio: r,
    })
}

/// Exactly `per_class` labeled items of each class (single-label data) and
/// `r·|labeled|` unlabeled items from the remainder.
pub fn split_per_class<X: Clone>(
    data: &LabeledSet<X, usize>,
    per_class: usize,
    r: f64,
    seed: u64,
) -> Result<SslSplit<X, usize>> {
    if per_class == 0 {
        return Err(Error::invalid("need at least one labeled item per class"));
    }
    let classes = class_set(&data.ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let mut labeled = Vec::new();
    for &c in &classes {
        let mine: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| data.ys[i] == c)
            .take(per_class)
            .collect();
        if mine.len() < per_class {
            return Err(Error::PoolExhausted(format!(
                "class {c} has fewer than {per_class} items"
            )));
        }
        labeled.extend(mine);
    }
    labeled.sort_by_key(|i| idx.iter().position(|j| j == i));
    let taken: BTreeSet<usize> = labeled.iter().copied().collect();
    let nu = (r * labeled.len() as f64).round() as usize;
    let rest: Vec<usize> = idx.iter().copied().filter(|i| !taken.contains(i)).take(nu).collect();
    if rest.len() < nu {
        return Err(Error::PoolExhausted(format!(
            "{nu} unlabeled requested, {} left",
            rest.len()
        )));
    }
    Ok(SslSplit {
        proportion: labeled.len() as f64 / data.len() as f64,
        labeled: data.subset(&labeled),
        unlabeled: rest.iter().map(|&i| data.xs[i].clone()).collect(),
        ratio: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn mixture_counts_and_determinism() {
        let spec = MixtureSpec {
            classes: 2,
            ..MixtureSpec::default()
        };
        let d = gen_mixture(&spec, 10, 3).unwrap();
        assert_eq!(d.len(), 20);
        assert_eq!(d.ys.iter().filter(|&&y| y == 0).count(), 10);
        assert_eq!(d, gen_mixture(&spec, 10, 3).unwrap());
        assert_ne!(d, gen_mixture(&spec, 10, 4).unwrap());
    }

    #[test]
    fn mixture_class_means() {
        let spec = MixtureSpec::default();
        let d = gen_mixture(&spec, 500, 0).unwrap();
        for k in 0..spec.classes {
            let pts: Vec<&Vec<f64>> =
                d.xs.iter()
                    .zip(&d.ys)
                    .filter(|(_, &y)| y == k)
                    .map(|(x, _)| x)
                    .collect();
            let m = spec.mean(k);
            for c in 0..2 {
                let mean = pts.iter().map(|p| p[c]).sum::<f64>() / pts.len() as f64;
                assert!((mean - m[c]).abs() < 0.5);
            }
        }
    }

    #[test]
    fn identity_emission_labels_by_lookup() {
        let spec = HmmSpec {
            states: 3,
            vocab: 3,
            peak: 1.0,
            bio: false,
            ..HmmSpec::default()
        };
        let (hmm, d) = gen_hmm(&spec, 200, 1).unwrap();
        assert!(d.xs.iter().zip(&d.ys).all(|(x, y)| x == y));
        assert_eq!(hmm.posterior_decode(&[2, 0, 1]).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn bio_constraints_hold() {
        let spec = HmmSpec {
            states: 5,
            ..HmmSpec::default()
        };
        let (hmm, d) = gen_hmm(&spec, 500, 2).unwrap();
        assert_eq!(hmm.label_names.as_deref().unwrap()[2], "I-A");
        for y in &d.ys {
            for i in 0..y.len() {
                if y[i] > 0 && y[i] % 2 == 0 {
                    assert!(i > 0 && (y[i - 1] == y[i] || y[i - 1] == y[i] - 1), "{y:?}");
                }
            }
        }
    }

    #[test]
    fn posteriors_match_enumeration() {
        let spec = HmmSpec {
            states: 3,
            vocab: 4,
            bio: false,
            ..HmmSpec::default()
        };
        let hmm = Hmm::random(&spec, 5).unwrap();
        let x = [0, 3, 1, 2];
        let (k, v) = (3, 4);
        let mut post = vec![vec![0.0; k]; x.len()];
        for ys in crate::crf::oracle::labelings(x.len(), k) {
            let mut p = hmm.initial[ys[0]] * hmm.emit[ys[0] * v + x[0]];
            for i in 1..x.len() {
                p *= hmm.trans[ys[i - 1] * k + ys[i]] * hmm.emit[ys[i] * v + x[i]];
            }
            for (i, &y) in ys.iter().enumerate() {
                post[i][y] += p;
            }
        }
        let got = hmm.posteriors(&x).unwrap();
        for i in 0..x.len() {
            let z: f64 = post[i].iter().sum();
            for s in 0..k {
                assert!((got[i][s] - post[i][s] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hmm_length_distribution() {
        let spec = HmmSpec::default();
        let hmm = Hmm::random(&spec, 0).unwrap();
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = hmm.sample(&mut rng, n);
        let mut counts = vec![0.0; spec.max_len];
        for x in &d.xs {
            counts[x.len() - 1] += 1.0;
        }
        let chi2: f64 = (0..spec.max_len)
            .filter(|&i| hmm.lengths[i] > 0.0)
            .map(|i| {
                let e = hmm.lengths[i] * n as f64;
                (counts[i] - e).powi(2) / e
            })
            .sum();
        // 6 degrees of freedom, α = 0.01
        assert!(chi2 < 16.812, "chi2 {chi2}");
        assert_eq!(counts[0], 0.0);
    }

    #[test]
    fn split_sizes() {
        let spec = MixtureSpec::default();
        let d = gen_mixture(&spec, 25, 0).unwrap();
        let s = split(&d, 0.5, 0.0, 1).unwrap();
        assert_eq!(s.labeled.len(), 50);
        assert!(s.unlabeled.is_empty());
        let s = split(&d, 1.0, 0.0, 1).unwrap();
        assert_eq!(s.labeled.len(), 100);
        let s = split(&d, 0.1, 2.0, 1).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len()), (10, 20));
        assert!(matches!(split(&d, 0.5, 2.0, 1), Err(Error::PoolExhausted(_))));
        assert!(split(&d, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn split_disjoint_and_covering() {
        let spec = MixtureSpec::default();
        let d = gen_mixture(&spec, 30, 0).unwrap();
        let mut seen = BTreeSet::new();
        for seed in 0..100 {
            let s = split(&d, 0.05, 3.0, seed).unwrap();
            assert_eq!(class_set(&s.labeled.ys).len(), 4);
            for x in &s.unlabeled {
                assert!(!s.labeled.xs.contains(x));
            }
            seen.insert(format!("{:?}", s.labeled.xs));
        }
        assert!(seen.len() > 90);
    }

    #[test]
    fn per_class_and_pool_splits() {
        let d = gen_mixture(&MixtureSpec::default(), 250, 0).unwrap();
        let s = split_per_class(&d, 4, 50.0, 7).unwrap();
        assert_eq!(s.labeled.len(), 16);
        assert_eq!(s.unlabeled.len(), 800);
        for k in 0..4 {
            assert_eq!(s.labeled.ys.iter().filter(|&&y| y == k).count(), 4);
        }
        let (_, seqs) = gen_hmm(&HmmSpec::default(), 50, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool: Vec<Vec<usize>> = (0..100).map(|_| vec![rng.random_range(0..16)]).collect();
        let s = split_with_pool(&seqs, &pool, 0.1, 10.0, 0).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len()), (5, 50));
        assert!(split_with_pool(&seqs, &pool, 0.1, 30.0, 0).is_err());
    }
}
