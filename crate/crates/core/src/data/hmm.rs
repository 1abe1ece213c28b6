use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmSpec {
    pub states: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Self-transition probability.
    pub stay: f64,
    /// Emission mass each state puts on its own tokens.
    pub peak: f64,
    /// Name states `O, B-A, I-A, B-B, …` and forbid `I` without a preceding `B`/`I` of its type.
    pub bio: bool,
}

impl Default for HmmSpec {
    fn default() -> Self {
        Self {
            states: 3,
            vocab: 16,
            min_len: 2,
            max_len: 8,
            stay: 0.6,
            peak: 0.7,
            bio: true,
        }
    }
}

impl HmmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.states) || !(1..=32).contains(&self.vocab) {
            return Err(Error::invalid("HMM needs 1..=5 states and 1..=32 tokens"));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > 12 {
            return Err(Error::invalid("HMM lengths must satisfy 1 ≤ min ≤ max ≤ 12"));
        }
        if !(0.0..=1.0).contains(&self.stay) || !(0.0..=1.0).contains(&self.peak) {
            return Err(Error::invalid("stay and peak must lie in [0, 1]"));
        }
        if self.bio && self.states % 2 == 0 {
            return Err(Error::invalid("BIO tag sets have an odd number of states"));
        }
        Ok(())
    }
}

/// `O, B-A, I-A, B-B, I-B, …` for `states = 2m + 1`.
pub fn bio_names(states: usize) -> Vec<String> {
    let mut names = vec!["O".to_string()];
    for t in 0..states / 2 {
        let ty = (b'A' + t as u8) as char;
        names.push(format!("B-{ty}"));
        names.push(format!("I-{ty}"));
    }
    names
}

/// Hidden Markov model whose states are the gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Hmm {
    pub states: usize,
    pub vocab: usize,
    pub initial: Vec<f64>,
    /// `K × K`, row = previous state.
    pub trans: Vec<f64>,
    /// `K × V`.
    pub emit: Vec<f64>,
    /// Probability of length `l` at index `l − 1`.
    pub lengths: Vec<f64>,
    pub label_names: Option<Vec<String>>,
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn check_dist(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} is not a probability vector")));
    }
    Ok(())
}

impl Hmm {
    pub fn new(initial: Vec<f64>, trans: Vec<f64>, emit: Vec<f64>, lengths: Vec<f64>) -> Result<Self> {
        let k = initial.len();
        if k == 0 || trans.len() != k * k || emit.is_empty() || emit.len() % k != 0 || lengths.is_empty() {
            return Err(Error::invalid("inconsistent HMM table sizes"));
        }
        let vocab = emit.len() / k;
        check_dist(&initial, "initial distribution")?;
        check_dist(&lengths, "length distribution")?;
        for r in 0..k {
            check_dist(&trans[r * k..(r + 1) * k], "transition row")?;
            check_dist(&emit[r * vocab..(r + 1) * vocab], "emission row")?;
        }
        Ok(Self {
            states: k,
            vocab,
            initial,
            trans,
            emit,
            lengths,
            label_names: None,
        })
    }

    /// Random diagonally dominant HMM with per-state emission peaks.
    pub fn random(spec: &HmmSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, v) = (spec.states, spec.vocab);
        // I-tags (odd-numbered states ≥ 2 in BIO order) need B or I of their type before them.
        let allowed = |prev: Option<usize>, next: usize| {
            if !spec.bio || next == 0 || next % 2 == 1 {
                return true;
            }
            matches!(prev, Some(p) if p == next || p == next - 1)
        };
        let mut initial: Vec<f64> = (0..k).map(|s| if allowed(None, s) { 1.0 } else { 0.0 }).collect();
        normalize(&mut initial);
        let mut trans = vec![0.0; k * k];
        for p in 0..k {
            let row = &mut trans[p * k..(p + 1) * k];
            let mut off: Vec<f64> = (0..k)
                .map(|s| {
                    if s != p && allowed(Some(p), s) {
                        rng.random_range(0.5..1.5)
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = off.iter().sum();
            if total == 0.0 {
                row[p] = 1.0;
                continue;
            }
            off.iter_mut().for_each(|x| *x *= (1.0 - spec.stay) / total);
            row.copy_from_slice(&off);
            row[p] = spec.stay;
        }
        let mut emit = vec![0.0; k * v];
        for s in 0..k {
            let row = &mut emit[s * v..(s + 1) * v];
            let own: Vec<usize> = (0..v).filter(|t| t % k == s).collect();
            let w: Vec<f64> = own.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            let wt: f64 = w.iter().sum();
            for x in row.iter_mut() {
                *x = (1.0 - spec.peak) / v as f64;
            }
            for (&t, wi) in own.iter().zip(&w) {
                row[t] += spec.peak * wi / wt;
            }
            normalize(row);
        }
        let mut lengths = vec![0.0; spec.max_len];
        for l in spec.min_len..=spec.max_len {
            lengths[l - 1] = 1.0;
        }
        normalize(&mut lengths);
        let mut hmm = Self::new(initial, trans, emit, lengths)?;
        if spec.bio {
            hmm.label_names = Some(bio_names(k));
        }
        Ok(hmm)
    }

    pub fn max_len(&self) -> usize {
        self.lengths.len()
    }

    fn draw<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if r < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// One `(tokens, states)` pair.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        let (k, v) = (self.states, self.vocab);
        let len = Self::draw(rng, &self.lengths) + 1;
        let mut xs = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        let mut s = Self::draw(rng, &self.initial);
        for i in 0..len {
            if i > 0 {
                s = Self::draw(rng, &self.trans[s * k..(s + 1) * k]);
            }
            ys.push(s);
            xs.push(Self::draw(rng, &self.emit[s * v..(s + 1) * v]));
        }
        (xs, ys)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> SequenceDataset {
        let mut set = LabeledSet::default();
        for _ in 0..n {
            let (x, y) = self.sample_one(rng);
            set.xs.push(x);
            set.ys.push(y);
        }
        set
    }

    /// Per-position state posteriors `p(y_i = s | x)` by forward-backward.
    pub fn posteriors(&self, x: &[usize]) -> Result<Vec<Vec<f64>>> {
        let (k, v) = (self.states, self.vocab);
        if x.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if let Some(&t) = x.iter().find(|&&t| t >= v) {
            return Err(Error::OutOfRange {
                what: "vocabulary",
                index: t,
                size: v,
            });
        }
        let l = x.len();
        let e = |s: usize, t: usize| self.emit[s * v + t];
        let mut alpha = vec![vec![0.0; k]; l];
        for s in 0..k {
            alpha[0][s] = self.initial[s] * e(s, x[0]);
        }
        normalize(&mut alpha[0]);
        for i in 1..l {
            for s in 0..k {
                alpha[i][s] = (0..k).map(|p| alpha[i - 1][p] * self.trans[p * k + s]).sum::<f64>() * e(s, x[i]);
            }
            normalize(&mut alpha[i]);
        }
        let mut beta = vec![vec![1.0; k]; l];
        for i in (0..l - 1).rev() {
            for p in 0..k {
                beta[i][p] = (0..k)
                    .map(|s| self.trans[p * k + s] * e(s, x[i + 1]) * beta[i + 1][s])
                    .sum();
            }
            normalize(&mut beta[i]);
        }
        Ok((0..l)
            .map(|i| {
                let mut g: Vec<f64> = (0..k).map(|s| alpha[i][s] * beta[i][s]).collect();
                normalize(&mut g);
                g
            })
            .collect())
    }

    /// Per-position most probable state; ties go to the lowest index.
    pub fn posterior_decode(&self, x: &[usize]) -> Result<Vec<usize>> {
        Ok(self
            .posteriors(x)?
            .iter()
            .map(|g| {
                let mut best = 0;
                for s in 1..g.len() {
                    if g[s] > g[best] {
                        best = s;
                    }
                }
                best
            })
            .collect())
    }
}

pub type SequenceDataset = LabeledSet<Vec<usize>, Vec<usize>>;

/// Samples an HMM from `seed` and draws `n` labeled sequences from it.
pub fn gen_hmm(spec: &HmmSpec, n: usize, seed: u64) -> Result<(Hmm, SequenceDataset)> {
    let hmm = Hmm::random(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let data = hmm.sample(&mut rng, n);
    Ok((hmm, data))
}
