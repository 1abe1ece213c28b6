//! Linear-chain CRF over per-position node potentials and an edge matrix.
//!
//! For labels `y_1..y_l` (0-based here) the score is
//! `Σ_i node[i, y_i] + Σ_{i≥2} edge[y_{i-1}, y_i]`, plus `start[y_1]` when a
//! learned start vector is configured. There is no edge term into the first
//! position and no end transition.

use crate::diffcore::{logsumexp, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ChainPotentials {
    len: usize,
    labels: usize,
    /// `len × labels`, row-major.
    node: Vec<f64>,
    /// `labels × labels`, `edge[prev * labels + next]`.
    edge: Vec<f64>,
    start: Option<Vec<f64>>,
}

impl ChainPotentials {
    pub fn new(len: usize, labels: usize, node: Vec<f64>, edge: Vec<f64>) -> Result<Self> {
        if len == 0 || labels == 0 {
            return Err(Error::invalid("chain needs at least one position and one label"));
        }
        if node.len() != len * labels || edge.len() != labels * labels {
            return Err(Error::shape(
                "chain potentials",
                format!("node {} / edge {} for l={len}, K={labels}", node.len(), edge.len()),
            ));
        }
        if node.iter().chain(&edge).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("chain potentials"));
        }
        Ok(Self {
            len,
            labels,
            node,
            edge,
            start: None,
        })
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.labels {
            return Err(Error::shape("chain start", format!("{} entries", start.len())));
        }
        self.start = Some(start);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn node(&self, i: usize, k: usize) -> f64 {
        self.node[i * self.labels + k]
    }

    pub fn edge(&self, prev: usize, next: usize) -> f64 {
        self.edge[prev * self.labels + next]
    }

    fn first(&self, k: usize) -> f64 {
        self.node(0, k) + self.start.as_ref().map_or(0.0, |s| s[k])
    }

    /// Adds `c` to every entry of node row `i`.
    pub fn shift_row(&mut self, i: usize, c: f64) {
        let k = self.labels;
        self.node[i * k..(i + 1) * k].iter_mut().for_each(|v| *v += c);
    }
}

fn check_labels(ch: &ChainPotentials, y: &[usize]) -> Result<()> {
    if y.len() != ch.len {
        return Err(Error::shape(
            "labels",
            format!("{} labels for length {}", y.len(), ch.len),
        ));
    }
    if let Some(&bad) = y.iter().find(|&&k| k >= ch.labels) {
        return Err(Error::OutOfRange {
            what: "labels",
            index: bad,
            size: ch.labels,
        });
    }
    Ok(())
}

pub fn score(ch: &ChainPotentials, y: &[usize]) -> Result<f64> {
    check_labels(ch, y)?;
    let mut s = ch.first(y[0]);
    for i in 1..ch.len {
        s += ch.node(i, y[i]) + ch.edge(y[i - 1], y[i]);
    }
    Ok(s)
}

/// `log Σ_y exp score(y)` by the forward recursion.
pub fn forward_log_z(ch: &ChainPotentials) -> f64 {
    let k = ch.labels;
    let mut alpha: Vec<f64> = (0..k).map(|j| ch.first(j)).collect();
    let mut next = vec![0.0; k];
    let mut col = vec![0.0; k];
    for i in 1..ch.len {
        for (kk, slot) in next.iter_mut().enumerate() {
            for j in 0..k {
                col[j] = alpha[j] + ch.edge(j, kk);
            }
            *slot = logsumexp(&col) + ch.node(i, kk);
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    logsumexp(&alpha)
}

/// `−log p(y | x) = forward_log_z − score(y)`.
pub fn crf_nll(ch: &ChainPotentials, y: &[usize]) -> Result<f64> {
    Ok(forward_log_z(ch) - score(ch, y)?)
}

/// MAP labeling and its score. Ties go to the lowest label index.
pub fn viterbi(ch: &ChainPotentials) -> (Vec<usize>, f64) {
    let k = ch.labels;
    let mut delta: Vec<f64> = (0..k).map(|j| ch.first(j)).collect();
    let mut back = vec![0usize; ch.len * k];
    let mut next = vec![0.0; k];
    for i in 1..ch.len {
        for kk in 0..k {
            let mut best = 0;
            let mut best_v = delta[0] + ch.edge(0, kk);
            for j in 1..k {
                let v = delta[j] + ch.edge(j, kk);
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            back[i * k + kk] = best;
            next[kk] = best_v + ch.node(i, kk);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    for j in 1..k {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let best_score = delta[last];
    let mut path = vec![0; ch.len];
    path[ch.len - 1] = last;
    for i in (1..ch.len).rev() {
        path[i - 1] = back[i * k + path[i]];
    }
    (path, best_score)
}

/// Batched log-partition on the tape. `nodes[i]` is `[n, K]` for position
/// `i`; `edge` is `[K, K]`; `start`, if present, is `[K]`. Returns `[n]`.
pub fn tape_log_partition(tape: &mut Tape, nodes: &[Var], edge: Var, start: Option<Var>) -> Result<Var> {
    let first = *nodes.first().ok_or(Error::Empty("chain positions"))?;
    let mut alpha = match start {
        Some(s) => tape.add_row(first, s)?,
        None => first,
    };
    for &node in &nodes[1..] {
        let moved = tape.log_mat_exp(alpha, edge)?;
        alpha = tape.add(moved, node)?;
    }
    tape.logsumexp_rows(alpha)
}

/// Batched chain score of label sequences `ys` (one per row), `[n]`.
pub fn tape_score(tape: &mut Tape, nodes: &[Var], edge: Var, start: Option<Var>, ys: &[&[usize]]) -> Result<Var> {
    let len = nodes.len();
    if len == 0 {
        return Err(Error::Empty("chain positions"));
    }
    if ys.iter().any(|y| y.len() != len) {
        return Err(Error::shape("tape_score", "label sequence length"));
    }
    let k = tape.value(edge).shape()[0];
    let col = |i: usize| -> Vec<usize> { ys.iter().map(|y| y[i]).collect() };
    let mut acc = tape.pick(nodes[0], &col(0))?;
    if let Some(s) = start {
        let st = tape.select(s, &col(0))?;
        acc = tape.add(acc, st)?;
    }
    for i in 1..len {
        let nv = tape.pick(nodes[i], &col(i))?;
        acc = tape.add(acc, nv)?;
        let flat: Vec<usize> = ys.iter().map(|y| y[i - 1] * k + y[i]).collect();
        let ev = tape.select(edge, &flat)?;
        acc = tape.add(acc, ev)?;
    }
    Ok(acc)
}

/// Exhaustive reference computations for small chains.
pub mod oracle {
    use super::{score, ChainPotentials};
    use crate::diffcore::logsumexp;

    /// All `K^l` label sequences in lexicographic order.
    pub fn labelings(len: usize, labels: usize) -> Vec<Vec<usize>> {
        let total = labels.pow(len as u32);
        (0..total)
            .map(|mut code| {
                let mut y = vec![0; len];
                for slot in y.iter_mut().rev() {
                    *slot = code % labels;
                    code /= labels;
                }
                y
            })
            .collect()
    }

    pub fn brute_log_z(ch: &ChainPotentials) -> f64 {
        let scores: Vec<f64> = labelings(ch.len(), ch.labels())
            .iter()
            .map(|y| score(ch, y).unwrap())
            .collect();
        logsumexp(&scores)
    }

    /// Highest-scoring labeling, first in lexicographic order among ties.
    pub fn brute_argmax(ch: &ChainPotentials) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for y in labelings(ch.len(), ch.labels()) {
            let s = score(ch, &y).unwrap();
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((y, s));
            }
        }
        best.unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{softmax, RealArray};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chain(rng: &mut ChaCha8Rng, len: usize, k: usize) -> ChainPotentials {
        let node = (0..len * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let edge = (0..k * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        ChainPotentials::new(len, k, node, edge).unwrap()
    }

    #[test]
    fn score_cases() {
        let ch = ChainPotentials::new(1, 3, vec![0.5, -1.0, 2.0], vec![9.0; 9]).unwrap();
        assert_eq!(score(&ch, &[2]).unwrap(), 2.0);
        let zero = ChainPotentials::new(3, 2, vec![0.0; 6], vec![0.0; 4]).unwrap();
        for y in oracle::labelings(3, 2) {
            assert_eq!(score(&zero, &y).unwrap(), 0.0);
        }
        // node rows (1, 2), (3, 4); edge [[0.5, -1], [0.25, 2]]
        let ch = ChainPotentials::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        assert_eq!(score(&ch, &[0, 1]).unwrap(), 1.0 + 4.0 - 1.0);
        assert_eq!(score(&ch, &[1, 0]).unwrap(), 2.0 + 3.0 + 0.25);
        assert!(score(&ch, &[0, 2]).is_err());
        assert!(score(&ch, &[0]).is_err());
    }

    #[test]
    fn log_partition_cases() {
        let zero = ChainPotentials::new(2, 3, vec![0.0; 6], vec![0.0; 9]).unwrap();
        assert!((forward_log_z(&zero) - 9f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let ch = random_chain(&mut rng, 6, 4);
            assert!((forward_log_z(&ch) - oracle::brute_log_z(&ch)).abs() < 1e-10);
            let mut shifted = ch.clone();
            shifted.shift_row(3, 1.75);
            assert!((forward_log_z(&shifted) - forward_log_z(&ch) - 1.75).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_cases() {
        let ch = ChainPotentials::new(4, 1, vec![0.3, -2.0, 1.0, 5.0], vec![0.7]).unwrap();
        assert_eq!(crf_nll(&ch, &[0, 0, 0, 0]).unwrap(), 0.0);
        let row = [0.4, -1.1, 2.3];
        let ch = ChainPotentials::new(1, 3, row.to_vec(), vec![1.0; 9]).unwrap();
        let p = softmax(&row);
        for y in 0..3 {
            assert!((crf_nll(&ch, &[y]).unwrap() + p[y].ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn viterbi_cases() {
        let zero = ChainPotentials::new(5, 3, vec![0.0; 15], vec![0.0; 9]).unwrap();
        assert_eq!(viterbi(&zero).0, vec![0; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let ch = random_chain(&mut rng, 5, 3);
            let (path, s) = viterbi(&ch);
            let (want, ws) = oracle::brute_argmax(&ch);
            assert_eq!(path, want);
            assert!((s - ws).abs() < 1e-12);
            assert!((score(&ch, &path).unwrap() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_bound_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 1..=3 {
            let ch = random_chain(&mut rng, 4, k).with_start(vec![0.5; k]).unwrap();
            let lz = forward_log_z(&ch);
            assert!((lz - oracle::brute_log_z(&ch)).abs() < 1e-10);
            let mut total = 0.0;
            for y in oracle::labelings(4, k) {
                let s = score(&ch, &y).unwrap();
                if k == 1 {
                    assert!((lz - s).abs() < 1e-12);
                } else {
                    assert!(lz > s);
                }
                total += (s - lz).exp();
            }
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_versions_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (len, k) = (5, 3);
        let chains: Vec<ChainPotentials> = (0..3)
            .map(|_| random_chain(&mut rng, len, k))
            .map(|c| {
                ChainPotentials::new(
                    len,
                    k,
                    c.node.clone(),
                    vec![0.1, -0.3, 0.7, 0.0, 1.2, -0.5, 0.4, 0.9, -1.0],
                )
                .unwrap()
            })
            .collect();
        let ys: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..len).map(|_| rng.random_range(0..k)).collect())
            .collect();
        let start = vec![0.2, -0.1, 0.3];
        let mut tape = Tape::new();
        let nodes: Vec<Var> = (0..len)
            .map(|i| {
                let rows: Vec<Vec<f64>> = chains.iter().map(|c| c.node[i * k..(i + 1) * k].to_vec()).collect();
                tape.input(RealArray::from_rows(&rows).unwrap()).unwrap()
            })
            .collect();
        let edge = tape
            .input(RealArray::matrix(k, k, chains[0].edge.clone()).unwrap())
            .unwrap();
        let st = tape.input(RealArray::vector(start.clone()).unwrap()).unwrap();
        let lz = tape_log_partition(&mut tape, &nodes, edge, Some(st)).unwrap();
        let y_refs: Vec<&[usize]> = ys.iter().map(Vec::as_slice).collect();
        let sc = tape_score(&mut tape, &nodes, edge, Some(st), &y_refs).unwrap();
        for (b, c) in chains.iter().enumerate() {
            let c = c.clone().with_start(start.clone()).unwrap();
            assert!((tape.value(lz).data()[b] - forward_log_z(&c)).abs() < 1e-12);
            assert!((tape.value(sc).data()[b] - score(&c, &ys[b]).unwrap()).abs() < 1e-12);
        }
    }
}
