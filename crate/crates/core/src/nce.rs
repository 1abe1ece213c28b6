//! Noise-contrastive estimation for sequence models.
//!
//! The noise distribution is a bigram language model with add-one smoothing
//! and an empirical length distribution. The model's unknown normalizer is
//! absorbed by a trainable scalar `log c` kept in the parameter store under
//! [`LOG_C`].

use rand::Rng;

use crate::diffcore::checkpoint::{Checkpoint, Entry};
use crate::diffcore::{Gradients, ParamStore, RealArray, Tape, Var};
use crate::ebm::{potentials_of, EnergyModel};
use crate::error::{Error, Result};

pub const LOG_C: &str = "nce.log_c";

/// Adds `log c = 0` to the store.
pub fn init_log_c(params: &mut ParamStore) -> Result<()> {
    params.init_zeros(LOG_C, &[])
}

/// Bigram noise language model over tokens `0..V` with lengths `1..=L`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLm {
    vocab: usize,
    max_len: usize,
    /// `(V + 1) × V` transition counts; row 0 is the sentence-start context.
    bigram: Vec<u64>,
    /// Counts of lengths `1..=L` at index `l − 1`.
    lengths: Vec<u64>,
    row_totals: Vec<u64>,
    length_total: u64,
}

impl NoiseLm {
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn bigram_counts(&self) -> &[u64] {
        &self.bigram
    }

    pub fn length_counts(&self) -> &[u64] {
        &self.lengths
    }

    fn from_counts(vocab: usize, max_len: usize, bigram: Vec<u64>, lengths: Vec<u64>) -> Result<Self> {
        if bigram.len() != (vocab + 1) * vocab || lengths.len() != max_len {
            return Err(Error::invalid("noise count tables have the wrong size"));
        }
        let length_total = lengths.iter().sum();
        if length_total == 0 {
            return Err(Error::Empty("noise length counts"));
        }
        let row_totals = bigram.chunks(vocab).map(|r| r.iter().sum()).collect();
        Ok(Self {
            vocab,
            max_len,
            bigram,
            lengths,
            row_totals,
            length_total,
        })
    }

    /// `p(w | prev)`, where `prev = None` is the sentence start.
    pub fn next_prob(&self, prev: Option<usize>, w: usize) -> f64 {
        let r = prev.map_or(0, |p| p + 1);
        (self.bigram[r * self.vocab + w] + 1) as f64 / (self.row_totals[r] + self.vocab as u64) as f64
    }

    pub fn length_prob(&self, len: usize) -> f64 {
        if len == 0 || len > self.max_len {
            return 0.0;
        }
        self.lengths[len - 1] as f64 / self.length_total as f64
    }

    /// Exact `log p_noise(x)`; `−∞` for lengths never seen.
    pub fn log_prob(&self, x: &[usize]) -> Result<f64> {
        if let Some(&t) = x.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::OutOfRange {
                what: "vocabulary",
                index: t,
                size: self.vocab,
            });
        }
        let mut lp = self.length_prob(x.len()).ln();
        let mut prev = None;
        for &w in x {
            lp += self.next_prob(prev, w).ln();
            prev = Some(w);
        }
        Ok(lp)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut r = rng.random_range(0..self.length_total);
        let mut len = self.max_len;
        for (i, &c) in self.lengths.iter().enumerate() {
            if r < c {
                len = i + 1;
                break;
            }
            r -= c;
        }
        let mut out = Vec::with_capacity(len);
        let mut prev = None;
        for _ in 0..len {
            let row = prev.map_or(0, |p| p + 1);
            let total = self.row_totals[row] + self.vocab as u64;
            let mut r = rng.random_range(0..total);
            let mut w = self.vocab - 1;
            for (k, &c) in self.bigram[row * self.vocab..(row + 1) * self.vocab].iter().enumerate() {
                if r < c + 1 {
                    w = k;
                    break;
                }
                r -= c + 1;
            }
            out.push(w);
            prev = Some(w);
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<usize>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Stores both count tables under `{prefix}bigram` and `{prefix}lengths`.
    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.push(
            format!("{prefix}bigram"),
            Entry::Count {
                shape: vec![self.vocab + 1, self.vocab],
                data: self.bigram.clone(),
            },
        );
        ck.push_counts(format!("{prefix}lengths"), self.lengths.clone());
    }

    pub fn read_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let name = format!("{prefix}bigram");
        let Some(Entry::Count { shape, data }) = ck.get(&name) else {
            return Err(Error::Unbound(name));
        };
        let &[rows, vocab] = shape.as_slice() else {
            return Err(Error::invalid("bigram table must be two-dimensional"));
        };
        if rows != vocab + 1 {
            return Err(Error::invalid("bigram table must have V + 1 rows"));
        }
        let lengths = ck.counts(&format!("{prefix}lengths"))?.to_vec();
        Self::from_counts(vocab, lengths.len(), data.clone(), lengths)
    }
}

/// Fits bigram and length counts on a corpus.
pub fn noise_fit(corpus: &[Vec<usize>], vocab: usize, max_len: usize) -> Result<NoiseLm> {
    if corpus.is_empty() {
        return Err(Error::Empty("noise corpus"));
    }
    if vocab == 0 || max_len == 0 {
        return Err(Error::invalid("noise model needs a vocabulary and a length bound"));
    }
    let mut bigram = vec![0u64; (vocab + 1) * vocab];
    let mut lengths = vec![0u64; max_len];
    for x in corpus {
        if x.is_empty() || x.len() > max_len {
            return Err(Error::invalid(format!(
                "sequence length {} outside 1..={max_len}",
                x.len()
            )));
        }
        lengths[x.len() - 1] += 1;
        let mut row = 0;
        for &w in x {
            if w >= vocab {
                return Err(Error::OutOfRange {
                    what: "vocabulary",
                    index: w,
                    size: vocab,
                });
            }
            bigram[row * vocab + w] += 1;
            row = w + 1;
        }
    }
    NoiseLm::from_counts(vocab, max_len, bigram, lengths)
}

/// NCE loss from potentials already on the tape:
/// `−mean_d log σ(G − log ν) − ν·mean_n log σ(−(G − log ν))` with
/// `G = u + log c − log p_noise`.
pub fn nce_loss_on_tape(
    tape: &mut Tape,
    u_data: Var,
    u_noise: Var,
    log_c: Var,
    noise_lp_data: &[f64],
    noise_lp_noise: &[f64],
    nu: usize,
) -> Result<Var> {
    let nd = noise_lp_data.len();
    let nn = noise_lp_noise.len();
    if nu == 0 || nd == 0 || nn != nu * nd {
        return Err(Error::invalid(format!("noise batch must be {nu} × {nd}, got {nn}")));
    }
    if !noise_lp_data.iter().chain(noise_lp_noise).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("noise log-probability"));
    }
    let log_nu = (nu as f64).ln();
    let logit = |tape: &mut Tape, u: Var, lp: &[f64]| -> Result<Var> {
        let c = tape.select(log_c, &vec![0; lp.len()])?;
        let shifted: Vec<f64> = lp.iter().map(|v| -v - log_nu).collect();
        let k = tape.constant(RealArray::vector(shifted)?)?;
        let g = tape.add(u, c)?;
        tape.add(g, k)
    };
    let gd = logit(tape, u_data, noise_lp_data)?;
    let gn = logit(tape, u_noise, noise_lp_noise)?;
    let ld = tape.log_sigmoid(gd);
    let neg = tape.scale(gn, -1.0);
    let ln = tape.log_sigmoid(neg);
    let md = tape.mean(ld);
    let mn = tape.mean(ln);
    let mn = tape.scale(mn, nu as f64);
    let total = tape.add(md, mn)?;
    Ok(tape.scale(total, -1.0))
}

/// Records the NCE loss of a sequence model on a tape.
pub fn nce_objective<M: EnergyModel<Obs = Vec<usize>>>(
    tape: &mut Tape,
    model: &M,
    params: &ParamStore,
    noise: &NoiseLm,
    data: &[Vec<usize>],
    noise_batch: &[Vec<usize>],
    nu: usize,
) -> Result<Var> {
    let lpd = data.iter().map(|x| noise.log_prob(x)).collect::<Result<Vec<_>>>()?;
    let lpn = noise_batch
        .iter()
        .map(|x| noise.log_prob(x))
        .collect::<Result<Vec<_>>>()?;
    if nu == 0 || noise_batch.len() != nu * data.len() {
        return Err(Error::invalid("noise batch size must be ν times the data batch size"));
    }
    let ud = model.potentials(tape, params, data)?;
    let un = model.potentials(tape, params, noise_batch)?;
    let log_c = tape.param(params, LOG_C)?;
    nce_loss_on_tape(tape, ud, un, log_c, &lpd, &lpn, nu)
}

/// NCE loss value and gradients (including `log c`).
pub fn nce_loss<M: EnergyModel<Obs = Vec<usize>>>(
    model: &M,
    params: &ParamStore,
    noise: &NoiseLm,
    data: &[Vec<usize>],
    noise_batch: &[Vec<usize>],
    nu: usize,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let loss = nce_objective(&mut tape, model, params, noise, data, noise_batch, nu)?;
    let back = tape.backward(loss)?;
    Ok((tape.scalar(loss), back.params()))
}

/// Loss per data point at the matched fixed point: `(1 + ν)·H_b(1/(1 + ν))`.
pub fn matched_loss(nu: usize) -> f64 {
    let p = 1.0 / (1.0 + nu as f64);
    let hb = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    (1.0 + nu as f64) * hb
}

/// Dynamic-noise refresh: refits the noise counts on the corpus mixed with
/// noise samples the model ranks highest.
///
/// `mix ∈ [0, 1)` is the share of model-filtered sequences in the refit set;
/// `0.5` gives the even mix. Filtered sequences are the top half by `u` of
/// twice as many noise draws. The parameter `log c` lives in the store and
/// is untouched.
pub fn dnce_refresh<M: EnergyModel<Obs = Vec<usize>>, R: Rng + ?Sized>(
    noise: &NoiseLm,
    corpus: &[Vec<usize>],
    model: &M,
    params: &ParamStore,
    mix: f64,
    rng: &mut R,
) -> Result<NoiseLm> {
    if !(0.0..1.0).contains(&mix) {
        return Err(Error::invalid(format!("refresh mix must lie in [0, 1), got {mix}")));
    }
    let k = (corpus.len() as f64 * mix / (1.0 - mix)).round() as usize;
    let mut refit: Vec<Vec<usize>> = corpus.to_vec();
    if k > 0 {
        let draws = noise.sample(rng, 2 * k);
        let u = potentials_of(model, params, &draws)?;
        let mut order: Vec<usize> = (0..draws.len()).collect();
        order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
        refit.extend(order[..k].iter().map(|&i| draws[i].clone()));
    }
    noise_fit(&refit, noise.vocab, noise.max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebm::{SampleSpace, TabularEnergy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_corpus() -> Vec<Vec<usize>> {
        vec![
            vec![0, 1, 2],
            vec![0, 1],
            vec![2, 2, 1, 0],
            vec![1, 0],
            vec![0, 1, 2, 3],
        ]
    }

    #[test]
    fn fit_basics() {
        let lm = noise_fit(&[vec![0, 1]], 2, 3).unwrap();
        assert_eq!(lm.length_prob(2), 1.0);
        assert_eq!(lm.length_prob(1), 0.0);
        let lm = noise_fit(&[vec![0], vec![1]], 2, 1).unwrap();
        assert_eq!(lm.next_prob(None, 0), 0.5);
        assert_eq!(lm.next_prob(Some(0), 1), 0.5);
        assert!(noise_fit(&[], 2, 1).is_err());
        assert!(noise_fit(&[vec![2]], 2, 1).is_err());
    }

    #[test]
    fn probabilities_normalize() {
        let lm = noise_fit(&toy_corpus(), 4, 5).unwrap();
        for prev in [None, Some(0), Some(3)] {
            let s: f64 = (0..4).map(|w| lm.next_prob(prev, w)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let s: f64 = (1..=5).map(|l| lm.length_prob(l)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beats_uniform_baseline_on_training_data() {
        let corpus = toy_corpus();
        let lm = noise_fit(&corpus, 4, 5).unwrap();
        for x in &corpus {
            let uniform = lm.length_prob(x.len()).ln() - x.len() as f64 * 4f64.ln();
            assert!(lm.log_prob(x).unwrap() >= uniform);
        }
    }

    #[test]
    fn samples_match_entropy() {
        let lm = noise_fit(&toy_corpus(), 4, 5).unwrap();
        // Entropy by propagating the token marginal of the Markov chain.
        let mut h = 0.0;
        for l in 1..=5 {
            let pl = lm.length_prob(l);
            if pl == 0.0 {
                continue;
            }
            h -= pl * pl.ln();
            let mut marg: Vec<(Option<usize>, f64)> = vec![(None, 1.0)];
            for _ in 0..l {
                let mut next = vec![0.0; 4];
                for &(prev, pp) in &marg {
                    for (w, nx) in next.iter_mut().enumerate() {
                        let q = lm.next_prob(prev, w);
                        h -= pl * pp * q * q.ln();
                        *nx += pp * q;
                    }
                }
                marg = next.into_iter().enumerate().map(|(w, p)| (Some(w), p)).collect();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lps: Vec<f64> = lm
            .sample(&mut rng, 10_000)
            .iter()
            .map(|x| -lm.log_prob(x).unwrap())
            .collect();
        let n = lps.len() as f64;
        let mean = lps.iter().sum::<f64>() / n;
        let var = lps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - h).abs() < 2.0 * (var / n).sqrt(), "{mean} vs {h}");
    }

    fn table(vocab: usize, max_len: usize) -> (TabularEnergy, ParamStore) {
        let t = TabularEnergy::new("u", SampleSpace::sequences(vocab, max_len)).unwrap();
        let mut p = ParamStore::new();
        t.init_zeros(&mut p).unwrap();
        init_log_c(&mut p).unwrap();
        (t, p)
    }

    /// Sets `u + log c = log p_noise` on every point.
    fn matched(t: &TabularEnergy, p: &mut ParamStore, lm: &NoiseLm) {
        let theta: Vec<f64> = t.points().iter().map(|x| lm.log_prob(x).unwrap() - 0.7).collect();
        p.set("u", RealArray::vector(theta).unwrap());
        p.set(LOG_C, RealArray::scalar(0.7));
    }

    #[test]
    fn matched_fixed_point() {
        let corpus = vec![vec![0, 1], vec![1], vec![1, 1], vec![0]];
        let lm = noise_fit(&corpus, 2, 2).unwrap();
        let (t, mut p) = table(2, 2);
        matched(&t, &mut p, &lm);
        for nu in [1usize, 5] {
            let noise: Vec<Vec<usize>> = (0..nu).flat_map(|_| corpus.clone()).collect();
            let (loss, g) = nce_loss(&t, &p, &lm, &corpus, &noise, nu).unwrap();
            assert!((loss - matched_loss(nu)).abs() < 1e-12);
            assert!(g.max_abs() < 1e-6);
        }
        assert!((matched_loss(1) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(nce_loss(&t, &p, &lm, &corpus, &corpus[..3], 1).is_err());
    }

    #[test]
    fn unseen_length_is_rejected() {
        let lm = noise_fit(&[vec![0, 1]], 2, 2).unwrap();
        let (t, p) = table(2, 2);
        let r = nce_loss(&t, &p, &lm, &[vec![0]], &[vec![1, 1]], 1);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let lm = noise_fit(&toy_corpus(), 4, 5).unwrap();
        let mut ck = Checkpoint::new();
        lm.write_to(&mut ck, "noise.");
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(NoiseLm::read_from(&back, "noise.").unwrap(), lm);
    }

    #[test]
    fn refresh_cases() {
        let corpus: Vec<Vec<usize>> = (0..20).flat_map(|_| toy_corpus()).collect();
        let lm = noise_fit(&corpus, 4, 5).unwrap();
        let (t, mut p) = table(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dnce_refresh(&lm, &corpus, &t, &p, 0.0, &mut rng).unwrap(), lm);

        // The model strongly prefers sequences starting with token 3.
        let theta: Vec<f64> = t.points().iter().map(|x| if x[0] == 3 { 5.0 } else { 0.0 }).collect();
        p.set("u", RealArray::vector(theta).unwrap());
        let fresh = dnce_refresh(&lm, &corpus, &t, &p, 0.5, &mut rng).unwrap();
        let s: f64 = (1..=5).map(|l| fresh.length_prob(l)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        // Held-out noise draws the model prefers.
        let draws = lm.sample(&mut ChaCha8Rng::seed_from_u64(77), 5000);
        let u = potentials_of(&t, &p, &draws).unwrap();
        let preferred: Vec<Vec<usize>> = draws
            .iter()
            .zip(&u)
            .filter(|(_, &v)| v > 0.0)
            .map(|(x, _)| x.clone())
            .collect();
        assert!(!preferred.is_empty());
        let mean = |m: &NoiseLm| preferred.iter().map(|x| m.log_prob(x).unwrap()).sum::<f64>() / preferred.len() as f64;
        assert!(mean(&fresh) > mean(&lm));
        assert!(dnce_refresh(&lm, &corpus, &t, &p, 1.0, &mut rng).is_err());
    }
}
