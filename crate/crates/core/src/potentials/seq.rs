//! Bidirectional recurrent encoder over token sequences.
//!
//! Tokens are embedded with a table `[V, E]`, read left-to-right by a
//! forward [`GruCell`] and right-to-left by a backward one, both with state
//! size `E`. Position `i` thus carries `e_i`, `h_{f,i}` (after reading
//! `x_1..x_i`) and `h_{b,i}` (after reading `x_l..x_i`), all of dimension
//! `E`, so the pre-training potential
//!
//! ```text
//! u(x) = Σ_{i=1}^{l-1} h_{f,i}ᵀ e_{i+1} + Σ_{i=2}^{l} h_{b,i}ᵀ e_{i-1}
//! ```
//!
//! is well typed. By default the output embeddings `e_i` are the input
//! embeddings; `tied = false` gives them their own table.
//!
//! Batched methods take sequences of one common length; the `*_mixed`
//! helpers group by length and restore the caller's order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::layers::{GruCell, Linear};
use crate::diffcore::{ParamStore, RealArray, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqEncoderConfig {
    pub vocab: usize,
    pub dim: usize,
    pub labels: usize,
    #[serde(default = "default_tied")]
    pub tied: bool,
}

fn default_tied() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqEncoder {
    pub config: SeqEncoderConfig,
    pub prefix: String,
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub head: Linear,
}

/// Per-position tape values for a batch of equal-length sequences.
pub struct Encoded {
    pub len: usize,
    pub batch: usize,
    pub out_emb: Vec<Var>,
    pub fwd: Vec<Var>,
    pub bwd: Vec<Var>,
}

/// Per-position features of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqFeatures {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    /// `l × K`, row-major.
    pub logits: Vec<f64>,
}

impl SeqEncoder {
    pub fn new(prefix: &str, config: SeqEncoderConfig) -> Result<Self> {
        if config.vocab == 0 || config.dim == 0 || config.labels == 0 {
            return Err(Error::invalid(format!("bad encoder sizes {config:?}")));
        }
        let e = config.dim;
        Ok(Self {
            forward_cell: GruCell::new(format!("{prefix}.fwd"), e, e),
            backward_cell: GruCell::new(format!("{prefix}.bwd"), e, e),
            head: Linear::new("head", 2 * e, config.labels),
            prefix: prefix.to_string(),
            config,
        })
    }

    pub fn emb_name(&self) -> String {
        format!("{}.emb", self.prefix)
    }

    pub fn out_emb_name(&self) -> String {
        if self.config.tied {
            self.emb_name()
        } else {
            format!("{}.emb_out", self.prefix)
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.init_encoder(store, rng)?;
        self.head.init(store, rng)
    }

    /// Embeddings and recurrent cells only.
    pub fn init_encoder<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (v, e) = (self.config.vocab, self.config.dim);
        let s = (6.0 / (v + e) as f64).sqrt();
        let table = |rng: &mut R| RealArray::matrix(v, e, (0..v * e).map(|_| rng.random_range(-s..s)).collect());
        store.insert(self.emb_name(), table(rng)?)?;
        if !self.config.tied {
            store.insert(self.out_emb_name(), table(rng)?)?;
        }
        self.forward_cell.init(store, rng)?;
        self.backward_cell.init(store, rng)
    }

    /// Names of the embedding and recurrent parameters.
    pub fn encoder_names(&self, store: &ParamStore) -> Vec<String> {
        let p = format!("{}.", self.prefix);
        store
            .names()
            .filter(|n| n.starts_with(&p))
            .map(str::to_string)
            .collect()
    }

    pub fn head_names(&self) -> Vec<String> {
        vec![self.head.weight_name(), self.head.bias_name()]
    }

    fn check_tokens(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if let Some(&t) = seq.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::OutOfRange {
                what: "vocabulary",
                index: t,
                size: self.config.vocab,
            });
        }
        Ok(())
    }

    /// Runs both recurrent passes over a batch of equal-length sequences.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, seqs: &[&[usize]]) -> Result<Encoded> {
        let first = seqs.first().ok_or(Error::Empty("sequence batch"))?;
        let len = first.len();
        for s in seqs {
            self.check_tokens(s)?;
            if s.len() != len {
                return Err(Error::shape("encode", "sequences in a batch must share a length"));
            }
        }
        let (b, e) = (seqs.len(), self.config.dim);
        let table = tape.param(store, &self.emb_name())?;
        let out_table = tape.param(store, &self.out_emb_name())?;
        let mut emb = Vec::with_capacity(len);
        let mut out_emb = Vec::with_capacity(len);
        for i in 0..len {
            let ids: Vec<usize> = seqs.iter().map(|s| s[i]).collect();
            let x = tape.embed(table, &ids)?;
            emb.push(x);
            out_emb.push(if self.config.tied {
                x
            } else {
                tape.embed(out_table, &ids)?
            });
        }
        let zero = tape.constant(RealArray::zeros(&[b, e]))?;
        let mut fwd = Vec::with_capacity(len);
        let mut h = zero;
        for &x in &emb {
            h = self.forward_cell.step(tape, store, x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![zero; len];
        let mut h = zero;
        for i in (0..len).rev() {
            h = self.backward_cell.step(tape, store, emb[i], h)?;
            bwd[i] = h;
        }
        Ok(Encoded {
            len,
            batch: b,
            out_emb,
            fwd,
            bwd,
        })
    }

    /// Pre-training potential for each sequence of an encoded batch, `[n]`.
    pub fn potential(&self, tape: &mut Tape, enc: &Encoded) -> Result<Var> {
        let mut terms = Vec::with_capacity(2 * enc.len);
        for i in 0..enc.len.saturating_sub(1) {
            terms.push(tape.row_dot(enc.fwd[i], enc.out_emb[i + 1])?);
        }
        for i in 1..enc.len {
            terms.push(tape.row_dot(enc.bwd[i], enc.out_emb[i - 1])?);
        }
        let mut acc = match terms.first() {
            Some(&t) => t,
            None => return tape.constant(RealArray::zeros(&[enc.batch])),
        };
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Per-position `[n, K]` logits from the concatenated hidden vectors.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, enc: &Encoded) -> Result<Vec<Var>> {
        (0..enc.len)
            .map(|i| {
                let h = tape.concat(&[enc.fwd[i], enc.bwd[i]])?;
                self.head.forward(tape, store, h)
            })
            .collect()
    }

    /// Pre-training potentials for sequences of mixed lengths, `[n]` in input order.
    pub fn potential_mixed(&self, tape: &mut Tape, store: &ParamStore, seqs: &[Vec<usize>]) -> Result<Var> {
        for_length_groups(tape, seqs, |tape, batch| {
            let enc = self.encode(tape, store, batch)?;
            self.potential(tape, &enc)
        })
    }
}

/// Evaluates `f` on each same-length group of `seqs` (each returning `[m]`)
/// and reassembles the results into one `[n]` vector in input order.
pub fn for_length_groups<F>(tape: &mut Tape, seqs: &[Vec<usize>], mut f: F) -> Result<Var>
where
    F: FnMut(&mut Tape, &[&[usize]]) -> Result<Var>,
{
    if seqs.is_empty() {
        return Err(Error::Empty("sequence batch"));
    }
    let groups = group_by_length(seqs);
    let mut parts = Vec::with_capacity(groups.len());
    let mut position = vec![0usize; seqs.len()];
    let mut offset = 0;
    for (_, idx) in &groups {
        let batch: Vec<&[usize]> = idx.iter().map(|&i| seqs[i].as_slice()).collect();
        let v = f(tape, &batch)?;
        let v = tape.reshape(v, &[idx.len()])?;
        parts.push(v);
        for (k, &i) in idx.iter().enumerate() {
            position[i] = offset + k;
        }
        offset += idx.len();
    }
    let all = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(&parts)?
    };
    if position.iter().enumerate().all(|(i, &p)| i == p) {
        Ok(all)
    } else {
        tape.select(all, &position)
    }
}

/// Indices of `seqs` grouped by length, groups in increasing length.
pub fn group_by_length<T: AsRef<[usize]>>(seqs: &[T]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in seqs.iter().enumerate() {
        groups.entry(s.as_ref().len()).or_default().push(i);
    }
    groups.into_iter().collect()
}

pub fn seq_potential_pretrain(enc: &SeqEncoder, store: &ParamStore, x: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let e = enc.encode(&mut tape, store, &[x])?;
    let u = enc.potential(&mut tape, &e)?;
    tape.check_finite()?;
    Ok(tape.value(u).item())
}

pub fn seq_features(enc: &SeqEncoder, store: &ParamStore, x: &[usize]) -> Result<SeqFeatures> {
    let mut tape = Tape::new();
    let e = enc.encode(&mut tape, store, &[x])?;
    let logits = enc.logits(&mut tape, store, &e)?;
    tape.check_finite()?;
    Ok(SeqFeatures {
        forward: e.fwd.iter().map(|&v| tape.value(v).data().to_vec()).collect(),
        backward: e.bwd.iter().map(|&v| tape.value(v).data().to_vec()).collect(),
        logits: logits.iter().flat_map(|&v| tape.value(v).data().to_vec()).collect(),
    })
}
