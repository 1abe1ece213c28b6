//! Energy-based model layer: `p(x) ∝ exp u(x)` and joint `p(x, y) ∝ exp u(x, y)`.
//!
//! Every model exposes a batched potential on the tape. Enumerable
//! (small discrete) spaces additionally get exact log-partition functions
//! and exact maximum-likelihood gradients, which serve as oracles for the
//! sampled estimators used at scale.

use std::collections::HashMap;

use rand::Rng;

use crate::crf::{self, ChainPotentials};
use crate::diffcore::{logsumexp, softmax, Gradients, ParamStore, RealArray, Tape, Var};
use crate::error::{Error, Result};
use crate::potentials::{classifier_logits, for_length_groups, ClassifierNet, MlpPotential, SeqEncoder};

/// Largest space `exact_*` routines will enumerate.
pub const MAX_ENUMERATION: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampleSpace {
    Continuous {
        dim: usize,
    },
    /// All token sequences over `vocab` with length in `min_len..=max_len`.
    Sequences {
        vocab: usize,
        min_len: usize,
        max_len: usize,
    },
}

impl SampleSpace {
    pub fn sequences(vocab: usize, max_len: usize) -> Self {
        SampleSpace::Sequences {
            vocab,
            min_len: 1,
            max_len,
        }
    }

    /// Number of points, or `None` for continuous spaces.
    pub fn size(&self) -> Option<u128> {
        match *self {
            SampleSpace::Continuous { .. } => None,
            SampleSpace::Sequences {
                vocab,
                min_len,
                max_len,
            } => Some(
                (min_len..=max_len)
                    .map(|l| (vocab as u128).saturating_pow(l as u32))
                    .fold(0u128, u128::saturating_add),
            ),
        }
    }

    /// Every sequence in the space: by length, then lexicographically.
    pub fn enumerate_sequences(&self) -> Result<Vec<Vec<usize>>> {
        let SampleSpace::Sequences {
            vocab,
            min_len,
            max_len,
        } = *self
        else {
            return Err(Error::ContinuousSpace);
        };
        let size = self.size().unwrap_or(0);
        if size > MAX_ENUMERATION {
            return Err(Error::SpaceTooLarge(size));
        }
        let mut out = Vec::with_capacity(size as usize);
        for len in min_len.max(1)..=max_len {
            out.extend(crf::oracle::labelings(len, vocab));
        }
        Ok(out)
    }

    pub fn contains_seq(&self, x: &[usize]) -> bool {
        match *self {
            SampleSpace::Sequences {
                vocab,
                min_len,
                max_len,
            } => x.len() >= min_len.max(1) && x.len() <= max_len && x.iter().all(|&t| t < vocab),
            SampleSpace::Continuous { .. } => false,
        }
    }
}

/// A potential function over a sample space.
pub trait EnergyModel {
    type Obs: Clone + PartialEq;

    fn space(&self) -> &SampleSpace;

    /// `u(x)` for each element of `xs`, as a `[n]` tape vector.
    fn potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Self::Obs]) -> Result<Var>;

    /// All points of an enumerable space.
    fn enumerate(&self) -> Result<Vec<Self::Obs>> {
        Err(Error::ContinuousSpace)
    }
}

/// A joint potential `u(x, y)` whose marginal is the model's potential.
pub trait JointEnergyModel: EnergyModel {
    type Label: Clone;

    fn joint_potentials(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        xs: &[Self::Obs],
        ys: &[Self::Label],
    ) -> Result<Var>;
}

/// A model over `R^D` that can be evaluated on a matrix node.
pub trait ContinuousEnergy: EnergyModel<Obs = Vec<f64>> {
    /// Potentials `[n]` for an `[n, D]` node.
    fn potentials_matrix(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var>;

    fn dim(&self) -> usize {
        match self.space() {
            SampleSpace::Continuous { dim } => *dim,
            SampleSpace::Sequences { .. } => 0,
        }
    }
}

fn continuous_batch(space: &SampleSpace, tape: &mut Tape, xs: &[Vec<f64>]) -> Result<Var> {
    let SampleSpace::Continuous { dim } = *space else {
        return Err(Error::invalid("continuous model with discrete space"));
    };
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::shape(
            "potentials",
            format!("points must have {dim} coordinates"),
        ));
    }
    tape.input(RealArray::from_rows(xs)?)
}

fn check_seqs(space: &SampleSpace, xs: &[Vec<usize>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Empty("sequence batch"));
    }
    match xs.iter().find(|x| !space.contains_seq(x)) {
        Some(x) => Err(Error::invalid(format!("sequence {x:?} outside the sample space"))),
        None => Ok(()),
    }
}

/// `u(x) = wᵀh(x)` over `R^D`.
#[derive(Clone, Debug)]
pub struct MlpEnergy {
    pub net: MlpPotential,
    space: SampleSpace,
}

impl MlpEnergy {
    pub fn new(net: MlpPotential) -> Self {
        let dim = net.body.input_dim();
        Self {
            net,
            space: SampleSpace::Continuous { dim },
        }
    }
}

impl ContinuousEnergy for MlpEnergy {
    fn potentials_matrix(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.net.forward(tape, params, x)?.0)
    }
}

impl EnergyModel for MlpEnergy {
    type Obs = Vec<f64>;

    fn space(&self) -> &SampleSpace {
        &self.space
    }

    fn potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<f64>]) -> Result<Var> {
        let x = continuous_batch(&self.space, tape, xs)?;
        self.potentials_matrix(tape, params, x)
    }
}

/// Joint model `u(x, y) = Ψ(x)[y]` with a `K`-logit classifier;
/// the marginal potential is `log Σ_y exp Ψ(x)[y]`.
#[derive(Clone, Debug)]
pub struct JointFixedEnergy {
    pub net: ClassifierNet,
    space: SampleSpace,
}

impl JointFixedEnergy {
    pub fn new(net: ClassifierNet) -> Self {
        let dim = net.body.input_dim();
        Self {
            net,
            space: SampleSpace::Continuous { dim },
        }
    }
}

impl ContinuousEnergy for JointFixedEnergy {
    fn potentials_matrix(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let logits = self.net.forward(tape, params, x)?;
        tape.logsumexp_rows(logits)
    }
}

impl EnergyModel for JointFixedEnergy {
    type Obs = Vec<f64>;

    fn space(&self) -> &SampleSpace {
        &self.space
    }

    fn potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<f64>]) -> Result<Var> {
        let x = continuous_batch(&self.space, tape, xs)?;
        self.potentials_matrix(tape, params, x)
    }
}

impl JointEnergyModel for JointFixedEnergy {
    type Label = usize;

    fn joint_potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<f64>], ys: &[usize]) -> Result<Var> {
        let x = continuous_batch(&self.space, tape, xs)?;
        let logits = self.net.forward(tape, params, x)?;
        tape.pick(logits, ys)
    }
}

/// Bidirectional-encoder pre-training potential over token sequences.
#[derive(Clone, Debug)]
pub struct SeqEnergy {
    pub enc: SeqEncoder,
    space: SampleSpace,
}

impl SeqEnergy {
    pub fn new(enc: SeqEncoder, max_len: usize) -> Self {
        let space = SampleSpace::sequences(enc.config.vocab, max_len);
        Self { enc, space }
    }

    pub fn with_space(enc: SeqEncoder, space: SampleSpace) -> Self {
        Self { enc, space }
    }
}

impl EnergyModel for SeqEnergy {
    type Obs = Vec<usize>;

    fn space(&self) -> &SampleSpace {
        &self.space
    }

    fn potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<usize>]) -> Result<Var> {
        check_seqs(&self.space, xs)?;
        self.enc.potential_mixed(tape, params, xs)
    }

    fn enumerate(&self) -> Result<Vec<Vec<usize>>> {
        self.space.enumerate_sequences()
    }
}

pub const CRF_EDGE: &str = "crf.edge";
pub const CRF_START: &str = "crf.start";

/// Joint sequence model: CRF over encoder logits with edge matrix `A`.
/// Its marginal over label sequences is a trans-dimensional random field.
#[derive(Clone, Debug)]
pub struct JointSeqEnergy {
    pub enc: SeqEncoder,
    pub learned_start: bool,
    space: SampleSpace,
}

impl JointSeqEnergy {
    pub fn new(enc: SeqEncoder, max_len: usize, learned_start: bool) -> Self {
        let space = SampleSpace::sequences(enc.config.vocab, max_len);
        Self {
            enc,
            learned_start,
            space,
        }
    }

    pub fn with_space(enc: SeqEncoder, space: SampleSpace, learned_start: bool) -> Self {
        Self {
            enc,
            learned_start,
            space,
        }
    }

    pub fn labels(&self) -> usize {
        self.enc.config.labels
    }

    /// Encoder, head and CRF parameters.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.enc.init(params, rng)?;
        self.init_crf(params)
    }

    pub fn init_crf(&self, params: &mut ParamStore) -> Result<()> {
        let k = self.labels();
        params.init_zeros(CRF_EDGE, &[k, k])?;
        if self.learned_start {
            params.init_zeros(CRF_START, &[k])?;
        }
        Ok(())
    }

    pub fn crf_names(&self) -> Vec<String> {
        let mut v = vec![CRF_EDGE.to_string()];
        if self.learned_start {
            v.push(CRF_START.to_string());
        }
        v
    }

    fn crf_vars(&self, tape: &mut Tape, params: &ParamStore) -> Result<(Var, Option<Var>)> {
        let edge = tape.param(params, CRF_EDGE)?;
        let start = if self.learned_start {
            Some(tape.param(params, CRF_START)?)
        } else {
            None
        };
        Ok((edge, start))
    }

    /// `−log p(y | x)` averaged over a labeled batch.
    pub fn nll(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<usize>], ys: &[Vec<usize>]) -> Result<Var> {
        let lz = self.potentials(tape, params, xs)?;
        let sc = self.joint_potentials(tape, params, xs, ys)?;
        let d = tape.sub(lz, sc)?;
        Ok(tape.mean(d))
    }

    /// Node and edge potentials of one sequence.
    pub fn chain(&self, params: &ParamStore, x: &[usize]) -> Result<ChainPotentials> {
        let feats = crate::potentials::seq_features(&self.enc, params, x)?;
        let edge = params.value(CRF_EDGE)?.data().to_vec();
        let ch = ChainPotentials::new(x.len(), self.labels(), feats.logits, edge)?;
        if self.learned_start {
            ch.with_start(params.value(CRF_START)?.data().to_vec())
        } else {
            Ok(ch)
        }
    }

    /// Viterbi labeling of one sequence.
    pub fn decode(&self, params: &ParamStore, x: &[usize]) -> Result<Vec<usize>> {
        Ok(crf::viterbi(&self.chain(params, x)?).0)
    }
}

impl EnergyModel for JointSeqEnergy {
    type Obs = Vec<usize>;

    fn space(&self) -> &SampleSpace {
        &self.space
    }

    fn potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<usize>]) -> Result<Var> {
        check_seqs(&self.space, xs)?;
        let (edge, start) = self.crf_vars(tape, params)?;
        for_length_groups(tape, xs, |tape, batch| {
            let enc = self.enc.encode(tape, params, batch)?;
            let nodes = self.enc.logits(tape, params, &enc)?;
            crf::tape_log_partition(tape, &nodes, edge, start)
        })
    }

    fn enumerate(&self) -> Result<Vec<Vec<usize>>> {
        self.space.enumerate_sequences()
    }
}

impl JointEnergyModel for JointSeqEnergy {
    type Label = Vec<usize>;

    fn joint_potentials(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        xs: &[Vec<usize>],
        ys: &[Vec<usize>],
    ) -> Result<Var> {
        check_seqs(&self.space, xs)?;
        if xs.len() != ys.len() || xs.iter().zip(ys).any(|(x, y)| x.len() != y.len()) {
            return Err(Error::shape("joint potentials", "labels must align with tokens"));
        }
        let (edge, start) = self.crf_vars(tape, params)?;
        // Pair tokens with labels so grouping by length keeps them together.
        let idx: Vec<Vec<usize>> = (0..xs.len()).map(|i| vec![i; xs[i].len()]).collect();
        for_length_groups(tape, &idx, |tape, batch| {
            let ids: Vec<usize> = batch.iter().map(|b| b[0]).collect();
            let bx: Vec<&[usize]> = ids.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<&[usize]> = ids.iter().map(|&i| ys[i].as_slice()).collect();
            let enc = self.enc.encode(tape, params, &bx)?;
            let nodes = self.enc.logits(tape, params, &enc)?;
            crf::tape_score(tape, &nodes, edge, start, &by)
        })
    }
}

/// Free potential `u(x) = θ[index(x)]` over an enumerable sequence space.
#[derive(Clone, Debug)]
pub struct TabularEnergy {
    pub name: String,
    space: SampleSpace,
    points: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl TabularEnergy {
    pub fn new(name: impl Into<String>, space: SampleSpace) -> Result<Self> {
        let points = space.enumerate_sequences()?;
        let index = points.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Ok(Self {
            name: name.into(),
            space,
            points,
            index,
        })
    }

    pub fn points(&self) -> &[Vec<usize>] {
        &self.points
    }

    pub fn init_zeros(&self, params: &mut ParamStore) -> Result<()> {
        params.init_zeros(&self.name, &[self.points.len()])
    }

    pub fn index_of(&self, x: &[usize]) -> Result<usize> {
        self.index
            .get(x)
            .copied()
            .ok_or_else(|| Error::invalid(format!("sequence {x:?} outside the table")))
    }
}

impl EnergyModel for TabularEnergy {
    type Obs = Vec<usize>;

    fn space(&self) -> &SampleSpace {
        &self.space
    }

    fn potentials(&self, tape: &mut Tape, params: &ParamStore, xs: &[Vec<usize>]) -> Result<Var> {
        let table = tape.param(params, &self.name)?;
        let idx = xs.iter().map(|x| self.index_of(x)).collect::<Result<Vec<_>>>()?;
        tape.select(table, &idx)
    }

    fn enumerate(&self) -> Result<Vec<Vec<usize>>> {
        Ok(self.points.clone())
    }
}

/// `u(x)` for one point.
pub fn log_unnorm<M: EnergyModel>(model: &M, params: &ParamStore, x: &M::Obs) -> Result<f64> {
    let mut tape = Tape::new();
    let u = model.potentials(&mut tape, params, std::slice::from_ref(x))?;
    tape.check_finite()?;
    Ok(tape.value(u).data()[0])
}

/// `u(x, y)` for one labeled point.
pub fn log_unnorm_joint<M: JointEnergyModel>(model: &M, params: &ParamStore, x: &M::Obs, y: &M::Label) -> Result<f64> {
    let mut tape = Tape::new();
    let u = model.joint_potentials(&mut tape, params, std::slice::from_ref(x), std::slice::from_ref(y))?;
    tape.check_finite()?;
    Ok(tape.value(u).data()[0])
}

/// Potentials of a batch as plain values.
pub fn potentials_of<M: EnergyModel>(model: &M, params: &ParamStore, xs: &[M::Obs]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let u = model.potentials(&mut tape, params, xs)?;
    tape.check_finite()?;
    Ok(tape.value(u).data().to_vec())
}

/// Every point of the space with its exact probability.
pub fn exact_distribution<M: EnergyModel>(model: &M, params: &ParamStore) -> Result<(Vec<M::Obs>, Vec<f64>)> {
    let points = model.enumerate()?;
    let u = potentials_of(model, params, &points)?;
    Ok((points, softmax(&u)))
}

/// `log Z = log Σ_x exp u(x)` by enumeration.
pub fn exact_log_partition<M: EnergyModel>(model: &M, params: &ParamStore) -> Result<f64> {
    let points = model.enumerate()?;
    Ok(logsumexp(&potentials_of(model, params, &points)?))
}

/// `mean_data ∇u − E_p[∇u]` with the model expectation computed exactly.
pub fn exact_ml_gradient<M: EnergyModel>(model: &M, params: &ParamStore, data: &[M::Obs]) -> Result<Gradients> {
    if data.is_empty() {
        return Err(Error::Empty("data batch"));
    }
    let w = vec![1.0 / data.len() as f64; data.len()];
    exact_ml_gradient_weighted(model, params, data, &w)
}

/// As [`exact_ml_gradient`] with explicit data weights summing to one.
pub fn exact_ml_gradient_weighted<M: EnergyModel>(
    model: &M,
    params: &ParamStore,
    data: &[M::Obs],
    weights: &[f64],
) -> Result<Gradients> {
    let (points, probs) = exact_distribution(model, params)?;
    let mut tape = Tape::new();
    let ud = model.potentials(&mut tape, params, data)?;
    let data_term = tape.weighted_sum(ud, weights)?;
    let um = model.potentials(&mut tape, params, &points)?;
    let model_term = tape.weighted_sum(um, &probs)?;
    let obj = tape.sub(data_term, model_term)?;
    Ok(tape.backward(obj)?.params())
}

/// Exact mean log-likelihood `mean_data u(x) − log Z` recorded on a tape.
pub fn log_likelihood_on_tape<M: EnergyModel>(
    tape: &mut Tape,
    model: &M,
    params: &ParamStore,
    data: &[M::Obs],
) -> Result<Var> {
    let points = model.enumerate()?;
    let ud = model.potentials(tape, params, data)?;
    let mean = tape.mean(ud);
    let um = model.potentials(tape, params, &points)?;
    let lz = tape.logsumexp_rows(um)?;
    tape.sub(mean, lz)
}

/// `mean_data ∇u − mean_samples ∇u`.
pub fn sampled_ml_gradient<M: EnergyModel>(
    model: &M,
    params: &ParamStore,
    data: &[M::Obs],
    samples: &[M::Obs],
) -> Result<Gradients> {
    if samples.is_empty() {
        return Err(Error::Empty("model samples"));
    }
    if data.is_empty() {
        return Err(Error::Empty("data batch"));
    }
    let mut tape = Tape::new();
    let obj = sampled_ml_objective(&mut tape, model, params, data, samples)?;
    Ok(tape.backward(obj)?.params())
}

/// `mean_data u − mean_samples u`, whose gradient is the sampled estimator.
pub fn sampled_ml_objective<M: EnergyModel>(
    tape: &mut Tape,
    model: &M,
    params: &ParamStore,
    data: &[M::Obs],
    samples: &[M::Obs],
) -> Result<Var> {
    let ud = model.potentials(tape, params, data)?;
    let us = model.potentials(tape, params, samples)?;
    let md = tape.mean(ud);
    let ms = tape.mean(us);
    tape.sub(md, ms)
}

/// `p(y | x)` for the fixed-dimensional joint model: softmax of the logits.
pub fn joint_conditional(model: &JointFixedEnergy, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&classifier_logits(&model.net, params, x)?))
}

/// `u(x) = log Σ_y exp u(x, y)` for the fixed-dimensional joint model.
pub fn marginal_potential_fixed(model: &JointFixedEnergy, params: &ParamStore, x: &[f64]) -> Result<f64> {
    Ok(logsumexp(&classifier_logits(&model.net, params, x)?))
}

/// `u(x) = log Σ_y exp u(x, y)` for the sequence joint model, by the
/// forward recursion over label sequences.
pub fn marginal_potential_seq(model: &JointSeqEnergy, params: &ParamStore, x: &[usize]) -> Result<f64> {
    Ok(crf::forward_log_z(&model.chain(params, x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Activation, MlpBody, SeqEncoderConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(vocab: usize, labels: usize, seed: u64) -> (SeqEncoder, ParamStore) {
        let enc = SeqEncoder::new(
            "enc",
            SeqEncoderConfig {
                vocab,
                dim: 3,
                labels,
                tied: true,
            },
        )
        .unwrap();
        let mut p = ParamStore::new();
        enc.init(&mut p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (enc, p)
    }

    #[test]
    fn zero_model_counts_points() {
        let space = SampleSpace::Sequences {
            vocab: 3,
            min_len: 2,
            max_len: 2,
        };
        let t = TabularEnergy::new("u", space).unwrap();
        let mut p = ParamStore::new();
        t.init_zeros(&mut p).unwrap();
        assert!((exact_log_partition(&t, &p).unwrap() - 9f64.ln()).abs() < 1e-14);

        let t = TabularEnergy::new("u", SampleSpace::sequences(2, 3)).unwrap();
        let mut p = ParamStore::new();
        t.init_zeros(&mut p).unwrap();
        assert!((exact_log_partition(&t, &p).unwrap() - 14f64.ln()).abs() < 1e-14);
        assert_eq!(log_unnorm(&t, &p, &vec![1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn enumeration_limits() {
        let net = MlpPotential::new(MlpBody::new("b", &[2, 3], Activation::Tanh).unwrap(), "w");
        let m = MlpEnergy::new(net);
        let p = ParamStore::new();
        assert!(matches!(exact_log_partition(&m, &p), Err(Error::ContinuousSpace)));
        let big = SampleSpace::sequences(32, 12);
        assert!(matches!(big.enumerate_sequences(), Err(Error::SpaceTooLarge(_))));
    }

    #[test]
    fn delegation_is_bit_identical() {
        let (enc, p) = encoder(4, 2, 1);
        let m = SeqEnergy::new(enc.clone(), 5);
        let x = vec![0, 3, 2, 1];
        let a = log_unnorm(&m, &p, &x).unwrap();
        let b = crate::potentials::seq_potential_pretrain(&enc, &p, &x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn probabilities_normalize() {
        let (enc, p) = encoder(3, 2, 2);
        let m = SeqEnergy::new(enc, 3);
        let (_, probs) = exact_distribution(&m, &p).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let lz = exact_log_partition(&m, &p).unwrap();
        let total: f64 = m
            .enumerate()
            .unwrap()
            .iter()
            .map(|x| (log_unnorm(&m, &p, x).unwrap() - lz).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn marginal_seq_matches_enumeration_and_shifts() {
        let (enc, mut p) = encoder(5, 3, 3);
        let m = JointSeqEnergy::new(enc, 6, false);
        m.init_crf(&mut p).unwrap();
        let zero = p.clone();
        let mut zero = zero;
        for n in ["head.w", "head.b"] {
            zero.value_mut(n).unwrap().data_mut().fill(0.0);
        }
        assert!((marginal_potential_seq(&m, &zero, &[1, 2]).unwrap() - 9f64.ln()).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in p.value_mut(CRF_EDGE).unwrap().data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let x = vec![4, 0, 2, 2];
        let ch = m.chain(&p, &x).unwrap();
        let brute = crf::oracle::brute_log_z(&ch);
        let fwd = marginal_potential_seq(&m, &p, &x).unwrap();
        assert!((brute - fwd).abs() < 1e-10);
        // the tape marginal agrees with the plain recursion
        assert!((log_unnorm(&m, &p, &x).unwrap() - fwd).abs() < 1e-12);

        let mut shifted = p.clone();
        shifted
            .value_mut("head.b")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|b| *b += 0.8);
        let u2 = marginal_potential_seq(&m, &shifted, &x).unwrap();
        assert!((u2 - fwd - 4.0 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn single_matching_sample_gives_zero_gradient() {
        let (enc, p) = encoder(3, 2, 4);
        let m = SeqEnergy::new(enc, 4);
        let x = vec![vec![0, 1, 2]];
        let g = sampled_ml_gradient(&m, &p, &x, &x).unwrap();
        assert!(g.max_abs() < 1e-14);
        assert!(sampled_ml_gradient(&m, &p, &x, &[]).is_err());
    }

    #[test]
    fn conditional_examples() {
        let net = ClassifierNet::new(MlpBody::new("b", &[2, 3], Activation::Tanh).unwrap(), "head", 2);
        let m = JointFixedEnergy::new(net);
        let mut p = ParamStore::new();
        m.net.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.value_mut("head.w").unwrap().data_mut().fill(0.0);
        p.value_mut("head.b").unwrap().data_mut().copy_from_slice(&[1.0, 0.0]);
        let c = joint_conditional(&m, &p, &[0.5, 0.5]).unwrap();
        let e = std::f64::consts::E;
        assert!((c[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((c[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        p.value_mut("head.b").unwrap().data_mut().copy_from_slice(&[0.3, 0.3]);
        assert!(joint_conditional(&m, &p, &[1.0, 2.0])
            .unwrap()
            .iter()
            .all(|c| (c - 0.5).abs() < 1e-15));
        let u = marginal_potential_fixed(&m, &p, &[1.0, 2.0]).unwrap();
        assert!((u - (0.3 + 2f64.ln())).abs() < 1e-15);
    }
}
