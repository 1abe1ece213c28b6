use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EvalSet, Method, Metrics, Momentum, Network, TaskData, TrainConfig, TrainedModel};
use crate::diffcore::checkpoint::{Checkpoint, Entry};
use crate::diffcore::{Gradients, ParamStore, RealArray, Tape, Var};
use crate::ebm::{ContinuousEnergy, JointFixedEnergy, JointSeqEnergy, MlpEnergy, SampleSpace, SeqEnergy};
use crate::error::{Error, Result};
use crate::nce::{dnce_refresh, init_log_c, nce_objective, noise_fit, NoiseLm, LOG_C};
use crate::potentials::{ClassifierNet, MlpBody, MlpPotential, SeqEncoder, SeqEncoderConfig};
use crate::samplers::{inclusive_generator_update, sample_batch, AuxGenerator, Bound, ChainState};

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss_sup: f64,
    pub loss_unsup: f64,
    pub metric_train: f64,
    pub metric_dev: f64,
    pub diverged_particles: u64,
    pub wallclock_s: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "step,loss_sup,loss_unsup,metric_train,metric_dev,diverged_particles,wallclock_s";

    /// CSV line; missing values are left empty.
    pub fn csv_line(&self) -> String {
        let f = |v: f64| if v.is_finite() { format!("{v}") } else { String::new() };
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.step,
            f(self.loss_sup),
            f(self.loss_unsup),
            f(self.metric_train),
            f(self.metric_dev),
            self.diverged_particles,
            self.wallclock_s
        )
    }

    fn to_bits(self) -> [u64; 7] {
        [
            self.step as u64,
            self.loss_sup.to_bits(),
            self.loss_unsup.to_bits(),
            self.metric_train.to_bits(),
            self.metric_dev.to_bits(),
            self.diverged_particles,
            self.wallclock_s.to_bits(),
        ]
    }

    fn from_bits(b: &[u64]) -> Self {
        Self {
            step: b[0] as usize,
            loss_sup: f64::from_bits(b[1]),
            loss_unsup: f64::from_bits(b[2]),
            metric_train: f64::from_bits(b[3]),
            metric_dev: f64::from_bits(b[4]),
            diverged_particles: b[5],
            wallclock_s: f64::from_bits(b[6]),
        }
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_UNLABELED: u64 = 2;
const STREAM_SAMPLER: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_HEAD: u64 = 5;

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

fn save_rng(ck: &mut Checkpoint, name: &str, r: &ChaCha8Rng) {
    ck.push_counts(
        format!("rng.{name}.seed"),
        r.get_seed().iter().map(|&b| b as u64).collect(),
    );
    ck.push_counts(format!("rng.{name}.stream"), vec![r.get_stream()]);
    let pos = r.get_word_pos();
    ck.push_counts(format!("rng.{name}.pos"), vec![(pos >> 64) as u64, pos as u64]);
}

fn load_rng(ck: &Checkpoint, name: &str) -> Result<ChaCha8Rng> {
    let bytes = ck.counts(&format!("rng.{name}.seed"))?;
    let seed: [u8; 32] = bytes
        .iter()
        .map(|&b| u8::try_from(b).map_err(|_| Error::invalid("bad rng seed byte")))
        .collect::<Result<Vec<_>>>()?
        .try_into()
        .map_err(|_| Error::invalid("rng seed must have 32 bytes"))?;
    let mut r = ChaCha8Rng::from_seed(seed);
    r.set_stream(first(ck, &format!("rng.{name}.stream"))?);
    let pos = ck.counts(&format!("rng.{name}.pos"))?;
    if pos.len() != 2 {
        return Err(Error::invalid("rng position must have two words"));
    }
    r.set_word_pos(((pos[0] as u128) << 64) | pos[1] as u128);
    Ok(r)
}

fn first(ck: &Checkpoint, name: &str) -> Result<u64> {
    ck.counts(name)?
        .first()
        .copied()
        .ok_or_else(|| Error::invalid(format!("{name} is empty")))
}

/// Round-robin over a shuffled index list, reshuffled after each pass.
#[derive(Clone, Debug, PartialEq)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        use rand::seq::SliceRandom;
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    fn save(&self, ck: &mut Checkpoint, name: &str) {
        ck.push_counts(
            format!("cursor.{name}.order"),
            self.order.iter().map(|&i| i as u64).collect(),
        );
        ck.push_counts(format!("cursor.{name}.pos"), vec![self.pos as u64]);
    }

    fn load(ck: &Checkpoint, name: &str) -> Result<Self> {
        let order: Vec<usize> = ck
            .counts(&format!("cursor.{name}.order"))?
            .iter()
            .map(|&i| i as usize)
            .collect();
        let pos = first(ck, &format!("cursor.{name}.pos"))? as usize;
        if pos > order.len() {
            return Err(Error::invalid("cursor position past its order"));
        }
        Ok(Self { order, pos })
    }
}

enum Models {
    Continuous {
        net: ClassifierNet,
        joint: JointFixedEnergy,
        pot: MlpEnergy,
    },
    Sequence {
        joint: JointSeqEnergy,
        pre: SeqEnergy,
        label_names: Option<Vec<String>>,
    },
}

pub(crate) struct Run<'a> {
    task: &'a TaskData,
    cfg: &'a TrainConfig,
    dev: Option<&'a EvalSet>,
    models: Models,
    params: ParamStore,
    opt: Momentum,
    lab_rng: ChaCha8Rng,
    unl_rng: ChaCha8Rng,
    sampler_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    lab: Cursor,
    unl: Cursor,
    chain: Option<ChainState>,
    gen: Option<AuxGenerator>,
    noise: Option<NoiseLm>,
    stage: usize,
    step: usize,
    global_step: usize,
    log: Vec<LogRow>,
    elapsed_before: f64,
    started: Instant,
}

fn rows(xs: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| xs[i].clone()).collect()
}

impl<'a> Run<'a> {
    pub(crate) fn start(task: &'a TaskData, cfg: &'a TrainConfig, dev: Option<&'a EvalSet>) -> Result<Self> {
        cfg.validate()?;
        if task.modality() != cfg.modality {
            return Err(Error::invalid("task data and config disagree on modality"));
        }
        if task.labeled_len() == 0 {
            return Err(Error::Empty("labeled set"));
        }
        let unsup = match cfg.method {
            Method::Supervised => false,
            Method::Joint => cfg.unsup_weight > 0.0,
            Method::PretrainFinetune => true,
        };
        if unsup && task.unlabeled_len() == 0 {
            return Err(Error::Empty("unlabeled set"));
        }
        let mut init = stream(cfg.seed, STREAM_INIT);
        let mut params = ParamStore::new();
        let models = match task {
            TaskData::Continuous { split, classes } => {
                let dim = split.labeled.xs[0].len();
                let mut sizes = vec![dim];
                sizes.extend(&cfg.hidden);
                let body = MlpBody::new("body", &sizes, cfg.activation)?;
                let net = ClassifierNet::new(body.clone(), "head", *classes);
                let pot = MlpEnergy::new(MlpPotential::new(body, "pot.w"));
                match cfg.method {
                    Method::PretrainFinetune => pot.net.init(&mut params, &mut init)?,
                    _ => net.init(&mut params, &mut init)?,
                }
                Models::Continuous {
                    joint: JointFixedEnergy::new(net.clone()),
                    net,
                    pot,
                }
            }
            TaskData::Sequence {
                vocab,
                labels,
                max_len,
                label_names,
                ..
            } => {
                let enc = SeqEncoder::new(
                    "enc",
                    SeqEncoderConfig {
                        vocab: *vocab,
                        dim: cfg.embed_dim,
                        labels: *labels,
                        tied: cfg.tied_embeddings,
                    },
                )?;
                let space = SampleSpace::Sequences {
                    vocab: *vocab,
                    min_len: 1,
                    max_len: *max_len,
                };
                let joint = JointSeqEnergy::with_space(enc.clone(), space.clone(), cfg.learned_start);
                let pre = SeqEnergy::with_space(enc, space);
                match cfg.method {
                    Method::PretrainFinetune => pre.enc.init_encoder(&mut params, &mut init)?,
                    _ => joint.init(&mut params, &mut init)?,
                }
                if unsup {
                    init_log_c(&mut params)?;
                }
                Models::Sequence {
                    joint,
                    pre,
                    label_names: label_names.clone(),
                }
            }
        };
        let mut lab_rng = stream(cfg.seed, STREAM_LABELED);
        let mut unl_rng = stream(cfg.seed, STREAM_UNLABELED);
        let mut sampler_rng = stream(cfg.seed, STREAM_SAMPLER);
        let lab = Cursor::new(task.labeled_len(), &mut lab_rng);
        let unl = if unsup {
            Cursor::new(task.unlabeled_len(), &mut unl_rng)
        } else {
            Cursor::new(0, &mut unl_rng)
        };
        let (mut chain, mut gen, mut noise) = (None, None, None);
        if unsup {
            match task {
                TaskData::Continuous { split, .. } => {
                    let dim = split.labeled.xs[0].len();
                    if let Some(g) = &cfg.generator {
                        gen = Some(AuxGenerator::new(g.latent, g.hidden, dim, &mut sampler_rng)?);
                    }
                    chain = Some(ChainState::new(cfg.chain.clone(), dim, gen.as_ref(), &mut sampler_rng)?);
                }
                TaskData::Sequence {
                    split, vocab, max_len, ..
                } => noise = Some(noise_fit(&split.unlabeled, *vocab, *max_len)?),
            }
        }
        Ok(Self {
            task,
            cfg,
            dev,
            models,
            params,
            opt: Momentum::new(cfg.optim.clone())?,
            lab_rng,
            unl_rng,
            sampler_rng,
            noise_rng: stream(cfg.seed, STREAM_NOISE),
            lab,
            unl,
            chain,
            gen,
            noise,
            stage: 0,
            step: 0,
            global_step: 0,
            log: Vec::new(),
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    fn stage_lengths(&self) -> Vec<usize> {
        match self.cfg.method {
            Method::PretrainFinetune => vec![self.cfg.pretrain_steps, self.cfg.steps],
            _ => vec![self.cfg.steps],
        }
    }

    fn done(&self) -> bool {
        self.stage >= self.stage_lengths().len()
    }

    fn method_code(&self) -> u64 {
        Method::ALL.iter().position(|&m| m == self.cfg.method).unwrap_or(0) as u64
    }

    pub(crate) fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.push_counts(
            "state",
            vec![
                self.method_code(),
                self.stage as u64,
                self.step as u64,
                self.global_step as u64,
                self.elapsed().to_bits(),
            ],
        );
        for (name, p) in self.params.iter() {
            ck.push_real(format!("param.{name}"), p.value.clone());
        }
        self.opt.write_to(&mut ck, "mom.")?;
        for (name, r) in [
            ("labeled", &self.lab_rng),
            ("unlabeled", &self.unl_rng),
            ("sampler", &self.sampler_rng),
            ("noise", &self.noise_rng),
        ] {
            save_rng(&mut ck, name, r);
        }
        self.lab.save(&mut ck, "labeled");
        self.unl.save(&mut ck, "unlabeled");
        if let Some(c) = &self.chain {
            ck.push_real("chain.particles", c.to_array()?);
            ck.push_counts("chain.stats", vec![c.divergences, c.mean_potential.to_bits()]);
        }
        if let Some(g) = &self.gen {
            for (name, p) in g.params.iter() {
                ck.push_real(format!("generator.{name}"), p.value.clone());
            }
        }
        if let Some(n) = &self.noise {
            n.write_to(&mut ck, "noise.");
        }
        if !self.log.is_empty() {
            ck.push(
                "log",
                Entry::Count {
                    shape: vec![self.log.len(), 7],
                    data: self.log.iter().flat_map(|r| r.to_bits()).collect(),
                },
            );
        }
        ck.save(path)
    }

    pub(crate) fn resume(
        task: &'a TaskData,
        cfg: &'a TrainConfig,
        dev: Option<&'a EvalSet>,
        path: &Path,
    ) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let mut run = Self::start(task, cfg, dev)?;
        let state = ck.counts("state")?;
        if state.len() != 5 || state[0] != run.method_code() {
            return Err(Error::invalid("checkpoint belongs to a different method"));
        }
        run.stage = state[1] as usize;
        run.step = state[2] as usize;
        run.global_step = state[3] as usize;
        run.elapsed_before = f64::from_bits(state[4]);
        run.params = ck.params_with_prefix("param.")?;
        run.opt = Momentum::read_from(cfg.optim.clone(), &ck, "mom.")?;
        run.lab_rng = load_rng(&ck, "labeled")?;
        run.unl_rng = load_rng(&ck, "unlabeled")?;
        run.sampler_rng = load_rng(&ck, "sampler")?;
        run.noise_rng = load_rng(&ck, "noise")?;
        run.lab = Cursor::load(&ck, "labeled")?;
        run.unl = Cursor::load(&ck, "unlabeled")?;
        if let Some(c) = run.chain.as_mut() {
            let p = ck.real("chain.particles")?;
            let (_, d) = p.dims2().ok_or_else(|| Error::invalid("particles must be a matrix"))?;
            c.particles = p.data().chunks(d).map(<[f64]>::to_vec).collect();
            let stats = ck.counts("chain.stats")?;
            if stats.len() != 2 {
                return Err(Error::invalid("bad chain statistics"));
            }
            c.divergences = stats[0];
            c.mean_potential = f64::from_bits(stats[1]);
        }
        if let Some(g) = run.gen.as_mut() {
            g.params = ck.params_with_prefix("generator.")?;
        }
        if run.noise.is_some() {
            run.noise = Some(NoiseLm::read_from(&ck, "noise.")?);
        }
        run.log = match ck.get("log") {
            Some(Entry::Count { data, .. }) => data.chunks(7).map(LogRow::from_bits).collect(),
            _ => Vec::new(),
        };
        Ok(run)
    }

    fn elapsed(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    /// Runs up to `n` steps; returns how many ran.
    pub(crate) fn advance(&mut self, n: usize) -> Result<usize> {
        let mut ran = 0;
        while ran < n && !self.done() {
            if self.step < self.stage_lengths()[self.stage] {
                self.train_step()?;
                ran += 1;
            }
            if self.step >= self.stage_lengths()[self.stage] {
                self.stage += 1;
                self.step = 0;
                if self.cfg.method == Method::PretrainFinetune && self.stage == 1 {
                    self.begin_finetune()?;
                }
            }
        }
        Ok(ran)
    }

    pub(crate) fn finish(mut self, checkpoint: Option<(&Path, usize)>) -> Result<TrainedModel> {
        if self.cfg.method == Method::PretrainFinetune && self.cfg.pretrain_steps == 0 && self.stage == 0 {
            self.stage = 1;
            self.begin_finetune()?;
        }
        while !self.done() {
            let every = checkpoint.map_or(usize::MAX, |c| c.1);
            self.advance(every)?;
            if let Some((path, _)) = checkpoint {
                self.save(path)?;
            }
        }
        let network = match &self.models {
            Models::Continuous { net, .. } => Network::Classifier(net.clone()),
            Models::Sequence { joint, label_names, .. } => Network::Tagger {
                model: joint.clone(),
                label_names: label_names.clone(),
            },
        };
        let mut model = TrainedModel {
            method: self.cfg.method,
            network,
            params: self.params,
            train_metrics: Metrics {
                accuracy: f64::NAN,
                span_f1: None,
            },
            log: self.log,
        };
        model.train_metrics = model.evaluate(&labeled_eval(self.task))?;
        Ok(model)
    }

    fn begin_finetune(&mut self) -> Result<()> {
        let mut rng = stream(self.cfg.seed, STREAM_HEAD);
        match &self.models {
            Models::Continuous { net, pot, .. } => {
                self.params.remove(&pot.net.w_name);
                net.head.init(&mut self.params, &mut rng)?;
            }
            Models::Sequence { joint, .. } => {
                self.params.remove(LOG_C);
                joint.enc.head.init(&mut self.params, &mut rng)?;
                joint.init_crf(&mut self.params)?;
            }
        }
        self.opt = Momentum::new(self.cfg.optim.clone())?;
        Ok(())
    }

    fn trainable(&self) -> Option<Vec<String>> {
        if self.cfg.method != Method::PretrainFinetune || self.stage != 1 || !self.cfg.freeze_encoder {
            return None;
        }
        Some(match &self.models {
            Models::Continuous { net, .. } => net.head_names(),
            Models::Sequence { joint, .. } => {
                let mut v = joint.enc.head_names();
                v.extend(joint.crf_names());
                v
            }
        })
    }

    fn uses_unsup(&self) -> bool {
        match self.cfg.method {
            Method::Supervised => false,
            Method::Joint => self.cfg.unsup_weight > 0.0,
            Method::PretrainFinetune => self.stage == 0,
        }
    }

    fn uses_sup(&self) -> bool {
        !(self.cfg.method == Method::PretrainFinetune && self.stage == 0)
    }

    /// `mean u(samples) − mean u(data)` plus the optional potential penalty.
    fn continuous_unsup<M: ContinuousEnergy>(
        &mut self,
        tape: &mut Tape,
        model: &M,
        data: Vec<Vec<f64>>,
    ) -> Result<Var> {
        let chain = self.chain.as_mut().ok_or(Error::invalid("no sampler chain"))?;
        let samples = sample_batch(
            &Bound::new(model, &self.params),
            chain,
            self.gen.as_ref(),
            &mut self.sampler_rng,
        )?;
        if let (Some(g), Some(gc)) = (self.gen.as_mut(), &self.cfg.generator) {
            inclusive_generator_update(g, &samples, gc.lr, &mut self.sampler_rng)?;
        }
        let xd = tape.input(RealArray::from_rows(&data)?)?;
        let xs = tape.input(RealArray::from_rows(&samples)?)?;
        let ud = model.potentials_matrix(tape, &self.params, xd)?;
        let us = model.potentials_matrix(tape, &self.params, xs)?;
        let md = tape.mean(ud);
        let ms = tape.mean(us);
        let mut loss = tape.sub(ms, md)?;
        if self.cfg.energy_l2 > 0.0 {
            for u in [ud, us] {
                let sq = tape.mul(u, u)?;
                let m = tape.mean(sq);
                let m = tape.scale(m, self.cfg.energy_l2);
                loss = tape.add(loss, m)?;
            }
        }
        Ok(loss)
    }

    fn train_step(&mut self) -> Result<()> {
        let mut tape = Tape::new();
        let mut loss_sup = None;
        let mut loss_unsup = None;
        let lambda = match self.cfg.method {
            Method::Joint => self.cfg.unsup_weight,
            _ => 1.0,
        };
        match self.task {
            TaskData::Continuous { split, .. } => {
                let (net, joint, pot) = match &self.models {
                    Models::Continuous { net, joint, pot } => (net.clone(), joint.clone(), pot.clone()),
                    Models::Sequence { .. } => unreachable!("modality checked at start"),
                };
                if self.uses_sup() {
                    let idx = self.lab.next(self.cfg.labeled_batch, &mut self.lab_rng);
                    let ys: Vec<usize> = idx.iter().map(|&i| split.labeled.ys[i]).collect();
                    let x = tape.input(RealArray::from_rows(&rows(&split.labeled.xs, &idx))?)?;
                    let logits = net.forward(&mut tape, &self.params, x)?;
                    loss_sup = Some(tape.softmax_ce(logits, &ys)?);
                }
                if self.uses_unsup() {
                    let idx = self.unl.next(self.cfg.unlabeled_batch, &mut self.unl_rng);
                    let data = rows(&split.unlabeled, &idx);
                    loss_unsup = Some(match self.cfg.method {
                        Method::Joint => self.continuous_unsup(&mut tape, &joint, data)?,
                        _ => self.continuous_unsup(&mut tape, &pot, data)?,
                    });
                }
            }
            TaskData::Sequence { split, .. } => {
                let (joint, pre) = match &self.models {
                    Models::Sequence { joint, pre, .. } => (joint.clone(), pre.clone()),
                    Models::Continuous { .. } => unreachable!("modality checked at start"),
                };
                if self.uses_sup() {
                    let idx = self.lab.next(self.cfg.labeled_batch, &mut self.lab_rng);
                    let sub = split.labeled.subset(&idx);
                    loss_sup = Some(joint.nll(&mut tape, &self.params, &sub.xs, &sub.ys)?);
                }
                if self.uses_unsup() {
                    let idx = self.unl.next(self.cfg.unlabeled_batch, &mut self.unl_rng);
                    let data: Vec<Vec<usize>> = idx.iter().map(|&i| split.unlabeled[i].clone()).collect();
                    let noise = self.noise.as_ref().ok_or(Error::invalid("no noise model"))?;
                    let nu = self.cfg.nce.nu;
                    let nb = noise.sample(&mut self.noise_rng, nu * data.len());
                    loss_unsup = Some(match self.cfg.method {
                        Method::Joint => nce_objective(&mut tape, &joint, &self.params, noise, &data, &nb, nu)?,
                        _ => nce_objective(&mut tape, &pre, &self.params, noise, &data, &nb, nu)?,
                    });
                }
            }
        }
        let total = match (loss_sup, loss_unsup) {
            (Some(s), Some(u)) => {
                let w = tape.scale(u, lambda);
                tape.add(s, w)?
            }
            (Some(s), None) => s,
            (None, Some(u)) => u,
            (None, None) => return Err(Error::invalid("training step with no objective")),
        };
        let mut grads: Gradients = tape.backward(total)?.params();
        if let Some(keep) = self.trainable() {
            grads.retain(|n| keep.iter().any(|k| k == n));
        }
        self.opt.step(&mut self.params, &grads)?;
        let (ls, lu) = (
            loss_sup.map_or(f64::NAN, |v| tape.scalar(v)),
            loss_unsup.map_or(f64::NAN, |v| tape.scalar(v)),
        );
        drop(tape);
        self.step += 1;
        self.global_step += 1;
        self.maybe_refresh()?;
        let last = self.step == self.stage_lengths()[self.stage];
        if last || (self.cfg.log_every > 0 && self.global_step % self.cfg.log_every == 0) {
            self.log_row(ls, lu)?;
        }
        Ok(())
    }

    fn maybe_refresh(&mut self) -> Result<()> {
        let nc = &self.cfg.nce;
        if !(self.uses_unsup() && nc.dynamic && nc.refresh_every > 0 && self.global_step % nc.refresh_every == 0) {
            return Ok(());
        }
        let (TaskData::Sequence { split, .. }, Models::Sequence { joint, pre, .. }) = (self.task, &self.models) else {
            return Ok(());
        };
        let Some(noise) = &self.noise else {
            return Ok(());
        };
        let fresh = match self.cfg.method {
            Method::Joint => dnce_refresh(
                noise,
                &split.unlabeled,
                joint,
                &self.params,
                nc.mix,
                &mut self.noise_rng,
            )?,
            _ => dnce_refresh(noise, &split.unlabeled, pre, &self.params, nc.mix, &mut self.noise_rng)?,
        };
        self.noise = Some(fresh);
        Ok(())
    }

    fn snapshot_metric(&self, set: &EvalSet) -> Result<f64> {
        let network = match &self.models {
            Models::Continuous { net, .. } => Network::Classifier(net.clone()),
            Models::Sequence { joint, label_names, .. } => Network::Tagger {
                model: joint.clone(),
                label_names: label_names.clone(),
            },
        };
        let m = TrainedModel {
            method: self.cfg.method,
            network,
            params: self.params.clone(),
            train_metrics: Metrics {
                accuracy: f64::NAN,
                span_f1: None,
            },
            log: Vec::new(),
        }
        .evaluate(set)?;
        Ok(m.span_f1.unwrap_or(m.accuracy))
    }

    fn log_row(&mut self, loss_sup: f64, loss_unsup: f64) -> Result<()> {
        let has_head = self.uses_sup();
        let metric_train = if has_head {
            self.snapshot_metric(&labeled_eval(self.task))?
        } else {
            f64::NAN
        };
        let metric_dev = match self.dev {
            Some(d) if has_head => self.snapshot_metric(d)?,
            _ => f64::NAN,
        };
        self.log.push(LogRow {
            step: self.global_step,
            loss_sup,
            loss_unsup,
            metric_train,
            metric_dev,
            diverged_particles: self.chain.as_ref().map_or(0, |c| c.divergences),
            wallclock_s: self.elapsed(),
        });
        Ok(())
    }
}

fn labeled_eval(task: &TaskData) -> EvalSet {
    match task {
        TaskData::Continuous { split, .. } => EvalSet::Continuous(split.labeled.clone()),
        TaskData::Sequence { split, .. } => EvalSet::Sequence(split.labeled.clone()),
    }
}
