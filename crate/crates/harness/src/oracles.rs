//! Numerical reference experiments shared by `selftest` and the acceptance
//! criteria. Each function measures; callers decide pass or fail.

use ebm_ssl::crf::{self, forward_log_z, oracle, tape_score, viterbi, ChainPotentials};
use ebm_ssl::diffcore::{finite_diff_check, logsumexp, softmax, Inputs, ParamStore, RealArray, Tape, Var};
use ebm_ssl::ebm::{
    exact_distribution, exact_log_partition, exact_ml_gradient, exact_ml_gradient_weighted, joint_conditional,
    log_likelihood_on_tape, marginal_potential_seq, sampled_ml_gradient, EnergyModel, JointEnergyModel,
    JointFixedEnergy, JointSeqEnergy, SampleSpace, SeqEnergy, TabularEnergy, CRF_EDGE,
};
use ebm_ssl::nce::{init_log_c, matched_loss, nce_loss, nce_objective, noise_fit, NoiseLm, LOG_C};
use ebm_ssl::pipelines::{Momentum, OptimConfig};
use ebm_ssl::potentials::{
    classifier_logits, seq_potential_pretrain, Activation, ClassifierNet, MlpBody, MlpPotential, SeqEncoder,
    SeqEncoderConfig,
};
use ebm_ssl::samplers::{exact_discrete_sample, sgld_step, standard_normal, FnTarget};
use ebm_ssl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Worst value of some discrepancy over a batch of random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Measured {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn encoder<R: Rng>(
    rng: &mut R,
    vocab: usize,
    dim: usize,
    labels: usize,
    tied: bool,
) -> Result<(SeqEncoder, ParamStore)> {
    let enc = SeqEncoder::new(
        "enc",
        SeqEncoderConfig {
            vocab,
            dim,
            labels,
            tied,
        },
    )?;
    let mut p = ParamStore::new();
    enc.init(&mut p, rng)?;
    Ok((enc, p))
}

/// Adds uniform(−a, a) noise to every parameter.
pub fn jitter<R: Rng>(params: &mut ParamStore, rng: &mut R, a: f64) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        for v in params.value_mut(&n)?.data_mut() {
            *v += rng.random_range(-a..a);
        }
    }
    Ok(())
}

pub fn random_seqs<R: Rng>(rng: &mut R, n: usize, vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        })
        .collect()
}

fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect()
}

fn fd<F>(params: &ParamStore, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let g = |t: &mut Tape, p: &ParamStore, _: &Inputs| f(t, p);
    finite_diff_check(&g, params, &Inputs::new(), FD_STEP)
}

/// Finite-difference relative errors of every exported loss.
pub fn gradient_suite(instances: usize) -> Result<Vec<Measured>> {
    let n = instances as u64;
    let mut out = Vec::new();
    let mut worst = |name, errs: Vec<f64>| {
        out.push(Measured {
            name,
            instances: errs.len(),
            worst: errs.into_iter().fold(0.0, f64::max),
        })
    };

    let mut errs = Vec::new();
    for seed in 0..n {
        let mut r = rng(seed);
        let k = r.random_range(2..5);
        let net = ClassifierNet::new(MlpBody::new("body", &[2, 4, 3], Activation::Tanh)?, "head", k);
        let mut p = ParamStore::new();
        net.init(&mut p, &mut r)?;
        let xs = random_points(&mut r, 5);
        let ys: Vec<usize> = (0..5).map(|_| r.random_range(0..k)).collect();
        errs.push(fd(&p, |t, p| {
            let x = t.input(RealArray::from_rows(&xs)?)?;
            let logits = net.forward(t, p, x)?;
            t.softmax_ce(logits, &ys)
        })?);
    }
    worst("softmax cross-entropy", errs);

    let mut errs = Vec::new();
    for seed in 0..n {
        let mut r = rng(100 + seed);
        let labels = r.random_range(2..4);
        let (enc, mut p) = encoder(&mut r, 4, 3, labels, seed % 2 == 0)?;
        let model = JointSeqEnergy::new(enc, 4, seed % 3 == 0);
        model.init_crf(&mut p)?;
        jitter(&mut p, &mut r, 0.5)?;
        let xs = random_seqs(&mut r, 4, 4, 4);
        let ys: Vec<Vec<usize>> = xs
            .iter()
            .map(|x| x.iter().map(|_| r.random_range(0..labels)).collect())
            .collect();
        errs.push(fd(&p, |t, p| model.nll(t, p, &xs, &ys))?);
    }
    worst("crf negative log-likelihood", errs);

    let mut errs = Vec::new();
    for seed in 0..n {
        let mut r = rng(200 + seed);
        let (enc, mut p) = encoder(&mut r, 3, 3, 2, true)?;
        init_log_c(&mut p)?;
        jitter(&mut p, &mut r, 0.5)?;
        let data = random_seqs(&mut r, 3, 3, 4);
        let noise = noise_fit(&data, 3, 4)?;
        let nu = r.random_range(1..4);
        let nb = noise.sample(&mut r, nu * data.len());
        let e = if seed % 2 == 0 {
            let model = SeqEnergy::new(enc, 4);
            fd(&p, |t, p| nce_objective(t, &model, p, &noise, &data, &nb, nu))?
        } else {
            let model = JointSeqEnergy::new(enc, 4, false);
            model.init_crf(&mut p)?;
            fd(&p, |t, p| nce_objective(t, &model, p, &noise, &data, &nb, nu))?
        };
        errs.push(e);
    }
    worst("nce loss", errs);

    let mut errs = Vec::new();
    for seed in 0..n {
        let mut r = rng(300 + seed);
        let space = SampleSpace::sequences(2, 3);
        let e = if seed % 2 == 0 {
            let model = TabularEnergy::new("table", space)?;
            let mut p = ParamStore::new();
            model.init_zeros(&mut p)?;
            jitter(&mut p, &mut r, 0.5)?;
            let pts = model.points().to_vec();
            let data: Vec<Vec<usize>> = (0..6).map(|_| pts[r.random_range(0..pts.len())].clone()).collect();
            fd(&p, |t, p| log_likelihood_on_tape(t, &model, p, &data))?
        } else {
            let (enc, p) = encoder(&mut r, 2, 3, 2, true)?;
            let model = SeqEnergy::with_space(enc, space);
            let data = random_seqs(&mut r, 5, 2, 3);
            fd(&p, |t, p| log_likelihood_on_tape(t, &model, p, &data))?
        };
        errs.push(e);
    }
    worst("exact log-likelihood", errs);

    let mut errs = Vec::new();
    for seed in 0..n {
        let mut r = rng(400 + seed);
        let e = if seed % 2 == 0 {
            let (enc, p) = encoder(&mut r, 5, 3, 2, seed % 4 == 0)?;
            let xs = random_seqs(&mut r, 4, 5, 5);
            fd(&p, |t, p| {
                let u = enc.potential_mixed(t, p, &xs)?;
                Ok(t.sum(u))
            })?
        } else {
            let net = MlpPotential::new(MlpBody::new("body", &[2, 5], Activation::Tanh)?, "pot.w");
            let mut p = ParamStore::new();
            net.init(&mut p, &mut r)?;
            let xs = random_points(&mut r, 4);
            fd(&p, |t, p| {
                let x = t.input(RealArray::from_rows(&xs)?)?;
                let (u, _) = net.forward(t, p, x)?;
                Ok(t.sum(u))
            })?
        };
        errs.push(e);
    }
    worst("pre-training potentials", errs);

    let mut errs = Vec::new();
    for seed in 0..n {
        let mut r = rng(500 + seed);
        let labels = r.random_range(2..4);
        let e = if seed % 2 == 0 {
            let (enc, mut p) = encoder(&mut r, 4, 3, labels, true)?;
            let model = JointSeqEnergy::new(enc, 5, seed % 4 == 0);
            model.init_crf(&mut p)?;
            jitter(&mut p, &mut r, 0.5)?;
            let xs = random_seqs(&mut r, 4, 4, 5);
            let ys: Vec<Vec<usize>> = xs
                .iter()
                .map(|x| x.iter().map(|_| r.random_range(0..labels)).collect())
                .collect();
            fd(&p, |t, p| {
                let s = model.joint_potentials(t, p, &xs, &ys)?;
                Ok(t.sum(s))
            })?
        } else {
            let len = r.random_range(1..5);
            let mut q = ParamStore::new();
            for i in 0..len {
                q.init_zeros(&format!("node{i}"), &[2, labels])?;
            }
            q.init_zeros("edge", &[labels, labels])?;
            q.init_zeros("start", &[labels])?;
            jitter(&mut q, &mut r, 1.0)?;
            let y: Vec<Vec<usize>> = (0..2)
                .map(|_| (0..len).map(|_| r.random_range(0..labels)).collect())
                .collect();
            fd(&q, |t, q| {
                let nodes = (0..len)
                    .map(|i| t.param(q, &format!("node{i}")))
                    .collect::<Result<Vec<_>>>()?;
                let edge = t.param(q, "edge")?;
                let start = t.param(q, "start")?;
                let refs: Vec<&[usize]> = y.iter().map(Vec::as_slice).collect();
                let s = tape_score(t, &nodes, edge, Some(start), &refs)?;
                Ok(t.sum(s))
            })?
        };
        errs.push(e);
    }
    worst("chain score", errs);
    Ok(out)
}

fn random_chain<R: Rng>(r: &mut R, len: usize, labels: usize) -> Result<ChainPotentials> {
    let node = (0..len * labels).map(|_| r.random_range(-2.0..2.0)).collect();
    let edge = (0..labels * labels).map(|_| r.random_range(-2.0..2.0)).collect();
    ChainPotentials::new(len, labels, node, edge)
}

/// Independent enumeration of `V^1 ∪ … ∪ V^L` and a direct log-sum-exp.
fn brute_log_partition(enc: &SeqEncoder, p: &ParamStore, vocab: usize, max_len: usize) -> Result<f64> {
    let mut us = Vec::new();
    for len in 1..=max_len {
        for code in 0..vocab.pow(len as u32) {
            let x: Vec<usize> = (0..len).map(|i| code / vocab.pow(i as u32) % vocab).collect();
            us.push(seq_potential_pretrain(enc, p, &x)?);
        }
    }
    let m = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + us.iter().map(|u| (u - m).exp()).sum::<f64>().ln())
}

/// Forward recursion, Viterbi, marginal potential, partition function and
/// conditional against enumeration, over `instances` random cases each.
///
/// `worst` is an absolute difference, except for Viterbi and the
/// conditional where it counts mismatching instances.
pub fn enumeration_oracles(instances: usize) -> Result<Vec<Measured>> {
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut r = rng(1000 + i as u64);
        let (len, labels) = (r.random_range(1..=6), r.random_range(1..=4));
        let ch = random_chain(&mut r, len, labels)?;
        worst = worst.max((forward_log_z(&ch) - oracle::brute_log_z(&ch)).abs());
    }
    out.push(Measured {
        name: "forward log-partition vs enumeration",
        instances,
        worst,
    });

    let mut wrong = 0;
    for i in 0..instances {
        let mut r = rng(2000 + i as u64);
        let (len, labels) = (r.random_range(1..=6), r.random_range(1..=4));
        let ch = random_chain(&mut r, len, labels)?;
        let (y, s) = viterbi(&ch);
        let (yb, sb) = oracle::brute_argmax(&ch);
        if y != yb || (s - sb).abs() > 1e-12 || (crf::score(&ch, &y)? - s).abs() > 1e-12 {
            wrong += 1;
        }
    }
    out.push(Measured {
        name: "viterbi vs enumeration argmax",
        instances,
        worst: wrong as f64,
    });

    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut r = rng(3000 + i as u64);
        let labels = r.random_range(1..=4);
        let (enc, mut p) = encoder(&mut r, 5, 3, labels, i % 2 == 0)?;
        let model = JointSeqEnergy::new(enc, 6, false);
        model.init_crf(&mut p)?;
        jitter(&mut p, &mut r, 1.0)?;
        let x = random_seqs(&mut r, 1, 5, 6).remove(0);
        let ch = model.chain(&p, &x)?;
        let brute: Vec<f64> = oracle::labelings(x.len(), labels)
            .iter()
            .map(|y| model_joint_score(&model, &p, &x, y))
            .collect::<Result<_>>()?;
        worst = worst
            .max((marginal_potential_seq(&model, &p, &x)? - logsumexp(&brute)).abs())
            .max((forward_log_z(&ch) - oracle::brute_log_z(&ch)).abs());
    }
    out.push(Measured {
        name: "sequence marginal potential vs enumeration",
        instances,
        worst,
    });

    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut r = rng(4000 + i as u64);
        let (vocab, max_len) = (r.random_range(2..=3), r.random_range(1..=4));
        let (enc, mut p) = encoder(&mut r, vocab, 3, 2, i % 2 == 1)?;
        jitter(&mut p, &mut r, 1.0)?;
        let model = SeqEnergy::new(enc.clone(), max_len);
        let lz = exact_log_partition(&model, &p)?;
        worst = worst.max((lz - brute_log_partition(&enc, &p, vocab, max_len)?).abs());
    }
    out.push(Measured {
        name: "exact log-partition vs brute-force sum",
        instances,
        worst,
    });

    let mut wrong = 0;
    for i in 0..instances {
        let mut r = rng(5000 + i as u64);
        let k = r.random_range(2..=5);
        let net = ClassifierNet::new(MlpBody::new("body", &[2, 6], Activation::Tanh)?, "head", k);
        let mut p = ParamStore::new();
        net.init(&mut p, &mut r)?;
        let model = JointFixedEnergy::new(net.clone());
        let x = random_points(&mut r, 1).remove(0);
        let c = joint_conditional(&model, &p, &x)?;
        let s = softmax(&classifier_logits(&net, &p, &x)?);
        if c.iter().zip(&s).any(|(a, b)| a.to_bits() != b.to_bits()) {
            wrong += 1;
        }
    }
    out.push(Measured {
        name: "joint conditional vs softmax of logits (bitwise)",
        instances,
        worst: wrong as f64,
    });
    Ok(out)
}

/// `u(x, y)` read off the joint model's tape.
pub fn model_joint_score(model: &JointSeqEnergy, p: &ParamStore, x: &[usize], y: &[usize]) -> Result<f64> {
    let mut t = Tape::new();
    let s = model.joint_potentials(&mut t, p, &[x.to_vec()], &[y.to_vec()])?;
    Ok(t.value(s).data()[0])
}

/// A sequence model with random weights over `V^1 ∪ … ∪ V^L`.
pub fn tiny_seq_model(seed: u64, vocab: usize, max_len: usize) -> Result<(SeqEnergy, ParamStore)> {
    let mut r = rng(seed);
    let (enc, mut p) = encoder(&mut r, vocab, 2, 1, true)?;
    jitter(&mut p, &mut r, 0.5)?;
    let head = enc.head_names();
    for n in head {
        p.remove(&n);
    }
    Ok((SeqEnergy::new(enc, max_len), p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint {
    /// `‖·‖∞` of the exact gradient when the data distribution is the model's.
    pub exact_at_fixed_point: f64,
    pub samples: usize,
    /// `|sampled − exact| / SE` along the exact gradient and along a random direction.
    pub z_scores: [f64; 2],
    /// Difference between the library estimator and the per-point reconstruction.
    pub estimator_mismatch: f64,
}

fn flatten(g: &ebm_ssl::diffcore::Gradients, names: &[String]) -> Vec<f64> {
    names
        .iter()
        .flat_map(|n| g.get(n).map(|a| a.data().to_vec()).unwrap_or_default())
        .collect()
}

/// Exact and sampled forms of the maximum-likelihood gradient on an
/// enumerable space.
pub fn fixed_point(samples: usize, seed: u64) -> Result<FixedPoint> {
    let (model, p) = tiny_seq_model(seed, 2, 3)?;
    let (points, probs) = exact_distribution(&model, &p)?;
    let at_fixed = exact_ml_gradient_weighted(&model, &p, &points, &probs)?.max_abs();

    let mut r = rng(seed + 1);
    let data = random_seqs(&mut r, 6, 2, 3);
    let names: Vec<String> = p.names().map(str::to_string).collect();
    let exact = flatten(&exact_ml_gradient(&model, &p, &data)?, &names);
    let draws = exact_discrete_sample(&model, &p, &mut r, samples)?;
    let sampled = flatten(&sampled_ml_gradient(&model, &p, &data, &draws)?, &names);

    // Per-point gradients ∇u(x) rebuild the estimator and its standard error.
    let mut t = Tape::new();
    let ud = model.potentials(&mut t, &p, &data)?;
    let md = t.mean(ud);
    let data_term = flatten(&t.backward(md)?.params(), &names);
    let per_point: Vec<Vec<f64>> = points
        .iter()
        .map(|x| {
            let mut t = Tape::new();
            let u = model.potentials(&mut t, &p, std::slice::from_ref(x))?;
            let s = t.sum(u);
            Ok(flatten(&t.backward(s)?.params(), &names))
        })
        .collect::<Result<_>>()?;
    let index = |x: &Vec<usize>| points.iter().position(|q| q == x).expect("sample lies in the space");
    let draw_idx: Vec<usize> = draws.iter().map(index).collect();
    let mut mean = vec![0.0; exact.len()];
    for &i in &draw_idx {
        for (m, g) in mean.iter_mut().zip(&per_point[i]) {
            *m += g / samples as f64;
        }
    }
    let rebuilt: Vec<f64> = data_term.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let mismatch = rebuilt
        .iter()
        .zip(&sampled)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let norm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    let along: Vec<f64> = exact.iter().map(|v| v / norm).collect();
    let random: Vec<f64> = {
        let v = standard_normal(&mut r, exact.len());
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let z = |dir: &[f64]| {
        let proj: Vec<f64> = draw_idx.iter().map(|&i| dot(&per_point[i], dir)).collect();
        let m = proj.iter().sum::<f64>() / samples as f64;
        let var = proj.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
        let se = (var / samples as f64).sqrt();
        (dot(&sampled, dir) - dot(&exact, dir)).abs() / se
    };
    Ok(FixedPoint {
        exact_at_fixed_point: at_fixed,
        samples,
        z_scores: [z(&along), z(&random)],
        estimator_mismatch: mismatch,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Empirical distribution of `data` over `points`.
pub fn empirical(points: &[Vec<usize>], data: &[Vec<usize>]) -> Vec<f64> {
    let mut f = vec![0.0; points.len()];
    for x in data {
        if let Some(i) = points.iter().position(|p| p == x) {
            f[i] += 1.0 / data.len() as f64;
        }
    }
    f
}

/// Training data on `V = {0, 1}`, lengths 1 to 3, drawn from a skewed
/// sequence model.
pub fn tiny_corpus(seed: u64, n: usize) -> Result<Vec<Vec<usize>>> {
    let (teacher, mut p) = tiny_seq_model(seed, 2, 3)?;
    let names: Vec<String> = p.names().map(str::to_string).collect();
    for n in names {
        for v in p.value_mut(&n)?.data_mut() {
            *v *= 3.0;
        }
    }
    exact_discrete_sample(&teacher, &p, &mut rng(seed + 7), n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Convergence {
    pub steps: usize,
    pub final_tv: f64,
    /// First step at which the target distance was reached.
    pub reached_at: Option<usize>,
}

fn table_model() -> Result<(TabularEnergy, ParamStore)> {
    let model = TabularEnergy::new("table", SampleSpace::sequences(2, 3))?;
    let mut p = ParamStore::new();
    model.init_zeros(&mut p)?;
    Ok((model, p))
}

/// Gradient ascent with the exact gradient towards the empirical
/// distribution of a small corpus on `V = {0, 1}`, `L = 3`.
pub fn exact_ml_convergence(max_steps: usize, target_tv: f64, lr: f64) -> Result<Convergence> {
    let data = tiny_corpus(11, 200)?;
    let (model, mut p) = table_model()?;
    let target = empirical(model.points(), &data);
    let mut opt = Momentum::new(OptimConfig {
        lr,
        momentum: 0.9,
        clip: 5.0,
    })?;
    let mut reached = None;
    let mut tv = 1.0;
    for step in 0..max_steps {
        let (_, probs) = exact_distribution(&model, &p)?;
        tv = total_variation(&probs, &target);
        if tv < target_tv && reached.is_none() {
            reached = Some(step);
        }
        let mut g = exact_ml_gradient(&model, &p, &data)?;
        g.scale(-1.0);
        opt.step(&mut p, &g)?;
    }
    let (_, probs) = exact_distribution(&model, &p)?;
    if reached.is_none() && total_variation(&probs, &target) < target_tv {
        reached = Some(max_steps);
    }
    tv = tv.min(total_variation(&probs, &target));
    Ok(Convergence {
        steps: max_steps,
        final_tv: tv,
        reached_at: reached,
    })
}

/// Table model whose potential equals the noise log-probability, with
/// `log c = 0`, so that every discriminant is exactly at its prior odds.
pub fn matched_table(noise: &NoiseLm, space: SampleSpace) -> Result<(TabularEnergy, ParamStore)> {
    let model = TabularEnergy::new("table", space)?;
    let mut p = ParamStore::new();
    model.init_zeros(&mut p)?;
    init_log_c(&mut p)?;
    let values = model
        .points()
        .iter()
        .map(|x| noise.log_prob(x))
        .collect::<Result<Vec<_>>>()?;
    p.value_mut("table")?.data_mut().copy_from_slice(&values);
    Ok((model, p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchedNce {
    pub nu: usize,
    pub loss: f64,
    pub expected: f64,
    pub grad_inf: f64,
}

/// Loss and gradient at the matched configuration, where the noise batch
/// repeats the data batch `ν` times.
pub fn nce_matched(nu: usize) -> Result<MatchedNce> {
    let corpus = vec![vec![0, 1], vec![1], vec![1, 1], vec![0], vec![0, 0]];
    let noise = noise_fit(&corpus, 2, 2)?;
    let (model, p) = matched_table(&noise, SampleSpace::sequences(2, 2))?;
    let nb: Vec<Vec<usize>> = (0..nu).flat_map(|_| corpus.clone()).collect();
    let (loss, g) = nce_loss(&model, &p, &noise, &corpus, &nb, nu)?;
    Ok(MatchedNce {
        nu,
        loss,
        expected: matched_loss(nu),
        grad_inf: g.max_abs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NceVsMl {
    pub nu: usize,
    pub steps: usize,
    pub tv: f64,
    /// `|log c + log Z|`: how well the learned constant normalizes the model.
    pub log_c_error: f64,
}

/// NCE training of the table model against a bigram noise model fitted to
/// the corpus, compared with the exact maximum-likelihood solution (the
/// empirical distribution).
pub fn nce_vs_ml(nu: usize, steps: usize, seed: u64) -> Result<NceVsMl> {
    let data = tiny_corpus(11, 200)?;
    let noise = noise_fit(&data, 2, 3)?;
    let (model, mut p) = table_model()?;
    init_log_c(&mut p)?;
    let ml = empirical(model.points(), &data);
    let mut opt = Momentum::new(OptimConfig {
        lr: 0.05,
        momentum: 0.9,
        clip: 5.0,
    })?;
    let mut r = rng(seed);
    let batch = 20;
    for _ in 0..steps {
        let xb: Vec<Vec<usize>> = (0..batch)
            .map(|_| data[r.random_range(0..data.len())].clone())
            .collect();
        let nb = noise.sample(&mut r, nu * batch);
        let (_, g) = nce_loss(&model, &p, &noise, &xb, &nb, nu)?;
        opt.step(&mut p, &g)?;
    }
    let (_, probs) = exact_distribution(&model, &p)?;
    let log_c = p.value(LOG_C)?.data()[0];
    Ok(NceVsMl {
        nu,
        steps,
        tv: total_variation(&probs, &ml),
        log_c_error: (log_c + exact_log_partition(&model, &p)?).abs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub steps: usize,
    pub mean: f64,
    pub var: f64,
}

/// Langevin chains on `u(x) = −‖x‖²/2` in two dimensions; moments pooled
/// over coordinates, particles and post-burn-in steps.
pub fn sgld_moments(steps: usize, particles: usize, step_size: f64, seed: u64) -> Result<Moments> {
    let target = FnTarget {
        dim: 2,
        f: |x: &[f64]| {
            (
                -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
                x.iter().map(|v| -v).collect(),
            )
        },
    };
    let mut r = rng(seed);
    let mut xs: Vec<Vec<f64>> = (0..particles).map(|_| standard_normal(&mut r, 2)).collect();
    let burn = steps / 20;
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
    for step in 0..steps {
        sgld_step(&target, &mut xs, step_size, 1.0, &mut r)?;
        if step >= burn {
            for x in &xs {
                s1 += x[0] + x[1];
                s2 += x[0] * x[0] + x[1] * x[1];
                n += 2.0;
            }
        }
    }
    let mean = s1 / n;
    Ok(Moments {
        steps,
        mean,
        var: s2 / n - mean * mean,
    })
}

/// Sets the edge matrix of a joint sequence model to random values.
pub fn randomize_edges<R: Rng>(p: &mut ParamStore, r: &mut R) -> Result<()> {
    for v in p.value_mut(CRF_EDGE)?.data_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    Ok(())
}
