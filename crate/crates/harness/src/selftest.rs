//! Registry of module-level invariants, each with an executable check.

use std::fmt::Display;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use ebm_ssl::crf::{forward_log_z, oracle, score, ChainPotentials};
use ebm_ssl::data::{gen_hmm, gen_mixture, split, HmmSpec, MixtureSpec};
use ebm_ssl::diffcore::checkpoint::Checkpoint;
use ebm_ssl::diffcore::{evaluate, logsumexp, Inputs, ParamStore, RealArray, Tape};
use ebm_ssl::ebm::{
    exact_distribution, exact_log_partition, exact_ml_gradient, joint_conditional, log_likelihood_on_tape, log_unnorm,
    marginal_potential_seq, EnergyModel, JointFixedEnergy, JointSeqEnergy, SeqEnergy,
};
use ebm_ssl::nce::noise_fit;
use ebm_ssl::pipelines::{
    train, train_partial, train_resumable, LogRow, Method, Modality, NceConfig, TaskData, TrainConfig,
};
use ebm_ssl::potentials::{
    classifier_logits, mlp_potential, seq_potential_pretrain, Activation, ClassifierNet, MlpBody, MlpPotential,
};
use ebm_ssl::samplers::{exact_discrete_sample, sample_batch, ChainConfig, ChainState, FnTarget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::grid::{results_path, sweep};
use crate::oracles::{self, encoder, jitter, random_seqs};
use crate::report::{relative_error_reduction, summarize};

/// Pass detail or failure reason.
pub type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lift<T, E: Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// A listed module invariant; counted by the coverage check.
    Invariant,
    /// An additional robustness check.
    Extra,
}

pub struct Property {
    pub module: &'static str,
    pub kind: Kind,
    pub statement: &'static str,
    pub check: fn() -> Outcome,
}

/// Invariants each module lists.
pub const EXPECTED: [(&str, usize); 9] = [
    ("diffcore", 3),
    ("potentials", 3),
    ("ebm_core", 4),
    ("samplers", 3),
    ("nce", 3),
    ("crf", 3),
    ("data", 3),
    ("pipelines", 3),
    ("harness", 3),
];

pub fn registry() -> Vec<Property> {
    use Kind::*;
    let p = |module, kind, statement, check| Property {
        module,
        kind,
        statement,
        check,
    };
    vec![
        p(
            "diffcore",
            Invariant,
            "forward evaluation is pure (bit-identical repeats)",
            diffcore_pure,
        ),
        p(
            "diffcore",
            Invariant,
            "analytic gradients of every loss match finite differences (< 1e-4)",
            diffcore_gradients,
        ),
        p(
            "diffcore",
            Invariant,
            "logsumexp shifts exactly with its inputs (1e-12)",
            diffcore_lse_shift,
        ),
        p(
            "potentials",
            Invariant,
            "sequence potential is 0 for length-1 inputs",
            potentials_single_token,
        ),
        p(
            "potentials",
            Invariant,
            "reversal with swapped recurrent cells preserves the potential",
            potentials_reversal,
        ),
        p(
            "potentials",
            Invariant,
            "potentials are finite on finite inputs",
            potentials_finite,
        ),
        p(
            "ebm_core",
            Invariant,
            "exp(u − log Z) sums to 1 over enumerable spaces (1e-10)",
            ebm_normalizes,
        ),
        p(
            "ebm_core",
            Invariant,
            "conditional is invariant to adding a function of x to all labels",
            ebm_conditional_shift,
        ),
        p(
            "ebm_core",
            Invariant,
            "exact ML gradient equals the gradient of the exact log-likelihood",
            ebm_two_routes,
        ),
        p(
            "ebm_core",
            Invariant,
            "sequence marginal by forward recursion equals enumeration (K ≤ 4, l ≤ 6)",
            ebm_marginal_enum,
        ),
        p(
            "samplers",
            Invariant,
            "Langevin chain reproduces standard-normal moments",
            samplers_moments,
        ),
        p(
            "samplers",
            Invariant,
            "sample_batch never returns non-finite particles",
            samplers_finite,
        ),
        p(
            "samplers",
            Invariant,
            "exact sampler converges to exp(u − log Z) (TV < 0.03 at 1e5)",
            samplers_exact_tv,
        ),
        p(
            "nce",
            Invariant,
            "matched-model loss equals (1+ν)·H_b(1/(1+ν)) for ν ∈ {1, 5}",
            nce_matched_loss,
        ),
        p(
            "nce",
            Invariant,
            "noise model sampling and scoring agree within 2 SE of its entropy",
            nce_entropy,
        ),
        p(
            "nce",
            Invariant,
            "NCE gradient vanishes at the matched discriminant",
            nce_matched_gradient,
        ),
        p(
            "crf",
            Invariant,
            "log Z ≥ score(y) for every y, with equality iff K = 1",
            crf_bound,
        ),
        p(
            "crf",
            Invariant,
            "label-sequence probabilities sum to 1 (1e-10)",
            crf_normalizes,
        ),
        p(
            "crf",
            Invariant,
            "joint-model marginal equals the chain log-partition (1e-12)",
            crf_shared_recursion,
        ),
        p(
            "data",
            Invariant,
            "split is deterministic per seed and varies across seeds",
            data_split_seeds,
        ),
        p(
            "data",
            Invariant,
            "unlabeled items carry observations only",
            data_no_leakage,
        ),
        p(
            "data",
            Invariant,
            "HMM gold labels are the generating states",
            data_hmm_states,
        ),
        p(
            "pipelines",
            Invariant,
            "joint training with λ = 0 equals supervised training bit for bit",
            pipelines_zero_weight,
        ),
        p(
            "pipelines",
            Invariant,
            "fine-tuning never mutates frozen parameters",
            pipelines_frozen,
        ),
        p(
            "pipelines",
            Invariant,
            "every pipeline logs one schema and resumes to identical results",
            pipelines_resume,
        ),
        p(
            "harness",
            Invariant,
            "grid reruns reproduce every result bit-exactly",
            harness_grid_determinism,
        ),
        p(
            "harness",
            Invariant,
            "relative_error_reduction(m, m) = 0 for m < 100",
            harness_rer_identity,
        ),
        p(
            "harness",
            Invariant,
            "aggregates use the sample standard deviation",
            harness_sample_std,
        ),
        p(
            "harness",
            Extra,
            "a corrupted checkpoint is reported as a load error",
            harness_corrupted_checkpoint,
        ),
    ]
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub module: &'static str,
    pub kind: Kind,
    pub statement: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
    /// Modules whose registered invariant count differs from [`EXPECTED`].
    pub coverage_gaps: Vec<(&'static str, usize, usize)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.coverage_gaps.is_empty() && self.verdicts.iter().all(|v| v.passed)
    }
}

pub fn coverage_gaps(props: &[Property]) -> Vec<(&'static str, usize, usize)> {
    let mut gaps: Vec<_> = EXPECTED
        .iter()
        .map(|&(m, want)| {
            let got = props
                .iter()
                .filter(|p| p.module == m && p.kind == Kind::Invariant)
                .count();
            (m, want, got)
        })
        .filter(|(_, want, got)| want != got)
        .collect();
    for p in props {
        if !EXPECTED.iter().any(|(m, _)| *m == p.module) {
            gaps.push((p.module, 0, 1));
        }
    }
    gaps
}

/// Runs every check, reporting each verdict as it completes. A panicking
/// check counts as a failure.
pub fn run(mut progress: impl FnMut(&Verdict)) -> Report {
    let props = registry();
    let coverage_gaps = coverage_gaps(&props);
    let mut verdicts = Vec::new();
    for p in &props {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(p.check).unwrap_or_else(|_| Err("check panicked".into()));
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let v = Verdict {
            module: p.module,
            kind: p.kind,
            statement: p.statement,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&v);
        verdicts.push(v);
    }
    Report {
        verdicts,
        coverage_gaps,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

static SCRATCH: AtomicUsize = AtomicUsize::new(0);

/// A fresh, empty directory under the system temp dir.
pub fn scratch_dir(tag: &str) -> std::result::Result<PathBuf, String> {
    let n = SCRATCH.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("ebm-ssl-{tag}-{}-{n}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    lift(fs::create_dir_all(&dir))?;
    Ok(dir)
}

// diffcore

fn diffcore_pure() -> Outcome {
    let mut r = rng(1);
    let net = MlpPotential::new(lift(MlpBody::new("body", &[2, 8, 8], Activation::Tanh))?, "w");
    let mut p = ParamStore::new();
    lift(net.init(&mut p, &mut r))?;
    let before = p.clone();
    let mut inputs = Inputs::new();
    let xs: Vec<Vec<f64>> = (0..16)
        .map(|_| vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)])
        .collect();
    inputs.insert("x".into(), lift(RealArray::from_rows(&xs))?);
    let g = |t: &mut Tape, p: &ParamStore, i: &Inputs| {
        let x = t.bound(i, "x")?;
        let (u, _) = net.forward(t, p, x)?;
        Ok(t.sum(u))
    };
    let a = lift(evaluate(&g, &p, &inputs))?;
    let b = lift(evaluate(&g, &p, &inputs))?;
    let (enc, q) = lift(encoder(&mut r, 6, 4, 3, true))?;
    let seqs = random_seqs(&mut r, 10, 6, 7);
    let seq = |t: &mut Tape, p: &ParamStore, _: &Inputs| {
        let u = enc.potential_mixed(t, p, &seqs)?;
        Ok(t.sum(u))
    };
    let c = lift(evaluate(&seq, &q, &Inputs::new()))?;
    let d = lift(evaluate(&seq, &q, &Inputs::new()))?;
    ensure(
        a.item().to_bits() == b.item().to_bits() && c.item().to_bits() == d.item().to_bits() && p == before,
        format!("mlp {} and sequence {} repeated bitwise", a.item(), c.item()),
    )
}

fn diffcore_gradients() -> Outcome {
    let suite = lift(oracles::gradient_suite(20))?;
    let worst = suite.iter().map(|m| m.worst).fold(0.0, f64::max);
    let names: Vec<&str> = suite.iter().map(|m| m.name).collect();
    ensure(
        worst < 1e-4,
        format!(
            "{} losses × 20 instances, worst relative error {worst:.2e} ({})",
            suite.len(),
            names.join(", ")
        ),
    )
}

fn diffcore_lse_shift() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let v: Vec<f64> = (0..7).map(|_| r.random_range(-20.0..20.0)).collect();
        let base = logsumexp(&v);
        for c in [-1000.0, -7.5, 0.0, 3.25, 1000.0] {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            worst = worst.max((logsumexp(&shifted) - base - c).abs());
            let mut t = Tape::new();
            let x = lift(t.input(lift(RealArray::matrix(1, 7, shifted))?))?;
            let l = lift(t.logsumexp_rows(x))?;
            worst = worst.max((t.value(l).data()[0] - base - c).abs());
        }
    }
    ensure(
        worst <= 1e-12,
        format!("max deviation {worst:.1e} over shifts up to ±1000"),
    )
}

// potentials

fn potentials_single_token() -> Outcome {
    let mut r = rng(3);
    for i in 0..20 {
        let (enc, mut p) = lift(encoder(&mut r, 7, 3, 2, i % 2 == 0))?;
        lift(jitter(&mut p, &mut r, 3.0))?;
        for t in 0..7 {
            let u = lift(seq_potential_pretrain(&enc, &p, &[t]))?;
            if u != 0.0 {
                return Err(format!("u([{t}]) = {u}"));
            }
        }
    }
    Ok("20 random encoders × 7 tokens give exactly 0".into())
}

fn potentials_reversal() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let (enc, p) = lift(encoder(&mut r, 6, 4, 2, i % 2 == 0))?;
        let mut swapped = p.clone();
        for (a, b) in [("fwd", "bwd"), ("bwd", "fwd")] {
            for (name, param) in p.with_prefix(&format!("enc.{a}.")) {
                lift(swapped.value_mut(&name.replacen(a, b, 1)))?.clone_from(&param.value);
            }
        }
        for x in random_seqs(&mut r, 10, 6, 8) {
            let mut rev = x.clone();
            rev.reverse();
            let u = lift(seq_potential_pretrain(&enc, &p, &x))?;
            let v = lift(seq_potential_pretrain(&enc, &swapped, &rev))?;
            worst = worst.max((u - v).abs());
        }
    }
    ensure(worst < 1e-12, format!("100 sequences, max |Δu| {worst:.1e}"))
}

fn potentials_finite() -> Outcome {
    let mut r = rng(5);
    let pot = MlpPotential::new(lift(MlpBody::new("pot", &[2, 16, 16], Activation::Relu))?, "w");
    let cls = ClassifierNet::new(lift(MlpBody::new("cls", &[2, 16, 16], Activation::Relu))?, "head", 4);
    let mut p = ParamStore::new();
    lift(pot.init(&mut p, &mut r))?;
    lift(cls.init(&mut p, &mut r))?;
    lift(jitter(&mut p, &mut r, 5.0))?;
    for scale in [1.0, 1e3, 1e6, 1e9] {
        for _ in 0..20 {
            let x = [r.random_range(-scale..scale), r.random_range(-scale..scale)];
            let u = lift(mlp_potential(&pot, &p, &x))?;
            let l = lift(classifier_logits(&cls, &p, &x))?;
            if !u.is_finite() || l.iter().any(|v| !v.is_finite()) {
                return Err(format!("non-finite output at {x:?}"));
            }
        }
    }
    let (enc, mut q) = lift(encoder(&mut r, 8, 4, 3, false))?;
    lift(jitter(&mut q, &mut r, 50.0))?;
    for x in random_seqs(&mut r, 50, 8, 12) {
        if !lift(seq_potential_pretrain(&enc, &q, &x))?.is_finite() {
            return Err(format!("non-finite sequence potential on {x:?}"));
        }
    }
    Ok("MLP inputs up to 1e9 and sequence weights ±50 stay finite".into())
}

// ebm_core

fn ebm_normalizes() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut r = rng(10 + seed);
        let (enc, mut p) = lift(encoder(&mut r, 3, 3, 2, seed % 2 == 0))?;
        lift(jitter(&mut p, &mut r, 1.0))?;
        let m = SeqEnergy::new(enc.clone(), 4);
        let lz = lift(exact_log_partition(&m, &p))?;
        let total: f64 = lift(m.enumerate())?
            .iter()
            .map(|x| log_unnorm(&m, &p, x).map(|u| (u - lz).exp()))
            .sum::<ebm_ssl::Result<f64>>()
            .map_err(|e| e.to_string())?;
        worst = worst.max((total - 1.0).abs());
        let j = JointSeqEnergy::new(enc, 3, false);
        lift(j.init_crf(&mut p))?;
        oracles::randomize_edges(&mut p, &mut r).map_err(|e| e.to_string())?;
        let (_, probs) = lift(exact_distribution(&j, &p))?;
        worst = worst.max((probs.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst < 1e-10, format!("max |Σp − 1| {worst:.1e}"))
}

fn ebm_conditional_shift() -> Outcome {
    let mut r = rng(11);
    let net = ClassifierNet::new(lift(MlpBody::new("body", &[2, 6], Activation::Tanh))?, "head", 4);
    let m = JointFixedEnergy::new(net);
    let mut p = ParamStore::new();
    lift(m.net.init(&mut p, &mut r))?;
    // Adding v to every row of the head adds v·h(x) + c to all four logits.
    let mut q = p.clone();
    let v: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
    for (i, w) in lift(q.value_mut("head.w"))?.data_mut().iter_mut().enumerate() {
        *w += v[i % 6];
    }
    for b in lift(q.value_mut("head.b"))?.data_mut() {
        *b += 1.7;
    }
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let a = lift(joint_conditional(&m, &p, &x))?;
        let b = lift(joint_conditional(&m, &q, &x))?;
        worst = a.iter().zip(&b).map(|(s, t)| (s - t).abs()).fold(worst, f64::max);
    }
    ensure(worst < 1e-12, format!("50 inputs, max change {worst:.1e}"))
}

fn ebm_two_routes() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut r = rng(20 + seed);
        let (enc, p) = lift(encoder(&mut r, 2, 3, 2, true))?;
        let m = SeqEnergy::new(enc, 3);
        let data = random_seqs(&mut r, 6, 2, 3);
        let g = lift(exact_ml_gradient(&m, &p, &data))?;
        let mut t = Tape::new();
        let ll = lift(log_likelihood_on_tape(&mut t, &m, &p, &data))?;
        let h = lift(t.backward(ll))?.params();
        let diff = g.sub(&h).l2_norm();
        worst = worst.max(diff / (g.l2_norm() + h.l2_norm() + 1e-12));
    }
    ensure(worst < 1e-6, format!("max relative difference {worst:.1e}"))
}

fn ebm_marginal_enum() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 1..=4 {
        for l in 1..=6 {
            let mut r = rng(100 * k as u64 + l as u64);
            let (enc, mut p) = lift(encoder(&mut r, 5, 3, k, true))?;
            let m = JointSeqEnergy::new(enc, 6, false);
            lift(m.init_crf(&mut p))?;
            lift(jitter(&mut p, &mut r, 1.0))?;
            let x: Vec<usize> = (0..l).map(|_| r.random_range(0..5)).collect();
            let scores = oracle::labelings(l, k)
                .iter()
                .map(|y| oracles::model_joint_score(&m, &p, &x, y))
                .collect::<ebm_ssl::Result<Vec<f64>>>()
                .map_err(|e| e.to_string())?;
            worst = worst.max((lift(marginal_potential_seq(&m, &p, &x))? - logsumexp(&scores)).abs());
            cases += 1;
        }
    }
    ensure(worst < 1e-10, format!("{cases} (K, l) cases, max |Δ| {worst:.1e}"))
}

// samplers

fn samplers_moments() -> Outcome {
    let m = lift(oracles::sgld_moments(100_000, 16, 0.01, 0))?;
    ensure(
        m.mean.abs() < 0.05 && (m.var - 1.0).abs() < 0.1,
        format!("mean {:.4}, variance {:.4}", m.mean, m.var),
    )
}

fn samplers_finite() -> Outcome {
    // Outward quartic growth and a NaN region both force redraws.
    let target = FnTarget {
        dim: 2,
        f: |x: &[f64]| {
            let n2: f64 = x.iter().map(|v| v * v).sum();
            if x[0] > 3.0 {
                (f64::NAN, vec![f64::NAN; 2])
            } else {
                (n2 * n2, x.iter().map(|v| 4.0 * n2 * v).collect())
            }
        },
    };
    let mut r = rng(12);
    let cfg = ChainConfig {
        particles: 32,
        step_size: 0.5,
        steps: 10,
        reinit_prob: 0.1,
        ..ChainConfig::default()
    };
    let mut chain = lift(ChainState::new(cfg, 2, None, &mut r))?;
    for _ in 0..50 {
        let xs = lift(sample_batch(&target, &mut chain, None, &mut r))?;
        if xs.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite particle returned".into());
        }
    }
    ensure(
        chain.divergences > 0,
        format!("50 batches finite; {} redraws", chain.divergences),
    )
}

fn samplers_exact_tv() -> Outcome {
    let (m, p) = lift(oracles::tiny_seq_model(13, 2, 3))?;
    let (points, probs) = lift(exact_distribution(&m, &p))?;
    let draws = lift(exact_discrete_sample(&m, &p, &mut rng(14), 100_000))?;
    let tv = oracles::total_variation(&oracles::empirical(&points, &draws), &probs);
    ensure(
        points.len() <= 16 && tv < 0.03,
        format!("|X| = {}, TV {tv:.4}", points.len()),
    )
}

// nce

fn nce_matched_loss() -> Outcome {
    let mut detail = Vec::new();
    for nu in [1, 5] {
        let m = lift(oracles::nce_matched(nu))?;
        if (m.loss - m.expected).abs() > 1e-9 {
            return Err(format!("ν = {nu}: loss {} vs {}", m.loss, m.expected));
        }
        detail.push(format!("ν = {nu}: {:.6}", m.loss));
    }
    Ok(detail.join(", "))
}

fn nce_entropy() -> Outcome {
    let corpus = vec![
        vec![0, 1, 2],
        vec![0, 1],
        vec![2, 2, 1, 0],
        vec![1, 0],
        vec![0, 1, 2, 3],
    ];
    let lm = lift(noise_fit(&corpus, 4, 5))?;
    // Exact entropy by propagating the token marginal along each length.
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
    let nll: Vec<f64> = lm
        .sample(&mut rng(15), 10_000)
        .iter()
        .map(|x| lm.log_prob(x).map(|v| -v))
        .collect::<ebm_ssl::Result<_>>()
        .map_err(|e| e.to_string())?;
    let n = nll.len() as f64;
    let mean = nll.iter().sum::<f64>() / n;
    let se = (nll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    ensure(
        (mean - h).abs() < 2.0 * se,
        format!("sample mean {mean:.4} vs entropy {h:.4} (SE {se:.4})"),
    )
}

fn nce_matched_gradient() -> Outcome {
    let worst = [1, 5, 10]
        .into_iter()
        .map(oracles::nce_matched)
        .collect::<ebm_ssl::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|m| m.grad_inf)
        .fold(0.0, f64::max);
    ensure(worst < 1e-6, format!("‖∇‖∞ ≤ {worst:.1e} for ν ∈ {{1, 5, 10}}"))
}

// crf

fn random_chains(seed: u64, n: usize) -> std::result::Result<Vec<ChainPotentials>, String> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (l, k) = (r.random_range(1..=5), r.random_range(1..=4));
            let node = (0..l * k).map(|_| r.random_range(-3.0..3.0)).collect();
            let edge = (0..k * k).map(|_| r.random_range(-3.0..3.0)).collect();
            lift(ChainPotentials::new(l, k, node, edge))
        })
        .collect()
}

fn crf_bound() -> Outcome {
    let mut singles = 0;
    for ch in random_chains(30, 100)? {
        let lz = forward_log_z(&ch);
        let scores = oracle::labelings(ch.len(), ch.labels())
            .iter()
            .map(|y| lift(score(&ch, y)))
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if ch.labels() == 1 {
            singles += 1;
            if (lz - best).abs() > 1e-12 {
                return Err(format!("K = 1 but log Z {lz} ≠ score {best}"));
            }
        } else if lz <= best {
            return Err(format!("K = {} and log Z {lz} ≤ max score {best}", ch.labels()));
        }
    }
    ensure(singles > 0, format!("100 chains ({singles} with K = 1)"))
}

fn crf_normalizes() -> Outcome {
    let mut worst = 0.0f64;
    for ch in random_chains(31, 100)? {
        let lz = forward_log_z(&ch);
        let total: f64 = oracle::labelings(ch.len(), ch.labels())
            .iter()
            .map(|y| score(&ch, y).map(|s| (s - lz).exp()).unwrap_or(f64::NAN))
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    ensure(worst < 1e-10, format!("100 chains, max |Σp − 1| {worst:.1e}"))
}

fn crf_shared_recursion() -> Outcome {
    let mut r = rng(32);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (enc, mut p) = lift(encoder(&mut r, 5, 3, 3, true))?;
        let m = JointSeqEnergy::new(enc, 8, i % 2 == 0);
        lift(m.init_crf(&mut p))?;
        lift(jitter(&mut p, &mut r, 1.0))?;
        for x in random_seqs(&mut r, 5, 5, 8) {
            let a = lift(marginal_potential_seq(&m, &p, &x))?;
            let b = forward_log_z(&lift(m.chain(&p, &x))?);
            let c = lift(log_unnorm(&m, &p, &x))?;
            worst = worst.max((a - b).abs()).max((a - c).abs());
        }
    }
    ensure(worst < 1e-12, format!("100 sequences, max |Δ| {worst:.1e}"))
}

// data

fn data_split_seeds() -> Outcome {
    let d = lift(gen_mixture(&MixtureSpec::default(), 50, 0))?;
    let a = lift(split(&d, 0.1, 2.0, 7))?;
    let b = lift(split(&d, 0.1, 2.0, 7))?;
    if a != b {
        return Err("same seed gave different splits".into());
    }
    let mut distinct = std::collections::BTreeSet::new();
    for seed in 0..20 {
        distinct.insert(format!("{:?}", lift(split(&d, 0.1, 2.0, seed))?.labeled.xs));
    }
    ensure(
        distinct.len() == 20,
        format!("20 seeds gave {} distinct labeled subsets", distinct.len()),
    )
}

fn data_no_leakage() -> Outcome {
    let (_, seqs) = lift(gen_hmm(&HmmSpec::default(), 200, 1))?;
    let s = lift(split(&seqs, 0.1, 3.0, 2))?;
    // The unlabeled field has the observation type; no label slot exists.
    let unlabeled: &Vec<Vec<usize>> = &s.unlabeled;
    let from_data = unlabeled.iter().all(|x| seqs.xs.contains(x));
    let d = lift(gen_mixture(&MixtureSpec::default(), 50, 3))?;
    let c = lift(split(&d, 0.1, 3.0, 4))?;
    let disjoint = c.unlabeled.iter().all(|x| !c.labeled.xs.contains(x));
    ensure(
        from_data && disjoint && unlabeled.len() == 3 * s.labeled.len(),
        format!(
            "{} unlabeled sequences, {} unlabeled points, none labeled",
            unlabeled.len(),
            c.unlabeled.len()
        ),
    )
}

fn data_hmm_states() -> Outcome {
    // With one token per state, every token names the state that emitted it.
    let spec = HmmSpec {
        states: 3,
        vocab: 3,
        peak: 1.0,
        bio: false,
        ..HmmSpec::default()
    };
    let (_, d) = lift(gen_hmm(&spec, 500, 5))?;
    let exact = d.xs.iter().zip(&d.ys).all(|(x, y)| x == y);
    let (hmm, d) = lift(gen_hmm(&HmmSpec::default(), 500, 6))?;
    let k = hmm.states;
    let feasible = d.xs.iter().zip(&d.ys).all(|(x, y)| {
        x.len() == y.len()
            && hmm.initial[y[0]] > 0.0
            && y.windows(2).all(|w| hmm.trans[w[0] * k + w[1]] > 0.0)
            && x.iter().zip(y).all(|(&t, &s)| hmm.emit[s * hmm.vocab + t] > 0.0)
    });
    ensure(
        exact && feasible,
        "identity-emission labels equal tokens; all label paths have positive probability".into(),
    )
}

// pipelines

fn mixture_task(seed: u64) -> std::result::Result<TaskData, String> {
    let d = lift(gen_mixture(&MixtureSpec::default(), 40, seed))?;
    Ok(TaskData::Continuous {
        split: lift(ebm_ssl::data::split_per_class(&d, 4, 4.0, seed))?,
        classes: 4,
    })
}

fn hmm_task(seed: u64) -> std::result::Result<TaskData, String> {
    let spec = HmmSpec::default();
    let (_, d) = lift(gen_hmm(&spec, 100, seed))?;
    Ok(TaskData::Sequence {
        split: lift(split(&d, 0.1, 4.0, seed))?,
        vocab: spec.vocab,
        labels: spec.states,
        max_len: spec.max_len,
        label_names: Some(ebm_ssl::data::bio_names(spec.states)),
    })
}

fn small_config(modality: Modality, method: Method) -> TrainConfig {
    let mut c = TrainConfig {
        modality,
        method,
        steps: 12,
        pretrain_steps: 8,
        log_every: 3,
        ..TrainConfig::default()
    };
    match modality {
        Modality::Continuous => {
            c.hidden = vec![8];
            c.chain.particles = 16;
            c.chain.steps = 5;
        }
        Modality::Sequence => {
            c.labeled_batch = 4;
            c.unlabeled_batch = 4;
            c.nce = NceConfig {
                nu: 2,
                refresh_every: 3,
                ..NceConfig::default()
            };
        }
    }
    c
}

fn both_tasks() -> std::result::Result<Vec<(TaskData, Modality)>, String> {
    Ok(vec![
        (mixture_task(40)?, Modality::Continuous),
        (hmm_task(41)?, Modality::Sequence),
    ])
}

fn pipelines_zero_weight() -> Outcome {
    for (task, modality) in both_tasks()? {
        let cfg = TrainConfig {
            unsup_weight: 0.0,
            ..small_config(modality, Method::Joint)
        };
        let j = lift(train(&task, &cfg, None))?;
        let s = lift(train(
            &task,
            &TrainConfig {
                method: Method::Supervised,
                ..cfg
            },
            None,
        ))?;
        let same_log = j.log.len() == s.log.len()
            && j.log
                .iter()
                .zip(&s.log)
                .all(|(a, b)| a.loss_sup.to_bits() == b.loss_sup.to_bits());
        if j.params != s.params || !same_log {
            return Err(format!("{modality:?}: trajectories differ"));
        }
    }
    Ok("continuous and sequence parameters and losses identical".into())
}

fn pipelines_frozen() -> Outcome {
    let mut checked = 0;
    for (task, modality) in both_tasks()? {
        let cfg = small_config(modality, Method::PretrainFinetune);
        let dir = scratch_dir("frozen")?;
        let ck = dir.join("stage1.ckpt");
        lift(train_partial(&task, &cfg, &ck, cfg.pretrain_steps))?;
        let pre = lift(lift(Checkpoint::load(&ck))?.params_with_prefix("param."))?;
        let m = lift(train(&task, &cfg, None))?;
        let head: Vec<String> = match &m.network {
            ebm_ssl::pipelines::Network::Classifier(net) => net.head_names(),
            ebm_ssl::pipelines::Network::Tagger { model, .. } => {
                let mut h = model.enc.head_names();
                h.extend(model.crf_names());
                h
            }
        };
        for (name, p) in pre.iter().filter(|(n, _)| !head.iter().any(|h| h == n)) {
            if lift(m.params.value(name))? != &p.value {
                return Err(format!("{modality:?}: frozen parameter {name} changed"));
            }
            checked += 1;
        }
        let _ = fs::remove_dir_all(dir);
    }
    ensure(
        checked > 0,
        format!("{checked} frozen arrays unchanged after fine-tuning"),
    )
}

fn pipelines_resume() -> Outcome {
    let mut runs = 0;
    for (task, modality) in both_tasks()? {
        for method in Method::ALL {
            let cfg = small_config(modality, method);
            let whole = lift(train(&task, &cfg, None))?;
            let dir = scratch_dir("resume")?;
            let ck = dir.join("run.ckpt");
            lift(train_partial(&task, &cfg, &ck, 5))?;
            lift(train_partial(&task, &cfg, &ck, 4))?;
            let resumed = lift(train_resumable(&task, &cfg, None, &ck, 3))?;
            let _ = fs::remove_dir_all(dir);
            let fields =
                |rows: &[LogRow]| -> Vec<usize> { rows.iter().map(|r| r.csv_line().split(',').count()).collect() };
            let header = LogRow::HEADER.split(',').count();
            if whole.log.is_empty() || fields(&whole.log).iter().any(|&n| n != header) {
                return Err(format!("{modality:?} {method}: log rows do not follow the schema"));
            }
            let same_log = whole.log.len() == resumed.log.len()
                && whole.log.iter().zip(&resumed.log).all(|(a, b)| {
                    a.step == b.step
                        && a.loss_sup.to_bits() == b.loss_sup.to_bits()
                        && a.loss_unsup.to_bits() == b.loss_unsup.to_bits()
                });
            if whole.params != resumed.params || whole.train_metrics != resumed.train_metrics || !same_log {
                return Err(format!("{modality:?} {method}: resumed run differs"));
            }
            runs += 1;
        }
    }
    Ok(format!(
        "{runs} method × modality runs resumed to identical parameters, metrics and logs"
    ))
}

// harness

fn harness_grid_determinism() -> Outcome {
    let cfg = ExperimentConfig::smoke();
    let a = scratch_dir("grid-a")?;
    let b = scratch_dir("grid-b")?;
    let first = lift(sweep(&cfg, &a, |_, _| {}))?;
    let rerun = lift(sweep(&cfg, &a, |_, _| {}))?;
    lift(sweep(&cfg, &b, |_, _| {}))?;
    let read = |d: &PathBuf| lift(fs::read(results_path(d)));
    let (ra, rb) = (read(&a)?, read(&b)?);
    let _ = fs::remove_dir_all(&a);
    let _ = fs::remove_dir_all(&b);
    ensure(
        ra == rb && rerun.ran == 0 && rerun.reused == first.total,
        format!(
            "{} runs; fresh rerun byte-identical; resumed rerun trained {} runs",
            first.total, rerun.ran
        ),
    )
}

fn harness_rer_identity() -> Outcome {
    let worst = (0..1000)
        .map(|i| i as f64 * 0.0999)
        .map(|m| relative_error_reduction(m, m).abs())
        .fold(0.0, f64::max);
    ensure(worst == 0.0, format!("1000 values in [0, 100), max |r(m, m)| {worst}"))
}

fn harness_sample_std() -> Outcome {
    let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).ok_or("empty")?;
    let want = (32.0f64 / 7.0).sqrt();
    let sd = s.std.ok_or("no std")?;
    ensure((sd - want).abs() < 1e-15, format!("std {sd} = sqrt(32/7)"))
}

fn harness_corrupted_checkpoint() -> Outcome {
    let (task, _) = both_tasks()?.remove(0);
    let cfg = small_config(Modality::Continuous, Method::Joint);
    let dir = scratch_dir("corrupt")?;
    let ck = dir.join("run.ckpt");
    lift(train_partial(&task, &cfg, &ck, 4))?;
    let text = lift(fs::read_to_string(&ck))?;
    let mut failures = 0;
    let variants = [
        text.replacen("EBMSSL-CKPT v1", "EBMSSL-CKPT v0", 1),
        text[..text.len() / 2].to_string(),
        text.replacen("e-", "e-x", 1),
        String::new(),
    ];
    for (i, bad) in variants.iter().enumerate() {
        let path = dir.join(format!("bad{i}.ckpt"));
        lift(fs::write(&path, bad))?;
        let loaded = std::panic::catch_unwind(|| Checkpoint::load(&path).is_err());
        let resumed = std::panic::catch_unwind(|| train_resumable(&task, &cfg, None, &path, 3).is_err());
        if matches!(loaded, Ok(true)) && matches!(resumed, Ok(true)) {
            failures += 1;
        }
    }
    let _ = fs::remove_dir_all(dir);
    ensure(
        failures == variants.len(),
        format!("{failures} of {} corruptions reported as errors", variants.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_every_module() {
        let props = registry();
        assert!(coverage_gaps(&props).is_empty());
        let total: usize = EXPECTED.iter().map(|(_, n)| n).sum();
        assert_eq!(props.iter().filter(|p| p.kind == Kind::Invariant).count(), total);
        let mut statements: Vec<_> = props.iter().map(|p| p.statement).collect();
        statements.sort();
        statements.dedup();
        assert_eq!(statements.len(), props.len());
    }

    #[test]
    fn missing_entries_are_detected() {
        let mut props = registry();
        props.retain(|p| p.module != "crf");
        assert_eq!(coverage_gaps(&props), vec![("crf", 3, 0)]);
    }
}
