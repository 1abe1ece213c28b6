use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ebm_ssl::crf::tape_score;
use ebm_ssl::diffcore::{finite_diff_check, Inputs, ParamStore, Tape, Var};
use ebm_ssl::ebm::{log_likelihood_on_tape, JointEnergyModel, JointSeqEnergy, SampleSpace, SeqEnergy, TabularEnergy};
use ebm_ssl::error::Result;
use ebm_ssl::nce::{init_log_c, nce_objective, noise_fit};
use ebm_ssl::potentials::{Activation, ClassifierNet, MlpBody, MlpPotential, SeqEncoder, SeqEncoderConfig};

const INSTANCES: u64 = 20;
const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn jitter(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        for v in params.value_mut(&n).unwrap().data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
}

fn check<F>(label: &str, params: &ParamStore, f: F)
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let g = |t: &mut Tape, p: &ParamStore, _: &Inputs| f(t, p);
    let err = finite_diff_check(&g, params, &Inputs::new(), STEP).unwrap();
    assert!(err < TOL, "{label}: relative error {err}");
}

fn random_seqs(rng: &mut ChaCha8Rng, n: usize, vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        })
        .collect()
}

fn encoder(rng: &mut ChaCha8Rng, vocab: usize, labels: usize, tied: bool) -> (SeqEncoder, ParamStore) {
    let enc = SeqEncoder::new(
        "enc",
        SeqEncoderConfig {
            vocab,
            dim: 3,
            labels,
            tied,
        },
    )
    .unwrap();
    let mut p = ParamStore::new();
    enc.init(&mut p, rng).unwrap();
    (enc, p)
}

#[test]
fn softmax_cross_entropy() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..5);
        let body = MlpBody::new("body", &[2, 4, 3], Activation::Tanh).unwrap();
        let net = ClassifierNet::new(body, "head", k);
        let mut p = ParamStore::new();
        net.init(&mut p, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let ys: Vec<usize> = (0..5).map(|_| rng.random_range(0..k)).collect();
        check("softmax CE", &p, |t, p| {
            let x = t.input(ebm_ssl::diffcore::RealArray::from_rows(&xs)?)?;
            let logits = net.forward(t, p, x)?;
            t.softmax_ce(logits, &ys)
        });
    }
}

#[test]
fn crf_negative_log_likelihood() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (vocab, labels) = (4, rng.random_range(2..4));
        let (enc, mut p) = encoder(&mut rng, vocab, labels, seed % 2 == 0);
        let model = JointSeqEnergy::new(enc, 4, seed % 3 == 0);
        model.init_crf(&mut p).unwrap();
        jitter(&mut p, &mut rng);
        let xs = random_seqs(&mut rng, 4, vocab, 4);
        let ys: Vec<Vec<usize>> = xs
            .iter()
            .map(|x| x.iter().map(|_| rng.random_range(0..labels)).collect())
            .collect();
        check("crf nll", &p, |t, p| model.nll(t, p, &xs, &ys));
    }
}

#[test]
fn nce_loss() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let vocab = 3;
        let (enc, mut p) = encoder(&mut rng, vocab, 2, true);
        init_log_c(&mut p).unwrap();
        jitter(&mut p, &mut rng);
        let data = random_seqs(&mut rng, 3, vocab, 4);
        let noise = noise_fit(&data, vocab, 4).unwrap();
        let nu = rng.random_range(1..4);
        let nb = noise.sample(&mut rng, nu * data.len());
        if seed % 2 == 0 {
            let model = SeqEnergy::new(enc, 4);
            check("nce", &p, |t, p| nce_objective(t, &model, p, &noise, &data, &nb, nu));
        } else {
            let model = JointSeqEnergy::new(enc, 4, false);
            model.init_crf(&mut p).unwrap();
            check("nce joint", &p, |t, p| {
                nce_objective(t, &model, p, &noise, &data, &nb, nu)
            });
        }
    }
}

#[test]
fn exact_log_likelihood() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let space = SampleSpace::sequences(2, 3);
        if seed % 2 == 0 {
            let model = TabularEnergy::new("table", space).unwrap();
            let mut p = ParamStore::new();
            model.init_zeros(&mut p).unwrap();
            jitter(&mut p, &mut rng);
            let data: Vec<Vec<usize>> = (0..6)
                .map(|_| model.points()[rng.random_range(0..model.points().len())].clone())
                .collect();
            check("exact ll table", &p, |t, p| log_likelihood_on_tape(t, &model, p, &data));
        } else {
            let (enc, p) = encoder(&mut rng, 2, 2, true);
            let model = SeqEnergy::with_space(enc, space);
            let data = random_seqs(&mut rng, 5, 2, 3);
            check("exact ll seq", &p, |t, p| log_likelihood_on_tape(t, &model, p, &data));
        }
    }
}

#[test]
fn pretraining_potential() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        if seed % 2 == 0 {
            let (enc, p) = encoder(&mut rng, 5, 2, seed % 4 == 0);
            let xs = random_seqs(&mut rng, 4, 5, 5);
            check("sequence potential", &p, |t, p| {
                let u = enc.potential_mixed(t, p, &xs)?;
                Ok(t.sum(u))
            });
        } else {
            let body = MlpBody::new("body", &[2, 5], Activation::Tanh).unwrap();
            let net = MlpPotential::new(body, "pot.w");
            let mut p = ParamStore::new();
            net.init(&mut p, &mut rng).unwrap();
            let xs: Vec<Vec<f64>> = (0..4)
                .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect();
            check("continuous potential", &p, |t, p| {
                let x = t.input(ebm_ssl::diffcore::RealArray::from_rows(&xs)?)?;
                let (u, _) = net.forward(t, p, x)?;
                Ok(t.sum(u))
            });
        }
    }
}

#[test]
fn joint_chain_score() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let labels = rng.random_range(2..4);
        let (enc, mut p) = encoder(&mut rng, 4, labels, true);
        let model = JointSeqEnergy::new(enc, 5, seed % 2 == 0);
        model.init_crf(&mut p).unwrap();
        jitter(&mut p, &mut rng);
        let xs = random_seqs(&mut rng, 4, 4, 5);
        let ys: Vec<Vec<usize>> = xs
            .iter()
            .map(|x| x.iter().map(|_| rng.random_range(0..labels)).collect())
            .collect();
        check("joint score", &p, |t, p| {
            let s = model.joint_potentials(t, p, &xs, &ys)?;
            Ok(t.sum(s))
        });
        // Also the raw chain score on free node potentials.
        let len = 3;
        let mut q = ParamStore::new();
        for i in 0..len {
            q.init_zeros(&format!("node{i}"), &[2, labels]).unwrap();
        }
        q.init_zeros("edge", &[labels, labels]).unwrap();
        q.init_zeros("start", &[labels]).unwrap();
        jitter(&mut q, &mut rng);
        let y: Vec<Vec<usize>> = (0..2)
            .map(|_| (0..len).map(|_| rng.random_range(0..labels)).collect())
            .collect();
        check("tape score", &q, |t, q| {
            let nodes = (0..len)
                .map(|i| t.param(q, &format!("node{i}")))
                .collect::<Result<Vec<_>>>()?;
            let edge = t.param(q, "edge")?;
            let start = t.param(q, "start")?;
            let refs: Vec<&[usize]> = y.iter().map(Vec::as_slice).collect();
            let s = tape_score(t, &nodes, edge, Some(start), &refs)?;
            Ok(t.sum(s))
        });
    }
}
