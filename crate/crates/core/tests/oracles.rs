use ebm_ssl::crf::{crf_nll, forward_log_z, oracle, score, viterbi, ChainPotentials};
use ebm_ssl::data::{gen_hmm, gen_mixture, Hmm, HmmSpec, MixtureSpec};
use ebm_ssl::nce::{matched_loss, noise_fit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Scores of the four labelings: (0,0) 1.5, (0,1) 0.5, (1,0) 0, (1,1) 1.
fn two_by_two() -> ChainPotentials {
    ChainPotentials::new(2, 2, vec![0.5, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
}

#[test]
fn hand_computed_chain() {
    let ch = two_by_two();
    let z = 1.5f64.exp() + 0.5f64.exp() + 1.0 + 1.0f64.exp();
    assert!((forward_log_z(&ch) - z.ln()).abs() < 1e-14);
    assert_eq!(score(&ch, &[0, 1]).unwrap(), 0.5);
    let (y, s) = viterbi(&ch);
    assert_eq!(y, vec![0, 0]);
    assert_eq!(s, 1.5);
    assert!((crf_nll(&ch, &[1, 0]).unwrap() - z.ln()).abs() < 1e-14);
}

#[test]
fn single_label_chain_is_deterministic() {
    let ch = ChainPotentials::new(4, 1, vec![0.3, -1.0, 2.0, 0.7], vec![0.25]).unwrap();
    let s = score(&ch, &[0, 0, 0, 0]).unwrap();
    assert!((s - (2.0 + 3.0 * 0.25)).abs() < 1e-14);
    assert!((forward_log_z(&ch) - s).abs() < 1e-14);
    assert!(crf_nll(&ch, &[0; 4]).unwrap().abs() < 1e-14);
}

#[test]
fn chain_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (len, k) = (rng.random_range(1..=6), rng.random_range(1..=4));
        let node = (0..len * k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let edge = (0..k * k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let ch = ChainPotentials::new(len, k, node, edge).unwrap();
        assert!((forward_log_z(&ch) - oracle::brute_log_z(&ch)).abs() < 1e-10);
        assert_eq!(viterbi(&ch).0, oracle::brute_argmax(&ch).0);
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    assert!(ChainPotentials::new(2, 2, vec![0.0; 3], vec![0.0; 4]).is_err());
    assert!(ChainPotentials::new(2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
    assert!(score(&two_by_two(), &[0, 2]).is_err());
    assert!(score(&two_by_two(), &[0]).is_err());
}

#[test]
fn deterministic_hmm_posteriors_are_one_hot() {
    // State i always emits token i, and states alternate.
    let hmm = Hmm::new(
        vec![1.0, 0.0],
        vec![0.0, 1.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.0, 1.0],
    )
    .unwrap();
    let x = vec![0, 1, 0];
    let post = hmm.posteriors(&x).unwrap();
    assert_eq!(hmm.posterior_decode(&x).unwrap(), x);
    for (row, &s) in post.iter().zip(&x) {
        assert!((row[s] - 1.0).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(hmm.sample_one(&mut rng), (vec![0, 1, 0], vec![0, 1, 0]));
}

#[test]
fn hmm_generator_respects_its_spec() {
    let spec = HmmSpec::default();
    let (hmm, data) = gen_hmm(&spec, 300, 4).unwrap();
    assert_eq!((hmm.states, hmm.vocab), (spec.states, spec.vocab));
    for (x, y) in data.xs.iter().zip(&data.ys) {
        assert!((spec.min_len..=spec.max_len).contains(&x.len()));
        assert_eq!(x.len(), y.len());
        assert!(x.iter().all(|&t| t < spec.vocab) && y.iter().all(|&s| s < spec.states));
    }
    assert_eq!(gen_hmm(&spec, 300, 4).unwrap().1, data);
}

#[test]
fn mixture_class_means_sit_on_the_circle() {
    let spec = MixtureSpec::default();
    let data = gen_mixture(&spec, 4000, 9).unwrap();
    for k in 0..spec.classes {
        let pts: Vec<&Vec<f64>> = data
            .xs
            .iter()
            .zip(&data.ys)
            .filter(|(_, &y)| y == k)
            .map(|(x, _)| x)
            .collect();
        assert_eq!(pts.len(), 4000);
        let n = pts.len() as f64;
        let m = [
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        let want = spec.mean(k);
        // Four standard errors of a unit-variance mean over 4000 points.
        assert!(
            (m[0] - want[0]).abs() < 0.064 && (m[1] - want[1]).abs() < 0.064,
            "class {k}: {m:?} vs {want:?}"
        );
        assert!(((want[0].powi(2) + want[1].powi(2)).sqrt() - spec.radius).abs() < 1e-12);
    }
}

#[test]
fn noise_model_normalizes_over_all_sequences() {
    let corpus = vec![vec![0, 1], vec![1], vec![2, 0, 1], vec![0, 0]];
    let lm = noise_fit(&corpus, 3, 3).unwrap();
    let mut total = 0.0;
    for len in 1..=3 {
        for code in 0..3usize.pow(len as u32) {
            let x: Vec<usize> = (0..len).map(|i| code / 3usize.pow(i as u32) % 3).collect();
            total += lm.log_prob(&x).unwrap().exp();
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn matched_loss_closed_form() {
    // ν = 1: 2·ln 2.
    assert!((matched_loss(1) - 2.0 * 2f64.ln()).abs() < 1e-15);
    let nu = 4.0f64;
    let q = 1.0 / (1.0 + nu);
    let hb = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
    assert!((matched_loss(4) - (1.0 + nu) * hb).abs() < 1e-14);
}
