//! Approximate samplers for continuous energy models and an exact sampler
//! for enumerable discrete ones.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::layers::Linear;
use crate::diffcore::{ParamStore, RealArray, Tape};
use crate::ebm::{exact_distribution, ContinuousEnergy, EnergyModel};
use crate::error::{Error, Result};
use crate::potentials::{Activation, MlpBody};

/// Particles whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Potential values and input gradients for a batch of points.
pub trait LangevinTarget {
    fn dim(&self) -> usize;

    /// `(u(x_j), ∇_x u(x_j))` for every row.
    fn potentials_and_grads(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

/// A continuous model with its parameters bound.
pub struct Bound<'a, M> {
    pub model: &'a M,
    pub params: &'a ParamStore,
}

impl<'a, M> Bound<'a, M> {
    pub fn new(model: &'a M, params: &'a ParamStore) -> Self {
        Self { model, params }
    }
}

impl<M: ContinuousEnergy> LangevinTarget for Bound<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    // Rows are independent, so the gradient of Σu w.r.t. row j is ∇u(x_j).
    fn potentials_and_grads(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.input(RealArray::from_rows(xs)?)?;
        let u = self.model.potentials_matrix(&mut tape, self.params, x)?;
        let total = tape.sum(u);
        let back = tape.backward(total)?;
        let values = tape.value(u).data().to_vec();
        let d = self.dim();
        Ok((values, back.wrt(x).data().chunks(d).map(<[f64]>::to_vec).collect()))
    }
}

/// Analytic target given by a closure returning `(u(x), ∇u(x))`.
pub struct FnTarget<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> LangevinTarget for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potentials_and_grads(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        Ok(xs.iter().map(|x| (self.f)(x)).unzip())
    }
}

/// Evaluates the batch, isolating rows whose evaluation is not finite.
fn guarded<T: LangevinTarget + ?Sized>(target: &T, xs: &[Vec<f64>]) -> Result<Vec<Option<(f64, Vec<f64>)>>> {
    let ok = |u: f64, g: &[f64]| u.is_finite() && g.iter().all(|v| v.is_finite());
    match target.potentials_and_grads(xs) {
        Ok((u, g)) => Ok(u.into_iter().zip(g).map(|(u, g)| ok(u, &g).then_some((u, g))).collect()),
        Err(Error::NonFinite(_)) => xs
            .iter()
            .map(|x| match target.potentials_and_grads(std::slice::from_ref(x)) {
                Ok((mut u, mut g)) => {
                    let (u, g) = (u.pop().unwrap_or(f64::NAN), g.pop().unwrap_or_default());
                    Ok(ok(u, &g).then_some((u, g)))
                }
                Err(Error::NonFinite(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect(),
        Err(e) => Err(e),
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn diverged(x: &[f64]) -> bool {
    !x.iter().all(|v| v.is_finite()) || x.iter().map(|v| v * v).sum::<f64>().sqrt() > DIVERGENCE_NORM
}

/// One Langevin update `x' = x + (ε/2)∇u(x) + s·√ε·η` of every particle.
///
/// Particles with a non-finite gradient or that leave the ball of radius
/// [`DIVERGENCE_NORM`] are redrawn from a standard normal. Returns the
/// number of such incidents.
pub fn sgld_step<T: LangevinTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    particles: &mut [Vec<f64>],
    step_size: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {step_size}")));
    }
    if particles.is_empty() {
        return Ok(0);
    }
    let d = target.dim();
    let evals = guarded(target, particles)?;
    let sd = noise_scale * step_size.sqrt();
    let mut incidents = 0;
    for (x, e) in particles.iter_mut().zip(evals) {
        match e {
            Some((_, g)) => {
                for (xi, gi) in x.iter_mut().zip(g) {
                    let eta: f64 = rng.sample(StandardNormal);
                    *xi += 0.5 * step_size * gi + sd * eta;
                }
                if diverged(x) {
                    *x = standard_normal(rng, d);
                    incidents += 1;
                }
            }
            None => {
                *x = standard_normal(rng, d);
                incidents += 1;
            }
        }
    }
    Ok(incidents)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub particles: usize,
    pub step_size: f64,
    pub noise_scale: f64,
    pub steps: usize,
    pub reinit_prob: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            particles: 64,
            step_size: 0.01,
            noise_scale: 1.0,
            steps: 20,
            reinit_prob: 0.05,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("chain needs at least one particle"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reinit_prob) {
            return Err(Error::invalid("reinit probability must lie in [0, 1]"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be non-negative"));
        }
        Ok(())
    }
}

/// Persistent particle buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub config: ChainConfig,
    pub particles: Vec<Vec<f64>>,
    /// Total non-finite or diverged particles redrawn so far.
    pub divergences: u64,
    /// Mean potential of the particles after the last batch.
    pub mean_potential: f64,
}

impl ChainState {
    /// Particles start from the generator if given, else a standard normal.
    pub fn new<R: Rng + ?Sized>(
        config: ChainConfig,
        dim: usize,
        gen: Option<&AuxGenerator>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let particles = match gen {
            Some(g) => g.sample(rng, config.particles)?,
            None => (0..config.particles).map(|_| standard_normal(rng, dim)).collect(),
        };
        Ok(Self {
            config,
            particles,
            divergences: 0,
            mean_potential: 0.0,
        })
    }

    /// Particles as an `[N, D]` array.
    pub fn to_array(&self) -> Result<RealArray> {
        RealArray::from_rows(&self.particles)
    }
}

/// Refreshes each particle with probability ρ, runs `T` Langevin steps and
/// returns a copy of the persisted particles.
pub fn sample_batch<T: LangevinTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    chain: &mut ChainState,
    gen: Option<&AuxGenerator>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let d = target.dim();
    let cfg = chain.config.clone();
    for x in chain.particles.iter_mut() {
        if cfg.reinit_prob > 0.0 && rng.random::<f64>() < cfg.reinit_prob {
            *x = match gen {
                Some(g) => g.sample(rng, 1)?.remove(0),
                None => standard_normal(rng, d),
            };
        }
    }
    for _ in 0..cfg.steps {
        let n = sgld_step(target, &mut chain.particles, cfg.step_size, cfg.noise_scale, rng)?;
        chain.divergences += n as u64;
    }
    if let Ok((u, _)) = target.potentials_and_grads(&chain.particles) {
        chain.mean_potential = u.iter().sum::<f64>() / u.len() as f64;
    }
    Ok(chain.particles.clone())
}

/// Generator `x = g_φ(z)`, `z ~ N(0, I_Z)`: one tanh hidden layer and a
/// linear output.
#[derive(Clone, Debug)]
pub struct AuxGenerator {
    pub latent: usize,
    pub body: MlpBody,
    pub out: Linear,
    pub params: ParamStore,
    /// Candidate latents drawn per target when fitting.
    pub candidates: usize,
}

impl AuxGenerator {
    pub fn new<R: Rng + ?Sized>(latent: usize, hidden: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let body = MlpBody::new("gen.body", &[latent, hidden], Activation::Tanh)?;
        let out = Linear::new("gen.out", hidden, dim);
        let mut params = ParamStore::new();
        body.init(&mut params, rng)?;
        out.init(&mut params, rng)?;
        Ok(Self {
            latent,
            body,
            out,
            params,
            candidates: 8,
        })
    }

    pub fn dim(&self) -> usize {
        self.out.output
    }

    pub fn generate(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let z = tape.input(RealArray::from_rows(latents)?)?;
        let h = self.body.forward(&mut tape, &self.params, z)?;
        let x = self.out.forward(&mut tape, &self.params, h)?;
        tape.check_finite()?;
        Ok(tape.value(x).data().chunks(self.dim()).map(<[f64]>::to_vec).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let z: Vec<_> = (0..n).map(|_| standard_normal(rng, self.latent)).collect();
        self.generate(&z)
    }

    /// For each target, the latent among fresh candidates whose output is nearest.
    fn nearest_latents<R: Rng + ?Sized>(&self, targets: &[Vec<f64>], rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let m = self.candidates.max(1);
        let z: Vec<_> = (0..targets.len() * m)
            .map(|_| standard_normal(rng, self.latent))
            .collect();
        let out = self.generate(&z)?;
        Ok(targets
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let dist = |k: usize| out[k].iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (j * m..(j + 1) * m)
                    .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
                    .unwrap();
                z[best].clone()
            })
            .collect())
    }

    /// `½ mean_j ‖g(z_j) − x_j‖²` and its parameter gradients.
    fn objective(&self, latents: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, crate::diffcore::Gradients)> {
        let mut tape = Tape::new();
        let z = tape.input(RealArray::from_rows(latents)?)?;
        let t = tape.input(RealArray::from_rows(targets)?)?;
        let h = self.body.forward(&mut tape, &self.params, z)?;
        let x = self.out.forward(&mut tape, &self.params, h)?;
        let r = tape.sub(x, t)?;
        let sq = tape.mul(r, r)?;
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5 / targets.len() as f64);
        let back = tape.backward(loss)?;
        Ok((tape.scalar(loss), back.params()))
    }

    /// Reconstruction objective on `samples` with nearest-latent matching.
    pub fn fit_objective<R: Rng + ?Sized>(&self, samples: &[Vec<f64>], rng: &mut R) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("generator targets"));
        }
        let z = self.nearest_latents(samples, rng)?;
        Ok(self.objective(&z, samples)?.0)
    }
}

/// One gradient step fitting the generator to model samples; returns the
/// objective before the step.
pub fn inclusive_generator_update<R: Rng + ?Sized>(
    gen: &mut AuxGenerator,
    model_samples: &[Vec<f64>],
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    if model_samples.is_empty() {
        return Err(Error::Empty("model samples"));
    }
    if model_samples.iter().any(|x| x.len() != gen.dim()) {
        return Err(Error::shape("generator update", "sample dimension mismatch"));
    }
    let z = gen.nearest_latents(model_samples, rng)?;
    let (loss, grads) = gen.objective(&z, model_samples)?;
    if lr != 0.0 {
        for (name, g) in grads.iter() {
            let v = gen.params.value_mut(name)?;
            for (p, d) in v.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * d;
            }
        }
    }
    Ok(loss)
}

/// I.i.d. draws from `exp(u − log Z)` by inverse CDF over the enumeration.
pub fn exact_discrete_sample<M: EnergyModel, R: Rng + ?Sized>(
    model: &M,
    params: &ParamStore,
    rng: &mut R,
    n: usize,
) -> Result<Vec<M::Obs>> {
    let (points, probs) = exact_distribution(model, params)?;
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    Ok((0..n)
        .map(|_| {
            let r = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= r).min(points.len() - 1);
            points[i].clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebm::{SampleSpace, TabularEnergy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian() -> FnTarget<impl Fn(&[f64]) -> (f64, Vec<f64>)> {
        FnTarget {
            dim: 2,
            f: |x: &[f64]| {
                (
                    -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
                    x.iter().map(|v| -v).collect(),
                )
            },
        }
    }

    #[test]
    fn langevin_reproduces_standard_normal_moments() {
        let t = gaussian();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut xs: Vec<Vec<f64>> = (0..64).map(|_| standard_normal(&mut rng, 2)).collect();
        let (mut s1, mut s2, mut n) = (0.0, 0.0, 0.0);
        for step in 0..20_000 {
            sgld_step(&t, &mut xs, 0.01, 1.0, &mut rng).unwrap();
            if step >= 1000 && step % 10 == 0 {
                for x in &xs {
                    s1 += x[0] + x[1];
                    s2 += x[0] * x[0] + x[1] * x[1];
                    n += 2.0;
                }
            }
        }
        let mean = s1 / n;
        let var = s2 / n - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn zero_noise_tiny_step_keeps_particles() {
        let t = gaussian();
        let mut xs = vec![vec![0.3, -0.2]];
        sgld_step(&t, &mut xs, 1e-300, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(xs, vec![vec![0.3, -0.2]]);
        assert!(sgld_step(&t, &mut xs, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn reruns_are_bit_identical() {
        let t = gaussian();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut chain = ChainState::new(ChainConfig::default(), 2, None, &mut rng).unwrap();
            sample_batch(&t, &mut chain, None, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nonfinite_gradients_are_redrawn() {
        let t = FnTarget {
            dim: 1,
            f: |x: &[f64]| {
                if x[0] > 0.0 {
                    (f64::NAN, vec![f64::NAN])
                } else {
                    (0.0, vec![1e9])
                }
            },
        };
        let mut xs = vec![vec![1.0], vec![-1.0]];
        let n = sgld_step(&t, &mut xs, 1.0, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(n, 2);
        assert!(xs.iter().all(|x| x[0].abs() < 10.0));
    }

    #[test]
    fn refresh_and_persistence_limits() {
        let t = gaussian();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = AuxGenerator::new(2, 4, 2, &mut rng).unwrap();
        let cfg = ChainConfig {
            steps: 0,
            reinit_prob: 0.0,
            ..ChainConfig::default()
        };
        let mut chain = ChainState::new(cfg, 2, None, &mut rng).unwrap();
        let before = chain.particles.clone();
        assert_eq!(sample_batch(&t, &mut chain, Some(&gen), &mut rng).unwrap(), before);

        chain.config.reinit_prob = 1.0;
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let got = sample_batch(&t, &mut chain, Some(&gen), &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let want: Vec<_> = (0..64)
            .map(|_| {
                let _: f64 = r2.random();
                gen.sample(&mut r2, 1).unwrap().remove(0)
            })
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn two_mode_coverage() {
        let mu = [-3.0, 3.0];
        let t = FnTarget {
            dim: 1,
            f: move |x: &[f64]| {
                let a: Vec<f64> = mu.iter().map(|m| -0.5 * (x[0] - m).powi(2)).collect();
                let u = crate::diffcore::logsumexp(&a);
                let w: Vec<f64> = a.iter().map(|v| (v - u).exp()).collect();
                (u, vec![w[0] * (mu[0] - x[0]) + w[1] * (mu[1] - x[0])])
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ChainConfig {
            step_size: 0.1,
            ..ChainConfig::default()
        };
        let mut chain = ChainState::new(cfg, 1, None, &mut rng).unwrap();
        let (mut left, mut total) = (0usize, 0usize);
        while total < 10_000 {
            for x in sample_batch(&t, &mut chain, None, &mut rng).unwrap() {
                left += (x[0] < 0.0) as usize;
                total += 1;
            }
        }
        let frac = left as f64 / total as f64;
        assert!((0.25..=0.75).contains(&frac), "left fraction {frac}");
    }

    #[test]
    fn generator_collapses_to_constant_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gen = AuxGenerator::new(2, 8, 2, &mut rng).unwrap();
        let c = vec![1.5, -0.7];
        let samples = vec![c.clone(); 32];
        let before = gen.params.clone();
        inclusive_generator_update(&mut gen, &samples, 0.0, &mut rng).unwrap();
        assert_eq!(gen.params, before);

        let mut first = None;
        let mut last = 0.0;
        for _ in 0..8000 {
            last = inclusive_generator_update(&mut gen, &samples, 0.3, &mut rng).unwrap();
            first.get_or_insert(last);
        }
        assert!(last < first.unwrap());
        let out = gen.sample(&mut rng, 2000).unwrap();
        for k in 0..2 {
            let m = out.iter().map(|x| x[k]).sum::<f64>() / 2000.0;
            assert!((m - c[k]).abs() < 0.1, "{k}: {m} vs {}", c[k]);
        }
        assert!(inclusive_generator_update(&mut gen, &[], 0.1, &mut rng).is_err());
    }

    #[test]
    fn generator_objective_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut gen = AuxGenerator::new(2, 8, 2, &mut rng).unwrap();
        let samples: Vec<_> = (0..64)
            .map(|i| {
                let c = if i % 2 == 0 { 2.0 } else { -2.0 };
                let n = standard_normal(&mut rng, 2);
                vec![c + 0.3 * n[0], 0.3 * n[1]]
            })
            .collect();
        let eval = |g: &AuxGenerator| g.fit_objective(&samples, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let initial = eval(&gen);
        for _ in 0..100 {
            inclusive_generator_update(&mut gen, &samples, 0.05, &mut rng).unwrap();
        }
        assert!(eval(&gen) < initial);
    }

    #[test]
    fn exact_sampler_frequencies() {
        let space = SampleSpace::Sequences {
            vocab: 2,
            min_len: 1,
            max_len: 1,
        };
        let t = TabularEnergy::new("u", space).unwrap();
        let mut p = ParamStore::new();
        t.init_zeros(&mut p).unwrap();
        let draws = exact_discrete_sample(&t, &p, &mut ChaCha8Rng::seed_from_u64(0), 10_000).unwrap();
        let ones = draws.iter().filter(|x| x[0] == 1).count() as f64 / 1e4;
        assert!((ones - 0.5).abs() < 0.02);
        let again = exact_discrete_sample(&t, &p, &mut ChaCha8Rng::seed_from_u64(0), 10_000).unwrap();
        assert_eq!(draws, again);
    }

    #[test]
    fn exact_sampler_total_variation() {
        let t = TabularEnergy::new("u", SampleSpace::sequences(2, 3)).unwrap();
        let mut p = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta: Vec<f64> = (0..14).map(|_| rng.random_range(-1.5..1.5)).collect();
        p.set("u", RealArray::vector(theta).unwrap());
        let (points, probs) = exact_distribution(&t, &p).unwrap();
        let n = 100_000;
        let draws = exact_discrete_sample(&t, &p, &mut rng, n).unwrap();
        let mut counts = vec![0usize; points.len()];
        for d in &draws {
            counts[t.index_of(d).unwrap()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.03, "tv {tv}");
    }
}
