use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};

/// Isotropic Gaussian components with means evenly spaced on a circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub classes: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            radius: 4.0,
            std: 1.0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.classes) {
            return Err(Error::invalid(format!(
                "mixture needs 2..=8 classes, got {}",
                self.classes
            )));
        }
        if !(self.radius > 0.0 && self.std > 0.0) {
            return Err(Error::invalid("radius and std must be positive"));
        }
        Ok(())
    }

    pub fn mean(&self, k: usize) -> [f64; 2] {
        let a = 2.0 * std::f64::consts::PI * k as f64 / self.classes as f64;
        [self.radius * a.cos(), self.radius * a.sin()]
    }
}

pub type ContinuousDataset = LabeledSet<Vec<f64>, usize>;

/// `per_class` points from each component, interleaved by class.
pub fn gen_mixture(spec: &MixtureSpec, per_class: usize, seed: u64) -> Result<ContinuousDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_mixture(spec, per_class, &mut rng)
}

pub fn sample_mixture<R: Rng + ?Sized>(spec: &MixtureSpec, per_class: usize, rng: &mut R) -> Result<ContinuousDataset> {
    let noise = Normal::new(0.0, spec.std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut set = LabeledSet::default();
    for _ in 0..per_class {
        for k in 0..spec.classes {
            let m = spec.mean(k);
            set.xs.push(vec![m[0] + noise.sample(rng), m[1] + noise.sample(rng)]);
            set.ys.push(k);
        }
    }
    Ok(set)
}
