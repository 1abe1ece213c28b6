use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::checkpoint::Checkpoint;
use crate::diffcore::{Gradients, ParamStore, RealArray};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; non-positive disables it.
    pub clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            clip: 5.0,
        }
    }
}

/// Heavy-ball descent `v ← μv + g`, `θ ← θ − ηv` on clipped gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub config: OptimConfig,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Momentum {
    pub fn new(config: OptimConfig) -> Result<Self> {
        if !(config.lr >= 0.0 && config.lr.is_finite()) || !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::invalid("learning rate must be ≥ 0 and momentum in [0, 1)"));
        }
        Ok(Self {
            config,
            velocity: BTreeMap::new(),
        })
    }

    /// Updates the parameters named in `grads`; returns the unclipped norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<f64> {
        let norm = grads.l2_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = if self.config.clip > 0.0 && norm > self.config.clip {
            self.config.clip / norm
        } else {
            1.0
        };
        for (name, g) in grads.iter() {
            let p = params.value_mut(name)?;
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = self.config.momentum * *vi + scale * gi;
                *pi -= self.config.lr * *vi;
            }
        }
        Ok(norm)
    }

    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        for (name, v) in &self.velocity {
            ck.push_real(format!("{prefix}{name}"), RealArray::vector(v.clone())?);
        }
        Ok(())
    }

    pub fn read_from(config: OptimConfig, ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let mut m = Self::new(config)?;
        for (name, p) in ck.params_with_prefix(prefix)?.iter() {
            m.velocity.insert(name.to_string(), p.value.data().to_vec());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_and_clip() {
        let mut p = ParamStore::new();
        p.set("a", RealArray::vector(vec![0.0, 0.0]).unwrap());
        let mut g = Gradients::default();
        g.insert("a".into(), RealArray::vector(vec![30.0, 40.0]).unwrap());
        let mut opt = Momentum::new(OptimConfig {
            lr: 0.1,
            momentum: 0.9,
            clip: 5.0,
        })
        .unwrap();
        assert_eq!(opt.step(&mut p, &g).unwrap(), 50.0);
        assert_eq!(p.value("a").unwrap().data(), &[-0.30000000000000004, -0.4]);
        opt.step(&mut p, &g).unwrap();
        // v = 0.9·(3, 4) + (3, 4)
        let want = [-0.3 - 0.1 * 5.7, -0.4 - 0.1 * 7.6];
        for (a, b) in p.value("a").unwrap().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut ck = Checkpoint::new();
        opt.write_to(&mut ck, "mom.").unwrap();
        assert_eq!(Momentum::read_from(opt.config.clone(), &ck, "mom.").unwrap(), opt);
    }
}
