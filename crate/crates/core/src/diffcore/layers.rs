//! Composite layers built from tape primitives.

use rand::Rng;

use super::{ParamStore, Tape, Var};
use crate::error::Result;

/// Dense layer `y = x Wᵀ + b` with parameters `{prefix}.w` and `{prefix}.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.init_weight(&self.weight_name(), self.output, self.input, rng)?;
        if self.bias {
            store.init_zeros(&self.bias_name(), &[self.output])?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight_name())?;
        let b = if self.bias {
            Some(tape.param(store, &self.bias_name())?)
        } else {
            None
        };
        tape.affine(x, w, b)
    }
}

/// Gated recurrent cell.
///
/// With input `x` and previous state `h`:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + b_n + r ⊙ (U_n h))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
///
/// The state size equals `hidden`; the initial state is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    fn name(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}{gate}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for g in GATES {
            store.init_weight(&self.name("w", g), self.hidden, self.input, rng)?;
            store.init_weight(&self.name("u", g), self.hidden, self.hidden, rng)?;
            store.init_zeros(&self.name("b", g), &[self.hidden])?;
        }
        Ok(())
    }

    /// One step over a batch: `x: [n, input]`, `h: [n, hidden]`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let mut pre = Vec::with_capacity(2);
        for g in ["z", "r"] {
            let w = tape.param(store, &self.name("w", g))?;
            let u = tape.param(store, &self.name("u", g))?;
            let b = tape.param(store, &self.name("b", g))?;
            let xa = tape.affine(x, w, Some(b))?;
            let ha = tape.affine(h, u, None)?;
            let s = tape.add(xa, ha)?;
            pre.push(tape.sigmoid(s));
        }
        let (z, r) = (pre[0], pre[1]);
        let wn = tape.param(store, &self.name("w", "n"))?;
        let un = tape.param(store, &self.name("u", "n"))?;
        let bn = tape.param(store, &self.name("b", "n"))?;
        let xa = tape.affine(x, wn, Some(bn))?;
        let ha = tape.affine(h, un, None)?;
        let gated = tape.mul(r, ha)?;
        let s = tape.add(xa, gated)?;
        let n = tape.tanh(s);
        // h' = n + z ⊙ (h − n)
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        tape.add(n, zd)
    }
}
