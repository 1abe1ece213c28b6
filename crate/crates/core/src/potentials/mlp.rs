use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::layers::Linear;
use crate::diffcore::{ParamStore, RealArray, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Stack of dense layers `D → H₁ → … → H`, each followed by the activation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpBody {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl MlpBody {
    /// `sizes = [D, H₁, …, H]`; parameters are `{prefix}.l{i}.{w,b}`.
    pub fn new(prefix: &str, sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{prefix}.l{i}"), w[0], w[1]))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight_name(), l.bias_name()])
            .collect()
    }

    /// Last hidden activation `h` for `x: [D]` or `[n, D]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let a = layer.forward(tape, store, h)?;
            h = self.activation.apply(tape, a);
        }
        Ok(h)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                "mlp input",
                format!("expected {} features, got {}", self.input_dim(), x.len()),
            ));
        }
        Ok(())
    }
}

/// Scalar potential `u(x) = wᵀh` on top of an [`MlpBody`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPotential {
    pub body: MlpBody,
    pub w_name: String,
}

impl MlpPotential {
    pub fn new(body: MlpBody, w_name: impl Into<String>) -> Self {
        Self {
            body,
            w_name: w_name.into(),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.body.init(store, rng)?;
        let h = self.body.hidden_dim();
        let s = (6.0 / (h + 1) as f64).sqrt();
        let w = (0..h).map(|_| rng.random_range(-s..s)).collect();
        store.insert(self.w_name.clone(), RealArray::vector(w)?)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.body.param_names();
        names.push(self.w_name.clone());
        names
    }

    /// Returns `(u, h)`; `u` is `[n]` for batched input.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let h = self.body.forward(tape, store, x)?;
        let w = tape.param(store, &self.w_name)?;
        let wrow = tape.reshape(w, &[1, self.body.hidden_dim()])?;
        let u = tape.affine(h, wrow, None)?;
        let u = match tape.value(h).shape() {
            [n, _] => tape.reshape(u, &[*n])?,
            _ => tape.reshape(u, &[])?,
        };
        Ok((u, h))
    }

    /// Scalar potential and last hidden layer from one forward pass.
    pub fn potential_and_hidden(&self, store: &ParamStore, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.body.check_input(x)?;
        let mut tape = Tape::new();
        let xv = tape.input(RealArray::vector(x.to_vec())?)?;
        let (u, h) = self.forward(&mut tape, store, xv)?;
        tape.check_finite()?;
        Ok((tape.scalar(u), tape.value(h).data().to_vec()))
    }
}

pub fn mlp_potential(net: &MlpPotential, store: &ParamStore, x: &[f64]) -> Result<f64> {
    Ok(net.potential_and_hidden(store, x)?.0)
}

pub fn mlp_hidden(net: &MlpPotential, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
    Ok(net.potential_and_hidden(store, x)?.1)
}

/// `D → … → H → K` classifier; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    pub body: MlpBody,
    pub head: Linear,
}

impl ClassifierNet {
    pub fn new(body: MlpBody, head_prefix: &str, classes: usize) -> Self {
        let head = Linear::new(head_prefix, body.hidden_dim(), classes);
        Self { body, head }
    }

    pub fn classes(&self) -> usize {
        self.head.output
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.body.init(store, rng)?;
        self.head.init(store, rng)
    }

    pub fn head_names(&self) -> Vec<String> {
        vec![self.head.weight_name(), self.head.bias_name()]
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.body.param_names();
        names.extend(self.head_names());
        names
    }

    /// Logits `[K]` or `[n, K]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.body.forward(tape, store, x)?;
        self.head.forward(tape, store, h)
    }
}

pub fn classifier_logits(net: &ClassifierNet, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
    net.body.check_input(x)?;
    let mut tape = Tape::new();
    let xv = tape.input(RealArray::vector(x.to_vec())?)?;
    let out = net.forward(&mut tape, store, xv)?;
    tape.check_finite()?;
    Ok(tape.value(out).data().to_vec())
}
