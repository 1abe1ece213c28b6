//! Minimal reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is any recipe that records a computation on a [`Tape`]
//! given a [`ParamStore`] and named inputs. [`evaluate`], [`gradient`] and
//! [`finite_diff_check`] run such a recipe; model code usually drives the
//! tape directly.

mod array;
mod check;
pub mod checkpoint;
pub mod layers;
mod params;
mod tape;

use std::collections::BTreeMap;

pub use array::RealArray;
pub use check::finite_diff_check;
pub use params::{Gradients, Param, ParamStore};
pub use tape::{Backward, Tape, Var};

use crate::error::{Error, Result};

/// Named input arrays for a graph.
pub type Inputs = BTreeMap<String, RealArray>;

/// A computation recorded onto a fresh tape.
pub trait Graph {
    fn build(&self, tape: &mut Tape, params: &ParamStore, inputs: &Inputs) -> Result<Var>;
}

impl<F> Graph for F
where
    F: Fn(&mut Tape, &ParamStore, &Inputs) -> Result<Var>,
{
    fn build(&self, tape: &mut Tape, params: &ParamStore, inputs: &Inputs) -> Result<Var> {
        self(tape, params, inputs)
    }
}

impl Tape {
    /// Records the input bound to `name`.
    pub fn bound(&mut self, inputs: &Inputs, name: &str) -> Result<Var> {
        let v = inputs.get(name).ok_or_else(|| Error::Unbound(name.to_string()))?;
        self.input(v.clone())
    }
}

/// Forward value of a graph. Parameters are not touched.
pub fn evaluate<G: Graph + ?Sized>(graph: &G, params: &ParamStore, inputs: &Inputs) -> Result<RealArray> {
    let mut tape = Tape::new();
    let out = graph.build(&mut tape, params, inputs)?;
    tape.check_finite()?;
    Ok(tape.value(out).clone())
}

/// Accumulates `∂output/∂θ` into the gradient slots of `params` and
/// returns the output value. Slots are not zeroed first.
pub fn gradient<G: Graph + ?Sized>(graph: &G, params: &mut ParamStore, inputs: &Inputs) -> Result<f64> {
    let mut tape = Tape::new();
    let out = graph.build(&mut tape, params, inputs)?;
    let back = tape.backward(out)?;
    params.accumulate(&back.params(), 1.0)?;
    Ok(tape.scalar(out))
}

/// Forward value and parameter gradients of a scalar graph, without
/// touching the store's gradient slots.
pub fn value_and_grad<G: Graph + ?Sized>(graph: &G, params: &ParamStore, inputs: &Inputs) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let out = graph.build(&mut tape, params, inputs)?;
    let back = tape.backward(out)?;
    Ok((tape.scalar(out), back.params()))
}

/// Overflow-safe `log Σ exp(v)`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lz = logsumexp(values);
    values.iter().map(|v| (v - lz).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_input(v: &[f64]) -> Inputs {
        let mut inputs = Inputs::new();
        inputs.insert("x".into(), RealArray::vector(v.to_vec()).unwrap());
        inputs
    }

    #[test]
    fn affine_identity() {
        let mut p = ParamStore::new();
        p.insert("m", RealArray::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        p.init_zeros("b", &[2]).unwrap();
        let g = |t: &mut Tape, p: &ParamStore, i: &Inputs| {
            let x = t.bound(i, "x")?;
            let m = t.param(p, "m")?;
            let b = t.param(p, "b")?;
            t.affine(x, m, Some(b))
        };
        let out = evaluate(&g, &p, &x_input(&[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn logsumexp_uniform() {
        let g = |t: &mut Tape, _: &ParamStore, i: &Inputs| {
            let x = t.bound(i, "x")?;
            t.logsumexp_rows(x)
        };
        let out = evaluate(&g, &ParamStore::new(), &x_input(&[0.0, 0.0, 0.0])).unwrap();
        assert!((out.item() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let v = [0.3, -1.2, 2.0, 0.0];
        let mut t = Tape::new();
        let x = t.input(RealArray::vector(v.to_vec()).unwrap()).unwrap();
        let y = t.logsumexp_rows(x).unwrap();
        let g = t.backward(y).unwrap().wrt(x);
        for (a, b) in g.data().iter().zip(softmax(&v)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn half_squared_norm_gradient() {
        let mut p = ParamStore::new();
        p.insert("x", RealArray::vector(vec![3.0, -4.0]).unwrap()).unwrap();
        let g = |t: &mut Tape, p: &ParamStore, _: &Inputs| {
            let x = t.param(p, "x")?;
            let d = t.row_dot(x, x)?;
            Ok(t.scale(d, 0.5))
        };
        let v = gradient(&g, &mut p, &Inputs::new()).unwrap();
        assert_eq!(v, 12.5);
        assert_eq!(p.grad("x").unwrap().data(), &[3.0, -4.0]);
        // second call sums into the same slots
        gradient(&g, &mut p, &Inputs::new()).unwrap();
        assert_eq!(p.grad("x").unwrap().data(), &[6.0, -8.0]);
        p.zero_grad();
        assert_eq!(p.grad("x").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn errors_are_reported() {
        let g = |t: &mut Tape, _: &ParamStore, i: &Inputs| t.bound(i, "missing");
        assert!(matches!(
            evaluate(&g, &ParamStore::new(), &Inputs::new()),
            Err(Error::Unbound(_))
        ));

        let g = |t: &mut Tape, _: &ParamStore, i: &Inputs| {
            let x = t.bound(i, "x")?;
            let y = t.input(RealArray::vector(vec![1.0, 2.0, 3.0])?)?;
            t.add(x, y)
        };
        assert!(matches!(
            evaluate(&g, &ParamStore::new(), &x_input(&[1.0, 2.0])),
            Err(Error::ShapeMismatch { .. })
        ));

        let mut p = ParamStore::new();
        p.insert("x", RealArray::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let g = |t: &mut Tape, p: &ParamStore, _: &Inputs| t.param(p, "x");
        assert!(matches!(gradient(&g, &mut p, &Inputs::new()), Err(Error::NonScalar(_))));

        let g = |t: &mut Tape, _: &ParamStore, i: &Inputs| {
            let x = t.bound(i, "x")?;
            let y = t.scale(x, 1e300);
            let z = t.mul(y, y)?;
            Ok(t.sum(z))
        };
        assert!(matches!(
            evaluate(&g, &ParamStore::new(), &x_input(&[1.0, 2.0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rejects_non_finite_arrays() {
        assert!(RealArray::vector(vec![1.0, f64::NAN]).is_err());
        assert!(RealArray::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(RealArray::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let mut p = ParamStore::new();
        p.init_weight("w", 3, 2, &mut rng).unwrap();
        let g = |t: &mut Tape, p: &ParamStore, i: &Inputs| {
            let x = t.bound(i, "x")?;
            let w = t.param(p, "w")?;
            let h = t.affine(x, w, None)?;
            let h = t.tanh(h);
            t.logsumexp_rows(h)
        };
        let a = evaluate(&g, &p, &x_input(&[0.25, -1.5])).unwrap();
        let b = evaluate(&g, &p, &x_input(&[0.25, -1.5])).unwrap();
        assert_eq!(a.item().to_bits(), b.item().to_bits());
    }
}
