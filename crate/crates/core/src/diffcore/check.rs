use super::{evaluate, value_and_grad, Graph, Inputs, ParamStore};
use crate::error::{Error, Result};

/// Compares analytic parameter gradients with central differences.
///
/// For each named parameter array the relative error is
/// `‖a − c‖ / (‖a‖ + ‖c‖ + 1e-12)` (Euclidean norms over the array); the
/// maximum over parameters is returned.
pub fn finite_diff_check<G: Graph + ?Sized>(graph: &G, params: &ParamStore, inputs: &Inputs, step: f64) -> Result<f64> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::invalid(format!(
            "finite-difference step {step} not in (0, 1e-2]"
        )));
    }
    let (_, analytic) = value_and_grad(graph, params, inputs)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.value(&name)?.len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = params.value(&name)?.data()[i];
            probe.value_mut(&name)?.data_mut()[i] = orig + step;
            let plus = evaluate(graph, &probe, inputs)?.item();
            probe.value_mut(&name)?.data_mut()[i] = orig - step;
            let minus = evaluate(graph, &probe, inputs)?.item();
            probe.value_mut(&name)?.data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let zeros = vec![0.0; n];
        let a = analytic.get(&name).map(|g| g.data()).unwrap_or(&zeros);
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nc: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / (na + nc + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{RealArray, Tape};

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParamStore::new();
        p.insert("x", RealArray::vector(vec![0.7, -1.3, 2.2]).unwrap()).unwrap();
        let g = |t: &mut Tape, p: &ParamStore, _: &Inputs| {
            let x = t.param(p, "x")?;
            let d = t.row_dot(x, x)?;
            Ok(t.scale(d, 0.5))
        };
        let err = finite_diff_check(&g, &p, &Inputs::new(), 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        let g = |t: &mut Tape, _: &ParamStore, _: &Inputs| t.input(RealArray::scalar(1.0));
        assert!(finite_diff_check(&g, &ParamStore::new(), &Inputs::new(), 0.0).is_err());
        assert!(finite_diff_check(&g, &ParamStore::new(), &Inputs::new(), 0.1).is_err());
    }
}
