//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::numcore::tape::{Graph, Var};
use crate::numcore::tensor::Tensor;

/// Denominator floor for relative errors, so that entries whose true gradient
/// is (near) zero are compared on an absolute scale of this size.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Elementwise comparison of two gradient estimates.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut rep = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: analytic.len(),
        tol,
        passed: true,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = relative_error(a, n);
        if rel > rep.max_rel_error || rel.is_nan() {
            rep.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            rep.worst_index = i;
        }
        rep.max_abs_error = rep.max_abs_error.max((a - n).abs());
    }
    rep.passed = rep.max_rel_error < tol;
    rep
}

/// Central differences of `f` at `x` along the listed coordinates.
pub fn central_differences(
    x: &[f64],
    indices: &[usize],
    step: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let fp = f(&probe)?;
            probe[i] = orig - step;
            let fm = f(&probe)?;
            probe[i] = orig;
            Ok((fp - fm) / (2.0 * step))
        })
        .collect()
}

fn eval_scalar<F>(f: &F, x: &Tensor, requires_grad: bool) -> Result<(Graph, Var, Var)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), requires_grad);
    let y = f(&mut g, xv)?;
    if g.value(y).len() != 1 {
        return Err(Error::dim(format!(
            "gradient check needs a scalar function, got shape {:?}",
            g.shape(y)
        )));
    }
    Ok((g, xv, y))
}

/// Compares the tape gradient of the scalar function `f` at `x` with central
/// finite differences over every entry of `x`.
///
/// `f` is evaluated twice at `x` first; differing bits mean `f` is not a pure
/// function of its input and the check is refused.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be > 0, got {step}")));
    }
    let (g, xv, y) = eval_scalar(&f, x, true)?;
    let (g2, _, y2) = eval_scalar(&f, x, false)?;
    let (v1, v2) = (g.value(y).item(), g2.value(y2).item());
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::Determinism(format!(
            "repeated evaluation differs: {v1:e} vs {v2:e}"
        )));
    }
    let analytic = g.backward(y)?.get_or_zeros(xv);
    let indices: Vec<usize> = (0..x.len()).collect();
    let numeric = central_differences(x.data(), &indices, step, |p| {
        let t = Tensor::new(x.shape(), p.to_vec())?;
        let (g, _, y) = eval_scalar(&f, &t, false)?;
        Ok(g.value(y).item())
    })?;
    Ok(compare_gradients(analytic.data(), &numeric, tol))
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let f = |g: &mut Graph, x: Var| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        };
        let (g, xv, y) = eval_scalar(&f, &x, true).unwrap();
        assert_eq!(g.backward(y).unwrap().data(xv).unwrap(), &[2.0, 4.0]);
        let rep = finite_diff_check(f, &x, 1e-5, 1e-6).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::vector(vec![0.7, -1.3, 2.0]);
        // Value is sum(x^2) but the recorded adjoint claims d/dx = x.
        let f = |g: &mut Graph, x: Var| {
            let xs = g.value(x).clone();
            let val = xs.data().iter().map(|v| v * v).sum();
            let xd = xs.into_data();
            Ok(g.custom(
                &[x],
                Tensor::scalar(val),
                Box::new(move |gy| vec![xd.iter().map(|v| gy[0] * v).collect()]),
            ))
        };
        let rep = finite_diff_check(f, &x, 1e-5, 1e-5).unwrap();
        assert!(!rep.passed);
        assert!((rep.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nondeterministic_function_is_refused() {
        let calls = Cell::new(0u32);
        let f = |g: &mut Graph, x: Var| {
            calls.set(calls.get() + 1);
            let s = g.sum(x);
            Ok(g.add_scalar(s, f64::from(calls.get())))
        };
        let err = finite_diff_check(f, &Tensor::vector(vec![1.0]), 1e-5, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Determinism(_)));
    }

    #[test]
    fn non_positive_step_is_usage_error() {
        let f = |g: &mut Graph, x: Var| Ok(g.sum(x));
        let err = finite_diff_check(f, &Tensor::vector(vec![1.0]), 0.0, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn random_matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let (bc, wc) = (b.clone(), w.clone());
        let wrt_a = move |g: &mut Graph, x: Var| {
            let bv = g.constant(bc.clone());
            let wv = g.constant(wc.clone());
            let y = g.matmul(x, bv)?;
            let y = g.mul(y, wv)?;
            Ok(g.sum(y))
        };
        assert!(finite_diff_check(wrt_a, &a, 1e-5, 1e-6).unwrap().passed);
        let wrt_b = move |g: &mut Graph, x: Var| {
            let av = g.constant(a.clone());
            let wv = g.constant(w.clone());
            let y = g.matmul(av, x)?;
            let y = g.mul(y, wv)?;
            Ok(g.sum(y))
        };
        assert!(finite_diff_check(wrt_b, &b, 1e-5, 1e-6).unwrap().passed);
    }
}
