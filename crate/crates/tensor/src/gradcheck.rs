//! Central finite differences, the oracle for every analytic gradient.

use crate::element::Element;
use crate::error::{arg_err, Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference estimate of ∂f/∂x for every coordinate of `x`.
pub fn finite_difference_grad<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<Tensor<T>>
where
    T: Element,
    F: Fn(&Tensor<T>) -> Result<T>,
{
    if !(step > T::zero()) {
        return Err(arg_err("finite_difference_grad", "step must be positive"));
    }
    let f0 = f(x)?;
    if !f0.is_finite() {
        return Err(TensorError::NonFinite(format!("f(x) = {f0}")));
    }
    let two_h = step + step;
    let mut probe = x.detached();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::NonFinite(format!(
                "f not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / two_h);
    }
    Tensor::from_vec(x.shape(), grad)
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), or the plain difference norm when both are
/// tiny.
pub fn relative_error<T: Element>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on unequal lengths");
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale < 1e-30 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck<T: Element> {
    pub analytic: Tensor<T>,
    pub numeric: Tensor<T>,
    pub relative_error: f64,
}

impl<T: Element> GradCheck<T> {
    pub fn passes(&self, rtol: f64) -> bool {
        self.relative_error <= rtol
    }
}

/// Compares the tape gradient of a scalar-valued function of one tensor
/// against central finite differences.
pub fn check_gradient<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<GradCheck<T>>
where
    T: Element,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.detached());
    let loss = f(&tape, xv.clone())?;
    let mut grads = tape.backward(&loss)?;
    let analytic = grads
        .take(&xv)
        .expect("leaf gradient is always populated after backward");
    let numeric = finite_difference_grad(
        |probe| {
            let tape = Tape::no_grad();
            let v = tape.constant(probe.detached());
            let out = f(&tape, v)?;
            if out.value().numel() != 1 {
                return Err(TensorError::NonScalarLoss(out.shape().to_vec()));
            }
            Ok(out.value().data()[0])
        },
        x,
        step,
    )?;
    let relative_error = relative_error(analytic.data(), numeric.data());
    Ok(GradCheck {
        analytic,
        numeric,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 5.0, 0.0, 7.5]).unwrap();
        let g = finite_difference_grad(|t| Ok(t.sum()), &x, 1e-4).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::<f64>::from_vec(&[1], vec![3.0]).unwrap();
        let g = finite_difference_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-4).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_value_is_rejected() {
        let x = Tensor::<f64>::from_vec(&[1], vec![0.0]).unwrap();
        let err = finite_difference_grad(|t| Ok(1.0 / t.data()[0]), &x, 1e-4).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite(_)));
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert!(relative_error(&[1.0f64, 2.0], &[1.0, 2.0]) == 0.0);
        let e1 = relative_error(&[1.0f64, 0.0], &[1.1, 0.0]);
        let e2 = relative_error(&[100.0f64, 0.0], &[110.0, 0.0]);
        assert!((e1 - e2).abs() < 1e-12);
    }
}
