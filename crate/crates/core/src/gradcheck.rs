//! Central finite differences and robust relative error.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, point: &Tensor, step: f64) -> Result<Tensor> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidArgument(alloc::format!("step must be positive, got {step}")));
    }
    let mut x = point.clone();
    let mut out = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let fp = f(&x);
        x.data_mut()[i] = orig - step;
        let fm = f(&x);
        x.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(alloc::format!("function value at coordinate {i}: f(x+h)={fp}, f(x-h)={fm}")));
        }
        out.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest coordinate-wise [`rel_err`] between two equal-shape tensors.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_err: shape mismatch");
    a.data().iter().zip(b.data()).fold(0.0, |m, (&x, &y)| m.max(rel_err(x, y)))
}

/// `||a - b||_F / max(||a||_F, ||b||_F, 1e-300)`.
pub fn frobenius_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.len(), b.len(), "frobenius_rel_err: size mismatch");
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let na = a.sq_norm();
    let nb = b.sq_norm();
    crate::math::sqrt(diff) / crate::math::sqrt(na.max(nb)).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|x| x.data()[0] * x.data()[0], &Tensor::scalar(3.0), 1e-4).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &Tensor::zeros(&[3, 2]), 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_values_rejected() {
        let r = finite_diff_grad(|x| 1.0 / x.data()[0].abs().min(0.0), &Tensor::scalar(1.0), 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn rel_err_floors_denominator() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1e-9, 0.0) - 0.1).abs() < 1e-15);
    }
}
