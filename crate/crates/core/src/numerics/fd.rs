use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "objective not finite at coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let denom = na.max(nb).sqrt();
    if denom == 0.0 {
        return diff.sqrt();
    }
    diff.sqrt() / denom
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::from_vec(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.dot(t)), &x, 1e-4).unwrap();
        for (gi, expect) in g.data().iter().zip([2.0, 4.0, 6.0]) {
            assert!((gi - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_has_zero_gradient() {
        let x = Tensor::from_vec(1, 2, 2, vec![0.3, -1.0, 5.0, 2.0]).unwrap();
        let g = finite_diff_grad(|_| Ok(7.5), &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::filled(1, 1, 2, 1.0);
        let r = finite_diff_grad(|t| Ok(if t.data()[0] > 1.0 { f64::NAN } else { 0.0 }), &x, 1e-4);
        assert!(matches!(r, Err(Error::Numerical(_))));
        assert!(finite_diff_grad(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn rel_error_basics() {
        assert_eq!(rel_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((rel_error(&[1.0, 0.0], &[1.1, 0.0]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
