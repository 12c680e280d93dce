//! Dense tensors, convolution, activations, seeded randomness and the
//! finite-difference gradient oracle.

mod conv;
mod fd;
mod rng;
mod tensor;

pub use conv::{conv2d, Conv2d, Kernel};
pub use fd::{finite_diff_grad, max_abs_diff, rel_error};
pub use rng::Rng;
pub use tensor::Tensor;

/// Negative-side slope used by every leaky activation in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Elementwise `max(x, slope * x)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    debug_assert!((0.0..1.0).contains(&slope));
    x.map(|v| leaky_scalar(v, slope))
}

#[inline]
pub fn leaky_scalar(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

/// Derivative of [`leaky_scalar`] with respect to its input (1 at the kink).
#[inline]
pub fn leaky_grad(pre: f64, slope: f64) -> f64 {
    if pre >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Sequential left-to-right dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `log(sum(exp(v)))` with max-shift. Returns `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut acc = 0.0;
    for &x in v {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::from_vec(1, 1, 3, vec![0.0, -2.0, 3.0]).unwrap();
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] + 0.4).abs() < 1e-15);
        assert_eq!(y.data()[2], 3.0);
    }

    #[test]
    fn leaky_relu_matches_scalar_loop() {
        let mut rng = Rng::new(11);
        let x = Tensor::randn(2, 5, 7, &mut rng);
        let y = leaky_relu(&x, 0.1);
        for (a, b) in x.data().iter().zip(y.data()) {
            let expect = if *a > 0.1 * a { *a } else { 0.1 * a };
            assert_eq!(*b, expect);
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
