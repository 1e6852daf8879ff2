//! Finite-difference helpers for the unit tests.

use rand::Rng;

use crate::rng;
use crate::tensor::{Real, Tensor};

pub fn random_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut r = rng::stream(seed, 0xfd, 0);
    Tensor::from_fn(shape, |_| T::of(r.random_range(-1.0..1.0)))
}

/// Central differences of `x ↦ ⟨r, f(x)⟩` at every element of `x`.
pub fn fd_gradient(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Tensor<f64>, r: &Tensor<f64>) -> Vec<f64> {
    let h = 1e-5;
    let dot = |y: &Tensor<f64>| -> f64 { y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (dot(&f(&plus)) - dot(&f(&minus))) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
