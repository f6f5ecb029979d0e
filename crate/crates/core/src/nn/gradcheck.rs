//! Central finite-difference gradient checking against analytic backward
//! passes. Loss functional: L = sum(y * probe) with a fixed random probe, so
//! dL/dy is the probe itself and any backward error shows up directly.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::tensor::Tensor;

/// Default FD step; central differences make the truncation error O(h^2).
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance used by every gradient check in the crate.
pub const FD_TOL: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha20Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

/// A probe vector for the linear loss functional.
pub fn random_probe(numel: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Asserts |got - want| <= tol * max(1, |got|, |want|) elementwise.
pub fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let scale = 1.0f64.max(g.abs()).max(w.abs());
        assert!(
            (g - w).abs() <= tol * scale,
            "{what}[{i}]: analytic {g} vs finite-difference {w} (scale {scale})"
        );
    }
}

/// Central finite differences of `f` with respect to `x`, one element at a
/// time. `f` must be a pure function of the buffer contents.
pub fn finite_difference(x: &mut Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let n = x.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let orig = x.data()[i];
        let h = FD_STEP * (1.0 + orig.abs());
        x.data_mut()[i] = orig + h;
        let up = f(x);
        x.data_mut()[i] = orig - h;
        let down = f(x);
        x.data_mut()[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}
