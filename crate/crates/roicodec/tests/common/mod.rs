//! Shared test utilities: central finite-difference gradient oracle.

#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use roicodec::tensor::{NoGradGuard, Tensor};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Central finite difference of `f` w.r.t. one coordinate of `param`.
pub fn finite_diff(param: &Tensor<f64>, idx: usize, f: &dyn Fn() -> f64, h: f64) -> f64 {
    let orig = param.value_at(idx);
    param.set_value(idx, orig + h);
    let fp = f();
    param.set_value(idx, orig - h);
    let fm = f();
    param.set_value(idx, orig);
    (fp - fm) / (2.0 * h)
}

/// Checks autodiff gradients of a scalar loss against central finite
/// differences on sampled coordinates of every listed parameter.
///
/// `build_loss` must rebuild the graph from the shared parameter leaves
/// each call. Returns the worst relative error seen.
pub fn check_gradients(
    params: &[(&str, Tensor<f64>)],
    build_loss: &dyn Fn() -> Tensor<f64>,
    samples_per_param: usize,
    seed: u64,
) -> f64 {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = build_loss();
    loss.backward().expect("backward failed");

    let eval = || {
        let _g = NoGradGuard::new();
        build_loss().item()
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (name, p) in params {
        let grad = p
            .grad()
            .unwrap_or_else(|| panic!("parameter {name} received no gradient"));
        let n = p.numel();
        let mut indices: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            (0..samples_per_param)
                .map(|_| rng.random_range(0..n))
                .collect()
        };
        indices.sort_unstable();
        indices.dedup();
        for idx in indices {
            let fd = finite_diff(p, idx, &eval, FD_STEP);
            let ad = grad[idx];
            let e = rel_err(ad, fd);
            assert!(
                e < FD_TOL,
                "gradient mismatch for {name}[{idx}]: autodiff {ad:.9e} vs fd {fd:.9e} (rel err {e:.3e})"
            );
            worst = worst.max(e);
        }
    }
    worst
}

/// Deterministic pseudo-random tensor data in [-scale, scale].
pub fn rand_vec(rng: &mut ChaCha12Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rand_param(rng: &mut ChaCha12Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, rand_vec(rng, n, scale))
}

pub fn rand_const(rng: &mut ChaCha12Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, rand_vec(rng, n, scale))
}
