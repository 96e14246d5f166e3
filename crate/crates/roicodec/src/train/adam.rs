//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar};

pub struct OptimizerState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update over every parameter; gradients must be populated.
pub fn adam_step<T: Scalar>(
    params: &[Parameter<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    assert_eq!(params.len(), state.m.len(), "optimizer state mismatch");
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - state.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - state.beta2.powi(t));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(state.eps);

    for (i, p) in params.iter().enumerate() {
        let grad = p.tensor.grad().ok_or_else(|| {
            Error::Contract(format!("parameter {} has no gradient", p.name))
        })?;
        let mut data = p.tensor.to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..data.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] = data[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        p.tensor.set_data(&data);
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<T: Scalar>(params: &[Parameter<T>], max_norm: f64) {
    let mut total = 0.0f64;
    for p in params {
        if let Some(g) = p.tensor.grad() {
            for v in g {
                let v = v.as_f64();
                total += v * v;
            }
        }
    }
    let norm = total.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return;
    }
    let scale = T::from_f64(max_norm / norm);
    for p in params {
        if let Some(mut g) = p.tensor.grad() {
            for v in g.iter_mut() {
                *v = *v * scale;
            }
            p.tensor.zero_grad();
            p.tensor.accumulate_grad(&g);
        }
    }
}
