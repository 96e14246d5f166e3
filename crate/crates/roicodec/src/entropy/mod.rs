//! Quantization, likelihood models, rate estimation and the range coder.

pub mod bitstream;
pub mod coder;
pub mod factorized;
pub mod gaussian;

pub use bitstream::{inspect, read_bitstream, write_bitstream, BitstreamInfo};
pub use coder::{range_decode, range_encode, CdfTable, FREQ_TOTAL};
pub use factorized::FactorizedPrior;
pub use gaussian::{gaussian_likelihood, gaussian_table, EPS_P, SIGMA_MIN};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::RngExt;
use rand_chacha::ChaCha12Rng;

/// Train/test quantization modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizeMode {
    /// Additive uniform noise U(-½, ½); training surrogate.
    Noise,
    /// Hard rounding (ties away from zero), detached from the tape.
    Round,
    /// Rounded forward, identity gradient.
    Ste,
}

/// Quantizes `values`, optionally mean-centered by `offset` in the
/// rounding modes.
pub fn quantize<T: Scalar>(
    values: &Tensor<T>,
    mode: QuantizeMode,
    offset: Option<&Tensor<T>>,
    rng: Option<&mut ChaCha12Rng>,
) -> Tensor<T> {
    match mode {
        QuantizeMode::Noise => {
            let rng = rng.expect("noise quantization needs an RNG");
            let noise: Vec<T> = (0..values.numel())
                .map(|_| T::from_f64(rng.random_range(-0.5..0.5)))
                .collect();
            values.add(&Tensor::from_vec(values.shape(), noise))
        }
        QuantizeMode::Round => match offset {
            Some(mu) => values.sub(mu).round_detached().add(&mu.detach()),
            None => values.round_detached(),
        },
        QuantizeMode::Ste => match offset {
            Some(mu) => values.sub(mu).round_ste().add(mu),
            None => values.round_ste(),
        },
    }
}

/// Total rate in bits: −Σ log₂ p over all provided likelihood tensors.
pub fn estimate_bits<T: Scalar>(likelihoods: &[&Tensor<T>]) -> Result<f64> {
    let mut bits = 0.0f64;
    for l in likelihoods {
        for v in l.data().iter() {
            let p = v.as_f64();
            if !(p > 0.0) {
                return Err(Error::Validation(format!(
                    "nonpositive likelihood {p} in rate estimate"
                )));
            }
            bits -= p.log2();
        }
    }
    Ok(bits)
}

/// Differentiable rate term (scalar tensor, units of bits).
pub fn estimate_bits_graph<T: Scalar>(likelihoods: &[&Tensor<T>]) -> Tensor<T> {
    let ln2_inv = 1.0 / std::f64::consts::LN_2;
    let mut total: Option<Tensor<T>> = None;
    for l in likelihoods {
        let term = l.ln().sum_all();
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    total
        .expect("estimate_bits_graph needs at least one tensor")
        .mul_scalar(-ln2_inv)
}
