//! Network layer vocabulary: parameter registry, linear/conv wrappers,
//! GDN, Swin attention blocks, patch resampling and SFT conditioning.

mod gdn;
mod patch;
mod sft;
mod swin;

pub use gdn::Gdn;
pub use patch::{PatchDownsample, PatchUpsample};
pub use sft::{validate_mask_range, ConditionPyramid, MaskFusion, SftParams};
pub use swin::{
    build_shift_mask, effective_window, window_merge, window_partition, AttentionRecord,
    SwinBlockPair, SwinBlockParams,
};

use crate::tensor::{Parameter, Scalar, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform(-limit, limit).
    Uniform(f64),
    /// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// Xavier scaled by an extra factor (used for near-identity heads).
    XavierScaled { fan_in: usize, fan_out: usize, scale: f64 },
}

/// Ordered registry of named parameters plus the seeded RNG used to
/// initialize them. Declaration order is the checkpoint order.
pub struct ParamSet<T: Scalar> {
    pub params: Vec<Parameter<T>>,
    rng: ChaCha12Rng,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(seed: u64) -> Self {
        ParamSet {
            params: Vec::new(),
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Const(v) => vec![T::from_f64(v); n],
            Init::Uniform(limit) => (0..n)
                .map(|_| T::from_f64(self.rng.random_range(-limit..limit)))
                .collect(),
            Init::Xavier { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(self.rng.random_range(-limit..limit)))
                    .collect()
            }
            Init::XavierScaled {
                fan_in,
                fan_out,
                scale,
            } => {
                let limit = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(self.rng.random_range(-limit..limit)))
                    .collect()
            }
        };
        let tensor = Tensor::param(shape, data);
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name: name.to_string(),
            tensor: tensor.clone(),
        });
        tensor
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}

/// Affine map over the last axis: `[..., in] -> [..., out]`.
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>, // [in, out]
    pub bias: Tensor<T>,   // [out]
}

impl<T: Scalar> Linear<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, dim_in: usize, dim_out: usize) -> Self {
        Linear {
            weight: ps.tensor(
                &format!("{name}.weight"),
                &[dim_in, dim_out],
                Init::Xavier {
                    fan_in: dim_in,
                    fan_out: dim_out,
                },
            ),
            bias: ps.tensor(&format!("{name}.bias"), &[dim_out], Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let shape = x.shape().to_vec();
        let dim_in = *shape.last().unwrap();
        let rows = x.numel() / dim_in;
        let dim_out = self.weight.shape()[1];
        let y = x
            .reshape(&[rows, dim_in])
            .matmul(&self.weight)
            .add(&self.bias);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = dim_out;
        y.reshape(&out_shape)
    }
}

/// 2D convolution layer (NCHW), zero padding.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>, // [out, in, k, k]
    pub bias: Tensor<T>,   // [out]
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            weight: ps.tensor(
                &format!("{name}.weight"),
                &[c_out, c_in, k, k],
                Init::Xavier {
                    fan_in: c_in * k * k,
                    fan_out: c_out * k * k,
                },
            ),
            bias: ps.tensor(&format!("{name}.bias"), &[c_out], Init::Zeros),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)
    }
}

/// Transposed 2D convolution layer (NCHW).
pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Tensor<T>, // [in, out, k, k]
    pub bias: Tensor<T>,   // [out]
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Self {
        ConvTranspose2d {
            weight: ps.tensor(
                &format!("{name}.weight"),
                &[c_in, c_out, k, k],
                Init::Xavier {
                    fan_in: c_in * k * k,
                    fan_out: c_out * k * k,
                },
            ),
            bias: ps.tensor(&format!("{name}.bias"), &[c_out], Init::Zeros),
            stride,
            pad,
            output_pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.conv_transpose2d(
            &self.weight,
            Some(&self.bias),
            self.stride,
            self.pad,
            self.output_pad,
        )
    }
}

/// Layer norm over the channel (last) axis.
pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: ps.tensor(&format!("{name}.gamma"), &[dim], Init::Ones),
            beta: ps.tensor(&format!("{name}.beta"), &[dim], Init::Zeros),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }
}
