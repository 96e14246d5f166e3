//! Spatially-adaptive feature transform and the mask-fusion condition path.
//!
//! An SFT site computes a per-position affine pair (gamma, beta) from a
//! condition tensor and applies gamma ⊙ F + beta. Encoder-side conditions
//! come from the fused image+mask features, average-pooled to each site's
//! resolution; the decoder derives its conditions from the hyper-latent.

use super::{Conv2d, Init, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Two small convolutional heads mapping a condition tensor to the
/// modulated feature's channel count.
pub struct SftParams<T: Scalar> {
    pub gamma_head: Conv2d<T>,
    pub beta_head: Conv2d<T>,
}

impl<T: Scalar> SftParams<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, cond_channels: usize, feat_channels: usize) -> Self {
        let mut head = |suffix: &str, bias_init: f64| {
            let weight = ps.tensor(
                &format!("{name}.{suffix}.weight"),
                &[feat_channels, cond_channels, 3, 3],
                Init::XavierScaled {
                    fan_in: cond_channels * 9,
                    fan_out: feat_channels * 9,
                    scale: 0.1,
                },
            );
            let bias = ps.tensor(
                &format!("{name}.{suffix}.bias"),
                &[feat_channels],
                Init::Const(bias_init),
            );
            Conv2d {
                weight,
                bias,
                stride: 1,
                pad: 1,
            }
        };
        // near-identity at init: gamma ≈ 1, beta ≈ 0
        SftParams {
            gamma_head: head("gamma", 1.0),
            beta_head: head("beta", 0.0),
        }
    }

    /// gamma(condition) ⊙ feature + beta(condition); NCHW, condition must
    /// match the feature's spatial dims.
    pub fn apply(&self, feature: &Tensor<T>, condition: &Tensor<T>) -> Tensor<T> {
        let fs = feature.shape();
        let cs = condition.shape();
        assert!(
            fs.len() == 4 && cs.len() == 4 && fs[0] == cs[0] && fs[2] == cs[2] && fs[3] == cs[3],
            "sft: condition {cs:?} does not match feature {fs:?} spatially"
        );
        let gamma = self.gamma_head.forward(condition);
        let beta = self.beta_head.forward(condition);
        feature.mul(&gamma).add(&beta)
    }
}

/// Fusion of the input image and ROI mask into a shared condition feature.
pub struct MaskFusion<T: Scalar> {
    pub convs: Vec<Conv2d<T>>,
}

impl<T: Scalar> MaskFusion<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, depth: usize, cond_channels: usize) -> Self {
        assert!(depth >= 1, "mask fusion needs at least one conv");
        let mut convs = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_in = if i == 0 { 4 } else { cond_channels };
            convs.push(Conv2d::new(
                ps,
                &format!("{name}.conv{i}"),
                c_in,
                cond_channels,
                3,
                1,
                1,
            ));
        }
        MaskFusion { convs }
    }

    /// Concatenates mask onto the image (4 input channels) and applies the
    /// fusion convolutions with a pointwise
    /// nonlinearity between them.
    pub fn forward(&self, image: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        let is = image.shape();
        let ms = mask.shape();
        if is.len() != 4 || is[1] != 3 {
            return Err(Error::Dimension(format!(
                "mask fusion expects image [N,3,H,W], got {is:?}"
            )));
        }
        if ms.len() != 4 || ms[1] != 1 || ms[0] != is[0] || ms[2] != is[2] || ms[3] != is[3] {
            return Err(Error::Dimension(format!(
                "mask {ms:?} does not match image {is:?}"
            )));
        }
        validate_mask_range(mask)?;
        let mut x = Tensor::concat(&[image, mask], 1);
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x);
            if i + 1 < self.convs.len() {
                x = x.silu();
            }
        }
        Ok(x)
    }
}

pub fn validate_mask_range<T: Scalar>(mask: &Tensor<T>) -> Result<()> {
    let d = mask.data();
    if let Some(v) = d
        .iter()
        .find(|v| !(**v >= T::zero() && **v <= T::one()))
    {
        return Err(Error::Validation(format!(
            "mask value {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Ordered condition tensors, one per SFT site, each at that site's
/// spatial resolution.
pub struct ConditionPyramid<T: Scalar> {
    pub levels: Vec<Tensor<T>>,
    pub factors: Vec<usize>,
}

impl<T: Scalar> ConditionPyramid<T> {
    /// Average-pools the full-resolution fused condition down to each
    /// requested site factor.
    pub fn from_fused(fused: &Tensor<T>, factors: &[usize]) -> Self {
        let levels = factors.iter().map(|&f| fused.avg_pool2d(f)).collect();
        ConditionPyramid {
            levels,
            factors: factors.to_vec(),
        }
    }

    pub fn level(&self, i: usize) -> &Tensor<T> {
        &self.levels[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_identity_and_constant_heads() {
        let mut ps = ParamSet::<f64>::new(0);
        let sft = SftParams::new(&mut ps, "s", 2, 3);
        let f = Tensor::<f64>::from_vec(&[1, 3, 2, 2], (0..12).map(|v| v as f64).collect());
        let cond = Tensor::<f64>::from_vec(&[1, 2, 2, 2], vec![0.5; 8]);

        // gamma = 1, beta = 0 -> identity
        sft.gamma_head.weight.set_data(&vec![0.0; 3 * 2 * 9]);
        sft.gamma_head.bias.set_data(&[1.0, 1.0, 1.0]);
        sft.beta_head.weight.set_data(&vec![0.0; 3 * 2 * 9]);
        sft.beta_head.bias.set_data(&[0.0, 0.0, 0.0]);
        assert_eq!(sft.apply(&f, &cond).to_vec(), f.to_vec());

        // gamma = 0 -> output is beta everywhere
        sft.gamma_head.bias.set_data(&[0.0, 0.0, 0.0]);
        sft.beta_head.bias.set_data(&[2.5, -1.0, 0.0]);
        let y = sft.apply(&f, &cond).to_vec();
        assert_eq!(&y[0..4], &[2.5; 4]);
        assert_eq!(&y[4..8], &[-1.0; 4]);
        assert_eq!(&y[8..12], &[0.0; 4]);
    }

    #[test]
    fn strict_linearity_with_zero_beta() {
        let mut ps = ParamSet::<f64>::new(1);
        let sft = SftParams::new(&mut ps, "s", 2, 2);
        sft.beta_head.weight.set_data(&vec![0.0; 2 * 2 * 9]);
        sft.beta_head.bias.set_data(&[0.0, 0.0]);
        let cond = Tensor::<f64>::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f64 * 0.1).collect());
        let f1 = Tensor::<f64>::from_vec(&[1, 2, 2, 2], (0..8).map(|v| (v as f64).sin()).collect());
        let f2 = Tensor::<f64>::from_vec(&[1, 2, 2, 2], (0..8).map(|v| (v as f64).cos()).collect());
        let (a, b) = (2.0, -3.0);
        let lhs = sft.apply(&f1.mul_scalar(a).add(&f2.mul_scalar(b)), &cond).to_vec();
        let rhs: Vec<f64> = sft
            .apply(&f1, &cond)
            .mul_scalar(a)
            .add(&sft.apply(&f2, &cond).mul_scalar(b))
            .to_vec();
        for (l, r) in lhs.iter().zip(rhs) {
            assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_rejects_out_of_range_mask() {
        let mut ps = ParamSet::<f64>::new(0);
        let fusion = MaskFusion::new(&mut ps, "f", 2, 4);
        let img = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let bad = Tensor::<f64>::full(&[1, 1, 4, 4], 1.5);
        assert!(matches!(
            fusion.forward(&img, &bad),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_inputs_zero_bias_give_zero_pyramid() {
        let mut ps = ParamSet::<f64>::new(0);
        let fusion = MaskFusion::new(&mut ps, "f", 2, 4);
        for conv in &fusion.convs {
            conv.bias.set_data(&vec![0.0; conv.bias.numel()]);
        }
        let img = Tensor::<f64>::zeros(&[1, 3, 8, 8]);
        let mask = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        let fused = fusion.forward(&img, &mask).unwrap();
        let pyr = ConditionPyramid::from_fused(&fused, &[2, 4, 8]);
        for level in &pyr.levels {
            assert!(level.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn binary_mask_pools_to_roi_fractions() {
        let fused = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1., 1., 0., 0.]);
        let pyr = ConditionPyramid::from_fused(&fused, &[2]);
        assert_eq!(pyr.level(0).item(), 0.5);
    }
}
