//! Generalized divisive normalization and its inverse.
//!
//! Forward: y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); the inverse
//! multiplies instead of dividing. Parameters are stored reparametrized so
//! the effective values stay valid under unconstrained optimization:
//! beta = beta_raw^2 + BETA_MIN, gamma = gamma_raw^2.

use super::{Init, ParamSet};
use crate::tensor::{Scalar, Tensor};

pub const BETA_MIN: f64 = 1e-6;

pub struct Gdn<T: Scalar> {
    pub beta_raw: Tensor<T>,  // [C]
    pub gamma_raw: Tensor<T>, // [C, C]
    pub inverse: bool,
    channels: usize,
}

impl<T: Scalar> Gdn<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, channels: usize, inverse: bool) -> Self {
        // effective beta starts at ~1, gamma at 0.1 on the diagonal
        let beta_raw = ps.tensor(&format!("{name}.beta_raw"), &[channels], Init::Ones);
        let gamma_raw = ps.tensor(
            &format!("{name}.gamma_raw"),
            &[channels, channels],
            Init::Zeros,
        );
        {
            let diag = T::from_f64(0.1f64.sqrt());
            let mut data = gamma_raw.to_vec();
            for i in 0..channels {
                data[i * channels + i] = diag;
            }
            gamma_raw.set_data(&data);
        }
        Gdn {
            beta_raw,
            gamma_raw,
            inverse,
            channels,
        }
    }

    /// Effective (beta, gamma) after reparametrization.
    pub fn effective(&self) -> (Tensor<T>, Tensor<T>) {
        let beta = self.beta_raw.square().add_scalar(BETA_MIN);
        let gamma = self.gamma_raw.square();
        (beta, gamma)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(
            x.shape()[1],
            self.channels,
            "gdn expects {} channels, got {:?}",
            self.channels,
            x.shape()
        );
        let (beta, gamma) = self.effective();
        // channel coupling as a 1x1 convolution over x^2
        let c = self.channels;
        let kernel = gamma.reshape(&[c, c, 1, 1]);
        let norm_sq = x.square().conv2d(&kernel, Some(&beta), 1, 0);
        let scale = norm_sq.sqrt();
        if self.inverse {
            x.mul(&scale)
        } else {
            x.div(&scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forced_gdn(channels: usize, beta: f64, gamma_diag: f64, inverse: bool) -> Gdn<f64> {
        let mut ps = ParamSet::<f64>::new(0);
        let gdn = Gdn::new(&mut ps, "g", channels, inverse);
        gdn.beta_raw
            .set_data(&vec![(beta - BETA_MIN).sqrt(); channels]);
        let mut gr = vec![0.0; channels * channels];
        for i in 0..channels {
            gr[i * channels + i] = gamma_diag.sqrt();
        }
        gdn.gamma_raw.set_data(&gr);
        gdn
    }

    #[test]
    fn identity_when_beta_one_gamma_zero() {
        let gdn = forced_gdn(2, 1.0, 0.0, false);
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], vec![1., -2., 3., 0.5, 0., 4., -1., 2.]);
        let y = gdn.forward(&x);
        for (a, b) in x.to_vec().iter().zip(y.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_channel_direct_value() {
        // x=2, beta=1, gamma=0.25 -> 2/sqrt(1 + 0.25*4) = sqrt(2)
        let gdn = forced_gdn(1, 1.0, 0.25, false);
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let y = gdn.forward(&x);
        assert!((y.item() - 1.41421356).abs() < 1e-6);
    }

    #[test]
    fn inverse_undoes_forward() {
        let fwd = forced_gdn(1, 0.7, 0.3, false);
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![1.5, -0.4]);
        let y = fwd.forward(&x);
        // igdn with the same parameters is not the exact functional inverse,
        // but for a single channel y*sqrt(beta+gamma*x^2) == x holds
        let (beta, gamma) = fwd.effective();
        let b = beta.item();
        let g = gamma.item();
        for (xi, yi) in x.to_vec().iter().zip(y.to_vec()) {
            assert!((yi * (b + g * xi * xi).sqrt() - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn output_finite_for_wild_inputs() {
        let mut ps = ParamSet::<f64>::new(3);
        let gdn = Gdn::new(&mut ps, "g", 4, false);
        let x = Tensor::<f64>::from_vec(
            &[1, 4, 1, 2],
            vec![1e12, -1e12, 0.0, 1e-30, 5.0, -5.0, 1e8, -1e-8],
        );
        assert!(gdn.forward(&x).is_finite());
    }
}
