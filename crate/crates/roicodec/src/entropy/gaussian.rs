//! Conditional Gaussian likelihood model for the main latent.

use super::coder::CdfTable;
use crate::tensor::{Scalar, Tensor};

/// Likelihood floor.
pub const EPS_P: f64 = 1e-9;
/// Scale floor applied by the reparameterization in the hyper-decoder.
pub const SIGMA_MIN: f64 = 0.01;
/// Gaussian support truncated at ±t·σ. The 2⁻¹⁶ tail-mass bound already
/// holds at t ≈ 4.2; the generous margin keeps tail clamping negligible
/// even when the σ head is miscalibrated against the actual residuals,
/// which is what keeps the rate estimate tracking the real payload.
pub const TAIL_T: f64 = 12.0;
/// Hard cap on the per-element support radius.
pub const MAX_RADIUS: usize = 1024;

/// p(ŷ) = Φ((ŷ+½−μ)/σ) − Φ((ŷ−½−μ)/σ), floored at [`EPS_P`].
pub fn gaussian_likelihood<T: Scalar>(
    y_hat: &Tensor<T>,
    mu: &Tensor<T>,
    sigma: &Tensor<T>,
) -> Tensor<T> {
    assert_eq!(y_hat.shape(), mu.shape(), "gaussian_likelihood: mu shape");
    assert_eq!(y_hat.shape(), sigma.shape(), "gaussian_likelihood: sigma shape");
    let centered = y_hat.sub(mu);
    let upper = centered.add_scalar(0.5).div(sigma).normal_cdf();
    let lower = centered.add_scalar(-0.5).div(sigma).normal_cdf();
    upper.sub(&lower).clamp_min(EPS_P)
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Integer support radius for a given scale.
pub fn support_radius(sigma: f64) -> usize {
    ((TAIL_T * sigma).ceil() as usize).clamp(1, MAX_RADIUS)
}

/// Quantized CDF table for a zero-mean Gaussian of scale `sigma` over
/// integer offsets `[-r, r]`; the extreme bins absorb both tails. Symbol
/// index k corresponds to offset `k - r`.
pub fn gaussian_table(sigma: f64) -> (usize, CdfTable) {
    let sigma = sigma.max(SIGMA_MIN);
    let r = support_radius(sigma);
    let n = 2 * r + 1;
    let mut pmf = Vec::with_capacity(n);
    for k in 0..n {
        let offset = k as f64 - r as f64;
        let p = if k == 0 {
            phi((offset + 0.5) / sigma)
        } else if k == n - 1 {
            1.0 - phi((offset - 0.5) / sigma)
        } else {
            phi((offset + 0.5) / sigma) - phi((offset - 0.5) / sigma)
        };
        pmf.push(p.max(0.0));
    }
    (r, CdfTable::from_pmf(&pmf))
}

/// Mean-centered quantization to the coder alphabet: returns the symbol
/// index and the dequantized value `clamp(round(y−μ), −r, r) + μ`.
pub fn quantize_to_symbol(y: f64, mu: f64, radius: usize) -> (u32, f64) {
    let res = (y - mu).round();
    let clamped = res.clamp(-(radius as f64), radius as f64);
    ((clamped + radius as f64) as u32, clamped + mu)
}

pub fn symbol_to_value(symbol: u32, mu: f64, radius: usize) -> f64 {
    (symbol as f64 - radius as f64) + mu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_center_probability() {
        // Φ(0.5) − Φ(−0.5) = 0.382925
        let y = Tensor::<f64>::zeros(&[1]);
        let mu = Tensor::<f64>::zeros(&[1]);
        let sigma = Tensor::<f64>::ones(&[1]);
        let p = gaussian_likelihood(&y, &mu, &sigma).item();
        assert!((p - 0.3829249).abs() < 1e-6);
        // its rate
        let bits = -p.log2();
        assert!((bits - 1.3851).abs() < 1e-3);
    }

    #[test]
    fn probability_decreases_with_scale_at_mode() {
        let y = Tensor::<f64>::zeros(&[1]);
        let mu = Tensor::<f64>::zeros(&[1]);
        let p1 = gaussian_likelihood(&y, &mu, &Tensor::ones(&[1])).item();
        let p10 = gaussian_likelihood(&y, &mu, &Tensor::full(&[1], 10.0)).item();
        assert!(p10 < p1);
    }

    #[test]
    fn likelihood_floor_applies_in_far_tail() {
        let y = Tensor::<f64>::from_vec(&[1], vec![1000.0]);
        let mu = Tensor::<f64>::zeros(&[1]);
        let sigma = Tensor::<f64>::ones(&[1]);
        let p = gaussian_likelihood(&y, &mu, &sigma).item();
        assert_eq!(p, EPS_P);
    }

    #[test]
    fn table_covers_tail_mass() {
        let (r, table) = gaussian_table(1.0);
        assert!(r >= 4);
        assert_eq!(table.num_symbols(), 2 * r + 1);
        // symmetric-ish center bin dominates
        assert!(table.freq(r) > table.freq(r + 1));
        assert!(table.freq(0) >= 1);
    }

    #[test]
    fn symbol_roundtrip_with_clamping() {
        let (s, v) = quantize_to_symbol(3.4, 0.25, 8);
        assert_eq!(s, (3.0f64 + 8.0) as u32);
        assert!((v - 3.25).abs() < 1e-12);
        assert!((symbol_to_value(s, 0.25, 8) - v).abs() < 1e-12);
        // out-of-support residual clamps into the tail bin
        let (s, v) = quantize_to_symbol(100.0, 0.0, 8);
        assert_eq!(s, 16);
        assert_eq!(v, 8.0);
    }
}
