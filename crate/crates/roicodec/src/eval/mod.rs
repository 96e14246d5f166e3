//! Metrics and evaluation harness: PSNR, ROI PSNR, bpp accounting and
//! RD-curve CSV emission.

pub mod attention;

use crate::entropy::{inspect, write_bitstream};
use crate::error::{Error, Result};
use crate::model::CodecModel;
use crate::tensor::{NoGradGuard, Scalar, Tensor};
use std::io::Write;

/// Sentinel for infinite PSNR (identical inputs); keeps CSVs numeric.
pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_ROI_THRESHOLD: f64 = 0.5;

fn mse_all<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "psnr: shapes {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let xd = x.data();
    let yd = y.data();
    let mut acc = 0.0f64;
    for (a, b) in xd.iter().zip(yd.iter()) {
        let d = a.as_f64() - b.as_f64();
        acc += d * d;
    }
    Ok(acc / xd.len() as f64)
}

fn psnr_of_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// PSNR in dB on the [0,1] scale: 10·log10(1/MSE), capped at
/// [`PSNR_CAP`].
pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    Ok(psnr_of_mse(mse_all(x, y)?))
}

/// PSNR over the pixels selected by thresholding the mask at
/// `threshold` (selected: m >= threshold; inverted: m < threshold). All
/// channels of a selected pixel contribute.
pub fn region_psnr<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    mask: &Tensor<T>,
    threshold: f64,
    invert: bool,
) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "region_psnr: shapes {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let s = x.shape();
    if s.len() != 4 || mask.shape() != [s[0], 1, s[2], s[3]] {
        return Err(Error::Dimension(format!(
            "region_psnr: mask {:?} does not match image {s:?}",
            mask.shape()
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let xd = x.data();
    let yd = y.data();
    let md = mask.data();
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for ni in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let selected = md[(ni * h + yy) * w + xx].as_f64() >= threshold;
                if selected == invert {
                    continue;
                }
                for ci in 0..c {
                    let idx = ((ni * c + ci) * h + yy) * w + xx;
                    let d = xd[idx].as_f64() - yd[idx].as_f64();
                    acc += d * d;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyRoi);
    }
    Ok(psnr_of_mse(acc / (count * c) as f64))
}

/// PSNR over mask-positive pixels only.
pub fn roi_psnr<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    mask: &Tensor<T>,
    threshold: f64,
) -> Result<f64> {
    region_psnr(x, y, mask, threshold, false)
}

/// Total container bits (header + payloads) over the original pixels.
pub fn bpp_measure(total_bytes: usize, orig_h: usize, orig_w: usize) -> f64 {
    (total_bytes * 8) as f64 / (orig_h * orig_w) as f64
}

/// Coded evaluation of one image: serialize, decode from the quantized
/// latents, measure.
pub struct ImageEval {
    pub bpp: f64,
    pub psnr: f64,
    pub roi_psnr: f64,
    pub bg_psnr: f64,
}

pub fn evaluate_image<T: Scalar>(
    model: &CodecModel<T>,
    image: &Tensor<T>,
    mask: &Tensor<T>,
    threshold: f64,
) -> Result<ImageEval> {
    let _nograd = NoGradGuard::new();
    let (latents, _) = model.encode_latents(image, mask)?;
    let (bytes, y_hat, z_hat) = write_bitstream(model, &latents)?;
    let info = inspect(&bytes)?;
    let recon = model.decode_latents(&y_hat, &z_hat, latents.geometry)?;
    Ok(ImageEval {
        bpp: bpp_measure(info.total_bytes, info.orig_h, info.orig_w),
        psnr: psnr(image, &recon)?,
        roi_psnr: region_psnr(image, &recon, mask, threshold, false)?,
        bg_psnr: region_psnr(image, &recon, mask, threshold, true)?,
    })
}

/// Emits RD-curve rows `omega,image_id,bpp,psnr,roi_psnr,bg_psnr` for
/// every (model, image) pair, then one `mean` row per model. Output is
/// deterministic: models in the given order, images in the given order.
pub fn rd_curve_csv<T: Scalar>(
    models: &[(String, &CodecModel<T>)],
    corpus: &[(String, Tensor<T>, Tensor<T>)],
    threshold: f64,
    out: &mut dyn Write,
) -> Result<()> {
    if models.is_empty() {
        return Err(Error::Validation("rd_curve_csv needs at least one model".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Validation("rd_curve_csv needs a non-empty corpus".into()));
    }
    let mut w = |line: String| -> Result<()> {
        writeln!(out, "{line}").map_err(|e| Error::Other(e.to_string()))
    };
    w("omega,image_id,bpp,psnr,roi_psnr,bg_psnr".into())?;
    for (omega, model) in models {
        let mut sums = [0.0f64; 4];
        for (id, image, mask) in corpus {
            let e = evaluate_image(*model, image, mask, threshold)?;
            sums[0] += e.bpp;
            sums[1] += e.psnr;
            sums[2] += e.roi_psnr;
            sums[3] += e.bg_psnr;
            w(format!(
                "{omega},{id},{:.6},{:.4},{:.4},{:.4}",
                e.bpp, e.psnr, e.roi_psnr, e.bg_psnr
            ))?;
        }
        let n = corpus.len() as f64;
        w(format!(
            "{omega},mean,{:.6},{:.4},{:.4},{:.4}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            sums[3] / n
        ))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(vals: &[f64], h: usize, w: usize) -> Tensor<f64> {
        // replicate a single channel into three
        let mut data = Vec::with_capacity(3 * h * w);
        for _ in 0..3 {
            data.extend_from_slice(vals);
        }
        Tensor::from_vec(&[1, 3, h, w], data)
    }

    #[test]
    fn psnr_reference_points() {
        // MSE on the 255 scale of 65025 (= max) -> 0 dB
        let x = img(&[0.0; 4], 2, 2);
        let y = img(&[1.0; 4], 2, 2);
        assert_eq!(psnr(&x, &y).unwrap(), 0.0);

        // MSE_255 = 1 -> 48.13 dB
        let y2 = img(&[1.0 / 255.0; 4], 2, 2);
        let p = psnr(&x, &y2).unwrap();
        assert!((p - 48.1308).abs() < 1e-3, "got {p}");

        // identical -> sentinel
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_is_symmetric() {
        let x = img(&[0.1, 0.5, 0.9, 0.3], 2, 2);
        let y = img(&[0.2, 0.4, 0.8, 0.35], 2, 2);
        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    }

    #[test]
    fn roi_psnr_reference_case() {
        // four pixels with 255-scale errors [0,0,10,20]; mask selects the
        // last two: MSE_255 = 250 -> 24.15 dB
        let x = img(&[0.0; 4], 2, 2);
        let y = img(&[0.0, 0.0, 10.0 / 255.0, 20.0 / 255.0], 2, 2);
        let mask = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.0, 0.0, 1.0, 1.0]);
        let p = roi_psnr(&x, &y, &mask, 0.5).unwrap();
        assert!((p - 24.1514).abs() < 1e-3, "got {p}");
    }

    #[test]
    fn roi_psnr_all_ones_equals_psnr() {
        let x = img(&[0.1, 0.2, 0.3, 0.4], 2, 2);
        let y = img(&[0.15, 0.1, 0.35, 0.5], 2, 2);
        let ones = Tensor::<f64>::ones(&[1, 1, 2, 2]);
        assert_eq!(
            roi_psnr(&x, &y, &ones, 0.5).unwrap(),
            psnr(&x, &y).unwrap()
        );
    }

    #[test]
    fn empty_roi_is_an_error() {
        let x = img(&[0.0; 4], 2, 2);
        let zeros = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            roi_psnr(&x, &x, &zeros, 0.5),
            Err(Error::EmptyRoi)
        ));
    }

    #[test]
    fn bg_psnr_uses_inverted_selection() {
        let x = img(&[0.0; 4], 2, 2);
        let y = img(&[0.5, 0.0, 0.0, 0.0], 2, 2);
        let mask = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 1.0, 1.0]);
        // ROI pixels are perfect; all error sits in the background pixel
        assert_eq!(roi_psnr(&x, &y, &mask, 0.5).unwrap(), PSNR_CAP);
        let bg = region_psnr(&x, &y, &mask, 0.5, true).unwrap();
        assert!(bg < 20.0);
    }

    #[test]
    fn bpp_reference() {
        // 4096-bit container on 64x64 -> 1.0 bpp
        assert_eq!(bpp_measure(512, 64, 64), 1.0);
        // header-only container still counts
        assert!(bpp_measure(25, 64, 64) > 0.0);
    }
}
