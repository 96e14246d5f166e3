//! Deterministic synthetic corpus: piecewise-smooth images (gradient
//! background plus a few solid shapes, no pixel noise) with rectangular
//! ROI masks.

use super::{save_gray, save_image_rgb};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

/// One synthetic image + rectangular ROI mask pair, values in [0, 1].
pub fn synth_pair<T: Scalar>(rng: &mut ChaCha12Rng, size: usize) -> (Tensor<T>, Tensor<T>) {
    let n = size;
    let mut rgb = vec![0.0f64; 3 * n * n];
    // flat background color; information lives at the shape boundaries
    let base: [f64; 3] = [
        rng.random_range(0.15..0.85),
        rng.random_range(0.15..0.85),
        rng.random_range(0.15..0.85),
    ];
    for c in 0..3 {
        for i in 0..n * n {
            rgb[c * n * n + i] = base[c];
        }
    }
    // solid rectangles and discs
    let shapes = rng.random_range(4..9usize);
    for _ in 0..shapes {
        let color: [f64; 3] = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        if rng.random_range(0.0..1.0f64) < 0.5 {
            let w = rng.random_range(n / 8..n / 2);
            let h = rng.random_range(n / 8..n / 2);
            let x0 = rng.random_range(0..n - w);
            let y0 = rng.random_range(0..n - h);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    for c in 0..3 {
                        rgb[(c * n + y) * n + x] = color[c];
                    }
                }
            }
        } else {
            let r = rng.random_range(n / 10..n / 4) as f64;
            let cx = rng.random_range(0..n) as f64;
            let cy = rng.random_range(0..n) as f64;
            for y in 0..n {
                for x in 0..n {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if d2 <= r * r {
                        for c in 0..3 {
                            rgb[(c * n + y) * n + x] = color[c];
                        }
                    }
                }
            }
        }
    }
    // rectangular ROI covering roughly 10-25% of the area
    let mut mask = vec![0.0f64; n * n];
    let rw = rng.random_range(n * 30 / 100..n * 55 / 100);
    let rh = rng.random_range(n * 30 / 100..n * 45 / 100);
    let rx = rng.random_range(0..n - rw);
    let ry = rng.random_range(0..n - rh);
    for y in ry..ry + rh {
        for x in rx..rx + rw {
            mask[y * n + x] = 1.0;
        }
    }
    (
        Tensor::from_vec(&[1, 3, n, n], rgb.iter().map(|&v| T::from_f64(v)).collect()),
        Tensor::from_vec(&[1, 1, n, n], mask.iter().map(|&v| T::from_f64(v)).collect()),
    )
}

/// Writes `count` image/mask pairs as PNG files named `img_####.png`
/// under the two directories.
pub fn generate_corpus(
    image_dir: &Path,
    mask_dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(image_dir).map_err(|e| Error::io(image_dir, e))?;
    std::fs::create_dir_all(mask_dir).map_err(|e| Error::io(mask_dir, e))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in 0..count {
        let (image, mask) = synth_pair::<f32>(&mut rng, size);
        let name = format!("img_{i:04}.png");
        save_image_rgb(&image_dir.join(&name), &image)?;
        save_gray(&mask_dir.join(&name), &mask)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_in_range_and_deterministic() {
        let mut rng1 = ChaCha12Rng::seed_from_u64(3);
        let mut rng2 = ChaCha12Rng::seed_from_u64(3);
        let (img1, m1) = synth_pair::<f32>(&mut rng1, 32);
        let (img2, m2) = synth_pair::<f32>(&mut rng2, 32);
        assert_eq!(img1.to_vec(), img2.to_vec());
        assert_eq!(m1.to_vec(), m2.to_vec());
        assert!(img1.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
        let area: f32 = m1.to_vec().iter().sum();
        assert!(area > 0.0 && area < (32 * 32) as f32);
    }
}
