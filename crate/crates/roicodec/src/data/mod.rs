//! Image I/O (PNG and binary PNM) and synthetic corpus generation.

pub mod synth;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::path::Path;

/// Loads an image as `[1, 3, H, W]` with values in [0, 1].
pub fn load_image_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = rgb.as_raw();
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] =
                    T::from_f64(raw[(y * w + x) * 3 + c] as f64 / 255.0);
            }
        }
    }
    Ok(Tensor::from_vec(&[1, 3, h, w], data))
}

/// Loads a single-channel mask as `[1, 1, H, W]`, scaled by 1/255.
pub fn load_mask<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let data: Vec<T> = gray
        .as_raw()
        .iter()
        .map(|&v| T::from_f64(v as f64 / 255.0))
        .collect();
    Ok(Tensor::from_vec(&[1, 1, h as usize, w as usize], data))
}

/// Saves `[1, 3, H, W]` values in [0, 1] as an 8-bit image; format from
/// the extension (png, ppm).
pub fn save_image_rgb<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let s = tensor.shape();
    assert!(s.len() == 4 && s[0] == 1 && s[1] == 3, "expected [1,3,H,W]");
    let (h, w) = (s[2], s[3]);
    let data = tensor.to_vec();
    let mut raw = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = data[(c * h + y) * w + x].as_f64().clamp(0.0, 1.0);
                raw[(y * w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer size matches dimensions");
    img.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Saves a `[H, W]` (or `[1,1,H,W]`) tensor as an 8-bit grayscale image,
/// mapping [0,1] to [0,255].
pub fn save_gray<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let s = tensor.shape().to_vec();
    let (h, w) = match s.len() {
        2 => (s[0], s[1]),
        4 if s[0] == 1 && s[1] == 1 => (s[2], s[3]),
        _ => panic!("expected [H,W] or [1,1,H,W], got {s:?}"),
    };
    let raw: Vec<u8> = tensor
        .to_vec()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer size matches dimensions");
    img.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_roundtrip_png() {
        let dir = std::env::temp_dir().join(format!("roicodec-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| (i % 256) as f32 / 255.0).collect();
        let t = Tensor::from_vec(&[1, 3, 4, 5], data);
        save_image_rgb(&path, &t).unwrap();
        let back = load_image_rgb::<f32>(&path).unwrap();
        assert_eq!(back.shape(), &[1, 3, 4, 5]);
        for (a, b) in t.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-6);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mask_scaling() {
        let dir = std::env::temp_dir().join(format!("roicodec-io2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.png");
        let img = image::GrayImage::from_raw(2, 1, vec![255u8, 128]).unwrap();
        img.save(&path).unwrap();
        let mask = load_mask::<f64>(&path).unwrap();
        let v = mask.to_vec();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 128.0 / 255.0).abs() < 1e-12);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn undecodable_file_is_an_error() {
        let dir = std::env::temp_dir().join(format!("roicodec-io3-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.png");
        std::fs::write(&path, b"not an image").unwrap();
        assert!(matches!(
            load_image_rgb::<f32>(&path),
            Err(Error::ImageDecode { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
