//! Image+mask pair ingestion: pairing by filename stem, seeded crops,
//! seeded epoch shuffling.

use crate::data::{load_image_rgb, load_mask};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};

pub struct Batch<T: Scalar> {
    pub images: Tensor<T>, // [N,3,h,w] in [0,1]
    pub masks: Tensor<T>,  // [N,1,h,w] in [0,1]
    pub ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PairEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Scans two directories and pairs files by stem. Images without a mask
/// are reported (and skipped), not fatal.
pub fn scan_pairs(image_dir: &Path, mask_dir: &Path) -> Result<(Vec<PairEntry>, Vec<String>)> {
    let mut entries = Vec::new();
    let mut unmatched = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(image_dir)
        .map_err(|e| Error::io(image_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    for image_path in names {
        let stem = match image_path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        let mask_path = ["png", "pgm", "ppm"]
            .iter()
            .map(|ext| mask_dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file());
        match mask_path {
            Some(mask_path) => entries.push(PairEntry {
                id: stem,
                image_path,
                mask_path,
            }),
            None => unmatched.push(stem),
        }
    }
    Ok((entries, unmatched))
}

struct LoadedPair<T: Scalar> {
    id: String,
    image: Tensor<T>,
    mask: Tensor<T>,
}

/// In-memory dataset with seeded random crops and per-epoch shuffling.
pub struct Loader<T: Scalar> {
    pairs: Vec<LoadedPair<T>>,
    crop: usize,
    rng: ChaCha12Rng,
    order: Vec<usize>,
    cursor: usize,
    pub skipped_small: Vec<String>,
    pub skipped_unmatched: Vec<String>,
}

impl<T: Scalar> Loader<T> {
    pub fn from_dirs(image_dir: &Path, mask_dir: &Path, crop: usize, seed: u64) -> Result<Self> {
        let (entries, unmatched) = scan_pairs(image_dir, mask_dir)?;
        let mut pairs = Vec::new();
        let mut skipped_small = Vec::new();
        for e in entries {
            let image = load_image_rgb::<T>(&e.image_path)?;
            let mask = load_mask::<T>(&e.mask_path)?;
            let (h, w) = (image.shape()[2], image.shape()[3]);
            if mask.shape()[2] != h || mask.shape()[3] != w {
                return Err(Error::Validation(format!(
                    "mask dims for '{}' do not match its image",
                    e.id
                )));
            }
            if h < crop || w < crop {
                skipped_small.push(e.id);
                continue;
            }
            pairs.push(LoadedPair {
                id: e.id,
                image,
                mask,
            });
        }
        if pairs.is_empty() {
            return Err(Error::Validation(
                "dataset is empty after pairing and size filtering".into(),
            ));
        }
        Ok(Loader {
            pairs,
            crop,
            rng: ChaCha12Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            skipped_small,
            skipped_unmatched: unmatched,
        })
    }

    /// Builds a loader from in-memory pairs (used by synthetic runs).
    pub fn from_tensors(pairs: Vec<(String, Tensor<T>, Tensor<T>)>, crop: usize, seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        Ok(Loader {
            pairs: pairs
                .into_iter()
                .map(|(id, image, mask)| LoadedPair { id, image, mask })
                .collect(),
            crop,
            rng: ChaCha12Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            skipped_small: Vec::new(),
            skipped_unmatched: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.pairs.len() / batch_size
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.pairs.len()).collect();
        // Fisher-Yates with the loader's seeded stream
        for i in (1..self.order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.order.swap(i, j);
        }
        self.cursor = 0;
    }

    /// Next seeded batch of `batch_size` random crops; epochs reshuffle.
    pub fn next_batch(&mut self, batch_size: usize) -> Batch<T> {
        assert!(batch_size >= 1);
        let c = self.crop;
        let mut images = Vec::with_capacity(batch_size * 3 * c * c);
        let mut masks = Vec::with_capacity(batch_size * c * c);
        let mut ids = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if self.cursor >= self.order.len() {
                self.reshuffle();
            }
            let idx = self.order[self.cursor];
            self.cursor += 1;
            let pair = &self.pairs[idx];
            let (h, w) = (pair.image.shape()[2], pair.image.shape()[3]);
            let y0 = if h > c { self.rng.random_range(0..=h - c) } else { 0 };
            let x0 = if w > c { self.rng.random_range(0..=w - c) } else { 0 };
            let img = pair.image.to_vec();
            let msk = pair.mask.to_vec();
            for ch in 0..3 {
                for y in 0..c {
                    let base = (ch * h + y0 + y) * w + x0;
                    images.extend(img[base..base + c].iter().map(|v| *v));
                }
            }
            for y in 0..c {
                let base = (y0 + y) * w + x0;
                masks.extend(msk[base..base + c].iter().map(|v| *v));
            }
            ids.push(pair.id.clone());
        }
        Batch {
            images: Tensor::from_vec(&[batch_size, 3, c, c], images),
            masks: Tensor::from_vec(&[batch_size, 1, c, c], masks),
            ids,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_pair;

    fn synthetic_loader(n: usize, size: usize, crop: usize, seed: u64) -> Loader<f32> {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pairs = (0..n)
            .map(|i| {
                let (img, mask) = synth_pair::<f32>(&mut rng, size);
                (format!("img_{i:04}"), img, mask)
            })
            .collect();
        Loader::from_tensors(pairs, crop, seed).unwrap()
    }

    #[test]
    fn batches_per_epoch_division() {
        let loader = synthetic_loader(100, 64, 64, 0);
        assert_eq!(loader.batches_per_epoch(2), 50);
    }

    #[test]
    fn same_seed_same_crops() {
        let mut a = synthetic_loader(10, 96, 64, 4);
        let mut b = synthetic_loader(10, 96, 64, 4);
        for _ in 0..7 {
            let ba = a.next_batch(2);
            let bb = b.next_batch(2);
            assert_eq!(ba.images.to_vec(), bb.images.to_vec());
            assert_eq!(ba.masks.to_vec(), bb.masks.to_vec());
            assert_eq!(ba.ids, bb.ids);
        }
    }

    #[test]
    fn epoch_reshuffle_changes_order() {
        let mut l = synthetic_loader(8, 64, 64, 1);
        let e1: Vec<String> = (0..8).map(|_| l.next_batch(1).ids[0].clone()).collect();
        let e2: Vec<String> = (0..8).map(|_| l.next_batch(1).ids[0].clone()).collect();
        let mut s1 = e1.clone();
        let mut s2 = e2.clone();
        s1.sort();
        s2.sort();
        assert_eq!(s1, s2, "every image visited once per epoch");
        assert_ne!(e1, e2, "order reshuffles across epochs");
    }
}
