//! Serialized bitstream container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//!   magic      4 bytes  "ROIC"
//!   version    u8       (1)
//!   orig_h     u32      original image height
//!   orig_w     u32      original image width
//!   model_hash u64      identity of the producing checkpoint
//!   z_len      u32      hyper-latent payload length, then that many bytes
//!   y_len      u32      main-latent payload length, then that many bytes
//!   crc32      u32      IEEE CRC-32 over every preceding byte
//! ```
//!
//! The hyper-latent is coded with the factorized prior's per-channel
//! tables; the decoder then re-derives the per-element Gaussian tables
//! from ẑ deterministically, so no mask and no entropy parameters are
//! stored. Symbols scan in NCHW raster order; with the checkerboard
//! context the y payload is a `u32` anchor-pass length followed by the
//! anchor and non-anchor passes, each covering its parity class in the
//! same raster order.

use super::coder::{range_decode, range_encode, CdfTable};
use super::gaussian::{gaussian_table, quantize_to_symbol, support_radius, symbol_to_value};
use crate::error::{Error, Result};
use crate::model::{CodecModel, ContextMode, Geometry, LatentPair};
use crate::tensor::{NoGradGuard, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"ROIC";
const VERSION: u8 = 1;

/// Parsed header of a serialized bitstream.
#[derive(Clone, Copy, Debug)]
pub struct BitstreamInfo {
    pub orig_h: usize,
    pub orig_w: usize,
    pub model_hash: u64,
    pub z_bytes: usize,
    pub y_bytes: usize,
    pub total_bytes: usize,
}

pub fn inspect(bytes: &[u8]) -> Result<BitstreamInfo> {
    if bytes.len() < 4 + 1 + 4 + 4 + 8 + 4 + 4 + 4 {
        return Err(Error::Bitstream("container too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Bitstream(format!(
            "crc mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    if &body[0..4] != MAGIC {
        return Err(Error::Bitstream("bad magic".into()));
    }
    if body[4] != VERSION {
        return Err(Error::Bitstream(format!("unsupported version {}", body[4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
    let orig_h = u32_at(5);
    let orig_w = u32_at(9);
    let model_hash = u64::from_le_bytes(body[13..21].try_into().unwrap());
    let z_len = u32_at(21);
    let y_off = 25 + z_len;
    if y_off + 4 > body.len() {
        return Err(Error::Bitstream("z payload overruns container".into()));
    }
    let y_len = u32_at(y_off);
    if y_off + 4 + y_len != body.len() {
        return Err(Error::Bitstream("y payload length mismatch".into()));
    }
    Ok(BitstreamInfo {
        orig_h,
        orig_w,
        model_hash,
        z_bytes: z_len,
        y_bytes: y_len,
        total_bytes: bytes.len(),
    })
}

/// Quantizes z against the prior's integer supports and encodes it.
/// Returns the payload and the dequantized ẑ values.
fn code_z<T: Scalar>(
    model: &CodecModel<T>,
    z: &Tensor<T>,
) -> Result<(Vec<u8>, Vec<T>)> {
    let s = z.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let channel_tables = model.prior.build_tables();
    let zd = z.to_vec();
    let mut symbols = Vec::with_capacity(zd.len());
    let mut tables: Vec<&CdfTable> = Vec::with_capacity(zd.len());
    let mut z_hat = Vec::with_capacity(zd.len());
    for ci in 0..c {
        let (lo, table) = &channel_tables[ci];
        let hi = lo + table.num_symbols() as i64 - 1;
        for idx in 0..h * w {
            let v = zd[ci * h * w + idx].as_f64();
            let q = (v.round() as i64).clamp(*lo, hi);
            symbols.push((q - lo) as u32);
            tables.push(table);
            z_hat.push(T::from_f64(q as f64));
        }
    }
    let payload = range_encode(&symbols, &tables)?;
    Ok((payload, z_hat))
}

fn decode_z<T: Scalar>(
    model: &CodecModel<T>,
    payload: &[u8],
    shape: &[usize],
) -> Result<Tensor<T>> {
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let channel_tables = model.prior.build_tables();
    let mut tables: Vec<&CdfTable> = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for _ in 0..h * w {
            tables.push(&channel_tables[ci].1);
        }
    }
    let symbols = range_decode(payload, &tables)?;
    let mut data = Vec::with_capacity(symbols.len());
    for (i, &s) in symbols.iter().enumerate() {
        let lo = channel_tables[i / (h * w)].0;
        data.push(T::from_f64((s as i64 + lo) as f64));
    }
    Ok(Tensor::from_vec(shape, data))
}

/// Indices of one checkerboard parity class in NCHW raster order.
fn parity_indices(c: usize, h: usize, w: usize, want_anchor: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                if ((i + j) % 2 == 0) == want_anchor {
                    out.push((ci * h + i) * w + j);
                }
            }
        }
    }
    out
}

/// Codes the listed y elements against their per-element Gaussian tables.
/// Fills `y_hat` with the dequantized (possibly tail-clamped) values.
fn code_y_subset<T: Scalar>(
    y: &[T],
    mu: &[T],
    sigma: &[T],
    indices: &[usize],
    y_hat: &mut [T],
) -> Result<Vec<u8>> {
    let mut symbols = Vec::with_capacity(indices.len());
    let mut tables = Vec::with_capacity(indices.len());
    for &i in indices {
        let (radius, table) = gaussian_table(sigma[i].as_f64());
        let (sym, value) = quantize_to_symbol(y[i].as_f64(), mu[i].as_f64(), radius);
        symbols.push(sym);
        tables.push(table);
        y_hat[i] = T::from_f64(value);
    }
    let refs: Vec<&CdfTable> = tables.iter().collect();
    range_encode(&symbols, &refs)
}

fn decode_y_subset<T: Scalar>(
    payload: &[u8],
    mu: &[T],
    sigma: &[T],
    indices: &[usize],
    y_hat: &mut [T],
) -> Result<()> {
    let mut tables = Vec::with_capacity(indices.len());
    let mut radii = Vec::with_capacity(indices.len());
    for &i in indices {
        let (radius, table) = gaussian_table(sigma[i].as_f64());
        radii.push(radius);
        tables.push(table);
    }
    let refs: Vec<&CdfTable> = tables.iter().collect();
    let symbols = range_decode(payload, &refs)?;
    for ((&i, &sym), &radius) in indices.iter().zip(&symbols).zip(&radii) {
        y_hat[i] = T::from_f64(symbol_to_value(sym, mu[i].as_f64(), radius));
    }
    Ok(())
}

/// Serializes one image's latents. Returns the container bytes and the
/// dequantized (ŷ, ẑ) actually coded, which the caller must use for any
/// reconstruction to stay bit-consistent with the decoder.
pub fn write_bitstream<T: Scalar>(
    model: &CodecModel<T>,
    latents: &LatentPair<T>,
) -> Result<(Vec<u8>, Tensor<T>, Tensor<T>)> {
    let _nograd = NoGradGuard::new();
    let geometry = latents.geometry;
    if geometry.batch != 1 {
        return Err(Error::Validation(
            "bitstreams hold a single image (batch of 1)".into(),
        ));
    }
    let (z_payload, z_hat_data) = code_z(model, &latents.z)?;
    let z_hat = Tensor::from_vec(latents.z.shape(), z_hat_data);

    let conds = model.decoder_conditions(&z_hat);
    let ys = latents.y.shape().to_vec();
    let (c, h, w) = (ys[1], ys[2], ys[3]);
    let yd = latents.y.to_vec();
    let mut y_hat_data = vec![T::zero(); yd.len()];

    let y_payload = match model.config.context_mode {
        ContextMode::None => {
            let (mu, sigma) = model.entropy_params(&z_hat, &conds, None, None);
            let all: Vec<usize> = (0..yd.len()).collect();
            code_y_subset(&yd, &mu.to_vec(), &sigma.to_vec(), &all, &mut y_hat_data)?
        }
        ContextMode::Checkerboard => {
            let anchors = parity_indices(c, h, w, true);
            let non_anchors = parity_indices(c, h, w, false);
            let (mu0, sigma0) = model.entropy_params(&z_hat, &conds, None, None);
            let anchor_payload = code_y_subset(
                &yd,
                &mu0.to_vec(),
                &sigma0.to_vec(),
                &anchors,
                &mut y_hat_data,
            )?;
            let y_anchor_only = Tensor::from_vec(&ys, y_hat_data.clone());
            let (mu1, sigma1) =
                model.entropy_params(&z_hat, &conds, Some(&y_anchor_only), None);
            let rest_payload = code_y_subset(
                &yd,
                &mu1.to_vec(),
                &sigma1.to_vec(),
                &non_anchors,
                &mut y_hat_data,
            )?;
            let mut payload =
                Vec::with_capacity(4 + anchor_payload.len() + rest_payload.len());
            payload.extend_from_slice(&(anchor_payload.len() as u32).to_le_bytes());
            payload.extend_from_slice(&anchor_payload);
            payload.extend_from_slice(&rest_payload);
            payload
        }
    };
    let y_hat = Tensor::from_vec(&ys, y_hat_data);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(geometry.orig_h as u32).to_le_bytes());
    buf.extend_from_slice(&(geometry.orig_w as u32).to_le_bytes());
    buf.extend_from_slice(&model.model_hash().to_le_bytes());
    buf.extend_from_slice(&(z_payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(&z_payload);
    buf.extend_from_slice(&(y_payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(&y_payload);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok((buf, y_hat, z_hat))
}

/// Inverts [`write_bitstream`]: exact (ŷ, ẑ, geometry), verifying magic,
/// version, CRC and the model hash.
pub fn read_bitstream<T: Scalar>(
    model: &CodecModel<T>,
    bytes: &[u8],
) -> Result<(Tensor<T>, Tensor<T>, Geometry)> {
    let _nograd = NoGradGuard::new();
    let info = inspect(bytes)?;
    let expected = model.model_hash();
    if info.model_hash != expected {
        return Err(Error::HashMismatch {
            bitstream: info.model_hash,
            model: expected,
        });
    }
    let geometry = Geometry::for_input(1, info.orig_h, info.orig_w);
    let (zh, zw) = geometry.z_spatial();
    let (yh, yw) = geometry.y_spatial();
    let cz = model.config.hyper_latent_channels;
    let cy = model.config.latent_channels;

    let z_payload = &bytes[25..25 + info.z_bytes];
    let y_payload = &bytes[25 + info.z_bytes + 4..25 + info.z_bytes + 4 + info.y_bytes];

    let z_hat = decode_z(model, z_payload, &[1, cz, zh, zw])?;
    let conds = model.decoder_conditions(&z_hat);
    let mut y_hat_data = vec![T::zero(); cy * yh * yw];
    match model.config.context_mode {
        ContextMode::None => {
            let (mu, sigma) = model.entropy_params(&z_hat, &conds, None, None);
            let all: Vec<usize> = (0..y_hat_data.len()).collect();
            decode_y_subset(y_payload, &mu.to_vec(), &sigma.to_vec(), &all, &mut y_hat_data)?;
        }
        ContextMode::Checkerboard => {
            if y_payload.len() < 4 {
                return Err(Error::Bitstream("missing anchor pass length".into()));
            }
            let anchor_len =
                u32::from_le_bytes(y_payload[0..4].try_into().unwrap()) as usize;
            if 4 + anchor_len > y_payload.len() {
                return Err(Error::Bitstream("anchor pass overruns payload".into()));
            }
            let anchors = parity_indices(cy, yh, yw, true);
            let non_anchors = parity_indices(cy, yh, yw, false);
            let (mu0, sigma0) = model.entropy_params(&z_hat, &conds, None, None);
            decode_y_subset(
                &y_payload[4..4 + anchor_len],
                &mu0.to_vec(),
                &sigma0.to_vec(),
                &anchors,
                &mut y_hat_data,
            )?;
            let y_anchor_only = Tensor::from_vec(&[1, cy, yh, yw], y_hat_data.clone());
            let (mu1, sigma1) =
                model.entropy_params(&z_hat, &conds, Some(&y_anchor_only), None);
            decode_y_subset(
                &y_payload[4 + anchor_len..],
                &mu1.to_vec(),
                &sigma1.to_vec(),
                &non_anchors,
                &mut y_hat_data,
            )?;
        }
    }
    let y_hat = Tensor::from_vec(&[1, cy, yh, yw], y_hat_data);
    Ok((y_hat, z_hat, geometry))
}

/// Rate estimate in bits of the values actually coded by
/// [`write_bitstream`], from the continuous likelihood models.
pub fn estimate_coded_bits<T: Scalar>(
    model: &CodecModel<T>,
    y_hat: &Tensor<T>,
    z_hat: &Tensor<T>,
) -> Result<f64> {
    let _nograd = NoGradGuard::new();
    let p_z = model.prior.likelihood(z_hat);
    let conds = model.decoder_conditions(z_hat);
    let y_ctx = match model.config.context_mode {
        ContextMode::None => None,
        ContextMode::Checkerboard => Some(y_hat),
    };
    // NOTE: with checkerboard context this mixes anchor positions (whose
    // real parameters are hyper-only) with refined ones; anchors' deltas
    // are masked out inside entropy_params, so the estimate is exact.
    let (mu, sigma) = model.entropy_params(z_hat, &conds, y_ctx, None);
    let p_y = super::gaussian_likelihood(y_hat, &mu, &sigma);
    super::estimate_bits(&[&p_y, &p_z])
}

pub fn support_radius_for_sigma(sigma: f64) -> usize {
    support_radius(sigma)
}
