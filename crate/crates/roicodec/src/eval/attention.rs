//! Attention-map extraction: per-query heatmaps from the window
//! attention weights of encoder, hyper and decoder blocks.

use crate::data::save_gray;
use crate::entropy::{quantize, QuantizeMode};
use crate::error::{Error, Result};
use crate::model::{CodecModel, Geometry};
use crate::nn::AttentionRecord;
use crate::tensor::{NoGradGuard, Scalar, Tensor};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Runs a full coding round (round quantization) and captures attention
/// weights at every MHSA instance, encoder and decoder side.
pub fn collect_attention<T: Scalar>(
    model: &CodecModel<T>,
    image: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<(Vec<AttentionRecord<T>>, Geometry)> {
    let _nograd = NoGradGuard::new();
    let mut trace = Vec::new();
    let (image_p, mask_p, geometry) = model.pad_inputs(image, mask)?;
    let (latents, _cond) =
        model.encode_latents_padded(&image_p, &mask_p, geometry, Some(&mut trace))?;
    let y_hat = quantize(&latents.y, QuantizeMode::Round, None, None);
    let z_hat = quantize(&latents.z, QuantizeMode::Round, None, None);
    let conds = model.decoder_conditions(&z_hat);
    let _ = model.entropy_params(&z_hat, &conds, None, Some(&mut trace));
    let _ = model.synthesis(&y_hat, &conds, Some(&mut trace));
    Ok((trace, geometry))
}

/// One extracted heatmap: the attention row of `query` in its window.
pub struct Heatmap {
    pub site: String,
    pub query: (usize, usize),
    /// Head index, or None for the head average.
    pub head: Option<usize>,
    pub window: usize,
    /// Row-major `window × window` attention weights; sums to 1.
    pub values: Vec<f64>,
}

/// Maps a pixel to (window index, token index) of a record's grid.
fn locate<T: Scalar>(
    rec: &AttentionRecord<T>,
    geometry: Geometry,
    px: usize,
    py: usize,
) -> (usize, usize) {
    let stride_y = geometry.padded_h / rec.feat_h;
    let stride_x = geometry.padded_w / rec.feat_w;
    let fy = (py / stride_y).min(rec.feat_h - 1);
    let fx = (px / stride_x).min(rec.feat_w - 1);
    // shifted blocks see the feature map rolled up-left by the shift
    let fy = (fy + rec.feat_h - rec.shift) % rec.feat_h;
    let fx = (fx + rec.feat_w - rec.shift) % rec.feat_w;
    let w = rec.window;
    let wins_x = rec.feat_w / w;
    let wi = (fy / w) * wins_x + fx / w;
    let tok = (fy % w) * w + (fx % w);
    (wi, tok)
}

/// Extracts per-head and head-averaged rows for every (site, query) pair.
pub fn extract_heatmaps<T: Scalar>(
    records: &[AttentionRecord<T>],
    geometry: Geometry,
    sites: &[String],
    queries: &[(usize, usize)],
) -> Result<Vec<Heatmap>> {
    let selected: Vec<&AttentionRecord<T>> = records
        .iter()
        .filter(|r| sites.iter().any(|s| s == "all" || r.site.starts_with(s.as_str())))
        .collect();
    if selected.is_empty() {
        return Err(Error::Validation(format!(
            "no attention sites match {sites:?}; available: {:?}",
            records.iter().map(|r| r.site.as_str()).collect::<Vec<_>>()
        )));
    }
    let mut maps = Vec::new();
    for rec in selected {
        let shape = rec.attn.shape().to_vec(); // [nW, heads, T, T]
        let (heads, t) = (shape[1], shape[2]);
        let data = rec.attn.to_vec();
        for &(px, py) in queries {
            if py >= geometry.padded_h || px >= geometry.padded_w {
                return Err(Error::Validation(format!(
                    "query ({px},{py}) outside image {}x{}",
                    geometry.padded_w, geometry.padded_h
                )));
            }
            let (wi, tok) = locate(rec, geometry, px, py);
            let mut avg = vec![0.0f64; t];
            for h in 0..heads {
                let base = ((wi * heads + h) * t + tok) * t;
                let row: Vec<f64> = data[base..base + t].iter().map(|v| v.as_f64()).collect();
                for (a, &v) in avg.iter_mut().zip(&row) {
                    *a += v / heads as f64;
                }
                maps.push(Heatmap {
                    site: rec.site.clone(),
                    query: (px, py),
                    head: Some(h),
                    window: rec.window,
                    values: row,
                });
            }
            maps.push(Heatmap {
                site: rec.site.clone(),
                query: (px, py),
                head: None,
                window: rec.window,
                values: avg,
            });
        }
    }
    Ok(maps)
}

/// Evenly spaced query grid (cell centers), e.g. 3×3 for nine fields.
pub fn query_grid(h: usize, w: usize, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut queries = Vec::with_capacity(rows * cols);
    for j in 0..rows {
        for i in 0..cols {
            queries.push((
                (2 * i + 1) * w / (2 * cols),
                (2 * j + 1) * h / (2 * rows),
            ));
        }
    }
    queries
}

/// Renders heatmaps as min-max normalized 8-bit grayscale PNGs plus raw
/// CSV values. Filenames encode (site, query, head). Returns the written
/// paths.
pub fn dump_heatmaps(maps: &[Heatmap], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for m in maps {
        let head = match m.head {
            Some(h) => format!("h{h}"),
            None => "avg".into(),
        };
        let stem = format!(
            "{}_q{}x{}_{}",
            m.site.replace('.', "-"),
            m.query.0,
            m.query.1,
            head
        );
        // raw values
        let csv_path = out_dir.join(format!("{stem}.csv"));
        {
            let mut f = std::fs::File::create(&csv_path)
                .map_err(|e| Error::io(&csv_path, e))?;
            for row in m.values.chunks(m.window) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
                writeln!(f, "{}", line.join(",")).map_err(|e| Error::io(&csv_path, e))?;
            }
        }
        // normalized grayscale
        let lo = m.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let norm: Vec<f64> = m.values.iter().map(|v| (v - lo) / span).collect();
        let png_path = out_dir.join(format!("{stem}.png"));
        save_gray(
            &png_path,
            &Tensor::<f64>::from_vec(&[m.window, m.window], norm),
        )?;
        written.push(csv_path);
        written.push(png_path);
    }
    Ok(written)
}
