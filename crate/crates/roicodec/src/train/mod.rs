//! Spatially weighted rate-distortion training.

mod adam;
mod config;
pub mod dataset;

pub use adam::{adam_step, clip_global_norm, OptimizerState};
pub use config::{load_train_config, parse_train_config, ModelPreset, Precision, TrainConfig};
pub use dataset::{scan_pairs, Batch, Loader};

use crate::entropy::{estimate_bits_graph, gaussian_likelihood, quantize, QuantizeMode};
use crate::error::{Error, Result};
use crate::model::{lambda_map, CodecModel, Geometry};
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;

/// L = (1/n_pixels)·Σᵢ λᵢ·(xᵢ−x̃ᵢ)² + bits/n_pixels, with the per-pixel
/// squared error averaged over channels. `bits` is a scalar tensor so the
/// rate term stays differentiable; wrap plain values with
/// [`Tensor::scalar`].
pub fn rd_loss<T: Scalar>(
    x: &Tensor<T>,
    x_rec: &Tensor<T>,
    lmap: &Tensor<T>,
    bits: &Tensor<T>,
    n_pixels: usize,
) -> Tensor<T> {
    let (d, r) = rd_loss_parts(x, x_rec, lmap, bits, n_pixels);
    d.add(&r)
}

/// The two addends of [`rd_loss`]: (weighted distortion, bpp rate term).
pub fn rd_loss_parts<T: Scalar>(
    x: &Tensor<T>,
    x_rec: &Tensor<T>,
    lmap: &Tensor<T>,
    bits: &Tensor<T>,
    n_pixels: usize,
) -> (Tensor<T>, Tensor<T>) {
    assert_eq!(x.shape(), x_rec.shape(), "rd_loss: shape mismatch");
    let s = x.shape();
    assert_eq!(s.len(), 4, "rd_loss expects NCHW");
    assert_eq!(
        lmap.shape(),
        &[s[0], 1, s[2], s[3]],
        "rd_loss: λ-map must be [N,1,H,W]"
    );
    assert!(bits.numel() == 1, "rd_loss: bits must be scalar");
    let channels = s[1];
    let sq = x.sub(x_rec).square();
    let mut per_pixel = sq.narrow(1, 0, 1);
    for c in 1..channels {
        per_pixel = per_pixel.add(&sq.narrow(1, c, 1));
    }
    per_pixel = per_pixel.mul_scalar(1.0 / channels as f64);
    let inv_n = 1.0 / n_pixels as f64;
    let distortion = per_pixel.mul(lmap).sum_all().mul_scalar(inv_n);
    let rate = bits.mul_scalar(inv_n);
    (distortion, rate)
}

#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub weighted_d: f64,
    pub bpp: f64,
}

fn tensor_stats<T: Scalar>(name: &str, t: &Tensor<T>) -> String {
    let d = t.data();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut bad = 0usize;
    for v in d.iter() {
        let v = v.as_f64();
        if !v.is_finite() {
            bad += 1;
        } else {
            min = min.min(v);
            max = max.max(v);
        }
    }
    format!("{name}[min {min:.3e}, max {max:.3e}, non-finite {bad}/{}]", d.len())
}

/// One optimization step with an explicit λ-map. Returns loss terms; the
/// model parameters and optimizer state are updated in place.
pub fn train_step_with_lambda<T: Scalar>(
    model: &CodecModel<T>,
    batch: &Batch<T>,
    lmap: &Tensor<T>,
    lr: f64,
    grad_clip: Option<f64>,
    opt: &mut OptimizerState<T>,
    rng: &mut ChaCha12Rng,
) -> Result<StepMetrics> {
    let s = batch.images.shape();
    let geometry = Geometry::for_input(s[0], s[2], s[3]);
    if geometry.padded_h != s[2] || geometry.padded_w != s[3] {
        return Err(Error::Validation(format!(
            "training crops must be multiples of {}, got {}x{}",
            crate::model::PAD_MULTIPLE,
            s[2],
            s[3]
        )));
    }
    let (latents, _cond) =
        model.encode_latents_padded(&batch.images, &batch.masks, geometry, None)?;
    let y_noisy = quantize(&latents.y, QuantizeMode::Noise, None, Some(rng));
    let z_noisy = quantize(&latents.z, QuantizeMode::Noise, None, Some(rng));
    let p_z = model.prior.likelihood(&z_noisy);
    let conds = model.decoder_conditions(&z_noisy);
    let y_ctx = if model.config.context_mode == crate::model::ContextMode::Checkerboard {
        Some(&y_noisy)
    } else {
        None
    };
    let (mu, sigma) = model.entropy_params(&z_noisy, &conds, y_ctx, None);
    let p_y = gaussian_likelihood(&y_noisy, &mu, &sigma);
    let recon = model.synthesis(&y_noisy, &conds, None);

    let n_pixels = s[0] * s[2] * s[3];
    let bits = estimate_bits_graph(&[&p_y, &p_z]);
    let (distortion, rate) = rd_loss_parts(&batch.images, &recon, lmap, &bits, n_pixels);
    let loss = distortion.add(&rate);

    let loss_v = loss.item().as_f64();
    if !loss_v.is_finite() {
        return Err(Error::NonFinite {
            step: opt.step,
            diagnostic: [
                tensor_stats("y", &latents.y),
                tensor_stats("z", &latents.z),
                tensor_stats("mu", &mu),
                tensor_stats("sigma", &sigma),
                tensor_stats("p_y", &p_y),
                tensor_stats("p_z", &p_z),
                tensor_stats("recon", &recon),
            ]
            .join(", "),
        });
    }

    for p in model.named_params() {
        p.tensor.zero_grad();
    }
    loss.backward()?;
    if let Some(max_norm) = grad_clip {
        clip_global_norm(model.named_params(), max_norm);
    }
    adam_step(model.named_params(), opt, lr)?;

    Ok(StepMetrics {
        step: opt.step,
        loss: loss_v,
        weighted_d: distortion.item().as_f64(),
        bpp: bits.item().as_f64() / n_pixels as f64,
    })
}

/// One optimization step: λ-map from the batch masks.
pub fn train_step<T: Scalar>(
    model: &CodecModel<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    opt: &mut OptimizerState<T>,
    rng: &mut ChaCha12Rng,
) -> Result<StepMetrics> {
    let lmap = lambda_map(&batch.masks, cfg.alpha, cfg.omega)?;
    train_step_with_lambda(model, batch, &lmap, cfg.lr, cfg.grad_clip, opt, rng)
}

/// Runs `cfg.steps` optimization steps, streaming one CSV row per step
/// (`step,loss,weighted_d,bpp`) when a writer is given.
pub fn train_loop<T: Scalar>(
    model: &CodecModel<T>,
    loader: &mut Loader<T>,
    cfg: &TrainConfig,
    mut metrics_out: Option<&mut dyn Write>,
) -> Result<Vec<StepMetrics>> {
    let mut opt = OptimizerState::new(model.named_params());
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9));
    let mut history = Vec::with_capacity(cfg.steps as usize);
    if let Some(w) = metrics_out.as_deref_mut() {
        writeln!(w, "step,loss,weighted_d,bpp").map_err(|e| Error::Other(e.to_string()))?;
    }
    for _ in 0..cfg.steps {
        let batch = loader.next_batch(cfg.batch_size);
        let m = train_step(model, &batch, cfg, &mut opt, &mut rng)?;
        if let Some(w) = metrics_out.as_deref_mut() {
            writeln!(w, "{},{:.6},{:.6},{:.6}", m.step, m.loss, m.weighted_d, m.bpp)
                .map_err(|e| Error::Other(e.to_string()))?;
        }
        history.push(m);
    }
    Ok(history)
}

/// Full training run from a parsed config: builds the model, loads the
/// dataset, trains and writes the checkpoint (and optional metrics CSV).
pub fn run_training(cfg: &TrainConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => run_training_t::<f32>(cfg),
        Precision::F64 => run_training_t::<f64>(cfg),
    }
}

fn run_training_t<T: Scalar>(cfg: &TrainConfig) -> Result<()> {
    if cfg.image_dir.is_empty() || cfg.mask_dir.is_empty() {
        return Err(Error::Validation(
            "train config needs image_dir and mask_dir".into(),
        ));
    }
    let model_cfg = cfg.preset.build(cfg.seed, cfg.context_mode);
    let model = CodecModel::<T>::new(model_cfg)?;
    let mut loader = Loader::<T>::from_dirs(
        std::path::Path::new(&cfg.image_dir),
        std::path::Path::new(&cfg.mask_dir),
        cfg.crop,
        cfg.seed,
    )?;
    for id in &loader.skipped_unmatched {
        eprintln!("warning: no mask for image '{id}', skipped");
    }
    for id in &loader.skipped_small {
        eprintln!("warning: image '{id}' smaller than crop, skipped");
    }
    let mut csv_file = match &cfg.metrics_csv {
        Some(p) => Some(
            std::fs::File::create(p).map_err(|e| Error::io(std::path::Path::new(p), e))?,
        ),
        None => None,
    };
    let history = train_loop(
        &model,
        &mut loader,
        cfg,
        csv_file.as_mut().map(|f| f as &mut dyn Write),
    )?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained {} steps: loss {:.4}, weighted_d {:.4}, bpp {:.4}",
            last.step, last.loss, last.weighted_d, last.bpp
        );
    }
    let mut meta = crate::model::checkpoint::Metadata::new();
    meta.insert("train_alpha".into(), format!("{}", cfg.alpha));
    meta.insert("train_omega".into(), format!("{}", cfg.omega));
    meta.insert("train_lr".into(), format!("{}", cfg.lr));
    meta.insert("train_steps".into(), format!("{}", cfg.steps));
    meta.insert("train_seed".into(), format!("{}", cfg.seed));
    crate::model::checkpoint::save(&model, &meta, std::path::Path::new(&cfg.out_model))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rd_loss_direct_evaluation() {
        // uniform m=0 (λ=65.025), per-pixel MSE 0.001, rate 0.5 bpp
        let n = 4;
        let x = Tensor::<f64>::zeros(&[1, 3, n, n]);
        let err = (0.001f64).sqrt();
        let rec = Tensor::<f64>::full(&[1, 3, n, n], err);
        let mask = Tensor::<f64>::zeros(&[1, 1, n, n]);
        let lmap = lambda_map(&mask, 0.001, 5.0).unwrap();
        let bits = Tensor::<f64>::scalar(0.5 * (n * n) as f64);
        let loss = rd_loss(&x, &rec, &lmap, &bits, n * n).item();
        assert!((loss - 0.565025).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn perfect_reconstruction_zero_rate_is_zero() {
        let x = Tensor::<f64>::full(&[1, 3, 2, 2], 0.7);
        let lmap = Tensor::<f64>::full(&[1, 1, 2, 2], 65.025);
        let loss = rd_loss(&x, &x, &lmap, &Tensor::scalar(0.0), 4).item();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn omega_increase_raises_roi_distortion_term() {
        // error only inside the ROI: doubling ω strictly increases L
        let n = 4;
        let x = Tensor::<f64>::zeros(&[1, 3, n, n]);
        let mut rec_data = vec![0.0; 3 * n * n];
        for c in 0..3 {
            rec_data[c * n * n] = 0.1; // error at pixel (0,0)
        }
        let rec = Tensor::<f64>::from_vec(&[1, 3, n, n], rec_data);
        let mut mask_data = vec![0.0; n * n];
        mask_data[0] = 1.0;
        let mask = Tensor::<f64>::from_vec(&[1, 1, n, n], mask_data);
        let at = |omega: f64| {
            let lmap = lambda_map(&mask, 0.001, omega).unwrap();
            rd_loss(&x, &rec, &lmap, &Tensor::scalar(0.0), n * n).item()
        };
        assert!(at(6.0) > at(3.0));
    }

    #[test]
    fn loss_invariant_under_batch_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let (img0, m0) = crate::data::synth::synth_pair::<f64>(&mut rng, 8);
        let (img1, m1) = crate::data::synth::synth_pair::<f64>(&mut rng, 8);
        let cat = |a: &Tensor<f64>, b: &Tensor<f64>| Tensor::concat(&[a, b], 0);
        let x_ab = cat(&img0, &img1);
        let x_ba = cat(&img1, &img0);
        let rec_ab = x_ab.mul_scalar(0.9);
        let rec_ba = x_ba.mul_scalar(0.9);
        let lm_ab = lambda_map(&cat(&m0, &m1), 0.001, 5.0).unwrap();
        let lm_ba = lambda_map(&cat(&m1, &m0), 0.001, 5.0).unwrap();
        let bits = Tensor::<f64>::scalar(123.0);
        let a = rd_loss(&x_ab, &rec_ab, &lm_ab, &bits, 128).item();
        let b = rd_loss(&x_ba, &rec_ba, &lm_ba, &bits, 128).item();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rd_loss_gradient_matches_finite_differences() {
        let n = 4;
        let x = Tensor::<f64>::from_vec(
            &[1, 3, n, n],
            (0..3 * n * n).map(|i| (i as f64 * 0.37).sin().abs() * 0.8).collect(),
        );
        let rec = Tensor::<f64>::param(
            &[1, 3, n, n],
            (0..3 * n * n).map(|i| (i as f64 * 0.21).cos().abs() * 0.8).collect(),
        );
        let mask = Tensor::<f64>::from_vec(
            &[1, 1, n, n],
            (0..n * n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
        );
        let lmap = lambda_map(&mask, 0.001, 4.0).unwrap();
        let bits = Tensor::<f64>::scalar(10.0);
        let loss = rd_loss(&x, &rec, &lmap, &bits, n * n);
        loss.backward().unwrap();
        let grad = rec.grad().unwrap();
        let eval = || rd_loss(&x, &rec, &lmap, &bits, n * n).item();
        for idx in [0usize, 5, 17, 30, 47] {
            let orig = rec.value_at(idx);
            let h = 1e-4;
            rec.set_value(idx, orig + h);
            let fp = eval();
            rec.set_value(idx, orig - h);
            let fm = eval();
            rec.set_value(idx, orig);
            let fd = (fp - fm) / (2.0 * h);
            let ad = grad[idx];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-9);
            assert!(rel < 1e-4, "idx {idx}: ad {ad} fd {fd}");
        }
    }

    #[test]
    fn metrics_bpp_is_bits_over_pixels() {
        use crate::model::ModelConfig;
        let model = CodecModel::<f32>::new(ModelConfig::toy(11)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (img, mask) = crate::data::synth::synth_pair::<f32>(&mut rng, 64);
        let batch = Batch {
            images: img,
            masks: mask,
            ids: vec!["t".into()],
        };
        let cfg = TrainConfig::default();
        let mut opt = OptimizerState::new(model.named_params());
        let mut rng2 = ChaCha12Rng::seed_from_u64(6);
        let m = train_step(&model, &batch, &cfg, &mut opt, &mut rng2).unwrap();
        assert!(m.bpp > 0.0 && m.loss.is_finite());
        assert!(m.weighted_d >= 0.0);
        assert!((m.loss - (m.weighted_d + m.bpp)).abs() < 1e-4 * m.loss.abs());
    }
}
