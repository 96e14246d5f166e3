//! The ROI-conditioned codec: main and hyper autoencoders with SFT
//! conditioning, entropy parameter derivation and the λ-map.

pub mod checkpoint;
mod config;

pub use config::{ContextMode, ModelConfig, HYPER_FACTOR, MAIN_FACTOR, PAD_MULTIPLE};

use crate::entropy::{FactorizedPrior, SIGMA_MIN};
use crate::error::{Error, Result};
use crate::nn::{
    AttentionRecord, ConditionPyramid, Conv2d, ConvTranspose2d, Gdn, MaskFusion, ParamSet,
    PatchDownsample, PatchUpsample, SftParams, SwinBlockPair,
};
use crate::tensor::{Parameter, Scalar, Tensor};

/// Spatial bookkeeping for one encoded image batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub orig_h: usize,
    pub orig_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl Geometry {
    pub fn for_input(batch: usize, h: usize, w: usize) -> Geometry {
        let pad = |d: usize| d.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
        Geometry {
            batch,
            orig_h: h,
            orig_w: w,
            padded_h: pad(h),
            padded_w: pad(w),
        }
    }

    pub fn y_spatial(&self) -> (usize, usize) {
        (self.padded_h / MAIN_FACTOR, self.padded_w / MAIN_FACTOR)
    }

    pub fn z_spatial(&self) -> (usize, usize) {
        (
            self.padded_h / (MAIN_FACTOR * HYPER_FACTOR),
            self.padded_w / (MAIN_FACTOR * HYPER_FACTOR),
        )
    }
}

/// Quantizable latents with their geometry.
pub struct LatentPair<T: Scalar> {
    pub y: Tensor<T>,
    pub z: Tensor<T>,
    pub geometry: Geometry,
}

/// Per-pixel rate-distortion weight λᵢ = α·e^(ω·mᵢ)·255².
pub fn lambda_map<T: Scalar>(mask: &Tensor<T>, alpha: f64, omega: f64) -> Result<Tensor<T>> {
    if alpha <= 0.0 {
        return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
    }
    crate::nn::validate_mask_range(mask)?;
    Ok(mask
        .mul_scalar(omega)
        .exp()
        .mul_scalar(alpha * 255.0 * 255.0))
}

struct EncoderStage<T: Scalar> {
    pairs: Vec<SwinBlockPair<T>>,
    down: PatchDownsample<T>,
    gdn: Gdn<T>,
    sft: SftParams<T>, // applied after the downsample+GDN
}

struct DecoderStage<T: Scalar> {
    sft: SftParams<T>, // applied before IGDN+upsample
    igdn: Gdn<T>,
    up: PatchUpsample<T>,
    pairs: Vec<SwinBlockPair<T>>, // run after the upsample
}

struct CheckerboardCtx<T: Scalar> {
    ctx_conv: Conv2d<T>, // masked ŷ -> context features
    refine: Conv2d<T>,   // cat(hyper features, context) -> Δ(μ, σ_raw)
}

/// Full codec model. All submodule parameters are registered, in
/// declaration order, in `params`.
pub struct CodecModel<T: Scalar> {
    pub config: ModelConfig,
    params: Vec<Parameter<T>>,

    fusion: MaskFusion<T>,
    stem: Conv2d<T>,
    enc_sft0: SftParams<T>,
    enc_stage0_pairs: Vec<SwinBlockPair<T>>,
    enc_stages: Vec<EncoderStage<T>>, // 3

    hyp_enc_proj: Conv2d<T>,
    hyp_enc_pairs: Vec<SwinBlockPair<T>>, // 2
    hyp_enc_down: Vec<PatchDownsample<T>>, // 2
    hyp_enc_sft: SftParams<T>,

    pub prior: FactorizedPrior<T>,

    dec_cond_base: Vec<Conv2d<T>>,  // on ẑ at /64
    dec_cond_chain: Vec<Conv2d<T>>, // one conv per ×2 upsample: /32../2

    hyp_dec_proj: Conv2d<T>,
    hyp_dec_pairs: Vec<SwinBlockPair<T>>, // 2
    hyp_dec_up: Vec<PatchUpsample<T>>,    // 2
    hyp_dec_sft: SftParams<T>,
    param_head: Conv2d<T>,
    ctx: Option<CheckerboardCtx<T>>,

    dec_stages: Vec<DecoderStage<T>>, // 3
    dec_sft_last: SftParams<T>,
    final_deconv: ConvTranspose2d<T>,
}

/// Encoder-side SFT site pool factors relative to the padded input.
pub const ENC_SITE_FACTORS: [usize; 5] = [2, 4, 8, 16, 64];

impl<T: Scalar> CodecModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::<T>::new(config.seed);
        let cfg = &config;
        let [w0, w1, w2] = [cfg.widths[0], cfg.widths[1], cfg.widths[2]];
        let cy = cfg.latent_channels;
        let cz = cfg.hyper_latent_channels;
        let [h0, h1] = cfg.hyper_widths;
        let cc = cfg.cond_channels;
        let cd = cfg.dec_cond_channels;
        let win = cfg.main_window;
        let hwin = cfg.hyper_window;
        let r = cfg.ffn_ratio;

        let fusion = MaskFusion::new(&mut ps, "fusion", cfg.fusion_depth, cc);
        let stem = Conv2d::new(
            &mut ps,
            "enc.stem",
            3,
            w0,
            cfg.stem_kernel,
            cfg.stem_stride,
            cfg.stem_kernel / 2,
        );
        let enc_sft0 = SftParams::new(&mut ps, "enc.sft0", cc, w0);
        let mut enc_stage0_pairs = Vec::new();
        for b in 0..cfg.blocks_per_stage[0] {
            enc_stage0_pairs.push(SwinBlockPair::new(
                &mut ps,
                &format!("enc.stage0.pair{b}"),
                w0,
                cfg.heads[0],
                win,
                r,
            ));
        }
        let mut enc_stages = Vec::new();
        let stage_io = [(w0, w1, 1usize), (w1, w2, 2), (w2, cy, 3)];
        for (i, &(c_in, c_out, site)) in stage_io.iter().enumerate() {
            let mut pairs = Vec::new();
            if i > 0 {
                for b in 0..cfg.blocks_per_stage[i] {
                    pairs.push(SwinBlockPair::new(
                        &mut ps,
                        &format!("enc.stage{i}.pair{b}"),
                        c_in,
                        cfg.heads[i],
                        win,
                        r,
                    ));
                }
            }
            enc_stages.push(EncoderStage {
                pairs,
                down: PatchDownsample::new(&mut ps, &format!("enc.down{i}"), c_in, c_out),
                gdn: Gdn::new(&mut ps, &format!("enc.gdn{i}"), c_out, false),
                sft: SftParams::new(&mut ps, &format!("enc.sft{site}"), cc, c_out),
            });
        }

        let hyp_enc_proj = Conv2d::new(&mut ps, "hyp_enc.proj", cy, h0, 1, 1, 0);
        let hyp_enc_pairs = vec![
            SwinBlockPair::new(&mut ps, "hyp_enc.pair0", h0, cfg.hyper_heads[0], hwin, r),
            SwinBlockPair::new(&mut ps, "hyp_enc.pair1", h1, cfg.hyper_heads[1], hwin, r),
        ];
        let hyp_enc_down = vec![
            PatchDownsample::new(&mut ps, "hyp_enc.down0", h0, h1),
            PatchDownsample::new(&mut ps, "hyp_enc.down1", h1, cz),
        ];
        let hyp_enc_sft = SftParams::new(&mut ps, "hyp_enc.sft", cc, cz);

        let prior = FactorizedPrior::new(&mut ps, "prior", cz);

        let dec_cond_base = vec![
            Conv2d::new(&mut ps, "dec_cond.base0", cz, cd, 3, 1, 1),
            Conv2d::new(&mut ps, "dec_cond.base1", cd, cd, 3, 1, 1),
        ];
        let dec_cond_chain = (0..5)
            .map(|i| Conv2d::new(&mut ps, &format!("dec_cond.up{i}"), cd, cd, 3, 1, 1))
            .collect();

        let hyp_dec_proj = Conv2d::new(&mut ps, "hyp_dec.proj", cz, h1, 1, 1, 0);
        let hyp_dec_pairs = vec![
            SwinBlockPair::new(&mut ps, "hyp_dec.pair0", h1, cfg.hyper_heads[1], hwin, r),
            SwinBlockPair::new(&mut ps, "hyp_dec.pair1", h0, cfg.hyper_heads[0], hwin, r),
        ];
        let hyp_dec_up = vec![
            PatchUpsample::new(&mut ps, "hyp_dec.up0", h1, h0),
            PatchUpsample::new(&mut ps, "hyp_dec.up1", h0, cy),
        ];
        let hyp_dec_sft = SftParams::new(&mut ps, "hyp_dec.sft", cd, h0);
        let param_head = Conv2d::new(&mut ps, "hyp_dec.param_head", cy, 2 * cy, 3, 1, 1);
        {
            // start the scale head wide (σ ≈ 8) so untrained residuals sit
            // inside the calibrated range; μ bias stays at zero
            let mut bias = param_head.bias.to_vec();
            let sigma_raw0 = T::from_f64(8.0f64.exp_m1().ln());
            for b in bias.iter_mut().skip(cy) {
                *b = sigma_raw0;
            }
            param_head.bias.set_data(&bias);
        }
        let ctx = match cfg.context_mode {
            ContextMode::None => None,
            ContextMode::Checkerboard => Some(CheckerboardCtx {
                ctx_conv: Conv2d::new(&mut ps, "ctx.conv", cy, cd, 3, 1, 1),
                refine: Conv2d::new(&mut ps, "ctx.refine", cy + cd, 2 * cy, 1, 1, 0),
            }),
        };

        // decoder mirrors the encoder: SFT -> IGDN -> upsample -> blocks
        let dec_io = [(cy, w2, 3usize, 2usize), (w2, w1, 2, 1), (w1, w0, 1, 0)];
        let mut dec_stages = Vec::new();
        for &(c_in, c_out, site, stage_idx) in dec_io.iter() {
            let mut pairs = Vec::new();
            for b in 0..cfg.blocks_per_stage[stage_idx] {
                pairs.push(SwinBlockPair::new(
                    &mut ps,
                    &format!("dec.stage{stage_idx}.pair{b}"),
                    c_out,
                    cfg.heads[stage_idx],
                    win,
                    r,
                ));
            }
            dec_stages.push(DecoderStage {
                sft: SftParams::new(&mut ps, &format!("dec.sft{site}"), cd, c_in),
                igdn: Gdn::new(&mut ps, &format!("dec.igdn{site}"), c_in, true),
                up: PatchUpsample::new(&mut ps, &format!("dec.up{site}"), c_in, c_out),
                pairs,
            });
        }
        let dec_sft_last = SftParams::new(&mut ps, "dec.sft0", cd, w0);
        let final_deconv = ConvTranspose2d::new(
            &mut ps,
            "dec.final",
            w0,
            3,
            cfg.stem_kernel,
            cfg.stem_stride,
            cfg.stem_kernel / 2,
            1,
        );

        Ok(CodecModel {
            config,
            params: ps.params,
            fusion,
            stem,
            enc_sft0,
            enc_stage0_pairs,
            enc_stages,
            hyp_enc_proj,
            hyp_enc_pairs,
            hyp_enc_down,
            hyp_enc_sft,
            prior,
            dec_cond_base,
            dec_cond_chain,
            hyp_dec_proj,
            hyp_dec_pairs,
            hyp_dec_up,
            hyp_dec_sft,
            param_head,
            ctx,
            dec_stages,
            dec_sft_last,
            final_deconv,
        })
    }

    pub fn named_params(&self) -> &[Parameter<T>] {
        &self.params
    }

    /// Exact count of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Identity hash over the canonical config text and the f32 image of
    /// every parameter, in declaration order.
    pub fn model_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.config.canonical_text().as_bytes());
        for p in &self.params {
            hasher.update(p.name.as_bytes());
            for v in p.tensor.to_vec() {
                hasher.update(v.as_f32().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[0..8].try_into().unwrap())
    }

    // ── Encoder ────────────────────────────────────────────────────

    /// Pads inputs to the model's multiple by edge replication.
    pub fn pad_inputs(
        &self,
        image: &Tensor<T>,
        mask: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Geometry)> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Dimension(format!(
                "image must be [N,3,H,W], got {s:?}"
            )));
        }
        if s[2] == 0 || s[3] == 0 || s[0] == 0 {
            return Err(Error::Validation("empty image".into()));
        }
        let ms = mask.shape();
        if ms != [s[0], 1, s[2], s[3]] {
            return Err(Error::Dimension(format!(
                "mask {ms:?} does not match image {s:?}"
            )));
        }
        let geometry = Geometry::for_input(s[0], s[2], s[3]);
        let (ph, pw) = (geometry.padded_h - s[2], geometry.padded_w - s[3]);
        let image = if ph > 0 || pw > 0 {
            image.pad_replicate_br(ph, pw)
        } else {
            image.detach()
        };
        let mask = if ph > 0 || pw > 0 {
            mask.pad_replicate_br(ph, pw)
        } else {
            mask.detach()
        };
        Ok((image, mask, geometry))
    }

    /// Encoder-side condition pyramid from the fused image+mask feature.
    pub fn mask_condition_path(
        &self,
        image: &Tensor<T>,
        mask: &Tensor<T>,
    ) -> Result<ConditionPyramid<T>> {
        let fused = self.fusion.forward(image, mask)?;
        Ok(ConditionPyramid::from_fused(&fused, &ENC_SITE_FACTORS))
    }

    /// Main + hyper analysis. `image`/`mask` must already be padded.
    pub fn encode_latents_padded(
        &self,
        image: &Tensor<T>,
        mask: &Tensor<T>,
        geometry: Geometry,
        mut trace: Option<&mut Vec<AttentionRecord<T>>>,
    ) -> Result<(LatentPair<T>, ConditionPyramid<T>)> {
        let cond = self.mask_condition_path(image, mask)?;

        // NCHW -> NHWC for attention, back for conv/GDN/SFT
        let to_nhwc = |x: &Tensor<T>| x.permute(&[0, 2, 3, 1]);
        let to_nchw = |x: &Tensor<T>| x.permute(&[0, 3, 1, 2]);

        let mut x = self.stem.forward(image);
        x = self.enc_sft0.apply(&x, cond.level(0));
        let mut h = to_nhwc(&x);
        for (b, pair) in self.enc_stage0_pairs.iter().enumerate() {
            h = pair.forward(&h, &format!("enc0.{b}"), trace.as_deref_mut());
        }
        for (i, stage) in self.enc_stages.iter().enumerate() {
            for (b, pair) in stage.pairs.iter().enumerate() {
                h = pair.forward(&h, &format!("enc{i}.{b}"), trace.as_deref_mut());
            }
            h = stage.down.forward(&h);
            let mut x = to_nchw(&h);
            x = stage.gdn.forward(&x);
            x = stage.sft.apply(&x, cond.level(i + 1));
            h = to_nhwc(&x);
        }
        let y = to_nchw(&h);

        // hyper analysis on y
        let mut x = self.hyp_enc_proj.forward(&y);
        let mut h = to_nhwc(&x);
        for (i, pair) in self.hyp_enc_pairs.iter().enumerate() {
            h = pair.forward(&h, &format!("hypenc{i}.0"), trace.as_deref_mut());
            h = self.hyp_enc_down[i].forward(&h);
        }
        x = to_nchw(&h);
        let z = self.hyp_enc_sft.apply(&x, cond.level(4));

        let (yh, yw) = geometry.y_spatial();
        debug_assert_eq!(y.shape()[2..], [yh, yw]);
        let (zh, zw) = geometry.z_spatial();
        debug_assert_eq!(z.shape()[2..], [zh, zw]);

        Ok((LatentPair { y, z, geometry }, cond))
    }

    /// Public analysis entry point: validates, pads, encodes.
    pub fn encode_latents(
        &self,
        image: &Tensor<T>,
        mask: &Tensor<T>,
    ) -> Result<(LatentPair<T>, ConditionPyramid<T>)> {
        let (image, mask, geometry) = self.pad_inputs(image, mask)?;
        self.encode_latents_padded(&image, &mask, geometry, None)
    }

    // ── Decoder-side conditions ────────────────────────────────────

    /// Condition tensors derived from the hyper-latent ẑ, at the
    /// resolutions /32, /16, /8, /4 and /2 of the padded input.
    pub fn decoder_conditions(&self, z_hat: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut f = self.dec_cond_base[0].forward(z_hat).silu();
        f = self.dec_cond_base[1].forward(&f);
        let mut conds = Vec::with_capacity(5);
        for conv in &self.dec_cond_chain {
            f = conv.forward(&f.upsample_nearest(2)).silu();
            conds.push(f.clone());
        }
        conds
    }

    // ── Hyper synthesis / entropy parameters ──────────────────────

    fn hyper_features(
        &self,
        z_hat: &Tensor<T>,
        conds: &[Tensor<T>],
        mut trace: Option<&mut Vec<AttentionRecord<T>>>,
    ) -> Tensor<T> {
        let to_nhwc = |x: &Tensor<T>| x.permute(&[0, 2, 3, 1]);
        let to_nchw = |x: &Tensor<T>| x.permute(&[0, 3, 1, 2]);
        let x = self.hyp_dec_proj.forward(z_hat);
        let mut h = to_nhwc(&x);
        h = self.hyp_dec_pairs[0].forward(&h, "hypdec0.0", trace.as_deref_mut());
        h = self.hyp_dec_up[0].forward(&h);
        let mut x = to_nchw(&h);
        x = self.hyp_dec_sft.apply(&x, &conds[0]);
        h = to_nhwc(&x);
        h = self.hyp_dec_pairs[1].forward(&h, "hypdec1.0", trace.as_deref_mut());
        h = self.hyp_dec_up[1].forward(&h);
        to_nchw(&h)
    }

    /// Checkerboard anchor mask over the latent grid: 1 where (i+j) is
    /// even.
    pub fn anchor_mask(batch: usize, channels: usize, h: usize, w: usize) -> Tensor<T> {
        let mut data = vec![T::zero(); batch * channels * h * w];
        for n in 0..batch {
            for c in 0..channels {
                for i in 0..h {
                    for j in 0..w {
                        if (i + j) % 2 == 0 {
                            data[((n * channels + c) * h + i) * w + j] = T::one();
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[batch, channels, h, w], data)
    }

    /// Per-element Gaussian entropy parameters (μ, σ) for ŷ, derived from
    /// ẑ. With checkerboard context, `y_ctx` supplies decoded values whose
    /// anchor half conditions the non-anchor parameters; anchors always use
    /// hyper-only parameters.
    pub fn entropy_params(
        &self,
        z_hat: &Tensor<T>,
        conds: &[Tensor<T>],
        y_ctx: Option<&Tensor<T>>,
        trace: Option<&mut Vec<AttentionRecord<T>>>,
    ) -> (Tensor<T>, Tensor<T>) {
        let cy = self.config.latent_channels;
        let f16 = self.hyper_features(z_hat, conds, trace);
        let base = self.param_head.forward(&f16);
        let mut mu = base.narrow(1, 0, cy);
        let mut sigma_raw = base.narrow(1, cy, cy);
        if let (Some(ctx), Some(y_ctx)) = (self.ctx.as_ref(), y_ctx) {
            let s = y_ctx.shape();
            let anchors = Self::anchor_mask(s[0], s[1], s[2], s[3]);
            let masked = y_ctx.mul(&anchors);
            let ctx_feat = ctx.ctx_conv.forward(&masked).silu();
            let delta = ctx.refine.forward(&Tensor::concat(&[&f16, &ctx_feat], 1));
            let non_anchor = Tensor::ones(s).sub(&anchors);
            mu = mu.add(&delta.narrow(1, 0, cy).mul(&non_anchor));
            sigma_raw = sigma_raw.add(&delta.narrow(1, cy, cy).mul(&non_anchor));
        }
        let sigma = sigma_raw.softplus().add_scalar(SIGMA_MIN);
        (mu, sigma)
    }

    // ── Main synthesis ─────────────────────────────────────────────

    /// Reconstruction from quantized latents; raw (unclamped), at padded
    /// resolution. Conditions come only from ẑ.
    pub fn synthesis(
        &self,
        y_hat: &Tensor<T>,
        conds: &[Tensor<T>],
        mut trace: Option<&mut Vec<AttentionRecord<T>>>,
    ) -> Tensor<T> {
        let to_nhwc = |x: &Tensor<T>| x.permute(&[0, 2, 3, 1]);
        let to_nchw = |x: &Tensor<T>| x.permute(&[0, 3, 1, 2]);
        let mut x = y_hat.clone();
        // conds[1..] are /16, /8, /4, /2
        for (i, stage) in self.dec_stages.iter().enumerate() {
            x = stage.sft.apply(&x, &conds[i + 1]);
            x = stage.igdn.forward(&x);
            let mut h = to_nhwc(&x);
            h = stage.up.forward(&h);
            let stage_idx = 2 - i;
            for (b, pair) in stage.pairs.iter().enumerate() {
                h = pair.forward(&h, &format!("dec{stage_idx}.{b}"), trace.as_deref_mut());
            }
            x = to_nchw(&h);
        }
        x = self.dec_sft_last.apply(&x, &conds[4]);
        self.final_deconv.forward(&x)
    }

    /// Decode to an image: conditions from ẑ only, clamp to [0,1], crop
    /// the padding. No mask enters this path.
    pub fn decode_latents(
        &self,
        y_hat: &Tensor<T>,
        z_hat: &Tensor<T>,
        geometry: Geometry,
    ) -> Result<Tensor<T>> {
        self.validate_latent_geometry(y_hat, z_hat, geometry)?;
        let conds = self.decoder_conditions(z_hat);
        let raw = self.synthesis(y_hat, &conds, None);
        Ok(raw
            .clamp(0.0, 1.0)
            .crop_spatial(geometry.orig_h, geometry.orig_w)
            .detach())
    }

    pub fn validate_latent_geometry(
        &self,
        y_hat: &Tensor<T>,
        z_hat: &Tensor<T>,
        geometry: Geometry,
    ) -> Result<()> {
        let (yh, yw) = geometry.y_spatial();
        let (zh, zw) = geometry.z_spatial();
        let expect_y = [geometry.batch, self.config.latent_channels, yh, yw];
        let expect_z = [geometry.batch, self.config.hyper_latent_channels, zh, zw];
        if y_hat.shape() != expect_y {
            return Err(Error::Dimension(format!(
                "y latent {:?} does not match geometry {:?}",
                y_hat.shape(),
                expect_y
            )));
        }
        if z_hat.shape() != expect_z {
            return Err(Error::Dimension(format!(
                "z latent {:?} does not match geometry {:?}",
                z_hat.shape(),
                expect_z
            )));
        }
        Ok(())
    }
}
