//! Model hyperparameters. A config deterministically fixes the parameter
//! count and the checkpoint layout.

use crate::error::{Error, Result};

/// Context model selection for the main latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextMode {
    /// Pure mean-scale hyperprior.
    None,
    /// Two-pass spatial context: anchors from hyper-only parameters,
    /// non-anchors additionally conditioned on decoded anchors.
    Checkerboard,
}

impl ContextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::None => "none",
            ContextMode::Checkerboard => "checkerboard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ContextMode::None),
            "checkerboard" => Ok(ContextMode::Checkerboard),
            other => Err(Error::Validation(format!(
                "unknown context mode '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Swin operating widths of the three main stages.
    pub widths: Vec<usize>,
    /// Block pairs per main stage.
    pub blocks_per_stage: Vec<usize>,
    /// Attention heads per main stage.
    pub heads: Vec<usize>,
    /// C_y.
    pub latent_channels: usize,
    /// Hyper path swin widths (at /16 and /32).
    pub hyper_widths: [usize; 2],
    pub hyper_heads: [usize; 2],
    /// C_z.
    pub hyper_latent_channels: usize,
    pub main_window: usize,
    pub hyper_window: usize,
    pub ffn_ratio: usize,
    /// Mask-fusion output channels.
    pub cond_channels: usize,
    /// Mask-fusion conv depth.
    pub fusion_depth: usize,
    /// Decoder-side condition channels derived from the hyper-latent.
    pub dec_cond_channels: usize,
    pub context_mode: ContextMode,
    pub seed: u64,
}

/// Total spatial reduction of the main path (stem ×2 and three ×2
/// patch downsamples).
pub const MAIN_FACTOR: usize = 16;
/// Additional hyper-path reduction.
pub const HYPER_FACTOR: usize = 4;
/// Inputs are padded to multiples of this.
pub const PAD_MULTIPLE: usize = MAIN_FACTOR * HYPER_FACTOR;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stem_kernel: 5,
            stem_stride: 2,
            widths: vec![96, 128, 160],
            blocks_per_stage: vec![1, 1, 1],
            heads: vec![3, 4, 5],
            latent_channels: 192,
            hyper_widths: [128, 128],
            hyper_heads: [4, 4],
            hyper_latent_channels: 128,
            main_window: 8,
            hyper_window: 4,
            ffn_ratio: 2,
            cond_channels: 16,
            fusion_depth: 2,
            dec_cond_channels: 16,
            context_mode: ContextMode::None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small preset for tests and desk-scale experiments (< 500k params).
    pub fn toy(seed: u64) -> Self {
        ModelConfig {
            widths: vec![16, 24, 32],
            blocks_per_stage: vec![1, 1, 1],
            heads: vec![2, 3, 4],
            latent_channels: 48,
            hyper_widths: [32, 32],
            hyper_heads: [2, 2],
            hyper_latent_channels: 32,
            cond_channels: 8,
            dec_cond_channels: 8,
            seed,
            ..ModelConfig::default()
        }
    }

    /// Full-size preset sized to land near the reference budget of ~15.8M
    /// parameters.
    pub fn full(seed: u64) -> Self {
        ModelConfig {
            widths: vec![128, 160, 192],
            blocks_per_stage: vec![2, 3, 4],
            heads: vec![4, 5, 6],
            latent_channels: 320,
            hyper_widths: [192, 192],
            hyper_heads: [6, 6],
            hyper_latent_channels: 192,
            cond_channels: 32,
            dec_cond_channels: 32,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.stem_stride != 2 {
            return fail("stem stride must be 2".into());
        }
        if self.stem_kernel % 2 == 0 || self.stem_kernel < 3 {
            return fail("stem kernel must be odd and >= 3".into());
        }
        if self.widths.len() != 3 || self.blocks_per_stage.len() != 3 || self.heads.len() != 3 {
            return fail("main path needs exactly three stages".into());
        }
        for (i, (&w, &h)) in self.widths.iter().zip(&self.heads).enumerate() {
            if w == 0 || h == 0 || w % h != 0 {
                return fail(format!("stage {i}: width {w} not divisible by heads {h}"));
            }
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) {
            return fail("blocks_per_stage entries must be >= 1".into());
        }
        for (i, (&w, &h)) in self.hyper_widths.iter().zip(&self.hyper_heads).enumerate() {
            if w == 0 || h == 0 || w % h != 0 {
                return fail(format!("hyper stage {i}: width {w} not divisible by {h}"));
            }
        }
        if self.latent_channels == 0 || self.hyper_latent_channels == 0 {
            return fail("latent channel counts must be positive".into());
        }
        if self.main_window == 0 || self.hyper_window == 0 {
            return fail("window sizes must be positive".into());
        }
        if self.ffn_ratio == 0 {
            return fail("ffn ratio must be positive".into());
        }
        if self.cond_channels == 0 || self.dec_cond_channels == 0 || self.fusion_depth == 0 {
            return fail("condition path sizes must be positive".into());
        }
        Ok(())
    }

    /// Canonical key-value text; fixed key order, used verbatim in the
    /// checkpoint header and hashed into the model identity.
    pub fn canonical_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "format=1\nstem_kernel={}\nstem_stride={}\nwidths={}\nblocks={}\nheads={}\n\
             latent_channels={}\nhyper_widths={}\nhyper_heads={}\nhyper_latent_channels={}\n\
             main_window={}\nhyper_window={}\nffn_ratio={}\ncond_channels={}\nfusion_depth={}\n\
             dec_cond_channels={}\ncontext_mode={}\nseed={}\n",
            self.stem_kernel,
            self.stem_stride,
            join(&self.widths),
            join(&self.blocks_per_stage),
            join(&self.heads),
            self.latent_channels,
            join(&self.hyper_widths),
            join(&self.hyper_heads),
            self.hyper_latent_channels,
            self.main_window,
            self.hyper_window,
            self.ffn_ratio,
            self.cond_channels,
            self.fusion_depth,
            self.dec_cond_channels,
            self.context_mode.as_str(),
            self.seed,
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let parse_list = |v: &str, line: usize| -> Result<Vec<usize>> {
            v.split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| Error::Config {
                        line,
                        msg: format!("bad integer list entry '{s}'"),
                    })
                })
                .collect()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let (key, value) = raw.split_once('=').ok_or(Error::Config {
                line,
                msg: format!("expected key=value, got '{raw}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| Error::Config {
                    line,
                    msg: format!("bad integer '{v}'"),
                })
            };
            match key {
                "format" => {
                    if value != "1" {
                        return Err(Error::Config {
                            line,
                            msg: format!("unsupported format version {value}"),
                        });
                    }
                }
                "stem_kernel" => cfg.stem_kernel = int(value)?,
                "stem_stride" => cfg.stem_stride = int(value)?,
                "widths" => cfg.widths = parse_list(value, line)?,
                "blocks" => cfg.blocks_per_stage = parse_list(value, line)?,
                "heads" => cfg.heads = parse_list(value, line)?,
                "latent_channels" => cfg.latent_channels = int(value)?,
                "hyper_widths" => {
                    let v = parse_list(value, line)?;
                    if v.len() != 2 {
                        return Err(Error::Config {
                            line,
                            msg: "hyper_widths needs two entries".into(),
                        });
                    }
                    cfg.hyper_widths = [v[0], v[1]];
                }
                "hyper_heads" => {
                    let v = parse_list(value, line)?;
                    if v.len() != 2 {
                        return Err(Error::Config {
                            line,
                            msg: "hyper_heads needs two entries".into(),
                        });
                    }
                    cfg.hyper_heads = [v[0], v[1]];
                }
                "hyper_latent_channels" => cfg.hyper_latent_channels = int(value)?,
                "main_window" => cfg.main_window = int(value)?,
                "hyper_window" => cfg.hyper_window = int(value)?,
                "ffn_ratio" => cfg.ffn_ratio = int(value)?,
                "cond_channels" => cfg.cond_channels = int(value)?,
                "fusion_depth" => cfg.fusion_depth = int(value)?,
                "dec_cond_channels" => cfg.dec_cond_channels = int(value)?,
                "context_mode" => cfg.context_mode = ContextMode::parse(value)?,
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| Error::Config {
                        line,
                        msg: format!("bad seed '{value}'"),
                    })?
                }
                other => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
