//! Training configuration: flat key-value text files.
//!
//! Recognized keys (all optional; unknown keys are rejected):
//!
//! ```text
//!   alpha = 0.001        # background λ scale, > 0
//!   omega = 3.0          # ROI exponent, >= 0
//!   lr = 0.0001          # Adam learning rate, > 0
//!   batch_size = 2
//!   steps = 2000
//!   crop = 64            # crop size, multiple of 64
//!   seed = 0
//!   precision = f32      # f32 | f64
//!   grad_clip = 1.0      # global-norm clip, or "none"
//!   preset = toy         # toy | default | full
//!   context_mode = none  # none | checkerboard
//!   image_dir = ...      # training images
//!   mask_dir = ...       # matching masks (same file stems)
//!   out_model = ...      # checkpoint output path
//!   metrics_csv = ...    # optional per-step metrics
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use crate::error::{Error, Result};
use crate::model::{ContextMode, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelPreset {
    Toy,
    Default,
    Full,
}

impl ModelPreset {
    pub fn build(self, seed: u64, context_mode: ContextMode) -> ModelConfig {
        let mut cfg = match self {
            ModelPreset::Toy => ModelConfig::toy(seed),
            ModelPreset::Default => ModelConfig {
                seed,
                ..ModelConfig::default()
            },
            ModelPreset::Full => ModelConfig::full(seed),
        };
        cfg.context_mode = context_mode;
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub alpha: f64,
    pub omega: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub crop: usize,
    pub seed: u64,
    pub precision: Precision,
    pub grad_clip: Option<f64>,
    pub preset: ModelPreset,
    pub context_mode: ContextMode,
    pub image_dir: String,
    pub mask_dir: String,
    pub out_model: String,
    pub metrics_csv: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.001,
            omega: 3.0,
            lr: 1e-4,
            batch_size: 2,
            steps: 2000,
            crop: 64,
            seed: 0,
            precision: Precision::F32,
            grad_clip: Some(1.0),
            preset: ModelPreset::Toy,
            context_mode: ContextMode::None,
            image_dir: String::new(),
            mask_dir: String::new(),
            out_model: "model.ckpt".into(),
            metrics_csv: None,
        }
    }
}

/// Parses a config file body; defaults fill anything unset. Errors carry
/// the offending line number.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or(Error::Config {
            line,
            msg: format!("expected key = value, got '{trimmed}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: String| Error::Config { line, msg };
        let f64_of = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| bad(format!("key '{key}': bad number '{v}'")))
        };
        let usize_of = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| bad(format!("key '{key}': bad integer '{v}'")))
        };
        match key {
            "alpha" => {
                cfg.alpha = f64_of(value)?;
                if cfg.alpha <= 0.0 {
                    return Err(bad(format!("key 'alpha' must be > 0, got {value}")));
                }
            }
            "omega" => {
                cfg.omega = f64_of(value)?;
                if cfg.omega < 0.0 {
                    return Err(bad(format!("key 'omega' must be >= 0, got {value}")));
                }
            }
            "lr" => {
                cfg.lr = f64_of(value)?;
                if cfg.lr <= 0.0 {
                    return Err(bad(format!("key 'lr' must be > 0, got {value}")));
                }
            }
            "batch_size" => {
                cfg.batch_size = usize_of(value)?;
                if cfg.batch_size == 0 {
                    return Err(bad("key 'batch_size' must be >= 1".into()));
                }
            }
            "steps" => {
                cfg.steps = usize_of(value)? as u64;
                if cfg.steps == 0 {
                    return Err(bad("key 'steps' must be >= 1".into()));
                }
            }
            "crop" => {
                cfg.crop = usize_of(value)?;
                if cfg.crop == 0 || cfg.crop % 64 != 0 {
                    return Err(bad(format!(
                        "key 'crop' must be a positive multiple of 64, got {value}"
                    )));
                }
            }
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| bad(format!("key 'seed': bad integer '{value}'")))?
            }
            "precision" => {
                cfg.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => {
                        return Err(bad(format!(
                            "key 'precision' must be f32 or f64, got '{other}'"
                        )))
                    }
                }
            }
            "grad_clip" => {
                cfg.grad_clip = if value == "none" {
                    None
                } else {
                    let v = f64_of(value)?;
                    if v <= 0.0 {
                        return Err(bad("key 'grad_clip' must be > 0 or 'none'".into()));
                    }
                    Some(v)
                }
            }
            "preset" => {
                cfg.preset = match value {
                    "toy" => ModelPreset::Toy,
                    "default" => ModelPreset::Default,
                    "full" => ModelPreset::Full,
                    other => {
                        return Err(bad(format!(
                            "key 'preset' must be toy, default or full, got '{other}'"
                        )))
                    }
                }
            }
            "context_mode" => {
                cfg.context_mode = ContextMode::parse(value)
                    .map_err(|_| bad(format!("key 'context_mode': bad value '{value}'")))?
            }
            "image_dir" => cfg.image_dir = value.to_string(),
            "mask_dir" => cfg.mask_dir = value.to_string(),
            "out_model" => cfg.out_model = value.to_string(),
            "metrics_csv" => cfg.metrics_csv = Some(value.to_string()),
            other => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    Ok(cfg)
}

pub fn load_train_config(path: &std::path::Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_full_defaults() {
        let cfg = parse_train_config("").unwrap();
        assert_eq!(cfg.alpha, 0.001);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.precision, Precision::F32);
    }

    #[test]
    fn negative_alpha_names_key_and_line() {
        match parse_train_config("# comment\nalpha = -1\n") {
            Err(Error::Config { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("alpha"), "message: {msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn paper_largest_omega_accepted() {
        let cfg = parse_train_config("omega = 6.5\n").unwrap();
        assert_eq!(cfg.omega, 6.5);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            parse_train_config("momentum = 0.9\n"),
            Err(Error::Config { line: 1, .. })
        ));
    }

    #[test]
    fn crop_must_divide_64() {
        assert!(parse_train_config("crop = 60\n").is_err());
        assert!(parse_train_config("crop = 128\n").is_ok());
    }
}
