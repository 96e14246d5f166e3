//! Command-line surface: train, encode, decode, eval, attention dumps and
//! synthetic corpus generation.

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use roicodec::data::{load_image_rgb, load_mask, save_image_rgb};
use roicodec::entropy::{inspect, read_bitstream, write_bitstream};
use roicodec::eval::attention::{collect_attention, dump_heatmaps, extract_heatmaps, query_grid};
use roicodec::eval::{bpp_measure, rd_curve_csv, DEFAULT_ROI_THRESHOLD};
use roicodec::model::checkpoint;
use roicodec::model::CodecModel;
use roicodec::train::{load_train_config, run_training};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "roicodec",
    about = "ROI-conditioned learned image codec",
    version
)]
struct Cli {
    /// Seed override for commands that use randomness (training, synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key-value config file.
    Train {
        /// Training config file (flat key = value lines).
        #[arg(long)]
        config: PathBuf,
    },
    /// Encode an image + ROI mask into a bitstream.
    Encode {
        #[arg(long)]
        model: PathBuf,
        /// Input image (PNG or binary PPM).
        #[arg(long)]
        input: PathBuf,
        /// ROI mask (single-channel PNG or PGM), same dimensions.
        #[arg(long)]
        mask: PathBuf,
        /// Rate point label recorded in the log line; coding itself is
        /// fully determined by the checkpoint and the mask.
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a bitstream back to an image. Takes no mask: the decoder
    /// reconstructs from the bitstream and checkpoint alone.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure rate and quality of one or more models over a corpus
    /// directory (images/ and masks/ subdirectories) and write CSV.
    Eval {
        /// Checkpoint files or directories of *.ckpt, comma separated.
        #[arg(long, value_delimiter = ',')]
        models: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Threshold for ROI pixel selection on continuous masks.
        #[arg(long = "roi-th", default_value_t = DEFAULT_ROI_THRESHOLD)]
        roi_th: f64,
    },
    /// Dump attention heatmaps for a query grid.
    Attn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Optional ROI mask; defaults to all background.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Query grid, e.g. 3x3.
        #[arg(long, default_value = "3x3")]
        grid: String,
        /// Attention sites (prefixes like enc0, dec2, hypenc0), or "all".
        #[arg(long, value_delimiter = ',', default_value = "all")]
        sites: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic image+mask corpus.
    Synth {
        #[arg(long)]
        out_images: PathBuf,
        #[arg(long)]
        out_masks: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

fn error_kind(e: &roicodec::Error) -> &'static str {
    use roicodec::Error::*;
    match e {
        Dimension(_) => "dimension",
        Validation(_) => "validation",
        Contract(_) => "contract",
        Coder(_) => "coder",
        Bitstream(_) => "bitstream",
        HashMismatch { .. } => "hash-mismatch",
        Checkpoint(_) => "checkpoint",
        Config { .. } => "config",
        NonFinite { .. } => "non-finite",
        EmptyRoi => "empty-roi",
        Io { .. } => "io",
        ImageDecode { .. } => "image",
        Other(_) => "other",
    }
}

fn main() {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let code = match err.downcast_ref::<roicodec::Error>() {
                Some(e) => {
                    eprintln!("error: {}: {}", error_kind(e), e);
                    if matches!(e, roicodec::Error::HashMismatch { .. }) {
                        2
                    } else {
                        1
                    }
                }
                None => {
                    eprintln!("error: other: {err:#}");
                    1
                }
            };
            std::process::exit(code);
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("ROICODEC_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn load_model(path: &Path) -> anyhow::Result<(CodecModel<f32>, checkpoint::Metadata)> {
    let (model, meta) =
        checkpoint::load::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((model, meta))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let mut cfg = load_train_config(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            eprintln!(
                "training: preset {:?}, omega {}, alpha {}, lr {}, steps {}, seed {}",
                cfg.preset, cfg.omega, cfg.alpha, cfg.lr, cfg.steps, cfg.seed
            );
            run_training(&cfg)?;
            println!("wrote {}", cfg.out_model);
            Ok(())
        }
        Command::Encode {
            model,
            input,
            mask,
            omega,
            out,
        } => {
            let (model, _meta) = load_model(&model)?;
            let image = load_image_rgb::<f32>(&input)?;
            let mask = load_mask::<f32>(&mask)?;
            let (latents, _) = model.encode_latents(&image, &mask)?;
            let (bytes, _y_hat, _z_hat) = write_bitstream(&model, &latents)?;
            std::fs::write(&out, &bytes).map_err(|e| roicodec::Error::io(&out, e))?;
            let info = inspect(&bytes)?;
            let bpp = bpp_measure(info.total_bytes, info.orig_h, info.orig_w);
            let omega_note = omega.map(|w| format!(", omega {w}")).unwrap_or_default();
            println!(
                "encoded {}x{} to {} bytes ({:.4} bpp{omega_note})",
                info.orig_w, info.orig_h, info.total_bytes, bpp
            );
            Ok(())
        }
        Command::Decode { model, input, out } => {
            let (model, _meta) = load_model(&model)?;
            let bytes = std::fs::read(&input).map_err(|e| roicodec::Error::io(&input, e))?;
            let (y_hat, z_hat, geometry) = read_bitstream(&model, &bytes)?;
            let recon = model.decode_latents(&y_hat, &z_hat, geometry)?;
            save_image_rgb(&out, &recon)?;
            println!(
                "decoded {}x{} to {}",
                geometry.orig_w,
                geometry.orig_h,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            models,
            corpus,
            csv,
            roi_th,
        } => {
            let paths = collect_checkpoints(&models)?;
            if paths.is_empty() {
                return Err(anyhow!("no checkpoints found in {models:?}"));
            }
            let mut loaded = Vec::new();
            for p in &paths {
                let (model, meta) = load_model(p)?;
                let omega = meta
                    .get("train_omega")
                    .cloned()
                    .unwrap_or_else(|| "nan".into());
                loaded.push((omega, model));
            }
            let corpus_entries = load_corpus(&corpus)?;
            let model_refs: Vec<(String, &CodecModel<f32>)> = loaded
                .iter()
                .map(|(omega, m)| (omega.clone(), m))
                .collect();
            let mut out = std::fs::File::create(&csv).map_err(|e| roicodec::Error::io(&csv, e))?;
            rd_curve_csv(&model_refs, &corpus_entries, roi_th, &mut out)?;
            println!(
                "evaluated {} models on {} images -> {}",
                loaded.len(),
                corpus_entries.len(),
                csv.display()
            );
            Ok(())
        }
        Command::Attn {
            model,
            input,
            mask,
            grid,
            sites,
            out,
        } => {
            let (model, _meta) = load_model(&model)?;
            let image = load_image_rgb::<f32>(&input)?;
            let s = image.shape().to_vec();
            let mask = match mask {
                Some(p) => load_mask::<f32>(&p)?,
                None => roicodec::tensor::Tensor::zeros(&[1, 1, s[2], s[3]]),
            };
            let (rows, cols) = parse_grid(&grid)?;
            let queries = query_grid(s[2], s[3], rows, cols);
            let (records, geometry) = collect_attention(&model, &image, &mask)?;
            let maps = extract_heatmaps(&records, geometry, &sites, &queries)?;
            let files = dump_heatmaps(&maps, &out)?;
            println!(
                "wrote {} heatmaps ({} files) to {}",
                maps.len(),
                files.len(),
                out.display()
            );
            Ok(())
        }
        Command::Synth {
            out_images,
            out_masks,
            count,
            size,
        } => {
            let seed = cli.seed.unwrap_or(0);
            roicodec::data::synth::generate_corpus(&out_images, &out_masks, count, size, seed)?;
            println!("wrote {count} image/mask pairs of size {size} (seed {seed})");
            Ok(())
        }
    }
}

fn parse_grid(grid: &str) -> anyhow::Result<(usize, usize)> {
    let (r, c) = grid
        .split_once('x')
        .ok_or_else(|| anyhow!("grid must look like 3x3, got '{grid}'"))?;
    Ok((
        r.parse().map_err(|_| anyhow!("bad grid rows '{r}'"))?,
        c.parse().map_err(|_| anyhow!("bad grid cols '{c}'"))?,
    ))
}

fn collect_checkpoints(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| roicodec::Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().map(|e| e == "ckpt").unwrap_or(false))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p.clone());
        }
    }
    Ok(paths)
}

/// Corpus layout: `<dir>/images/*.{png,ppm}` with masks of the same file
/// stem under `<dir>/masks/`.
fn load_corpus(
    dir: &Path,
) -> anyhow::Result<
    Vec<(
        String,
        roicodec::tensor::Tensor<f32>,
        roicodec::tensor::Tensor<f32>,
    )>,
> {
    let image_dir = dir.join("images");
    let mask_dir = dir.join("masks");
    let (entries, unmatched) = roicodec::train::scan_pairs(&image_dir, &mask_dir)?;
    for id in &unmatched {
        eprintln!("warning: no mask for image '{id}', skipped");
    }
    if entries.is_empty() {
        return Err(anyhow!(
            "corpus {} has no paired images (expected images/ and masks/)",
            dir.display()
        ));
    }
    let mut corpus = Vec::new();
    for e in entries {
        corpus.push((
            e.id.clone(),
            load_image_rgb::<f32>(&e.image_path)?,
            load_mask::<f32>(&e.mask_path)?,
        ));
    }
    Ok(corpus)
}
