//! End-to-end checks of the command-line surface, driving the built
//! binary through files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_roicodec")
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

struct Workspace {
    dir: PathBuf,
}

impl Workspace {
    fn new(tag: &str) -> Workspace {
        let dir = std::env::temp_dir().join(format!("roicodec-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Workspace { dir }
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.dir).ok();
    }
}

/// Builds a tiny corpus and a 3-step checkpoint shared by the tests.
fn prepare_model(ws: &Workspace) {
    let ok = run(
        &ws.dir,
        &[
            "synth",
            "--out-images",
            "corpus/images",
            "--out-masks",
            "corpus/masks",
            "--count",
            "6",
            "--size",
            "64",
            "--seed",
            "3",
        ],
    );
    assert!(ok.status.success());
    std::fs::write(
        ws.dir.join("train.cfg"),
        "preset = toy\nsteps = 3\nomega = 5.0\nseed = 2\nimage_dir = corpus/images\nmask_dir = corpus/masks\nout_model = toy.ckpt\n",
    )
    .unwrap();
    let ok = run(&ws.dir, &["train", "--config", "train.cfg"]);
    assert!(
        ok.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&ok.stderr)
    );
}

#[test]
fn file_roundtrip_matches_in_memory() {
    let ws = Workspace::new("roundtrip");
    prepare_model(&ws);

    let ok = run(
        &ws.dir,
        &[
            "encode",
            "--model",
            "toy.ckpt",
            "--input",
            "corpus/images/img_0001.png",
            "--mask",
            "corpus/masks/img_0001.png",
            "--omega",
            "5",
            "--out",
            "a.roic",
        ],
    );
    assert!(
        ok.status.success(),
        "encode failed: {}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let ok = run(
        &ws.dir,
        &[
            "decode", "--model", "toy.ckpt", "--in", "a.roic", "--out", "a.png",
        ],
    );
    assert!(ok.status.success());

    // in-memory round trip against the same checkpoint
    let (model, _) =
        roicodec::model::checkpoint::load::<f32>(&ws.dir.join("toy.ckpt")).unwrap();
    let image =
        roicodec::data::load_image_rgb::<f32>(&ws.dir.join("corpus/images/img_0001.png"))
            .unwrap();
    let mask =
        roicodec::data::load_mask::<f32>(&ws.dir.join("corpus/masks/img_0001.png")).unwrap();
    let (latents, _) = model.encode_latents(&image, &mask).unwrap();
    let (bytes, y_hat, z_hat) = roicodec::entropy::write_bitstream(&model, &latents).unwrap();
    let file_bytes = std::fs::read(ws.dir.join("a.roic")).unwrap();
    assert_eq!(bytes, file_bytes, "file bitstream differs from in-memory");

    let recon = model
        .decode_latents(&y_hat, &z_hat, latents.geometry)
        .unwrap();
    let decoded_png =
        roicodec::data::load_image_rgb::<f32>(&ws.dir.join("a.png")).unwrap();
    // the PNG stores 8-bit values; compare against the quantized recon
    // using the writer's arithmetic (f64)
    for (a, b) in recon.to_vec().iter().zip(decoded_png.to_vec()) {
        let a8 = ((*a as f64).clamp(0.0, 1.0) * 255.0).round();
        let b8 = (b as f64 * 255.0).round();
        assert_eq!(a8, b8);
    }
}

#[test]
fn decode_takes_no_mask_flag() {
    let ws = Workspace::new("nomask");
    prepare_model(&ws);
    let out = run(
        &ws.dir,
        &[
            "decode", "--model", "toy.ckpt", "--in", "x.roic", "--mask", "m.png", "--out",
            "y.png",
        ],
    );
    assert!(!out.status.success(), "decode must reject a --mask flag");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--mask") || err.contains("unexpected"), "stderr: {err}");
}

#[test]
fn hash_mismatch_exits_2() {
    let ws = Workspace::new("hash");
    prepare_model(&ws);
    // second checkpoint with a different seed
    std::fs::write(
        ws.dir.join("train2.cfg"),
        "preset = toy\nsteps = 3\nseed = 9\nimage_dir = corpus/images\nmask_dir = corpus/masks\nout_model = other.ckpt\n",
    )
    .unwrap();
    assert!(run(&ws.dir, &["train", "--config", "train2.cfg"]).status.success());
    assert!(run(
        &ws.dir,
        &[
            "encode",
            "--model",
            "toy.ckpt",
            "--input",
            "corpus/images/img_0000.png",
            "--mask",
            "corpus/masks/img_0000.png",
            "--out",
            "b.roic",
        ],
    )
    .status
    .success());
    let out = run(
        &ws.dir,
        &[
            "decode", "--model", "other.ckpt", "--in", "b.roic", "--out", "b.png",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "hash mismatch must exit 2");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: hash-mismatch:"), "stderr: {err}");
    assert_eq!(err.lines().count(), 1, "single-line error expected");
}

#[test]
fn eval_emits_rd_csv_schema() {
    let ws = Workspace::new("eval");
    prepare_model(&ws);
    let out = run(
        &ws.dir,
        &[
            "eval", "--models", "toy.ckpt", "--corpus", "corpus", "--csv", "rd.csv",
        ],
    );
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(ws.dir.join("rd.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "omega,image_id,bpp,psnr,roi_psnr,bg_psnr"
    );
    // 6 images + 1 mean row
    assert_eq!(csv.lines().count(), 1 + 6 + 1);
    assert!(csv.lines().last().unwrap().starts_with("5,mean,"));

    // reruns are byte-identical
    assert!(run(
        &ws.dir,
        &["eval", "--models", "toy.ckpt", "--corpus", "corpus", "--csv", "rd2.csv"]
    )
    .status
    .success());
    let csv2 = std::fs::read_to_string(ws.dir.join("rd2.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn attn_dumps_nine_heatmaps_per_site() {
    let ws = Workspace::new("attn");
    prepare_model(&ws);
    let out = run(
        &ws.dir,
        &[
            "attn",
            "--model",
            "toy.ckpt",
            "--input",
            "corpus/images/img_0002.png",
            "--mask",
            "corpus/masks/img_0002.png",
            "--grid",
            "3x3",
            "--sites",
            "enc1.0.w",
            "--out",
            "maps",
        ],
    );
    assert!(
        out.status.success(),
        "attn failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pngs: Vec<_> = std::fs::read_dir(ws.dir.join("maps"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "png").unwrap_or(false))
        .collect();
    // 9 queries x (3 heads + average)
    assert_eq!(pngs.len(), 9 * 4);
}

#[test]
fn unknown_flag_is_rejected() {
    let ws = Workspace::new("badflag");
    let out = run(&ws.dir, &["decode", "--bogus", "x"]);
    assert!(!out.status.success());
}
