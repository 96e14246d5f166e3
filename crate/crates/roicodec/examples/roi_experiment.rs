use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use roicodec::data::synth::synth_pair;
use roicodec::eval::evaluate_image;
use roicodec::model::{CodecModel, ModelConfig};
use roicodec::tensor::Tensor;
use roicodec::train::{train_loop, Loader, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    // corpus: 200 images of 64x64 with rectangular ROI masks
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let corpus: Vec<(String, Tensor<f32>, Tensor<f32>)> = (0..200)
        .map(|i| {
            let (img, mask) = synth_pair::<f32>(&mut rng, 64);
            (format!("img_{i:04}"), img, mask)
        })
        .collect();

    let mut results = Vec::new();
    for omega in [0.0f64, 5.0] {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            omega,
            steps,
            seed,
            ..TrainConfig::default()
        };
        let model = CodecModel::<f32>::new(ModelConfig::toy(seed)).unwrap();
        let mut loader = Loader::from_tensors(
            corpus.iter().map(|(i, a, b)| (i.clone(), a.clone(), b.clone())).collect(),
            64,
            seed,
        )
        .unwrap();
        let history = train_loop(&model, &mut loader, &cfg, None).unwrap();
        let first = history.first().unwrap();
        let last = history.last().unwrap();
        println!(
            "omega {omega}: step1 loss {:.3} -> step{} loss {:.3} (ratio {:.3}), bpp {:.3}, took {:?}",
            first.loss, last.step, last.loss, last.loss / first.loss, last.bpp, t0.elapsed()
        );
        // tail-averaged loss for the <= 70% criterion check
        let tail = &history[history.len().saturating_sub(50)..];
        let tail_loss: f64 = tail.iter().map(|m| m.loss).sum::<f64>() / tail.len() as f64;
        println!("  tail(50) loss {:.3} vs step1 {:.3} -> ratio {:.3}", tail_loss, first.loss, tail_loss / first.loss);

        // evaluate on the first 50 corpus images
        let mut bpp = 0.0;
        let mut p = 0.0;
        let mut roi = 0.0;
        let mut bg = 0.0;
        let neval = 50;
        for (_, img, mask) in corpus.iter().take(neval) {
            let e = evaluate_image(&model, img, mask, 0.5).unwrap();
            bpp += e.bpp; p += e.psnr; roi += e.roi_psnr; bg += e.bg_psnr;
        }
        let n = neval as f64;
        println!(
            "  eval: bpp {:.4}, psnr {:.2}, roi {:.2}, bg {:.2}",
            bpp / n, p / n, roi / n, bg / n
        );
        results.push((omega, bpp / n, p / n, roi / n, bg / n));
    }
    let (o0, o5) = (&results[0], &results[1]);
    println!("\nroi gain: {:.2} dB (need >= +1.0)", o5.3 - o0.3);
    println!("bg drop: {:.2} dB (need < 0)", o5.4 - o0.4);
    println!("bpp ratio: {:.3} (need within 0.9..1.1)", o5.1 / o0.1);
}
