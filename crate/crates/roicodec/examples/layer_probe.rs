use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use roicodec::nn::{Gdn, ParamSet, PatchDownsample, SftParams, SwinBlockPair};
use roicodec::tensor::Tensor;
use std::time::Instant;

fn t<F: FnMut()>(label: &str, reps: u32, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    println!("{label}: {:?}/it", t0.elapsed() / reps);
}

fn main() {
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut ps = ParamSet::<f32>::new(0);
    // stage0 toy geometry: [2, 32, 32, 16]
    let pair = SwinBlockPair::new(&mut ps, "p", 16, 2, 8, 2);
    let n = 2 * 32 * 32 * 16;
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0f32)).collect();
    let x = Tensor::from_vec(&[2, 32, 32, 16], data);
    t("swin pair [2,32,32,16]", 20, || {
        std::hint::black_box(pair.forward(&x, "s", None).numel());
    });

    let blk = &pair.regular;
    let tokens_n = 2 * 16; // 16 windows per image
    let tok_data: Vec<f32> = (0..tokens_n * 64 * 16).map(|_| rng.random_range(-1.0..1.0f32)).collect();
    let tokens = Tensor::from_vec(&[tokens_n, 64, 16], tok_data);
    t("window_attention [32,64,16]", 20, || {
        std::hint::black_box(blk.window_attention(&tokens, 8, None).0.numel());
    });

    let nchw: Vec<f32> = (0..2 * 16 * 32 * 32).map(|_| rng.random_range(-1.0..1.0f32)).collect();
    let xc = Tensor::from_vec(&[2, 16, 32, 32], nchw);
    let stem_w = Tensor::<f32>::from_vec(&[16, 3, 5, 5], (0..1200).map(|i| (i as f32 * 0.01).sin() * 0.1).collect());
    let img: Vec<f32> = (0..2 * 3 * 64 * 64).map(|_| rng.random_range(0.0..1.0f32)).collect();
    let img = Tensor::from_vec(&[2, 3, 64, 64], img);
    t("stem conv 3->16 s2 @64", 20, || {
        std::hint::black_box(img.conv2d(&stem_w, None, 2, 2).numel());
    });

    let gdn = Gdn::new(&mut ps, "g", 16, false);
    t("gdn 16ch @32", 20, || {
        std::hint::black_box(gdn.forward(&xc).numel());
    });

    let sft = SftParams::new(&mut ps, "s", 8, 16);
    let cond: Vec<f32> = (0..2 * 8 * 32 * 32).map(|_| rng.random_range(-1.0..1.0f32)).collect();
    let cond = Tensor::from_vec(&[2, 8, 32, 32], cond);
    t("sft 16ch @32 (two 3x3 heads)", 20, || {
        std::hint::black_box(sft.apply(&xc, &cond).numel());
    });

    let down = PatchDownsample::new(&mut ps, "d", 16, 24);
    t("patch down 16->24 @32", 20, || {
        std::hint::black_box(down.forward(&x).numel());
    });

    // raw pieces
    let a = Tensor::<f32>::from_vec(&[32, 2, 64, 8], (0..32*2*64*8).map(|i| (i as f32*0.37).sin()).collect());
    let b = Tensor::<f32>::from_vec(&[32, 2, 8, 64], (0..32*2*64*8).map(|i| (i as f32*0.21).cos()).collect());
    t("batched matmul q·kT", 50, || {
        std::hint::black_box(a.matmul(&b).numel());
    });
    let big = Tensor::<f32>::from_vec(&[2, 32, 32, 16], (0..n).map(|i| (i as f32 * 0.1).sin()).collect());
    t("layer_norm", 50, || {
        let g = Tensor::<f32>::ones(&[16]);
        let bb = Tensor::<f32>::zeros(&[16]);
        std::hint::black_box(big.layer_norm(&g, &bb, 1e-5).numel());
    });
    t("permute 0231", 50, || {
        std::hint::black_box(big.permute(&[0, 3, 1, 2]).numel());
    });
    t("add", 50, || {
        std::hint::black_box(big.add(&big).numel());
    });
    t("silu", 50, || {
        std::hint::black_box(big.silu().numel());
    });
    let logits = Tensor::<f32>::from_vec(&[32, 2, 64, 64], (0..32*2*64*64).map(|i| (i as f32 * 0.01).sin()).collect());
    t("softmax [32,2,64,64]", 50, || {
        std::hint::black_box(logits.softmax(3).numel());
    });
}
