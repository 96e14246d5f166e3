use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use roicodec::data::synth::synth_pair;
use roicodec::entropy::{estimate_bits_graph, gaussian_likelihood, quantize, QuantizeMode};
use roicodec::model::{lambda_map, CodecModel, Geometry, ModelConfig};
use roicodec::train::rd_loss_parts;
use roicodec::tensor::Tensor;
use std::time::Instant;

fn main() {
    let model = CodecModel::<f32>::new(ModelConfig::toy(0)).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let (i0, m0) = synth_pair::<f32>(&mut rng, 64);
    let (i1, m1) = synth_pair::<f32>(&mut rng, 64);
    let images = Tensor::concat(&[&i0, &i1], 0);
    let masks = Tensor::concat(&[&m0, &m1], 0);
    let geometry = Geometry::for_input(2, 64, 64);
    let lmap = lambda_map(&masks, 0.001, 5.0).unwrap();
    let mut nrng = ChaCha12Rng::seed_from_u64(2);

    let reps = 5;
    let t0 = Instant::now();
    for _ in 0..reps {
        let (latents, _) = model.encode_latents_padded(&images, &masks, geometry, None).unwrap();
        std::hint::black_box(latents.y.to_vec());
    }
    println!("encode fwd: {:?}/it", t0.elapsed() / reps);

    let (latents, _) = model.encode_latents_padded(&images, &masks, geometry, None).unwrap();
    let y_noisy = quantize(&latents.y, QuantizeMode::Noise, None, Some(&mut nrng));
    let z_noisy = quantize(&latents.z, QuantizeMode::Noise, None, Some(&mut nrng));

    let t = Instant::now();
    for _ in 0..reps {
        let conds = model.decoder_conditions(&z_noisy);
        let (mu, sigma) = model.entropy_params(&z_noisy, &conds, None, None);
        std::hint::black_box(mu.to_vec().len() + sigma.to_vec().len());
    }
    println!("hyp dec + params fwd: {:?}/it", t.elapsed() / reps);

    let conds = model.decoder_conditions(&z_noisy);
    let t = Instant::now();
    for _ in 0..reps {
        let recon = model.synthesis(&y_noisy, &conds, None);
        std::hint::black_box(recon.to_vec().len());
    }
    println!("main dec fwd: {:?}/it", t.elapsed() / reps);

    // full forward + backward
    let t = Instant::now();
    for _ in 0..reps {
        let (latents, _) = model.encode_latents_padded(&images, &masks, geometry, None).unwrap();
        let y_noisy = quantize(&latents.y, QuantizeMode::Noise, None, Some(&mut nrng));
        let z_noisy = quantize(&latents.z, QuantizeMode::Noise, None, Some(&mut nrng));
        let p_z = model.prior.likelihood(&z_noisy);
        let conds = model.decoder_conditions(&z_noisy);
        let (mu, sigma) = model.entropy_params(&z_noisy, &conds, None, None);
        let p_y = gaussian_likelihood(&y_noisy, &mu, &sigma);
        let recon = model.synthesis(&y_noisy, &conds, None);
        let bits = estimate_bits_graph(&[&p_y, &p_z]);
        let (d, r) = rd_loss_parts(&images, &recon, &lmap, &bits, 2 * 64 * 64);
        let loss = d.add(&r);
        std::hint::black_box(loss.item());
    }
    println!("full fwd: {:?}/it", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let (latents, _) = model.encode_latents_padded(&images, &masks, geometry, None).unwrap();
        let y_noisy = quantize(&latents.y, QuantizeMode::Noise, None, Some(&mut nrng));
        let z_noisy = quantize(&latents.z, QuantizeMode::Noise, None, Some(&mut nrng));
        let p_z = model.prior.likelihood(&z_noisy);
        let conds = model.decoder_conditions(&z_noisy);
        let (mu, sigma) = model.entropy_params(&z_noisy, &conds, None, None);
        let p_y = gaussian_likelihood(&y_noisy, &mu, &sigma);
        let recon = model.synthesis(&y_noisy, &conds, None);
        let bits = estimate_bits_graph(&[&p_y, &p_z]);
        let (d, r) = rd_loss_parts(&images, &recon, &lmap, &bits, 2 * 64 * 64);
        let loss = d.add(&r);
        for p in model.named_params() { p.tensor.zero_grad(); }
        loss.backward().unwrap();
    }
    println!("full fwd+bwd: {:?}/it", t.elapsed() / reps);
}
