//! Property tests over the coder and quantization invariants.

use proptest::prelude::*;
use roicodec::entropy::{quantize, range_decode, range_encode, CdfTable, QuantizeMode};
use roicodec::tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Lossless round trip on random (symbols, tables).
    #[test]
    fn coder_roundtrip_random_tables(
        seed in 0u64..1_000_000,
        n_symbols in 2usize..40,
        len in 0usize..400,
    ) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let pmf: Vec<f64> = (0..n_symbols).map(|_| rng.random_range(1e-6..1.0)).collect();
        let table = CdfTable::from_pmf(&pmf);
        let symbols: Vec<u32> = (0..len).map(|_| rng.random_range(0..n_symbols as u32)).collect();
        let tables: Vec<&CdfTable> = vec![&table; len];
        let bytes = range_encode(&symbols, &tables).unwrap();
        prop_assert_eq!(range_decode(&bytes, &tables).unwrap(), symbols);
    }

    /// Mixed per-symbol tables round trip too.
    #[test]
    fn coder_roundtrip_mixed_tables(seed in 0u64..1_000_000, len in 1usize..200) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut owned = Vec::with_capacity(len);
        let mut symbols = Vec::with_capacity(len);
        for _ in 0..len {
            let k = rng.random_range(1..12usize);
            let pmf: Vec<f64> = (0..k).map(|_| rng.random_range(0.001..1.0)).collect();
            symbols.push(rng.random_range(0..k as u32));
            owned.push(CdfTable::from_pmf(&pmf));
        }
        let tables: Vec<&CdfTable> = owned.iter().collect();
        let bytes = range_encode(&symbols, &tables).unwrap();
        prop_assert_eq!(range_decode(&bytes, &tables).unwrap(), symbols);
    }

    /// Noise quantization stays within ±1/2.
    #[test]
    fn noise_quantization_bounded(seed in 0u64..1_000_000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let n = 512;
        let v = Tensor::<f64>::full(&[n], 0.3);
        let q = quantize(&v, QuantizeMode::Noise, None, Some(&mut rng));
        for (a, b) in v.to_vec().iter().zip(q.to_vec()) {
            prop_assert!((b - a).abs() <= 0.5);
        }
    }

    /// The round rule is half-away-from-zero everywhere.
    #[test]
    fn rounding_matches_rule(v in -100.0f64..100.0) {
        let t = Tensor::<f64>::from_vec(&[1], vec![v]);
        let r = quantize(&t, QuantizeMode::Round, None, None).item();
        let expect = if v - v.trunc() >= 0.5 {
            v.trunc() + 1.0
        } else if v - v.trunc() <= -0.5 {
            v.trunc() - 1.0
        } else {
            v.trunc()
        };
        prop_assert_eq!(r, expect);
    }

    /// Quantized tables always sum to the full 16-bit budget with every
    /// frequency at least one.
    #[test]
    fn table_budget_invariant(seed in 0u64..1_000_000, k in 1usize..200) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let pmf: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let table = CdfTable::from_pmf(&pmf);
        let total: u32 = (0..table.num_symbols()).map(|s| table.freq(s)).sum();
        prop_assert_eq!(total, 1u32 << 16);
        for s in 0..table.num_symbols() {
            prop_assert!(table.freq(s) >= 1);
        }
    }
}

#[test]
fn noise_quantization_preserves_expectation() {
    // mean over 1e5 draws within 3σ of the input mean
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(20240);
    let n = 100_000;
    let v = Tensor::<f64>::full(&[n], 0.3);
    let q = quantize(&v, QuantizeMode::Noise, None, Some(&mut rng));
    let mean: f64 = q.to_vec().iter().sum::<f64>() / n as f64;
    let sigma = 1.0 / (12.0 * n as f64).sqrt();
    assert!(
        (mean - 0.3).abs() < 3.0 * sigma,
        "mean {mean} drifted more than 3σ ({sigma})"
    );
}

#[test]
fn factorized_integer_masses_sum_below_one() {
    use roicodec::entropy::FactorizedPrior;
    use roicodec::nn::ParamSet;
    for seed in 0..5u64 {
        let mut ps = ParamSet::<f64>::new(seed);
        let prior = FactorizedPrior::new(&mut ps, "p", 2);
        for c in 0..2 {
            let mut total = 0.0;
            for k in -400..=400 {
                let p = prior.cdf_scalar(c, k as f64 + 0.5) - prior.cdf_scalar(c, k as f64 - 0.5);
                assert!(p >= 0.0, "negative mass at {k}");
                total += p;
            }
            assert!(total <= 1.0 + 1e-6, "mass {total} exceeds 1");
        }
    }
}
