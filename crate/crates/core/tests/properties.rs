use ecgvae::metrics::{mmd2, rbf_kernel, Estimator, SampleSet};
use ecgvae::nn::{ops, Init, Layer, LayerSpec, Mode, Tensor};
use ecgvae::preprocess::{extract_cycles, RPeakList};
use ecgvae::synth::{gen_record, MorphologyParams};
use ecgvae::vae::{kl_loss, reparameterize, LatentCode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite(range: f64) -> impl Strategy<Value = f64> {
    -range..range
}

fn small_set(dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-3.0f32..3.0, dim), 1..8)
}

proptest! {
    #[test]
    fn kl_nonnegative_and_zero_only_at_prior(
        mu in prop::collection::vec(finite(5.0), 1..30),
        seed in any::<u64>(),
    ) {
        let lv: Vec<f64> = mu.iter().enumerate().map(|(i, m)| ((seed >> (i % 60)) & 7) as f64 * 0.5 - 2.0 + m * 0.1).collect();
        let kl = kl_loss(&mu, &lv);
        prop_assert!(kl >= 0.0);
        let zeros = vec![0.0; mu.len()];
        prop_assert_eq!(kl_loss(&zeros, &zeros), 0.0);
        if mu.iter().any(|&m| m.abs() > 1e-3) {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn reparameterize_is_affine_in_noise(
        mu in prop::collection::vec(finite(3.0), 25),
        lv in prop::collection::vec(finite(3.0), 25),
        eps in prop::collection::vec(finite(3.0), 25),
    ) {
        let code = LatentCode { mu: mu.clone(), logvar: lv.clone(), z: None, noise_seed: None };
        let z = reparameterize(&code, &eps).unwrap();
        let z0 = reparameterize(&code, &[0.0; 25]).unwrap();
        prop_assert_eq!(&z0, &mu);
        for i in 0..25 {
            let expected = mu[i] + (0.5 * lv[i]).exp() * eps[i];
            prop_assert!((z[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn rbf_kernel_in_unit_interval(
        x in prop::collection::vec(-5.0f32..5.0, 6),
        y in prop::collection::vec(-5.0f32..5.0, 6),
        sigma in 0.1f64..10.0,
    ) {
        let k = rbf_kernel(&x, &y, sigma).unwrap();
        prop_assert!((0.0..=1.0).contains(&k));
        prop_assert_eq!(rbf_kernel(&x, &x, sigma).unwrap(), 1.0);
        prop_assert_eq!(k, rbf_kernel(&y, &x, sigma).unwrap());
    }

    #[test]
    fn biased_mmd_symmetric_and_nonnegative(a in small_set(4), b in small_set(4), sigma in 0.2f64..5.0) {
        let a = SampleSet::new(a, "a").unwrap();
        let b = SampleSet::new(b, "b").unwrap();
        let ab = mmd2(&a, &b, sigma, Estimator::Biased).unwrap();
        let ba = mmd2(&b, &a, sigma, Estimator::Biased).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(mmd2(&a, &a, sigma, Estimator::Biased).unwrap() <= 1e-12);
    }

    #[test]
    fn layer_output_shape_matches_spec(
        batch in 1usize..4,
        channels in 1usize..4,
        len_half in 2usize..20,
        kernel_half in 0usize..3,
        seed in any::<u64>(),
    ) {
        let len = len_half * 2;
        let specs = [
            LayerSpec::conv(channels, 3, 2 * kernel_half + 1),
            LayerSpec::Conv1d { in_channels: channels, out_channels: 2, kernel: 2 * kernel_half + 1, stride: 2 },
            LayerSpec::MaxPool1d { width: 2 },
            LayerSpec::UpsampleNearest1d { factor: 2 },
            LayerSpec::Relu,
            LayerSpec::batch_norm(channels),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::full(&[batch, channels, len], 0.5);
        for spec in &specs {
            let mut layer = Layer::<f64>::from_spec(spec, Init::He, &mut rng).unwrap();
            let y = layer.infer(&x).unwrap();
            let mut expected = vec![batch];
            expected.extend(spec.output_shape(&[channels, len]).unwrap());
            prop_assert_eq!(y.shape(), &expected[..]);
            if batch >= 2 {
                let y = layer.forward(&x, Mode::Train).unwrap();
                prop_assert_eq!(y.shape(), &expected[..]);
            }
        }
        prop_assert_eq!(ops::conv_out_len(len, 2), len / 2);
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass(
        values in prop::collection::vec(-10.0f64..10.0, 24),
        grads in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pool = Layer::<f64>::from_spec(&LayerSpec::MaxPool1d { width: 2 }, Init::He, &mut rng).unwrap();
        pool.forward(&Tensor::new(&[1, 2, 12], values).unwrap(), Mode::Train).unwrap();
        let dx = pool.backward(&Tensor::new(&[1, 2, 6], grads.clone()).unwrap()).unwrap();
        let s_in: f64 = dx.data().iter().sum();
        let s_out: f64 = grads.iter().sum();
        prop_assert!((s_in - s_out).abs() < 1e-12);
    }

    #[test]
    fn relu_gradient_is_a_mask(
        values in prop::collection::vec(-5.0f64..5.0, 16),
        grads in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut relu = Layer::<f64>::from_spec(&LayerSpec::Relu, Init::He, &mut rng).unwrap();
        relu.forward(&Tensor::new(&[2, 8], values.clone()).unwrap(), Mode::Train).unwrap();
        let dx = relu.backward(&Tensor::new(&[2, 8], grads.clone()).unwrap()).unwrap();
        for ((&d, &g), &v) in dx.data().iter().zip(&grads).zip(&values) {
            prop_assert_eq!(d, if v > 0.0 { g } else { 0.0 });
        }
    }

    #[test]
    fn every_cycle_is_centred_on_its_peak(
        bpm in 45.0f64..150.0,
        seed in any::<u64>(),
        half_width in prop::sample::select(vec![50usize, 100, 200]),
    ) {
        let params = MorphologyParams { heart_rate_bpm: bpm, noise_std: 0.0, baseline_mv: 0.0, seed, ..Default::default() };
        let rec = gen_record(&params, 6.0, 500.0).unwrap();
        let lead = &rec.record.leads[0];
        let peaks = RPeakList { indices: rec.r_peaks.clone(), detector_name: "truth".into(), warning: None };
        let ex = extract_cycles(lead, &peaks, half_width, false);
        prop_assert_eq!(ex.cycles.len() + ex.skipped, rec.r_peaks.len());
        for (c, &r) in ex.cycles.iter().zip(&ex.peaks_used) {
            prop_assert_eq!(c.len(), 2 * half_width);
            prop_assert_eq!(c.samples[half_width], lead[r]);
        }
    }
}
