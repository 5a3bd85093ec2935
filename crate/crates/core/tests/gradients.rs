use ecgvae::nn::gradcheck::{check_layer, check_model, check_sequential, GradReport};
use ecgvae::nn::LayerSpec;
use ecgvae::vae::Architecture;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const LAYER_TOL: f64 = 1e-4;
const COMPOSED_TOL: f64 = 1e-3;

fn assert_within(report: GradReport, tol: f64, what: &str) {
    assert!(
        report.max_rel_err < tol,
        "{what}: relative error {:e} at {} ({} checks)",
        report.max_rel_err,
        report.worst,
        report.checks
    );
    assert!(
        report.kinks * 10 <= report.checks,
        "{what}: {} of {} probes straddled a kink",
        report.kinks,
        report.checks
    );
}

fn layer(spec: LayerSpec, shape: &[usize]) {
    for seed in SEEDS {
        assert_within(check_layer(&spec, shape, seed).unwrap(), LAYER_TOL, &format!("{spec:?} seed {seed}"));
    }
}

#[test]
fn conv1d_same_padding() {
    layer(LayerSpec::conv(3, 4, 5), &[2, 3, 20]);
    layer(LayerSpec::conv(2, 3, 1), &[3, 2, 9]);
}

#[test]
fn conv1d_strided() {
    layer(LayerSpec::Conv1d { in_channels: 2, out_channels: 3, kernel: 3, stride: 2 }, &[2, 2, 11]);
}

#[test]
fn dense() {
    layer(LayerSpec::dense(7, 5), &[4, 7]);
}

#[test]
fn batch_norm_on_features_and_channels() {
    layer(LayerSpec::batch_norm(6), &[5, 6]);
    layer(LayerSpec::batch_norm(3), &[4, 3, 7]);
}

#[test]
fn relu() {
    layer(LayerSpec::Relu, &[3, 2, 10]);
}

#[test]
fn max_pool() {
    layer(LayerSpec::MaxPool1d { width: 2 }, &[2, 3, 16]);
}

#[test]
fn upsample() {
    layer(LayerSpec::UpsampleNearest1d { factor: 2 }, &[2, 3, 8]);
}

#[test]
fn encoder_and_decoder_branches() {
    let arch = Architecture::default();
    for seed in SEEDS {
        assert_within(check_sequential(&arch.enc_conv, &[3, 1, 400], seed).unwrap(), COMPOSED_TOL, "encoder conv");
        assert_within(check_sequential(&arch.enc_dense, &[3, 400], seed).unwrap(), COMPOSED_TOL, "encoder dense");
        assert_within(check_sequential(&arch.dec_dense, &[3, 25], seed).unwrap(), COMPOSED_TOL, "decoder dense");
        assert_within(check_sequential(&arch.dec_conv, &[3, 1, 25], seed).unwrap(), COMPOSED_TOL, "decoder conv");
    }
}

#[test]
fn full_model_objective() {
    let arch = Architecture::default();
    for seed in SEEDS {
        let report = check_model(&arch, 3, 0.5, seed, 20).unwrap();
        assert_within(report, COMPOSED_TOL, &format!("full model seed {seed}"));
    }
}
