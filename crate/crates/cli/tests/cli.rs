use std::path::Path;
use std::process::{Command, Output};

use ecgvae::persistence::{load_dataset, save_dataset, CycleDataset};
use ecgvae::vae::CardiacCycle;

fn ecgvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgvae")).args(args).output().expect("run ecgvae")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn single_line_error(out: &Output, category: &str) {
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "stderr: {err}");
    assert!(err.starts_with(&format!("error[{category}]: ")), "stderr: {err}");
}

fn tiny_dataset(path: &Path, n: usize) {
    let cycles = (0..n)
        .map(|k| CardiacCycle::new((0..400).map(|i| ((i + 3 * k) as f32 * 0.03).sin() * 0.5).collect()))
        .collect();
    save_dataset(path, &CycleDataset::new(500.0, 400, cycles).unwrap()).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert_exit(&ecgvae(&["--help"]), 0);
    assert_exit(&ecgvae(&["--version"]), 0);
    assert_exit(&ecgvae(&["train", "--help"]), 0);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = ecgvae(&["frobnicate"]);
    assert_exit(&out, 1);
    single_line_error(&out, "usage");
}

#[test]
fn missing_seed_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecgvae(&["synth", "--records", "2", "--out", p(dir.path())]);
    assert_exit(&out, 1);
    single_line_error(&out, "usage");
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));

    let data = dir.path().join("d.ecgc");
    tiny_dataset(&data, 4);
    let out = ecgvae(&["train", "--data", p(&data), "--out", p(&dir.path().join("m.ecgv"))]);
    assert_exit(&out, 1);
}

#[test]
fn traverse_feature_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.ecgc");
    let model = dir.path().join("m.ecgv");
    tiny_dataset(&data, 6);
    assert_exit(
        &ecgvae(&["train", "--data", p(&data), "--epochs", "1", "--seed", "1", "--out", p(&model)]),
        0,
    );
    let out = ecgvae(&["traverse", "--model", p(&model), "--feature", "25", "--out", p(dir.path())]);
    assert_exit(&out, 1);
    single_line_error(&out, "usage");
    let out = ecgvae(&[
        "traverse", "--model", p(&model), "--feature", "24", "--min", "-1", "--max", "1", "--steps", "3", "--out",
        p(&dir.path().join("t")),
    ]);
    assert_exit(&out, 0);
    let svg = std::fs::read_to_string(dir.path().join("t").join("feature_24.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn corrupt_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.ecgc");
    tiny_dataset(&data, 3);
    let mut bytes = std::fs::read(&data).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&data, &bytes).unwrap();
    let out = ecgvae(&["plot", "--data", p(&data), "--indices", "0", "--out", p(&dir.path().join("x.svg"))]);
    assert_exit(&out, 2);
    single_line_error(&out, "data");

    let missing = ecgvae(&["encode", "--model", "/nonexistent.ecgv", "--data", p(&data), "--out", "/tmp/x.csv"]);
    assert_exit(&missing, 2);
}

#[test]
fn mmd_of_a_file_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.ecgc");
    let report = dir.path().join("r.csv");
    tiny_dataset(&data, 12);
    assert_exit(&ecgvae(&["mmd", "--a", p(&data), "--b", p(&data), "--out", p(&report)]), 0);
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mmd2_biased").unwrap();
    let v: f64 = row[col].parse().unwrap();
    assert!(v <= 1e-12, "biased MMD² of a set with itself = {v}");

    let bad = ecgvae(&["mmd", "--a", p(&data), "--b", p(&data), "--sigma", "-2", "--out", p(&report)]);
    assert_exit(&bad, 1);
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# corpus\nrecords = 3\nseed = 11\nduration = 4\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_exit(&ecgvae(&["synth", "--config", p(&cfg), "--out", p(&a)]), 0);
    assert_exit(&ecgvae(&["synth", "--config", p(&cfg), "--records", "2", "--out", p(&b)]), 0);
    let count = |d: &Path| std::fs::read_dir(d).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ecgr")).count();
    assert_eq!(count(&a), 3);
    assert_eq!(count(&b), 2);
    // the shared records come from the same seed
    assert_eq!(std::fs::read(a.join("rec00001.ecgr")).unwrap(), std::fs::read(b.join("rec00001.ecgr")).unwrap());

    std::fs::write(&cfg, "records: 3\n").unwrap();
    assert_exit(&ecgvae(&["synth", "--config", p(&cfg), "--seed", "1", "--out", p(&a)]), 1);
}

#[test]
fn small_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    assert_exit(&ecgvae(&["synth", "--records", "4", "--seed", "3", "--out", p(&d("corpus"))]), 0);
    let truth = std::fs::read_to_string(d("corpus").join("r_peaks.csv")).unwrap();
    assert!(truth.starts_with("record_id,sample_index\n"));
    assert!(truth.lines().count() > 4 * 5);

    assert_exit(&ecgvae(&["preprocess", "--in", p(&d("corpus")), "--out", p(&d("cycles.ecgc"))]), 0);
    let cycles = load_dataset(d("cycles.ecgc")).unwrap();
    assert!(cycles.cycles.len() >= 4 * 6);
    assert!(cycles.cycles.iter().all(|c| c.len() == 400 && c.source_record.is_some()));

    let train = ecgvae(&[
        "train", "--data", p(&d("cycles.ecgc")), "--epochs", "2", "--lr", "0.001", "--beta", "0.01", "--seed", "5",
        "--out", p(&d("m.ecgv")), "--history", p(&d("loss.csv")),
    ]);
    assert_exit(&train, 0);
    let history = std::fs::read_to_string(d("loss.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    assert_exit(&ecgvae(&["generate", "--model", p(&d("m.ecgv")), "--count", "7", "--seed", "1", "--out", p(&d("g.ecgc"))]), 0);
    assert_eq!(load_dataset(d("g.ecgc")).unwrap().cycles.len(), 7);

    assert_exit(&ecgvae(&["encode", "--model", p(&d("m.ecgv")), "--data", p(&d("g.ecgc")), "--out", p(&d("f.csv"))]), 0);
    let features = std::fs::read_to_string(d("f.csv")).unwrap();
    assert_eq!(features.lines().count(), 8);
    assert!(features.lines().all(|l| l.split(',').count() == 25));

    assert_exit(&ecgvae(&["plot", "--data", p(&d("g.ecgc")), "--indices", "0,2,4", "--out", p(&d("fig.svg"))]), 0);
    assert_eq!(std::fs::read_to_string(d("fig.svg")).unwrap().matches("<polyline").count(), 3);
    let oob = ecgvae(&["plot", "--data", p(&d("g.ecgc")), "--indices", "9", "--out", p(&d("fig.svg"))]);
    assert_exit(&oob, 1);
}
