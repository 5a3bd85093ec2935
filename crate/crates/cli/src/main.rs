use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgvae::experiments::{self, BaseLatent};
use ecgvae::metrics::{self, Bandwidth, SampleSet};
use ecgvae::persistence::{self, CycleDataset};
use ecgvae::preprocess::{record_to_cycles, PreprocessOptions};
use ecgvae::synth::{gen_corpus_record, CorpusConfig};
use ecgvae::vae::{self, Architecture, CardiacCycle, TrainConfig};
use log::info;

mod config;
use config::FileConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Usage,
    Data,
    Numeric,
}

impl Category {
    fn code(self) -> u8 {
        match self {
            Category::Usage => 1,
            Category::Data => 2,
            Category::Numeric => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Data => "data",
            Category::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    category: Category,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { category: Category::Usage, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { category: Category::Data, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {one_line}", self.category.name())
    }
}

impl From<ecgvae::Error> for CliError {
    fn from(e: ecgvae::Error) -> Self {
        use ecgvae::Error as E;
        let category = match &e {
            E::NonFinite(_) => Category::Numeric,
            E::Parameter(_) => Category::Usage,
            _ => Category::Data,
        };
        CliError { category, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Cardiac-cycle VAE toolkit: synthesize, preprocess, train, generate, evaluate.
#[derive(Parser, Debug)]
#[command(name = "ecgvae", version)]
struct Cli {
    /// Flat key=value settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic ECG corpus with ground-truth R peaks.
    Synth(SynthArgs),
    /// Detect R peaks in a record directory and cut fixed-length cycles.
    Preprocess(PreprocessArgs),
    /// Train the VAE on a cycle dataset.
    Train(TrainArgs),
    /// Decode standard-normal latent draws into new cycles.
    Generate(GenerateArgs),
    /// Write posterior means of every cycle as CSV.
    Encode(EncodeArgs),
    /// Plot decodes while one latent feature sweeps a grid.
    Traverse(TraverseArgs),
    /// Compare two cycle datasets with the RBF-kernel MMD.
    Mmd(MmdArgs),
    /// Render selected cycles of a dataset as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Record length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    leads: Option<usize>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    half_width: Option<usize>,
    /// Keep the per-cycle baseline offset.
    #[arg(long)]
    keep_baseline: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the KL term (default 1e-4; larger values collapse the posterior
    /// because reconstruction is a per-sample mean and KL a per-dimension sum)
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TraverseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    feature: Option<usize>,
    /// Sweep every latent feature.
    #[arg(long)]
    all: bool,
    #[arg(long, allow_negative_numbers = true)]
    min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    max: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Draw the base latent from N(0, I) with this seed instead of using zeros.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MmdArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// `median` or a positive bandwidth.
    #[arg(long)]
    sigma: Option<String>,
    /// Seed for subsampling in the median heuristic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated cycle indices.
    #[arg(long, value_delimiter = ',', required = true)]
    indices: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", CliError::usage(first.trim_start_matches("error: ")));
            return ExitCode::from(Category::Usage.code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.category.code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Preprocess(a) => preprocess(a, &cfg),
        Command::Train(a) => train(a, &cfg),
        Command::Generate(a) => generate(a, &cfg),
        Command::Encode(a) => encode(a),
        Command::Traverse(a) => traverse(a, &cfg),
        Command::Mmd(a) => mmd(a, &cfg),
        Command::Plot(a) => plot(a),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn synth(a: SynthArgs, cfg: &FileConfig) -> CliResult {
    let records: usize = cfg.require(a.records, "records")?;
    let seed: u64 = cfg.require(a.seed, "seed")?;
    if records == 0 {
        return Err(CliError::usage("--records must be at least 1"));
    }
    let defaults = CorpusConfig::default();
    let corpus = CorpusConfig {
        duration_s: cfg.pick(a.duration, "duration", defaults.duration_s)?,
        leads: cfg.pick(a.leads, "leads", defaults.leads)?,
        ..defaults
    };
    corpus.validate()?;
    create_dir(&a.out)?;
    let mut truth = Vec::new();
    for i in 0..records {
        let rec = gen_corpus_record(&corpus, seed, i)?;
        let path = a.out.join(format!("{}.ecgr", rec.record.record_id));
        persistence::save_record(&path, &rec.record)?;
        truth.extend(rec.r_peaks.iter().map(|&r| (rec.record.record_id.clone(), r)));
    }
    persistence::write_r_peaks_csv(a.out.join("r_peaks.csv"), &truth)?;
    println!("wrote {records} records to {}", a.out.display());
    Ok(())
}

fn record_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ecgr"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("no .ecgr records in {}", dir.display())));
    }
    Ok(files)
}

fn preprocess(a: PreprocessArgs, cfg: &FileConfig) -> CliResult {
    let defaults = PreprocessOptions::default();
    let opts = PreprocessOptions {
        half_width: cfg.pick(a.half_width, "half-width", defaults.half_width)?,
        remove_baseline: !a.keep_baseline,
        ..defaults
    };
    if opts.half_width == 0 {
        return Err(CliError::usage("--half-width must be positive"));
    }
    let mut cycles = Vec::new();
    let (mut peaks, mut skipped) = (0, 0);
    let mut fs = None;
    for path in record_files(&a.input)? {
        let rec = persistence::load_record(&path)?;
        fs.get_or_insert(rec.sampling_rate_hz);
        let out = record_to_cycles(&rec, &opts)?;
        peaks += out.peaks_detected;
        skipped += out.skipped;
        cycles.extend(out.cycles);
    }
    let n = cycles.len();
    let ds = CycleDataset::new(fs.unwrap_or(ecgvae::DEFAULT_FS) as f32, 2 * opts.half_width, cycles)?;
    persistence::save_dataset(&a.out, &ds)?;
    println!("{n} cycles from {peaks} detected peaks ({skipped} skipped at edges) -> {}", a.out.display());
    Ok(())
}

fn load_cycles(path: &Path) -> CliResult<Vec<CardiacCycle>> {
    Ok(persistence::load_dataset(path)?.cycles)
}

fn train(a: TrainArgs, cfg: &FileConfig) -> CliResult {
    let d = TrainConfig::default();
    let tc = TrainConfig {
        epochs: cfg.pick(a.epochs, "epochs", d.epochs)?,
        batch_size: cfg.pick(a.batch_size, "batch-size", d.batch_size)?,
        lr: cfg.pick(a.lr, "lr", d.lr)?,
        beta_kl: cfg.pick(a.beta, "beta", d.beta_kl)?,
        eval_fraction: cfg.pick(a.eval_fraction, "eval-fraction", d.eval_fraction)?,
        seed: cfg.require(a.seed, "seed")?,
    };
    tc.validate()?;
    let cycles = load_cycles(&a.data)?;
    info!("training on {} cycles for {} epochs", cycles.len(), tc.epochs);
    let report = vae::train(&cycles, &tc)?;
    persistence::save_model(&a.out, &report.model)?;
    if let Some(h) = cfg.pick_opt(a.history, "history")? {
        persistence::write_loss_history_csv(h, &report.history)?;
    }
    if let Some(last) = report.history.last() {
        println!(
            "epoch {}: train recon {:.6e} kl {:.6e}; eval recon {:.6e} kl {:.6e}",
            last.epoch, last.train_recon, last.train_kl, last.eval_recon, last.eval_kl
        );
    }
    if let Some(b) = report.baseline_eval_mse {
        println!("mean-cycle baseline eval mse {b:.6e}");
    }
    Ok(())
}

fn generate(a: GenerateArgs, cfg: &FileConfig) -> CliResult {
    let count: usize = cfg.require(a.count, "count")?;
    let seed: u64 = cfg.require(a.seed, "seed")?;
    if count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let model = persistence::load_model(&a.model)?;
    let set = experiments::sample_synthetic(&model, count, seed)?;
    let cycles = set.cycles.into_iter().map(CardiacCycle::new).collect();
    let ds = CycleDataset::new(ecgvae::DEFAULT_FS as f32, model.input_len(), cycles)?;
    persistence::save_dataset(&a.out, &ds)?;
    println!("generated {count} cycles -> {}", a.out.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> CliResult {
    let model = persistence::load_model(&a.model)?;
    let codes = load_cycles(&a.data)?
        .iter()
        .map(|c| model.encode(c))
        .collect::<Result<Vec<_>, _>>()?;
    persistence::write_features_csv(&a.out, &codes)?;
    println!("encoded {} cycles -> {}", codes.len(), a.out.display());
    Ok(())
}

fn traverse(a: TraverseArgs, cfg: &FileConfig) -> CliResult {
    let min = cfg.pick(a.min, "min", -3.0)?;
    let max = cfg.pick(a.max, "max", 3.0)?;
    let steps: usize = cfg.pick(a.steps, "steps", 10)?;
    if steps == 0 || !min.is_finite() || !max.is_finite() {
        return Err(CliError::usage("--steps must be positive and --min/--max finite"));
    }
    let dim = Architecture::default().latent_dim;
    if let Some(f) = a.feature {
        if f >= dim {
            return Err(CliError::usage(format!("--feature {f} out of range 0..={}", dim - 1)));
        }
    }
    let model = persistence::load_model(&a.model)?;
    let features: Vec<usize> = match a.feature {
        Some(f) if f < model.latent_dim() => vec![f],
        Some(f) => return Err(CliError::usage(format!("--feature {f} out of range for this model"))),
        None => (0..model.latent_dim()).collect(),
    };
    let base = match cfg.pick_opt(a.seed, "seed")? {
        Some(s) => BaseLatent::Seeded(s),
        None => BaseLatent::Zero,
    };
    let grid = experiments::linspace(min, max, steps);
    let paths = experiments::traversal_plots(&model, base, &features, &grid, &a.out)?;
    println!("wrote {} traversal plots to {}", paths.len(), a.out.display());
    Ok(())
}

fn parse_bandwidth(s: &str) -> CliResult<Bandwidth> {
    if s == "median" {
        return Ok(Bandwidth::Median);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Bandwidth::Fixed(v)),
        _ => Err(CliError::usage(format!("--sigma must be `median` or a positive number, got {s:?}"))),
    }
}

fn mmd(a: MmdArgs, cfg: &FileConfig) -> CliResult {
    let bandwidth = parse_bandwidth(&cfg.pick(a.sigma, "sigma", "median".to_string())?)?;
    let seed = cfg.pick(a.seed, "seed", 0u64)?;
    let set = |p: &Path| -> CliResult<SampleSet> {
        let ds = persistence::load_dataset(p)?;
        // the file name, not the path as typed, so reports do not depend on the working directory
        let label = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(SampleSet::from_cycles(&ds.cycles, label)?)
    };
    let report = metrics::evaluate(&set(&a.a)?, &set(&a.b)?, bandwidth, seed)?;
    persistence::write_mmd_report_csv(&a.out, std::slice::from_ref(&report))?;
    println!("mmd2_biased {:.6e} (sigma {:.6e})", report.mmd2_biased, report.sigma);
    Ok(())
}

fn plot(a: PlotArgs) -> CliResult {
    let cycles = load_cycles(&a.data)?;
    let mut traces = Vec::with_capacity(a.indices.len());
    for &i in &a.indices {
        let c = cycles
            .get(i)
            .ok_or_else(|| CliError::usage(format!("index {i} out of range (dataset has {} cycles)", cycles.len())))?;
        traces.push(c.samples.clone());
    }
    let labels: Vec<String> = a.indices.iter().map(|i| format!("#{i}")).collect();
    persistence::emit_plot(&traces, &labels, &a.out)?;
    println!("plotted {} cycles -> {}", traces.len(), a.out.display());
    Ok(())
}
