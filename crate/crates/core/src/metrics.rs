//! Maximum mean discrepancy with an RBF kernel.
//!
//! All kernel sums are accumulated in `f64` over fixed row blocks, and the
//! block partials are added in block order, so results are bit-identical
//! for any worker count (see [`worker_threads`]).

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vae::CardiacCycle;

/// Pooled sets above this size are subsampled for the median heuristic.
pub const MEDIAN_EXACT_LIMIT: usize = 2000;

const BLOCK_ROWS: usize = 32;

/// A labelled set of equal-length signals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub cycles: Vec<Vec<f32>>,
    pub label: String,
}

impl SampleSet {
    pub fn new(cycles: Vec<Vec<f32>>, label: impl Into<String>) -> Result<Self> {
        let first = cycles.first().ok_or(Error::EmptyDataset)?;
        if cycles.iter().any(|c| c.len() != first.len()) {
            return Err(Error::dim("sample set has mixed lengths"));
        }
        Ok(SampleSet { cycles, label: label.into() })
    }

    pub fn from_cycles(cycles: &[CardiacCycle], label: impl Into<String>) -> Result<Self> {
        SampleSet::new(cycles.iter().map(|c| c.samples.clone()).collect(), label)
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.cycles[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// V-statistic, includes the diagonal; never negative.
    Biased,
    /// U-statistic, excludes the diagonal of the within-set sums.
    Unbiased,
}

/// Worker count from `ECGVAE_THREADS`, default 1.
pub fn worker_threads() -> usize {
    std::env::var("ECGVAE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

#[inline]
fn sq_dist(x: &[f32], y: &[f32]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum()
}

/// `exp(-|x - y|^2 / (2 sigma^2))`.
pub fn rbf_kernel(x: &[f32], y: &[f32], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("kernel bandwidth must be > 0, got {sigma}")));
    }
    if x.len() != y.len() {
        return Err(Error::dim(format!("kernel inputs of length {} and {}", x.len(), y.len())));
    }
    Ok((-sq_dist(x, y) / (2.0 * sigma * sigma)).exp())
}

/// Median pairwise Euclidean distance over the pooled sets. Falls back to
/// 1.0 when that median is zero (e.g. all points identical).
pub fn median_heuristic(a: &SampleSet, b: &SampleSet, seed: u64) -> Result<f64> {
    let mut pooled: Vec<&[f32]> = a.cycles.iter().chain(&b.cycles).map(Vec::as_slice).collect();
    if pooled.len() < 2 {
        return Err(Error::Parameter("median heuristic needs at least 2 points".into()));
    }
    if pooled.len() > MEDIAN_EXACT_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, pooled.len(), MEDIAN_EXACT_LIMIT).into_vec();
        picked.sort_unstable();
        pooled = picked.into_iter().map(|i| pooled[i]).collect();
    }
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    let med = median(&mut d);
    Ok(if med > 0.0 && med.is_finite() { med } else { 1.0 })
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::MIN, f64::max);
        0.5 * (lower + upper)
    }
}

/// Sum of `k(x_i, y_j)` over the block of rows `rows`. With `upper`, only
/// pairs `j > i` are visited (x and y are the same set).
fn block_sum(x: &[Vec<f32>], y: &[Vec<f32>], rows: std::ops::Range<usize>, gamma: f64, upper: bool) -> f64 {
    let mut acc = 0.0;
    for i in rows {
        let start = if upper { i + 1 } else { 0 };
        for yj in &y[start..] {
            acc += (-sq_dist(&x[i], yj) * gamma).exp();
        }
    }
    acc
}

fn kernel_sum(x: &[Vec<f32>], y: &[Vec<f32>], gamma: f64, upper: bool) -> f64 {
    let blocks: Vec<std::ops::Range<usize>> =
        (0..x.len()).step_by(BLOCK_ROWS).map(|s| s..(s + BLOCK_ROWS).min(x.len())).collect();
    let workers = worker_threads().min(blocks.len()).max(1);
    let partials: Vec<f64> = if workers == 1 {
        blocks.iter().map(|r| block_sum(x, y, r.clone(), gamma, upper)).collect()
    } else {
        let mut partials = vec![0.0; blocks.len()];
        std::thread::scope(|s| {
            let chunk = blocks.len().div_ceil(workers);
            for (out, rs) in partials.chunks_mut(chunk).zip(blocks.chunks(chunk)) {
                s.spawn(move || {
                    for (o, r) in out.iter_mut().zip(rs) {
                        *o = block_sum(x, y, r.clone(), gamma, upper);
                    }
                });
            }
        });
        partials
    };
    partials.iter().sum()
}

/// Squared MMD between two sets under an RBF kernel of bandwidth `sigma`.
pub fn mmd2(a: &SampleSet, b: &SampleSet, sigma: f64, estimator: Estimator) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("kernel bandwidth must be > 0, got {sigma}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("sets of dimension {} and {}", a.dim(), b.dim())));
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let min = if estimator == Estimator::Biased { 1 } else { 2 };
    if a.len() < min || b.len() < min {
        return Err(Error::Parameter(format!(
            "{estimator:?} MMD needs at least {min} samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let off_aa = 2.0 * kernel_sum(&a.cycles, &a.cycles, gamma, true);
    let off_bb = 2.0 * kernel_sum(&b.cycles, &b.cycles, gamma, true);
    let ab = kernel_sum(&a.cycles, &b.cycles, gamma, false) / (n * m);
    Ok(match estimator {
        Estimator::Biased => ((off_aa + n) / (n * n) + (off_bb + m) / (m * m) - 2.0 * ab).max(0.0),
        Estimator::Unbiased => off_aa / (n * (n - 1.0)) + off_bb / (m * (m - 1.0)) - 2.0 * ab,
    })
}

/// How the kernel bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

/// One row of an MMD report.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdReport {
    pub label_a: String,
    pub label_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub sigma: f64,
    pub mmd2_biased: f64,
    /// `None` when a set has fewer than two samples.
    pub mmd2_unbiased: Option<f64>,
    pub seed: u64,
}

/// Both estimators under one bandwidth.
pub fn evaluate(a: &SampleSet, b: &SampleSet, bandwidth: Bandwidth, seed: u64) -> Result<MmdReport> {
    let sigma = match bandwidth {
        Bandwidth::Median => median_heuristic(a, b, seed)?,
        Bandwidth::Fixed(s) => s,
    };
    let biased = mmd2(a, b, sigma, Estimator::Biased)?;
    let unbiased = if a.len() >= 2 && b.len() >= 2 {
        Some(mmd2(a, b, sigma, Estimator::Unbiased)?)
    } else {
        None
    };
    Ok(MmdReport {
        label_a: a.label.clone(),
        label_b: b.label.clone(),
        n_a: a.len(),
        n_b: b.len(),
        sigma,
        mmd2_biased: biased,
        mmd2_unbiased: unbiased,
        seed,
    })
}
