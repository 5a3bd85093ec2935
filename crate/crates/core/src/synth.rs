//! Gaussian-bump synthetic ECG.
//!
//! Each beat is the sum of five Gaussian bumps (P, Q, R, S, T) placed at
//! fixed offsets from the R peak. Records tile beats at a jittered heart
//! rate and report the exact R sample indices, which makes them usable as
//! ground truth for the R-peak detector and as a stand-in training corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::EcgRecord;
use crate::vae::CardiacCycle;
use crate::CYCLE_LEN;

/// One Gaussian bump: peak `amplitude` (mV) at `offset` seconds from R,
/// standard deviation `width` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub offset: f64,
    pub width: f64,
}

impl Wave {
    pub const fn new(amplitude: f64, offset: f64, width: f64) -> Self {
        Wave { amplitude, offset, width }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.offset) / self.width;
        self.amplitude * (-0.5 * u * u).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologyParams {
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
    pub heart_rate_bpm: f64,
    pub hr_jitter_fraction: f64,
    pub noise_std: f64,
    /// Constant offset added to the whole lead, mV.
    pub baseline_mv: f64,
    pub seed: u64,
}

impl Default for MorphologyParams {
    fn default() -> Self {
        MorphologyParams {
            p: Wave::new(0.15, -0.16, 0.025),
            q: Wave::new(-0.1, -0.03, 0.008),
            r: Wave::new(1.0, 0.0, 0.01),
            s: Wave::new(-0.25, 0.03, 0.008),
            t: Wave::new(0.3, 0.25, 0.05),
            heart_rate_bpm: 60.0,
            hr_jitter_fraction: 0.0,
            noise_std: 0.0,
            baseline_mv: 0.0,
            seed: 0,
        }
    }
}

impl MorphologyParams {
    pub fn waves(&self) -> [Wave; 5] {
        [self.p, self.q, self.r, self.s, self.t]
    }

    pub fn validate(&self) -> Result<()> {
        if self.waves().iter().any(|w| !(w.width > 0.0)) {
            return Err(Error::Parameter("wave widths must be > 0".into()));
        }
        if !(self.r.amplitude > self.q.amplitude.abs() && self.r.amplitude > self.s.amplitude.abs()) {
            return Err(Error::Parameter("R amplitude must exceed |Q| and |S|".into()));
        }
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return Err(Error::Parameter(format!("heart rate {} outside [30, 220]", self.heart_rate_bpm)));
        }
        if !(0.0..1.0).contains(&self.hr_jitter_fraction) || !(self.noise_std >= 0.0) {
            return Err(Error::Parameter("jitter must be in [0, 1) and noise_std >= 0".into()));
        }
        Ok(())
    }

    /// Noise-free single-beat value at `t` seconds from R.
    pub fn beat(&self, t: f64) -> f64 {
        self.waves().iter().map(|w| w.eval(t)).sum()
    }

    /// Seconds beyond which every bump is below ~1e-8 of its peak.
    fn support(&self) -> f64 {
        self.waves().iter().map(|w| w.offset.abs() + 6.0 * w.width).fold(0.0, f64::max)
    }
}

fn noise_dist(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"))
}

/// One beat in a `CYCLE_LEN` window with R at index `CYCLE_LEN / 2`.
/// Returns the cycle and the R index.
pub fn gen_cycle(params: &MorphologyParams, fs: f64) -> Result<(CardiacCycle, usize)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = noise_dist(params.noise_std);
    let center = CYCLE_LEN / 2;
    let samples = (0..CYCLE_LEN)
        .map(|i| {
            let t = (i as f64 - center as f64) / fs;
            let n = noise.map_or(0.0, |d| d.sample(&mut rng));
            (params.beat(t) + params.baseline_mv + n) as f32
        })
        .collect();
    Ok((CardiacCycle::new(samples), center))
}

/// R-peak sample indices for a record of `duration_s` seconds. The first
/// beat sits half an interval in; each interval is `60 / bpm` scaled by
/// `1 + jitter * u`, `u ~ U[-1, 1]`.
fn beat_positions<R: Rng>(bpm: f64, jitter: f64, duration_s: f64, fs: f64, rng: &mut R) -> Vec<usize> {
    let base = 60.0 / bpm;
    let draw = |rng: &mut R| {
        if jitter > 0.0 {
            base * (1.0 + jitter * rng.random_range(-1.0..=1.0))
        } else {
            base
        }
    };
    let mut out = Vec::new();
    let mut t = draw(rng) / 2.0;
    while t < duration_s {
        let idx = (t * fs).round() as usize;
        if idx < (duration_s * fs).round() as usize {
            out.push(idx);
        }
        t += draw(rng);
    }
    out
}

fn render_lead<R: Rng>(params: &MorphologyParams, peaks: &[usize], n: usize, fs: f64, rng: &mut R) -> Vec<f32> {
    let mut x = vec![params.baseline_mv; n];
    let reach = (params.support() * fs).ceil() as isize;
    for &r in peaks {
        let lo = (r as isize - reach).max(0) as usize;
        let hi = ((r as isize + reach + 1) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            *v += params.beat((i as f64 - r as f64) / fs);
        }
    }
    if let Some(d) = noise_dist(params.noise_std) {
        x.iter_mut().for_each(|v| *v += d.sample(rng));
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// A generated record with its ground-truth R indices (shared by all leads).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub record: EcgRecord,
    pub r_peaks: Vec<usize>,
}

/// Single-lead record with beats tiled over `duration_s`.
pub fn gen_record(params: &MorphologyParams, duration_s: f64, fs: f64) -> Result<SynthRecord> {
    params.validate()?;
    if !(fs > 0.0) || duration_s * params.heart_rate_bpm / 60.0 < 1.0 {
        return Err(Error::Parameter(format!("duration {duration_s} s shorter than one beat interval")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let peaks = beat_positions(params.heart_rate_bpm, params.hr_jitter_fraction, duration_s, fs, &mut rng);
    let n = (duration_s * fs).round() as usize;
    let lead = render_lead(params, &peaks, n, fs, &mut rng);
    let record = EcgRecord::new(fs, vec![lead], format!("synth-{}", params.seed))?;
    Ok(SynthRecord { record, r_peaks: peaks })
}

/// Closed interval a parameter is drawn from uniformly.
pub type Range = (f64, f64);

/// Sampling ranges for the per-lead morphology of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRanges {
    pub amplitude: Range,
    pub offset: Range,
    pub width: Range,
}

impl WaveRanges {
    fn draw<R: Rng>(&self, rng: &mut R) -> Wave {
        Wave::new(uniform(rng, self.amplitude), uniform(rng, self.offset), uniform(rng, self.width))
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): Range) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Distribution a corpus is drawn from. Heart rate and jitter are per
/// record (all leads share the beat positions); every wave, the noise level
/// and the baseline offset are redrawn per lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub leads: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub heart_rate_bpm: Range,
    pub hr_jitter_fraction: f64,
    pub p: WaveRanges,
    pub q: WaveRanges,
    pub r: WaveRanges,
    pub s: WaveRanges,
    pub t: WaveRanges,
    pub noise_std: Range,
    pub baseline_mv: Range,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let w = |amplitude, offset, width| WaveRanges { amplitude, offset, width };
        CorpusConfig {
            leads: 1,
            duration_s: 10.0,
            fs: 500.0,
            heart_rate_bpm: (55.0, 95.0),
            hr_jitter_fraction: 0.05,
            p: w((0.05, 0.25), (-0.20, -0.14), (0.020, 0.030)),
            q: w((-0.20, -0.02), (-0.035, -0.025), (0.006, 0.010)),
            r: w((0.6, 1.6), (0.0, 0.0), (0.008, 0.014)),
            s: w((-0.45, -0.05), (0.025, 0.035), (0.006, 0.010)),
            t: w((0.1, 0.5), (0.22, 0.32), (0.040, 0.070)),
            noise_std: (0.005, 0.03),
            baseline_mv: (-0.2, 0.2),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leads == 0 || self.leads > 12 {
            return Err(Error::Parameter(format!("leads must be 1..=12, got {}", self.leads)));
        }
        if self.r.amplitude.0 <= self.q.amplitude.0.abs().max(self.q.amplitude.1.abs())
            || self.r.amplitude.0 <= self.s.amplitude.0.abs().max(self.s.amplitude.1.abs())
        {
            return Err(Error::Parameter("R amplitude range must dominate Q and S".into()));
        }
        let (lo, hi) = self.heart_rate_bpm;
        if lo < 30.0 || hi > 220.0 || lo > hi {
            return Err(Error::Parameter(format!("heart-rate range ({lo}, {hi}) outside [30, 220]")));
        }
        Ok(())
    }
}

/// One record drawn from `config` using ChaCha stream `index` of `seed`.
pub fn gen_corpus_record(config: &CorpusConfig, seed: u64, index: usize) -> Result<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let bpm = uniform(&mut rng, config.heart_rate_bpm);
    let peaks = beat_positions(bpm, config.hr_jitter_fraction, config.duration_s, config.fs, &mut rng);
    let n = (config.duration_s * config.fs).round() as usize;
    let mut leads = Vec::with_capacity(config.leads);
    for _ in 0..config.leads {
        let params = MorphologyParams {
            p: config.p.draw(&mut rng),
            q: config.q.draw(&mut rng),
            r: config.r.draw(&mut rng),
            s: config.s.draw(&mut rng),
            t: config.t.draw(&mut rng),
            heart_rate_bpm: bpm,
            hr_jitter_fraction: config.hr_jitter_fraction,
            noise_std: uniform(&mut rng, config.noise_std),
            baseline_mv: uniform(&mut rng, config.baseline_mv),
            seed,
        };
        params.validate()?;
        leads.push(render_lead(&params, &peaks, n, config.fs, &mut rng));
    }
    let record = EcgRecord::new(config.fs, leads, format!("rec{index:05}"))?;
    Ok(SynthRecord { record, r_peaks: peaks })
}

/// `n_records` records, record `i` drawn from its own seeded stream.
pub fn gen_corpus(n_records: usize, config: &CorpusConfig, seed: u64) -> Result<Vec<SynthRecord>> {
    if n_records == 0 {
        return Err(Error::Parameter("corpus needs at least one record".into()));
    }
    config.validate()?;
    (0..n_records).map(|i| gen_corpus_record(config, seed, i)).collect()
}
