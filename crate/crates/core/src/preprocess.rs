//! Raw multi-lead records to R-centred cardiac cycles.
//!
//! Records are cut into fixed-length segments, R peaks are located per lead
//! with a Pan–Tompkins-style detector, and a window of `2 * half_width`
//! samples is taken around every peak.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vae::CardiacCycle;
use crate::{CYCLE_LEN, DEFAULT_FS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub sampling_rate_hz: f64,
    pub leads: Vec<Vec<f32>>,
    pub record_id: String,
}

impl EcgRecord {
    pub fn new(sampling_rate_hz: f64, leads: Vec<Vec<f32>>, record_id: impl Into<String>) -> Result<Self> {
        let r = EcgRecord { sampling_rate_hz, leads, record_id: record_id.into() };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::Parameter(format!("sampling rate {} must be > 0", self.sampling_rate_hz)));
        }
        if self.leads.is_empty() || self.leads.len() > 12 {
            return Err(Error::Parameter(format!("record has {} leads, expected 1..=12", self.leads.len())));
        }
        let n = self.leads[0].len();
        if self.leads.iter().any(|l| l.len() != n) {
            return Err(Error::dim("record leads differ in length"));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sampling_rate_hz
    }
}

/// Detected R-peak positions on one lead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RPeakList {
    pub indices: Vec<usize>,
    pub detector_name: String,
    /// Set when detection produced nothing usable.
    pub warning: Option<String>,
}

/// Leading non-overlapping segments of `seconds`; the remainder is dropped.
pub fn cut_segments(record: &EcgRecord, seconds: f64) -> Vec<EcgRecord> {
    let seg = (seconds * record.sampling_rate_hz).round() as usize;
    if seg == 0 {
        return Vec::new();
    }
    (0..record.num_samples() / seg)
        .map(|k| EcgRecord {
            sampling_rate_hz: record.sampling_rate_hz,
            leads: record.leads.iter().map(|l| l[k * seg..(k + 1) * seg].to_vec()).collect(),
            record_id: format!("{}/seg{k}", record.record_id),
        })
        .collect()
}

/// Forward then backward pass of a single-pole high-pass and low-pass pair
/// giving a zero-phase 5–15 Hz band-pass.
pub fn bandpass(x: &[f64], fs: f64) -> Vec<f64> {
    let dt = 1.0 / fs;
    let rc = |fc: f64| 1.0 / (2.0 * std::f64::consts::PI * fc);
    let a_hp = rc(5.0) / (rc(5.0) + dt);
    let a_lp = dt / (rc(15.0) + dt);
    let one_pass = |input: &mut Vec<f64>| {
        let mut prev_x = input.first().copied().unwrap_or(0.0);
        let mut y_hp = 0.0;
        let mut y_lp = 0.0;
        for v in input.iter_mut() {
            y_hp = a_hp * (y_hp + *v - prev_x);
            prev_x = *v;
            y_lp += a_lp * (y_hp - y_lp);
            *v = y_lp;
        }
    };
    let mut y = x.to_vec();
    one_pass(&mut y);
    y.reverse();
    one_pass(&mut y);
    y.reverse();
    y
}

/// Centred moving average of width `w` (truncated at the edges).
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Centred rolling maximum over `[i - w/2, i + w/2]`, monotonic-deque version.
fn rolling_max(x: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| x[j] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + half < i) {
            dq.pop_front();
        }
        out.push(x[dq[0]]);
    }
    out
}

pub const DETECTOR_NAME: &str = "pan-tompkins-lite";

/// Pan–Tompkins-style R-peak detector.
///
/// Stages: zero-phase 5–15 Hz band-pass, squared central derivative,
/// 0.15 s centred moving-window integration, threshold at half the 2.5 s
/// rolling maximum, 0.2 s refractory period, then each detection is snapped
/// to the raw-signal maximum within ±0.05 s.
pub fn detect_r_peaks(lead: &[f32], fs: f64) -> Result<RPeakList> {
    if !(fs > 0.0) || (lead.len() as f64) < fs {
        return Err(Error::Parameter(format!(
            "R detection needs at least 1 s of signal, got {} samples at {fs} Hz",
            lead.len()
        )));
    }
    let raw: Vec<f64> = lead.iter().map(|&v| v as f64).collect();
    let filtered = bandpass(&raw, fs);
    let n = filtered.len();
    let mut energy = vec![0.0; n];
    for i in 1..n - 1 {
        let d = (filtered[i + 1] - filtered[i - 1]) * fs / 2.0;
        energy[i] = d * d;
    }
    let mwi = moving_average(&energy, (0.15 * fs).round() as usize);
    let peak_energy = mwi.iter().copied().fold(0.0, f64::max);
    let empty = |why: &str| {
        warn!("no R peaks found: {why}");
        RPeakList { indices: Vec::new(), detector_name: DETECTOR_NAME.into(), warning: Some(why.into()) }
    };
    if !(peak_energy > 1e-12) {
        return Ok(empty("signal has no QRS energy"));
    }
    let thr: Vec<f64> = rolling_max(&mwi, (2.5 * fs).round() as usize).iter().map(|m| 0.5 * m).collect();

    // one candidate per supra-threshold run: the integrator maximum
    let mut candidates: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        if mwi[i] > thr[i] {
            let start = i;
            while i < n && mwi[i] > thr[i] {
                i += 1;
            }
            let best = (start..i).max_by(|&a, &b| mwi[a].total_cmp(&mwi[b])).expect("nonempty run");
            candidates.push(best);
        } else {
            i += 1;
        }
    }

    let refractory = (0.2 * fs).round() as usize;
    let search = (0.05 * fs).round() as usize;
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for c in candidates {
        let lo = c.saturating_sub(search);
        let hi = (c + search + 1).min(n);
        // first maximum on ties
        let r = (lo..hi).fold(lo, |best, j| if raw[j] > raw[best] { j } else { best });
        match peaks.last_mut() {
            Some((prev, strength)) if r < *prev + refractory => {
                if mwi[c] > *strength {
                    *prev = r;
                    *strength = mwi[c];
                }
            }
            _ => peaks.push((r, mwi[c])),
        }
    }
    if peaks.is_empty() {
        return Ok(empty("no supra-threshold region"));
    }
    Ok(RPeakList {
        indices: peaks.into_iter().map(|(r, _)| r).collect(),
        detector_name: DETECTOR_NAME.into(),
        warning: None,
    })
}

/// Cycles cut from one lead plus how many peaks were skipped at the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleExtraction {
    pub cycles: Vec<CardiacCycle>,
    pub peaks_used: Vec<usize>,
    pub skipped: usize,
}

/// Windows `[r - half_width, r + half_width)` around each peak. Windows that
/// cross a record boundary are skipped. With `remove_baseline`, the mean of
/// the first and last 10 samples is subtracted from each window.
pub fn extract_cycles(lead: &[f32], peaks: &RPeakList, half_width: usize, remove_baseline: bool) -> CycleExtraction {
    let mut out = CycleExtraction { cycles: Vec::new(), peaks_used: Vec::new(), skipped: 0 };
    if half_width == 0 {
        out.skipped = peaks.indices.len();
        return out;
    }
    for &r in &peaks.indices {
        if r < half_width || r + half_width > lead.len() {
            out.skipped += 1;
            continue;
        }
        let mut samples = lead[r - half_width..r + half_width].to_vec();
        if remove_baseline {
            let edge = 10.min(samples.len() / 2);
            let n = samples.len();
            let offset = (samples[..edge].iter().chain(&samples[n - edge..]).map(|&v| v as f64).sum::<f64>()
                / (2 * edge) as f64) as f32;
            samples.iter_mut().for_each(|v| *v -= offset);
        }
        out.cycles.push(CardiacCycle::new(samples));
        out.peaks_used.push(r);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub segment_seconds: f64,
    pub half_width: usize,
    pub remove_baseline: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { segment_seconds: 9.0, half_width: CYCLE_LEN / 2, remove_baseline: true }
    }
}

/// Outcome of running a record through the pipeline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordCycles {
    pub cycles: Vec<CardiacCycle>,
    pub peaks_detected: usize,
    pub skipped: usize,
}

/// Segment, detect and window every lead of a record. Each lead contributes
/// cycles independently, tagged with its lead index and segment id.
pub fn record_to_cycles(record: &EcgRecord, opts: &PreprocessOptions) -> Result<RecordCycles> {
    record.validate()?;
    if record.sampling_rate_hz != DEFAULT_FS {
        return Err(Error::Parameter(format!(
            "record {} is sampled at {} Hz; only {DEFAULT_FS} Hz is supported",
            record.record_id, record.sampling_rate_hz
        )));
    }
    let mut out = RecordCycles::default();
    for seg in cut_segments(record, opts.segment_seconds) {
        for (lead_idx, lead) in seg.leads.iter().enumerate() {
            let peaks = detect_r_peaks(lead, seg.sampling_rate_hz)?;
            out.peaks_detected += peaks.indices.len();
            let ex = extract_cycles(lead, &peaks, opts.half_width, opts.remove_baseline);
            out.skipped += ex.skipped;
            for (mut c, r) in ex.cycles.into_iter().zip(ex.peaks_used) {
                c.lead_id = Some(lead_idx as u8);
                c.source_record = Some(format!("{}@{r}", seg.record_id));
                out.cycles.push(c);
            }
        }
    }
    Ok(out)
}
