use std::fs;
use std::path::Path;

use super::binary::{Reader, Writer};
use crate::error::{Error, Result};
use crate::vae::CardiacCycle;

pub const DATASET_MAGIC: [u8; 4] = *b"ECGC";
pub const DATASET_VERSION: u16 = 1;

const NO_LEAD: u8 = 0xFF;
const NO_SOURCE: u32 = u32::MAX;

/// Contents of an `ECGC` file.
///
/// Layout after magic and version: `cycle_len: u32`, `count: u64`,
/// `sampling_rate: f32`, then `count * cycle_len` f32 samples, then a
/// footer flag `u8`. When the flag is 1, each cycle contributes a lead id
/// `u8` (0xFF = none) and a source id (`u32` length, 0xFFFFFFFF = none,
/// then UTF-8 bytes). A CRC-32 closes the file.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDataset {
    pub sampling_rate_hz: f32,
    pub cycle_len: usize,
    pub cycles: Vec<CardiacCycle>,
}

impl CycleDataset {
    pub fn new(sampling_rate_hz: f32, cycle_len: usize, cycles: Vec<CardiacCycle>) -> Result<Self> {
        if let Some(c) = cycles.iter().find(|c| c.len() != cycle_len) {
            return Err(Error::dim(format!("cycle of length {} in a dataset of length {cycle_len}", c.len())));
        }
        Ok(CycleDataset { sampling_rate_hz, cycle_len, cycles })
    }
}

pub fn encode_dataset(ds: &CycleDataset) -> Result<Vec<u8>> {
    let mut w = Writer::new(&DATASET_MAGIC, DATASET_VERSION);
    w.u32(ds.cycle_len as u32);
    w.u64(ds.cycles.len() as u64);
    w.f32(ds.sampling_rate_hz);
    for c in &ds.cycles {
        if c.len() != ds.cycle_len {
            return Err(Error::dim(format!("cycle of length {} in a dataset of length {}", c.len(), ds.cycle_len)));
        }
        w.f32s(&c.samples);
    }
    let has_footer = ds.cycles.iter().any(|c| c.lead_id.is_some() || c.source_record.is_some());
    w.u8(has_footer as u8);
    if has_footer {
        for c in &ds.cycles {
            w.u8(c.lead_id.unwrap_or(NO_LEAD));
            match &c.source_record {
                Some(s) => w.str32(s),
                None => w.u32(NO_SOURCE),
            }
        }
    }
    Ok(w.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<CycleDataset> {
    let mut r = Reader::open(bytes, &DATASET_MAGIC, DATASET_VERSION)?;
    let cycle_len = r.u32("cycle length")? as usize;
    let count = r.u64("cycle count")? as usize;
    let sampling_rate_hz = r.f32("sampling rate")?;
    let total = count
        .checked_mul(cycle_len)
        .ok_or_else(|| Error::Integrity("cycle count overflows".into()))?;
    let payload = r.f32s(total, "payload")?;
    let mut cycles: Vec<CardiacCycle> = if cycle_len == 0 {
        (0..count).map(|_| CardiacCycle::new(Vec::new())).collect()
    } else {
        payload.chunks_exact(cycle_len).map(|c| CardiacCycle::new(c.to_vec())).collect()
    };
    match r.u8("footer flag")? {
        0 => {}
        1 => {
            for c in &mut cycles {
                let lead = r.u8("lead id")?;
                c.lead_id = (lead != NO_LEAD).then_some(lead);
                let n = r.u32("source id length")?;
                if n != NO_SOURCE {
                    let raw = r.take(n as usize, "source id")?;
                    c.source_record = Some(
                        String::from_utf8(raw.to_vec()).map_err(|_| Error::Integrity("source id: invalid UTF-8".into()))?,
                    );
                }
            }
        }
        other => return Err(Error::Integrity(format!("unknown footer flag {other}"))),
    }
    r.finish()?;
    Ok(CycleDataset { sampling_rate_hz, cycle_len, cycles })
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &CycleDataset) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<CycleDataset> {
    decode_dataset(&fs::read(path)?)
}
