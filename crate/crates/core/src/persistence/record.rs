use std::fs;
use std::path::Path;

use super::binary::{Reader, Writer};
use crate::error::{Error, Result};
use crate::preprocess::EcgRecord;

pub const RECORD_MAGIC: [u8; 4] = *b"ECGR";
pub const RECORD_VERSION: u16 = 1;

/// `ECGR` layout after magic and version: sampling rate `f64`, lead count
/// `u16`, samples per lead `u64`, record id (`u32` length + UTF-8), then the
/// leads one after another as f32. CRC-32 trailer.
pub fn encode_record(rec: &EcgRecord) -> Result<Vec<u8>> {
    rec.validate()?;
    let mut w = Writer::new(&RECORD_MAGIC, RECORD_VERSION);
    w.f64(rec.sampling_rate_hz);
    w.u16(rec.leads.len() as u16);
    w.u64(rec.num_samples() as u64);
    w.str32(&rec.record_id);
    for lead in &rec.leads {
        w.f32s(lead);
    }
    Ok(w.finish())
}

pub fn decode_record(bytes: &[u8]) -> Result<EcgRecord> {
    let mut r = Reader::open(bytes, &RECORD_MAGIC, RECORD_VERSION)?;
    let fs = r.f64("sampling rate")?;
    let n_leads = r.u16("lead count")? as usize;
    let n = r.u64("sample count")? as usize;
    let id = r.str32("record id")?;
    let leads = (0..n_leads).map(|_| r.f32s(n, "lead samples")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    EcgRecord::new(fs, leads, id).map_err(|e| Error::Integrity(e.to_string()))
}

pub fn save_record(path: impl AsRef<Path>, rec: &EcgRecord) -> Result<()> {
    fs::write(path, encode_record(rec)?)?;
    Ok(())
}

pub fn load_record(path: impl AsRef<Path>) -> Result<EcgRecord> {
    decode_record(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rec = EcgRecord::new(500.0, vec![vec![0.25; 1000], vec![-1.0; 1000]], "rec00007").unwrap();
        let bytes = encode_record(&rec).unwrap();
        assert_eq!(decode_record(&bytes).unwrap(), rec);
        assert!(matches!(decode_record(&bytes[..bytes.len() - 2]), Err(Error::Truncated(_))));
    }
}
