use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MmdReport;
use crate::vae::{EpochStats, LatentCode};

fn write(path: &Path, body: String) -> Result<()> {
    fs::write(path, body)?;
    Ok(())
}

/// `epoch,train_recon,train_kl,eval_recon,eval_kl`, full round-trip precision.
pub fn write_loss_history_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    let mut s = String::from("epoch,train_recon,train_kl,eval_recon,eval_kl\n");
    for e in history {
        writeln!(s, "{},{:e},{:e},{:e},{:e}", e.epoch, e.train_recon, e.train_kl, e.eval_recon, e.eval_kl)
            .expect("write to String");
    }
    write(path.as_ref(), s)
}

/// `label_a,label_b,n_a,n_b,sigma,mmd2_biased,mmd2_unbiased,seed`; the
/// unbiased column is empty when it is undefined.
pub fn write_mmd_report_csv(path: impl AsRef<Path>, rows: &[MmdReport]) -> Result<()> {
    let mut s = String::from("label_a,label_b,n_a,n_b,sigma,mmd2_biased,mmd2_unbiased,seed\n");
    for r in rows {
        let unbiased = r.mmd2_unbiased.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{:e},{:e},{},{}",
            csv_field(&r.label_a),
            csv_field(&r.label_b),
            r.n_a,
            r.n_b,
            r.sigma,
            r.mmd2_biased,
            unbiased,
            r.seed
        )
        .expect("write to String");
    }
    write(path.as_ref(), s)
}

/// One row per cycle with the posterior means `z0..z{d-1}`.
pub fn write_features_csv(path: impl AsRef<Path>, codes: &[LatentCode]) -> Result<()> {
    let dim = codes.first().map_or(crate::LATENT_DIM, |c| c.mu.len());
    let mut s = (0..dim).map(|i| format!("z{i}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for c in codes {
        let row: Vec<String> = c.mu.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write(path.as_ref(), s)
}

/// Ground-truth R positions as `record_id,sample_index`.
pub fn write_r_peaks_csv(path: impl AsRef<Path>, rows: &[(String, usize)]) -> Result<()> {
    let mut s = String::from("record_id,sample_index\n");
    for (id, idx) in rows {
        writeln!(s, "{},{idx}", csv_field(id)).expect("write to String");
    }
    write(path.as_ref(), s)
}

pub fn read_r_peaks_csv(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (id, idx) = l.rsplit_once(',').ok_or_else(|| Error::Integrity(format!("bad R-peak row {l:?}")))?;
            let idx = idx.trim().parse().map_err(|_| Error::Integrity(format!("bad R-peak index in {l:?}")))?;
            Ok((id.to_string(), idx))
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_history_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = [EpochStats { epoch: 0, train_recon: 0.5, train_kl: 1.25, eval_recon: 0.25, eval_kl: 2.0 }];
        write_loss_history_csv(&p, &h).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_recon,train_kl,eval_recon,eval_kl");
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row, vec![0.0, 0.5, 1.25, 0.25, 2.0]);
    }

    #[test]
    fn r_peaks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![("rec00000".to_string(), 250), ("rec00001".to_string(), 4750)];
        write_r_peaks_csv(&p, &rows).unwrap();
        assert_eq!(read_r_peaks_csv(&p).unwrap(), rows);
    }

    #[test]
    fn features_have_25_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let code = LatentCode { mu: vec![0.5; 25], logvar: vec![0.0; 25], z: None, noise_seed: None };
        write_features_csv(&p, &[code.clone(), code]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 25));
        assert_eq!(text.lines().count(), 3);
    }
}
