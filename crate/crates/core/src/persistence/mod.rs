//! On-disk formats.
//!
//! Binary files share one layout: a 4-byte magic, a little-endian `u16`
//! format version, the body, and a trailing CRC-32 of every preceding byte.
//!
//! * `ECGC` cycle datasets ([`save_dataset`] / [`load_dataset`])
//! * `ECGV` model checkpoints ([`save_model`] / [`load_model`])
//! * `ECGR` raw multi-lead records ([`save_record`] / [`load_record`])
//!
//! Text outputs are CSV (loss history, MMD reports, features, R-peak ground
//! truth) and SVG plots.

mod binary;
mod checkpoint;
mod dataset;
mod plot;
mod record;
mod report;

pub use checkpoint::{decode_model, encode_model, load_model, save_model, CheckpointManifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{decode_dataset, encode_dataset, load_dataset, save_dataset, CycleDataset, DATASET_MAGIC, DATASET_VERSION};
pub use plot::{emit_plot, render_svg, PlotStyle};
pub use record::{decode_record, encode_record, load_record, save_record, RECORD_MAGIC, RECORD_VERSION};
pub use report::{
    read_r_peaks_csv, write_features_csv, write_loss_history_csv, write_mmd_report_csv, write_r_peaks_csv,
};
