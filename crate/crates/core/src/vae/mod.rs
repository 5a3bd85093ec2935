//! The two-branch convolutional/dense VAE over single cardiac cycles.

mod arch;
mod loss;
mod model;
mod train;

pub use arch::{ArchConfig, Architecture, ShapeReport};
pub use loss::{kl_loss, recon_loss, reparameterize, vae_loss_grads, LossParts};
pub use model::{Forward, VaeModel};
pub use train::{evaluate, mean_cycle, mean_cycle_mse, train, train_with, EpochStats, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One R-centred heartbeat window, in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardiacCycle {
    pub samples: Vec<f32>,
    pub lead_id: Option<u8>,
    pub source_record: Option<String>,
}

impl CardiacCycle {
    pub fn new(samples: Vec<f32>) -> Self {
        CardiacCycle { samples, lead_id: None, source_record: None }
    }

    /// Checks the length and that every sample is finite.
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.samples.len() != expected_len {
            return Err(Error::dim(format!(
                "cycle has {} samples, expected {expected_len}",
                self.samples.len()
            )));
        }
        if !self.samples.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cycle samples".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Encoder output for one cycle: the posterior mean and log-variance, and
/// optionally a reparameterised sample drawn with `noise_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub noise_seed: Option<u64>,
}
