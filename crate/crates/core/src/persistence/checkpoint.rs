use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::vae::{Architecture, TrainConfig, VaeModel};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ECGV";
pub const CHECKPOINT_VERSION: u16 = 1;

/// JSON manifest embedded in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: Architecture,
    pub train_config: Option<TrainConfig>,
    /// Seed the parameters were initialised from.
    pub init_seed: u64,
}

/// Serialises a model.
///
/// Layout after magic and version: manifest (`u32` length + JSON), tensor
/// count `u32`, then per tensor: name (`u16` length + UTF-8), rank `u8`,
/// `u32` extents, little-endian f32 data. CRC-32 trailer.
pub fn encode_model(model: &VaeModel<f32>) -> Result<Vec<u8>> {
    let manifest = CheckpointManifest {
        architecture: model.arch().clone(),
        train_config: model.train_config.clone(),
        init_seed: model.init_seed,
    };
    let mut w = Writer::new(&CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.str32(&serde_json::to_string(&manifest)?);
    let state = model.state();
    w.u32(state.len() as u32);
    for (name, t) in state {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u8(t.rank() as u8);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.f32s(t.data());
    }
    Ok(w.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<VaeModel<f32>> {
    let mut r = Reader::open(bytes, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let manifest: CheckpointManifest = serde_json::from_str(&r.str32("manifest")?)?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let n = r.u16("tensor name length")? as usize;
        let name = String::from_utf8(r.take(n, "tensor name")?.to_vec())
            .map_err(|_| Error::Integrity("tensor name: invalid UTF-8".into()))?;
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor extent")? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Integrity(format!("tensor {name}: size overflow")))?;
        let data = r.f32s(len, &name)?;
        tensors.push((name, shape, data));
    }
    r.finish()?;

    let mut model = VaeModel::<f32>::new(manifest.architecture, manifest.init_seed)
        .map_err(|e| Error::Integrity(format!("manifest architecture: {e}")))?;
    model.train_config = manifest.train_config;
    let mut slots = model.state_mut();
    if slots.len() != tensors.len() {
        return Err(Error::Integrity(format!(
            "architecture has {} tensors, checkpoint stores {}",
            slots.len(),
            tensors.len()
        )));
    }
    for ((slot_name, slot), (name, shape, data)) in slots.iter_mut().zip(tensors) {
        if *slot_name != name || slot.shape() != shape.as_slice() {
            return Err(Error::Integrity(format!(
                "expected {slot_name} {:?}, found {name} {shape:?}",
                slot.shape()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Integrity(format!("tensor {name} holds non-finite values")));
        }
        let trainable = slot.requires_grad();
        **slot = if trainable { Tensor::param(&shape, data)? } else { Tensor::new(&shape, data)? };
    }
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &VaeModel<f32>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeModel<f32>> {
    decode_model(&fs::read(path)?)
}
