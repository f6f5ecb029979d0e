//! Single-file model checkpoints.
//!
//! Layout, all little endian:
//!
//! ```text
//! magic    b"PIMA"
//! version  u16
//! meta_len u32
//! meta     JSON, meta_len bytes (configs, loss history, state directory)
//! payload  concatenated f64 state tensors, in directory order
//! ```
//!
//! The directory in the metadata lists every state tensor by its dotted
//! name and length. Loading rebuilds the model from the stored config and
//! overwrites its state by name, so a checkpoint from a renamed or resized
//! layer is rejected instead of silently misloaded.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::PipelineConfig;
use crate::nn::{EpochStats, ModelConfig, PiMForceModel, TrainConfig};
use crate::voxel::ScalerStats;

const MAGIC: [u8; 4] = *b"PIMA";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub name: String,
    pub len: usize,
}

/// Everything needed to rebuild the model and rerun its preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub scaler: ScalerStats,
    pub history: Vec<EpochStats>,
    pub entries: Vec<StateEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &mut PiMForceModel,
    train: &TrainConfig,
    pipeline: &PipelineConfig,
    scaler: &ScalerStats,
    history: &[EpochStats],
) -> Result<()> {
    scaler.validate()?;
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    model.visit_state(&mut |name, vals| {
        entries.push(StateEntry { name: name.to_string(), len: vals.len() });
        for v in vals.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    let meta = CheckpointMeta {
        model: model.config().clone(),
        train: train.clone(),
        pipeline: pipeline.clone(),
        scaler: scaler.clone(),
        history: history.to_vec(),
        entries,
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let meta_len = u32::try_from(meta_bytes.len())
        .map_err(|_| Error::InvalidInput("checkpoint metadata exceeds u32 length".into()))?;
    let mut out = Vec::with_capacity(4 + 2 + 4 + meta_bytes.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PiMForceModel, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 {
        return Err(Error::Format("checkpoint shorter than its header".into()));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let payload_start = 10usize
        .checked_add(meta_len)
        .ok_or_else(|| Error::Format("checkpoint metadata length overflows".into()))?;
    if bytes.len() < payload_start {
        return Err(Error::Format("checkpoint truncated inside metadata".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[10..payload_start])?;

    let mut offsets = HashMap::new();
    let mut total = 0usize;
    for (i, e) in meta.entries.iter().enumerate() {
        if offsets.insert(e.name.as_str(), (i, total)).is_some() {
            return Err(Error::Format(format!("duplicate checkpoint entry {:?}", e.name)));
        }
        total = total
            .checked_add(e.len)
            .ok_or_else(|| Error::Format("checkpoint entry lengths overflow".into()))?;
    }
    let want_bytes = total
        .checked_mul(8)
        .and_then(|b| b.checked_add(payload_start))
        .ok_or_else(|| Error::Format("checkpoint payload length overflows".into()))?;
    if bytes.len() != want_bytes {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, directory implies {}",
            bytes.len() - payload_start,
            want_bytes - payload_start
        )));
    }
    let payload = &bytes[payload_start..];

    let mut model = PiMForceModel::new(&meta.model, meta.train.seed)?;
    let mut used = vec![false; meta.entries.len()];
    let mut failure: Option<Error> = None;
    model.visit_state(&mut |name, vals| {
        if failure.is_some() {
            return;
        }
        let Some(&(idx, off)) = offsets.get(name) else {
            failure = Some(Error::Format(format!("checkpoint is missing state {name:?}")));
            return;
        };
        if meta.entries[idx].len != vals.len() {
            failure = Some(Error::Format(format!(
                "state {name:?} holds {} values, checkpoint stores {}",
                vals.len(),
                meta.entries[idx].len
            )));
            return;
        }
        used[idx] = true;
        let start = off * 8;
        let end = start + vals.len() * 8;
        for (v, chunk) in vals.iter_mut().zip(payload[start..end].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(Error::Format(format!(
            "checkpoint entry {:?} does not exist in this model",
            meta.entries[i].name
        )));
    }
    Ok((model, meta))
}
