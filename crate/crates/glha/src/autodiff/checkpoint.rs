use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::params::ParameterStore;
use super::AdError;

/// Leading magic bytes of a model snapshot file.
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GLHA1";

/// One entry of a snapshot's JSON header. Payload values follow the header
/// as raw little-endian f64 words, concatenated in header order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Optimizer step count at save time; zero for buffers.
    pub adam_step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    entries: Vec<CheckpointEntry>,
}

/// Writes every entry of `store` (weights and buffers alike) to `path`.
/// Layout: magic, JSON header describing names/shapes/step counts, then the
/// tensor payloads back to back as little-endian f64.
pub fn save_checkpoint(
    path: &Path,
    store: &ParameterStore,
    adam: Option<&Adam>,
) -> Result<(), AdError> {
    let header = Header {
        entries: store
            .iter()
            .map(|e| CheckpointEntry {
                name: e.name.clone(),
                shape: [e.value.rows(), e.value.cols()],
                adam_step: adam.map(|a| a.step_count(&e.name)).unwrap_or(0),
            })
            .collect(),
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(
        &serde_json::to_vec(&header).map_err(|e| AdError::Format(e.to_string()))?,
    );
    for e in store.iter() {
        for &v in e.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Fills an already-constructed `store` from a snapshot written by
/// [`save_checkpoint`]. Every file entry must name an existing store entry
/// of identical shape, and the store must not contain entries the file
/// lacks, so architecture and snapshot cannot drift apart silently.
pub fn load_checkpoint(
    path: &Path,
    store: &mut ParameterStore,
    mut adam: Option<&mut Adam>,
) -> Result<(), AdError> {
    let bytes = fs::read(path)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
    {
        return Err(AdError::Format("snapshot magic mismatch".into()));
    }
    let rest = &bytes[CHECKPOINT_MAGIC.len()..];

    // The header is a single JSON value butted up against binary payload;
    // a streaming parse tells us exactly where it ends.
    let mut stream = serde_json::Deserializer::from_slice(rest).into_iter::<Header>();
    let header: Header = match stream.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(AdError::Format(format!("snapshot header: {e}"))),
        None => return Err(AdError::Format("snapshot has no header".into())),
    };
    let payload = &rest[stream.byte_offset()..];

    let expected: usize = header
        .entries
        .iter()
        .map(|e| e.shape[0] * e.shape[1] * 8)
        .sum();
    if payload.len() != expected {
        return Err(AdError::Format(format!(
            "snapshot payload is {} bytes, header promises {expected}",
            payload.len()
        )));
    }

    let mut offset = 0usize;
    for entry in &header.entries {
        let numel = entry.shape[0] * entry.shape[1];
        let target = store
            .get_mut(&entry.name)
            .ok_or_else(|| AdError::UnknownParameter(entry.name.clone()))?;
        if target.shape() != (entry.shape[0], entry.shape[1]) {
            return Err(AdError::Format(format!(
                "parameter '{}' has shape {:?} but snapshot stores {:?}",
                entry.name,
                target.shape(),
                entry.shape
            )));
        }
        let data = target.data_mut();
        for (i, slot) in data.iter_mut().enumerate().take(numel) {
            let start = offset + i * 8;
            let word: [u8; 8] = payload[start..start + 8].try_into().expect("length checked");
            *slot = f64::from_le_bytes(word);
        }
        offset += numel * 8;
        if let Some(opt) = adam.as_deref_mut() {
            opt.restore_step_count(&entry.name, entry.adam_step);
        }
    }

    if header.entries.len() != store.len() {
        let in_file: std::collections::HashSet<&str> =
            header.entries.iter().map(|e| e.name.as_str()).collect();
        let missing: Vec<&str> = store
            .iter()
            .map(|e| e.name.as_str())
            .filter(|n| !in_file.contains(n))
            .collect();
        return Err(AdError::Format(format!(
            "snapshot lacks parameters: {missing:?}"
        )));
    }
    Ok(())
}
