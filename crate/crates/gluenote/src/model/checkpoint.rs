//! Checkpoint container: a magic-tagged, versioned file holding the model
//! config, vocabulary, training state, and parameters (plus optimizer
//! moments when present).
//!
//! Layout: `"GNCK"` magic, u32 LE format version, u64 LE header length, a
//! JSON header, then the tensor payload as f32 little-endian values in
//! layout order. The header's tensor index must agree exactly with the
//! layout derived from the config, which makes files self-describing without
//! trusting their shape claims.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::{Layout, ModelConfig, Parameters, TensorSpec};
use crate::error::{Error, Result};
use crate::tokenizer::TokenVocabulary;

const MAGIC: &[u8; 4] = b"GNCK";
const FORMAT_VERSION: u32 = 1;
/// Hard cap on the JSON header, far above any legitimate header size.
const MAX_HEADER_LEN: u64 = 16 * 1024 * 1024;

/// Training-progress metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
    pub base_lr: f64,
    pub restart_interval: u64,
    /// Adam update counter (equals `step` in normal training).
    pub adam_t: u64,
}

impl TrainState {
    pub fn fresh(seed: u64) -> Self {
        TrainState {
            step: 0,
            seed,
            base_lr: super::schedule::BASE_LR,
            restart_interval: super::schedule::RESTART_INTERVAL,
            adam_t: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: TokenVocabulary,
    pub state: TrainState,
    pub params: Parameters<f32>,
    pub adam: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: TokenVocabulary,
    state: TrainState,
    tensors: Vec<TensorSpec>,
    has_optimizer: bool,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

pub fn checkpoint_bytes(checkpoint: &Checkpoint) -> Vec<u8> {
    let layout = &checkpoint.params.layout;
    let header = Header {
        config: checkpoint.config.clone(),
        vocab: checkpoint.vocab.clone(),
        state: checkpoint.state.clone(),
        tensors: layout.specs.clone(),
        has_optimizer: checkpoint.adam.is_some(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let moments = checkpoint.adam.as_ref().map_or(0, |a| a.m.len() + a.v.len());
    let payload_floats = layout.total + moments;
    let mut out = Vec::with_capacity(16 + header_json.len() + 4 * payload_floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    let mut buf = [0u8; 4];
    for &v in &checkpoint.params.data {
        LittleEndian::write_f32(&mut buf, v);
        out.extend_from_slice(&buf);
    }
    if let Some(adam) = &checkpoint.adam {
        for &v in adam.m.iter().chain(&adam.v) {
            LittleEndian::write_f32(&mut buf, v as f32);
            out.extend_from_slice(&buf);
        }
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path.as_ref(), checkpoint_bytes(checkpoint)).map_err(|e| Error::io(path.as_ref(), e))
}

/// Parse and validate a checkpoint from raw bytes. Rejects wrong magic,
/// unknown versions, truncated or oversized sections, header/layout
/// disagreements, and non-finite parameters.
pub fn load_checkpoint_bytes(data: &[u8]) -> Result<Checkpoint> {
    if data.len() < 16 {
        return Err(bad(format!("file too short ({} bytes)", data.len())));
    }
    if &data[0..4] != MAGIC {
        return Err(bad("bad magic; not a checkpoint file"));
    }
    let version = LittleEndian::read_u32(&data[4..8]);
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = LittleEndian::read_u64(&data[8..16]);
    if header_len > MAX_HEADER_LEN {
        return Err(bad(format!("header length {header_len} exceeds limit")));
    }
    let header_len = header_len as usize;
    let body = &data[16..];
    if body.len() < header_len {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| bad(format!("invalid header JSON: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| bad(format!("invalid config: {e}")))?;
    header
        .vocab
        .validate()
        .map_err(|e| bad(format!("invalid vocabulary: {e}")))?;
    if header.config.field_sizes != header.vocab.field_sizes() {
        return Err(bad("config field sizes disagree with vocabulary"));
    }

    let layout = Arc::new(Layout::new(&header.config));
    if header.tensors != layout.specs {
        return Err(bad("tensor index disagrees with config-derived layout"));
    }
    let moments = if header.has_optimizer { 2 * layout.total } else { 0 };
    let expected_payload = 4 * (layout.total + moments);
    let payload = &body[header_len..];
    if payload.len() != expected_payload {
        return Err(bad(format!(
            "payload is {} bytes, expected {expected_payload}",
            payload.len()
        )));
    }

    let mut params = Parameters::zeros(layout.clone());
    for (i, chunk) in payload[..4 * layout.total].chunks_exact(4).enumerate() {
        let v = LittleEndian::read_f32(chunk);
        if !v.is_finite() {
            return Err(bad(format!("non-finite parameter at index {i}")));
        }
        params.data[i] = v;
    }
    let adam = if header.has_optimizer {
        let mut state = AdamState::new(layout.total);
        state.t = header.state.adam_t;
        let rest = &payload[4 * layout.total..];
        for (i, chunk) in rest.chunks_exact(4).enumerate() {
            let v = LittleEndian::read_f32(chunk) as f64;
            if !v.is_finite() {
                return Err(bad(format!("non-finite optimizer moment at index {i}")));
            }
            if i < layout.total {
                state.m[i] = v;
            } else {
                state.v[i - layout.total] = v;
            }
        }
        if state.v.iter().any(|&v| v < 0.0) {
            return Err(bad("negative second moment"));
        }
        Some(state)
    } else {
        None
    };

    Ok(Checkpoint {
        config: header.config,
        vocab: header.vocab,
        state: header.state,
        params,
        adam,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let data = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    load_checkpoint_bytes(&data)
}
