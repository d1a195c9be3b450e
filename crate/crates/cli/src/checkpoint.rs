//! Checkpoint container: a magic tag, a TOML header (training progress,
//! config snapshot, RNG stream states, tensor index), and a little-endian
//! f32 payload holding model parameters and optimizer state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"CEDC0001";

/// Serialized state of one ChaCha stream; `word_pos` is a decimal u128.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn word_pos_u128(&self) -> Result<u128> {
        self.word_pos
            .parse::<u128>()
            .with_context(|| format!("invalid rng word_pos {:?}", self.word_pos))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub adam_t: u64,
    pub config: TrainConfig,
    pub noise_rng: RngState,
    pub shuffle_rng: RngState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Write a checkpoint; tensor order is preserved.
pub fn save(path: &Path, meta: &CheckpointMeta, tensors: &[(String, ArrayD<f32>)]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len() as u64;
    }
    let header = Header { meta: meta.clone(), tensors: entries };
    let header_toml = toml::to_string(&header).context("serializing checkpoint header")?;

    let file = File::create(path)
        .with_context(|| format!("creating checkpoint {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(header_toml.len() as u64).to_le_bytes())?;
    w.write_all(header_toml.as_bytes())?;
    for (_, t) in tensors {
        let std_layout = t.as_standard_layout();
        for &v in std_layout.as_slice().expect("standard layout") {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint back, validating magic, index consistency, and payload
/// size.
pub fn load(path: &Path) -> Result<(CheckpointMeta, Vec<(String, ArrayD<f32>)>)> {
    let file = File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("{}: bad checkpoint magic {magic:?}", path.display());
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let header_len = u64::from_le_bytes(buf8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = toml::from_str(std::str::from_utf8(&header_bytes)?)
        .with_context(|| format!("{}: parsing checkpoint header", path.display()))?;

    let mut expected_offset = 0u64;
    for e in &header.tensors {
        if e.offset != expected_offset {
            bail!("{}: tensor {} has offset {}, expected {expected_offset}", path.display(), e.name, e.offset);
        }
        expected_offset += e.shape.iter().product::<usize>() as u64;
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut buf4 = [0u8; 4];
    for e in &header.tensors {
        let len: usize = e.shape.iter().product();
        let mut payload = vec![0f32; len];
        for v in payload.iter_mut() {
            r.read_exact(&mut buf4).with_context(|| {
                format!("{}: truncated payload for tensor {}", path.display(), e.name)
            })?;
            *v = f32::from_le_bytes(buf4);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), payload).expect("length checked");
        tensors.push((e.name.clone(), arr));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("{}: trailing bytes after payload", path.display());
    }
    Ok((header.meta, tensors))
}
