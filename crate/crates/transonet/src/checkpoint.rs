//! Checkpoint files: `"TONC"`, a `u32` version, a `u64` header length (all
//! little-endian), a JSON header and the raw `f32` tensor data.
//!
//! The header is `{"config": ModelConfig, "meta": CheckpointMeta, "tensors":
//! {name: {"dtype": "f32", "shape": [...], "offset": bytes}}}` with offsets
//! relative to the start of the data block.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use transonet_core::model::{Checkpoint, CheckpointMeta, ModelConfig, ParamStore, TransONet};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TONC";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Accept a file holding only `encoder.*` tensors; everything else comes
    /// from `init_params(config, meta.seed)`.
    pub encoder_only: bool,
}

/// Serializes the tensors accepted by `keep`, in manifest order.
pub fn encode_filtered(ckpt: &Checkpoint, keep: impl Fn(&str) -> bool) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    let mut data = Vec::new();
    for t in ckpt.params.tensors().iter().filter(|t| keep(&t.name)) {
        let entry = TensorEntry { dtype: "f32".into(), shape: t.shape.clone(), offset: data.len() as u64 };
        tensors.insert(t.name.clone(), entry);
        data.extend(t.data.iter().flat_map(|v| v.to_le_bytes()));
    }
    let header = serde_json::to_vec(&Header { config: ckpt.config.clone(), meta: ckpt.meta.clone(), tensors })?;
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    encode_filtered(ckpt, |_| true)
}

pub fn decode(bytes: &[u8], opts: LoadOptions) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::ManifestMismatch("file ends inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let data_start = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len() as u64)
        .ok_or_else(|| Error::ManifestMismatch("file ends inside the header".into()))? as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..data_start])
        .map_err(|e| Error::ManifestMismatch(format!("unreadable header: {e}")))?;
    let data = &bytes[data_start..];

    let mut named = BTreeMap::new();
    for (name, entry) in &header.tensors {
        if entry.dtype != "f32" {
            return Err(Error::ManifestMismatch(format!("{name} has dtype {}", entry.dtype)));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start
            .checked_add(4 * numel)
            .filter(|end| *end <= data.len())
            .ok_or_else(|| Error::ManifestMismatch(format!("{name} runs past the end of the file")))?;
        let values =
            data[start..end].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        named.insert(name.clone(), (entry.shape.clone(), values));
    }

    let net = TransONet::new(header.config.clone())?;
    let params = if opts.encoder_only {
        if let Some(name) = named.keys().find(|n| !n.starts_with("encoder.")) {
            return Err(Error::ManifestMismatch(format!("encoder-only file holds {name}")));
        }
        let mut params: ParamStore<f32> = net.init_params(header.meta.seed);
        for spec in net.manifest().iter().filter(|s| s.name.starts_with("encoder.")) {
            let (shape, values) = named
                .remove(&spec.name)
                .ok_or_else(|| Error::ManifestMismatch(format!("missing tensor {}", spec.name)))?;
            if shape != spec.shape {
                return Err(Error::ManifestMismatch(format!(
                    "{} has shape {shape:?}, expected {:?}",
                    spec.name, spec.shape
                )));
            }
            params.by_name_mut(&spec.name).expect("name from manifest").data = values;
        }
        if let Some(name) = named.keys().next() {
            return Err(Error::ManifestMismatch(format!("unexpected tensor {name}")));
        }
        params
    } else {
        ParamStore::from_named(net.manifest(), named).map_err(|e| Error::ManifestMismatch(e.to_string()))?
    };
    Ok(Checkpoint { config: header.config, params, meta: header.meta })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_bytes(path, &encode(ckpt)?)
}

/// Writes only the `encoder.*` tensors (a pretrained-encoder file).
pub fn save_encoder(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_bytes(path, &encode_filtered(ckpt, |n| n.starts_with("encoder."))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_with(path, LoadOptions::default())
}

pub fn load_checkpoint_with(path: &Path, opts: LoadOptions) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(Error::io(path))?, opts)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let mut file = fs::File::create(path).map_err(Error::io(path))?;
    file.write_all(bytes).map_err(Error::io(path))
}
