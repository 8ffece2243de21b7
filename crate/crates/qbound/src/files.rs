//! `model.json` + `weights.bin`.
//!
//! Saving a loaded model reproduces both files byte for byte, provided the
//! manifest was written in the canonical layout (pretty-printed JSON with a
//! trailing newline, which is what [`ModelFile::save`] emits).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qbound_core::model::{LayerSpec, Network, NetworkSpec, Weights};
use qbound_core::quantize::{AdaRoundConfig, QuantizedNetwork, RoundingMode};
use qbound_core::Tensor;
use serde::{Deserialize, Serialize};

pub const DTYPE_F32: &str = "f32";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),

    #[error("weights blob checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("weights blob is {len} bytes, too short for its checksum")]
    ShortBlob { len: usize },

    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },

    #[error("tensor table covers {covered} bytes but the blob holds {len} bytes of data")]
    Coverage { covered: u64, len: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Model(#[from] qbound_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FormatError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| FormatError::Io { path: path.to_owned(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// Byte offset into `weights.bin`.
    pub offset: u64,
    pub shape: Vec<usize>,
    pub dtype: String,
}

impl TensorEntry {
    fn byte_len(&self) -> u64 {
        4 * self.shape.iter().product::<usize>() as u64
    }
}

/// How a stored model was quantized. Biases are never quantized, so only
/// weight tensors appear in `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationInfo {
    pub bits: u32,
    pub mode: RoundingMode,
    /// Grid step per weight tensor.
    pub eta: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaround: Option<AdaRoundConfig>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub equalized: bool,
}

impl QuantizationInfo {
    pub fn of(q: &QuantizedNetwork, equalized: bool) -> Self {
        Self {
            bits: q.config.bits,
            mode: q.config.mode,
            eta: q.steps.clone(),
            adaround: (q.config.mode == RoundingMode::AdaRound).then_some(q.config.adaround),
            equalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub input_shape: Vec<usize>,
    /// Kept optional so an absent field stays absent on save.
    #[serde(rename = "domain_D", default, skip_serializing_if = "Option::is_none")]
    pub domain_d: Option<f64>,
    pub layers: Vec<LayerSpec>,
    pub tensors: BTreeMap<String, TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization: Option<QuantizationInfo>,
}

impl Manifest {
    pub fn spec(&self) -> NetworkSpec {
        let mut spec = NetworkSpec::new(self.input_shape.clone(), self.layers.clone());
        spec.version = self.version;
        spec.domain_d = self.domain_d.unwrap_or(1.0);
        spec
    }

    /// Tensor table entries ordered by offset.
    fn by_offset(&self) -> Vec<(&String, &TensorEntry)> {
        let mut v: Vec<_> = self.tensors.iter().collect();
        v.sort_by_key(|(_, e)| e.offset);
        v
    }
}

/// A network together with the manifest it is stored under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub manifest: Manifest,
    pub network: Network,
}

impl ModelFile {
    /// Fresh manifest for `network`: tensors packed in first-use order,
    /// weights before the bias of the same layer.
    pub fn from_network(network: Network, quantization: Option<QuantizationInfo>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for layer in &network.spec.layers {
            let mut refs: Vec<&str> = layer.weight_refs();
            if let LayerSpec::Dense(d) = layer {
                refs.extend(d.bias.as_deref());
            }
            for r in refs {
                if !names.iter().any(|n| n == r) {
                    names.push(r.to_string());
                }
            }
        }
        names.extend(network.weights.keys().filter(|k| !names.contains(k)).cloned().collect::<Vec<_>>());
        let mut tensors = BTreeMap::new();
        let mut offset = 0u64;
        for name in names {
            let shape = network.weights[&name].shape().to_vec();
            let entry = TensorEntry { offset, shape, dtype: DTYPE_F32.into() };
            offset += entry.byte_len();
            tensors.insert(name, entry);
        }
        let spec = &network.spec;
        let manifest = Manifest {
            version: spec.version,
            input_shape: spec.input_shape.clone(),
            domain_d: Some(spec.domain_d),
            layers: spec.layers.clone(),
            tensors,
            quantization,
        };
        Self { manifest, network }
    }

    /// Same manifest layout, different weights (same names and shapes).
    pub fn with_network(&self, network: Network, quantization: Option<QuantizationInfo>) -> Result<Self> {
        for (name, entry) in &self.manifest.tensors {
            let t = network.tensor(name)?;
            if t.shape() != entry.shape.as_slice() {
                return Err(FormatError::Tensor {
                    name: name.clone(),
                    message: format!("shape {:?} does not match the table's {:?}", t.shape(), entry.shape),
                });
            }
        }
        let mut manifest = self.manifest.clone();
        manifest.quantization = quantization;
        manifest.domain_d = if manifest.domain_d.is_none() && network.spec.domain_d == 1.0 {
            None
        } else {
            Some(network.spec.domain_d)
        };
        Ok(Self { manifest, network })
    }

    pub fn from_bytes(manifest: &[u8], blob: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(manifest)?;
        let weights = decode_blob(&manifest, blob)?;
        let network = Network::new(manifest.spec(), weights)?;
        Ok(Self { manifest, network })
    }

    pub fn load(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        Self::from_bytes(&read(manifest_path)?, &read(blob_path)?)
    }

    pub fn manifest_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(&self.manifest)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn blob_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (name, entry) in self.manifest.by_offset() {
            if entry.offset != out.len() as u64 {
                return Err(FormatError::Tensor {
                    name: name.clone(),
                    message: format!("offset {} leaves a gap or overlap at byte {}", entry.offset, out.len()),
                });
            }
            for v in self.network.tensor(name)?.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn save(&self, manifest_path: &Path, blob_path: &Path) -> Result<()> {
        write(manifest_path, &self.manifest_bytes()?)?;
        write(blob_path, &self.blob_bytes()?)
    }

    /// Writes `model.json` and `weights.bin` into `dir`, creating it.
    pub fn save_dir(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.to_owned(), source })?;
        let (m, b) = (dir.join("model.json"), dir.join("weights.bin"));
        self.save(&m, &b)?;
        Ok((m, b))
    }
}

/// The tensors of `blob`, after the checksum and the table's tiling have
/// been checked. The table must cover the data exactly, without gaps or
/// overlaps, so that saving reproduces the blob.
fn decode_blob(manifest: &Manifest, blob: &[u8]) -> Result<Weights> {
    if blob.len() < 4 {
        return Err(FormatError::ShortBlob { len: blob.len() });
    }
    let (data, tail) = blob.split_at(blob.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    let computed = crc32fast::hash(data);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let mut weights = Weights::new();
    let mut cursor = 0u64;
    for (name, entry) in manifest.by_offset() {
        let err = |message: String| FormatError::Tensor { name: name.clone(), message };
        if entry.dtype != DTYPE_F32 {
            return Err(err(format!("unsupported dtype `{}`", entry.dtype)));
        }
        if entry.offset != cursor {
            return Err(err(format!("offset {} leaves a gap or overlap at byte {cursor}", entry.offset)));
        }
        let end = entry.offset + entry.byte_len();
        if end > data.len() as u64 {
            return Err(err(format!("extent ends at byte {end}, past the {} data bytes", data.len())));
        }
        let values = data[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4-byte chunk"))))
            .collect();
        weights.insert(name.clone(), Tensor::new(entry.shape.clone(), values)?);
        cursor = end;
    }
    if cursor != data.len() as u64 {
        return Err(FormatError::Coverage { covered: cursor, len: data.len() });
    }
    Ok(weights)
}

/// `weights.bin` next to `manifest`, the default blob location.
pub fn sibling_blob(manifest: &Path) -> PathBuf {
    manifest.with_file_name("weights.bin")
}
