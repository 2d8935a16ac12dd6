//! Minimal tensor container: a JSON manifest followed by one concatenated
//! little-endian IEEE-754 blob.
//!
//! Layout on disk:
//!
//! ```text
//! bytes 0..8    magic "CERSAFRG"
//! bytes 8..16   manifest length (u64, little-endian)
//! ...           manifest JSON
//! ...           blob (tensor data at the offsets the manifest declares)
//! ```
//!
//! Offsets are relative to the blob start, must not overlap, and every
//! declared length must equal the shape product times the dtype size.
//! `load(save(x))` is bitwise lossless for both dtypes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"CERSAFRG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    offset: u64,
    length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    tensors: Vec<TensorEntry>,
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Raw values of one tensor, kept in their stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F64(_) => Dtype::F64,
            TensorData::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64 regardless of storage precision.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn is_2d(&self) -> bool {
        self.shape.len() == 2
    }

    /// View a 2-D tensor as a [`Matrix`].
    pub fn as_matrix(&self) -> Result<Matrix> {
        if self.shape.len() != 2 {
            return Err(Error::Container(format!(
                "tensor {} has shape {:?}, expected 2-D",
                self.name, self.shape
            )));
        }
        Matrix::from_vec(self.shape[0], self.shape[1], self.data.to_f64())
    }
}

/// In-memory container; tensors keep insertion order, metadata keys are
/// sorted, so serialization is deterministic.
#[derive(Debug, Clone, Default)]
pub struct Container {
    tensors: Vec<Tensor>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Container(format!("duplicate tensor name {name}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Container(format!(
                "tensor {name}: shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        self.tensors.push(Tensor { name, shape, data });
        Ok(())
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, m: &Matrix) -> Result<()> {
        self.add(name, vec![m.rows(), m.cols()], TensorData::F64(m.data().to_vec()))
    }

    pub fn add_vector(&mut self, name: impl Into<String>, v: &[f64]) -> Result<()> {
        self.add(name, vec![v.len()], TensorData::F64(v.to_vec()))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Container(format!("no tensor named {name}")))?
            .as_matrix()
    }

    /// Serialize to the on-disk byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut blob = Vec::new();
        for t in &self.tensors {
            let offset = blob.len() as u64;
            match &t.data {
                TensorData::F64(v) => {
                    for x in v {
                        blob.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::F32(v) => {
                    for x in v {
                        blob.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: t.data.dtype(),
                offset,
                length: blob.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let manifest_json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + manifest_json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Container(
                "missing or wrong magic; not a checkpoint container".into(),
            ));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest_end = 16usize
            .checked_add(manifest_len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| Error::Container("manifest length exceeds file size".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
            .map_err(|e| Error::Container(format!("manifest parse error: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let blob = &bytes[manifest_end..];

        // Validate offsets: in bounds, lengths consistent, no overlap.
        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let expected = (e.shape.iter().product::<usize>() * e.dtype.size()) as u64;
            if e.length != expected {
                return Err(Error::Container(format!(
                    "tensor {}: declared length {} does not match shape {:?} x {:?}",
                    e.name, e.length, e.shape, e.dtype
                )));
            }
            let end = e.offset.checked_add(e.length).ok_or_else(|| {
                Error::Container(format!("tensor {}: offset overflow", e.name))
            })?;
            if end > blob.len() as u64 {
                return Err(Error::Container(format!(
                    "tensor {}: data range {}..{} exceeds blob size {}",
                    e.name,
                    e.offset,
                    end,
                    blob.len()
                )));
            }
            spans.push((e.offset, end, &e.name));
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Container(format!(
                    "tensors {} and {} overlap in the blob",
                    pair[0].2, pair[1].2
                )));
            }
        }

        let mut container = Container {
            tensors: Vec::with_capacity(manifest.tensors.len()),
            metadata: manifest.metadata,
        };
        for e in &manifest.tensors {
            let raw = &blob[e.offset as usize..(e.offset + e.length) as usize];
            let data = match e.dtype {
                Dtype::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                Dtype::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            container.tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
        }
        Ok(container)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Container(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
