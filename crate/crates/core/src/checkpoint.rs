//! Named-tensor archive: an 8-byte magic, a little-endian `u64` manifest
//! length, a JSON manifest of names and shapes, then every tensor as
//! little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::encoders::BackboneRegistry;
use crate::error::{Error, Result};
use crate::model::{build_model_with, Model, ModelSpec};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"MEMOCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub entries: Vec<TensorEntry>,
    pub tensors: Vec<Tensor>,
}

impl Archive {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let (entries, tensors) = store
            .iter()
            .map(|(_, e)| {
                (
                    TensorEntry {
                        name: e.name.clone(),
                        shape: e.value.shape().to_vec(),
                        trainable: e.trainable,
                    },
                    e.value.clone(),
                )
            })
            .unzip();
        Archive { meta, entries, tensors }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&Manifest {
            tensors: self.entries.clone(),
            meta: self.meta.clone(),
        })?;
        let scalars: usize = self.tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + 8 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let mut at = 16 + len;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("data for `{}` is truncated", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(ArrayD::from_shape_vec(IxDyn(&e.shape), data).expect("length checked"));
            at += 8 * n;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Archive {
            meta: manifest.meta,
            entries: manifest.tensors,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Overwrites every tensor of `store`; names, order and shapes must
    /// match exactly.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "archive holds {} tensors, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for ((id, e), t) in ids.into_iter().zip(&self.entries).zip(&self.tensors) {
            let have = store.entry(id);
            if have.name != e.name || have.value.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "archive tensor `{}` {:?} does not match model tensor `{}` {:?}",
                    e.name,
                    e.shape,
                    have.name,
                    have.value.shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }
}

/// Saves parameters with the model spec in the manifest.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let meta = serde_json::json!({ "spec": model.spec });
    Archive::from_store(&model.params, meta).save(path)
}

pub fn load_model(path: impl AsRef<Path>, registry: &BackboneRegistry) -> Result<Model> {
    let archive = Archive::load(path)?;
    let spec: ModelSpec = serde_json::from_value(
        archive
            .meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("archive carries no model spec".into()))?,
    )?;
    let mut model = build_model_with(&spec, 0, registry)?;
    archive.restore_into(&mut model.params)?;
    Ok(model)
}
