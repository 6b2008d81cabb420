//! Checkpoint directories: `manifest.json` (names, shapes, byte offsets,
//! config snapshot, step) next to `params.bin`, the concatenated
//! little-endian f32 tensors.
//!
//! Optimiser moments are stored as tensors named `<prefix>.adam_m/<param>`
//! and `<prefix>.adam_v/<param>` so a run resumes exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use ucodec_core::kernels::{Adam, ParamStore, Tensor};

use crate::config::RunConfig;
use crate::{CliError, Result};

pub const FORMAT: &str = "ucodec-checkpoint-1";
pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "params.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Codec,
    Lm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: Kind,
    pub step: usize,
    /// Update counts of each stored optimiser, by prefix.
    pub optimizer_steps: BTreeMap<String, u64>,
    pub config: RunConfig,
    pub tensors: Vec<TensorEntry>,
}

fn ckpt_err(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

/// Accumulates tensors, then writes both files.
pub struct CheckpointWriter {
    manifest: Manifest,
    blob: Vec<u8>,
}

impl CheckpointWriter {
    pub fn new(kind: Kind, step: usize, config: &RunConfig) -> Self {
        Self {
            manifest: Manifest {
                format: FORMAT.into(),
                kind,
                step,
                optimizer_steps: BTreeMap::new(),
                config: config.clone(),
                tensors: Vec::new(),
            },
            blob: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: &[usize], data: &[f32]) {
        self.manifest.tensors.push(TensorEntry { name, shape: shape.to_vec(), offset: self.blob.len() as u64 });
        for v in data {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn add_store(&mut self, prefix: &str, store: &ParamStore<f32>) -> &mut Self {
        for (_, p) in store.iter() {
            self.push(format!("{prefix}/{}", p.name), p.value.shape(), p.value.data());
        }
        self
    }

    pub fn add_adam(&mut self, prefix: &str, adam: &Adam<f32>, store: &ParamStore<f32>) -> &mut Self {
        let (steps, m, v) = adam.state();
        self.manifest.optimizer_steps.insert(prefix.to_string(), steps);
        for (((_, p), m), v) in store.iter().zip(m).zip(v) {
            self.push(format!("{prefix}.adam_m/{}", p.name), p.value.shape(), m);
            self.push(format!("{prefix}.adam_v/{}", p.name), p.value.shape(), v);
        }
        self
    }

    /// Writes into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        let mpath = dir.join(MANIFEST);
        std::fs::write(&mpath, manifest).map_err(|e| CliError::io(&mpath, e))?;
        let bpath = dir.join(BLOB);
        std::fs::write(&bpath, &self.blob).map_err(|e| CliError::io(&bpath, e))
    }
}

/// Reads only the manifest, so configs can be checked before any model
/// memory is allocated.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| ckpt_err(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(ckpt_err(format!("unknown format {:?}", m.format)));
    }
    Ok(m)
}

/// A loaded checkpoint; every tensor must be consumed exactly once by
/// [`Checkpoint::finish`].
pub struct Checkpoint {
    pub manifest: Manifest,
    tensors: HashMap<String, (Vec<usize>, Vec<f32>)>,
    used: HashSet<String>,
}

impl Checkpoint {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let bpath = dir.join(BLOB);
        let blob = std::fs::read(&bpath).map_err(|e| CliError::io(&bpath, e))?;
        let mut tensors = HashMap::new();
        let mut expected = 0u64;
        for t in &manifest.tensors {
            if t.offset != expected {
                return Err(ckpt_err(format!("{} at offset {}, expected {expected}", t.name, t.offset)));
            }
            let n: usize = t.shape.iter().product();
            let end = t.offset + 4 * n as u64;
            if end > blob.len() as u64 {
                return Err(ckpt_err(format!("{} runs past the end of {BLOB}", t.name)));
            }
            let data = blob[t.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if tensors.insert(t.name.clone(), (t.shape.clone(), data)).is_some() {
                return Err(ckpt_err(format!("{} stored twice", t.name)));
            }
            expected = end;
        }
        if expected != blob.len() as u64 {
            return Err(ckpt_err(format!("{BLOB} has {} trailing bytes", blob.len() as u64 - expected)));
        }
        Ok(Self { manifest, tensors, used: HashSet::new() })
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let (s, data) = self.tensors.get(name).ok_or_else(|| ckpt_err(format!("missing tensor {name}")))?;
        if s != shape {
            return Err(ckpt_err(format!("{name} has shape {s:?}, model expects {shape:?}")));
        }
        let data = data.clone();
        self.used.insert(name.to_string());
        Ok(data)
    }

    pub fn restore_store(&mut self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}/{}", store.name(id));
            let shape = store.value(id).shape().to_vec();
            let data = self.take(&name, &shape)?;
            *store.value_mut(id) = Tensor::new(&shape, data)?;
        }
        Ok(())
    }

    pub fn restore_adam(&mut self, prefix: &str, adam: &mut Adam<f32>, store: &ParamStore<f32>) -> Result<()> {
        let steps = *self
            .manifest
            .optimizer_steps
            .get(prefix)
            .ok_or_else(|| ckpt_err(format!("no optimiser state for {prefix}")))?;
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (_, p) in store.iter() {
            m.push(self.take(&format!("{prefix}.adam_m/{}", p.name), p.value.shape())?);
            v.push(self.take(&format!("{prefix}.adam_v/{}", p.name), p.value.shape())?);
        }
        if !adam.restore(steps, m, v) {
            return Err(ckpt_err(format!("optimiser state for {prefix} does not match the model")));
        }
        Ok(())
    }

    /// Names stored under `prefix` that the model never asked for.
    pub fn unused(&self, prefix: &str) -> Vec<String> {
        let mut names: Vec<String> = self
            .tensors
            .keys()
            .filter(|n| n.starts_with(prefix) && !self.used.contains(*n))
            .cloned()
            .collect();
        names.sort();
        names
    }

    /// Fails if any tensor in the file was not restored.
    pub fn finish(&self) -> Result<()> {
        match self.unused("").first() {
            Some(name) => Err(ckpt_err(format!("unexpected tensor {name}"))),
            None => Ok(()),
        }
    }
}
