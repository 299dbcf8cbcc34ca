//! Versioned checkpoint files.
//!
//! Layout: the 8-byte magic `HTSPCKPT`, a little-endian `u32` format version,
//! a `u64` manifest length, the JSON manifest, then every section's
//! parameter values as raw little-endian `f64` in manifest order. Values
//! round-trip bitwise.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HTSPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("section `{section}`: {msg}")]
    Mismatch { section: String, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    sections: Vec<SectionEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SectionEntry {
    tag: String,
    params: Vec<(String, Vec<usize>)>,
}

/// Parameter stores keyed by section tag (for example `upper`, `lower`),
/// plus free-form JSON metadata such as configs and optimizer state.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub sections: Vec<(String, Vec<(String, Tensor)>)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { sections: Vec::new(), meta }
    }

    pub fn add_section(&mut self, tag: &str, store: &ParamStore) {
        let params = store.ids().map(|id| (store.name(id).to_string(), store.get(id).clone())).collect();
        self.sections.retain(|(t, _)| t != tag);
        self.sections.push((tag.to_string(), params));
    }

    pub fn has_section(&self, tag: &str) -> bool {
        self.sections.iter().any(|(t, _)| t == tag)
    }

    /// Copies a section into a store whose names and shapes must match.
    pub fn load_section(&self, tag: &str, store: &mut ParamStore) -> Result<(), CheckpointError> {
        let (_, params) = self
            .sections
            .iter()
            .find(|(t, _)| t == tag)
            .ok_or_else(|| CheckpointError::MissingSection(tag.to_string()))?;
        let mismatch = |msg: String| CheckpointError::Mismatch { section: tag.to_string(), msg };
        if params.len() != store.len() {
            return Err(mismatch(format!("{} parameters stored, model has {}", params.len(), store.len())));
        }
        for (name, value) in params {
            let id = store.find(name).ok_or_else(|| mismatch(format!("unknown parameter {name}")))?;
            if store.get(id).shape != value.shape {
                return Err(mismatch(format!("{name}: shape {:?} vs {:?}", value.shape, store.get(id).shape)));
            }
            *store.get_mut(id) = value.clone();
        }
        Ok(())
    }

    /// Stores optimizer moments and step count under `tag`.
    pub fn add_optimizer(&mut self, tag: &str, opt: &AdamW, store: &ParamStore) {
        let mut params = vec![("step".to_string(), Tensor::new(&[1], vec![opt.step as f64]))];
        for id in store.ids() {
            let shape = store.get(id).shape.clone();
            params.push((format!("m.{}", store.name(id)), Tensor::new(&shape, opt.m[id.0].clone())));
            params.push((format!("v.{}", store.name(id)), Tensor::new(&shape, opt.v[id.0].clone())));
        }
        self.sections.retain(|(t, _)| t != tag);
        self.sections.push((tag.to_string(), params));
    }

    /// Restores optimizer moments for the parameters of `store`.
    pub fn load_optimizer(&self, tag: &str, opt: &mut AdamW, store: &ParamStore) -> Result<(), CheckpointError> {
        let (_, params) = self
            .sections
            .iter()
            .find(|(t, _)| t == tag)
            .ok_or_else(|| CheckpointError::MissingSection(tag.to_string()))?;
        let mismatch = |msg: String| CheckpointError::Mismatch { section: tag.to_string(), msg };
        let lookup = |name: &str| params.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let step = lookup("step").ok_or_else(|| mismatch("missing step".into()))?;
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for id in store.ids() {
            let name = store.name(id);
            for (prefix, out) in [("m", &mut m), ("v", &mut v)] {
                let t = lookup(&format!("{prefix}.{name}")).ok_or_else(|| mismatch(format!("missing {prefix}.{name}")))?;
                if t.shape != store.get(id).shape {
                    return Err(mismatch(format!("{prefix}.{name}: shape {:?}", t.shape)));
                }
                out.push(t.data.clone());
            }
        }
        opt.step = step.data[0] as u64;
        opt.m = m;
        opt.v = v;
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let manifest = Manifest {
            sections: self
                .sections
                .iter()
                .map(|(tag, ps)| SectionEntry {
                    tag: tag.clone(),
                    params: ps.iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, ps) in &self.sections {
            for (_, t) in ps {
                buf.clear();
                buf.extend(t.data.iter().flat_map(|v| v.to_le_bytes()));
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        let mut sections = Vec::with_capacity(manifest.sections.len());
        for entry in manifest.sections {
            let mut params = Vec::with_capacity(entry.params.len());
            for (name, shape) in entry.params {
                let n: usize = shape.iter().product();
                let mut raw = vec![0u8; n * 8];
                r.read_exact(&mut raw)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                params.push((name, Tensor::new(&shape, data)));
            }
            sections.push((entry.tag, params));
        }
        Ok(Self { sections, meta: manifest.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
