//! Versioned binary checkpoints: model configuration, per-head tag schemes
//! (stored as ordered tag lists), and the named parameter archive with shape
//! headers and little-endian f64 payloads.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelError};
use crate::numerics::{ParameterStore, Tensor};
use crate::tags::{SchemeKind, TagScheme};

const MAGIC: &[u8; 4] = b"CTCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match its own configuration: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub struct Checkpoint {
    pub config: ModelConfig,
    pub schemes: BTreeMap<String, Arc<TagScheme>>,
    pub store: ParameterStore,
}

impl Checkpoint {
    /// Rebuild the model and verify the parameter archive matches the shapes
    /// the configuration implies.
    #[allow(clippy::type_complexity)]
    pub fn into_model(
        self,
    ) -> Result<(Model, ParameterStore, BTreeMap<String, Arc<TagScheme>>), CheckpointError> {
        let model = Model::build(self.config, &self.schemes)?;
        let reference = model.init_params()?;
        if reference.len() != self.store.len() {
            return Err(CheckpointError::Inconsistent(format!(
                "expected {} parameters, archive has {}",
                reference.len(),
                self.store.len()
            )));
        }
        for (name, param) in reference.iter() {
            let stored = self
                .store
                .param(name)
                .ok_or_else(|| CheckpointError::Inconsistent(format!("missing parameter `{name}`")))?;
            if stored.value.shape() != param.value.shape() {
                return Err(CheckpointError::Inconsistent(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    stored.value.shape(),
                    param.value.shape()
                )));
            }
        }
        Ok((model, self.store, self.schemes))
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    cursor: std::io::Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Reader<'a> {
        Reader {
            cursor: std::io::Cursor::new(data),
        }
    }
    fn take(&mut self, out: &mut [u8]) -> Result<(), CheckpointError> {
        self.cursor
            .read_exact(out)
            .map_err(|_| CheckpointError::Corrupt("unexpected end of file".to_string()))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        let mut b = [0u8; 1];
        self.take(&mut b)?;
        Ok(b[0])
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let mut b = [0u8; 2];
        self.take(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u16()? as usize;
        let mut bytes = vec![0u8; len];
        self.take(&mut bytes)?;
        String::from_utf8(bytes).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    schemes: &BTreeMap<String, Arc<TagScheme>>,
    store: &ParameterStore,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);

    let config_toml = toml::to_string(config)
        .map_err(|e| CheckpointError::Corrupt(format!("config serialization: {e}")))?;
    w.u32(config_toml.len() as u32);
    w.bytes(config_toml.as_bytes());

    w.u32(schemes.len() as u32);
    for (name, scheme) in schemes {
        w.string(name);
        w.u8(match scheme.kind() {
            SchemeKind::Bilou => 0,
            SchemeKind::Unprefixed => 1,
        });
        w.u32(scheme.categories().len() as u32);
        for c in scheme.categories() {
            w.string(c);
        }
        // ordered tag list; index = position
        w.u32(scheme.tags().len() as u32);
        for t in scheme.tags() {
            w.string(t);
        }
    }

    w.u64(store.len() as u64);
    for (name, param) in store.iter() {
        w.string(name);
        w.u8(param.trainable as u8);
        w.u32(param.value.rank() as u32);
        for &d in param.value.shape() {
            w.u64(d as u64);
        }
        for &v in param.value.data() {
            w.f64(v);
        }
    }

    fs::write(path, &w.buf).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader::new(&data);

    let mut magic = [0u8; 4];
    r.take(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }

    let config_len = r.u32()? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.take(&mut config_bytes)?;
    let config_toml =
        String::from_utf8(config_bytes).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let config: ModelConfig = toml::from_str(&config_toml)
        .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;

    let num_schemes = r.u32()?;
    let mut schemes = BTreeMap::new();
    for _ in 0..num_schemes {
        let name = r.string()?;
        let kind = r.u8()?;
        let num_categories = r.u32()?;
        let mut categories = Vec::with_capacity(num_categories as usize);
        for _ in 0..num_categories {
            categories.push(r.string()?);
        }
        let scheme = match kind {
            0 => TagScheme::bilou(&categories),
            1 => TagScheme::unprefixed(&categories),
            other => return Err(CheckpointError::Corrupt(format!("bad scheme kind {other}"))),
        };
        let num_tags = r.u32()? as usize;
        let mut tags = Vec::with_capacity(num_tags);
        for _ in 0..num_tags {
            tags.push(r.string()?);
        }
        if tags != scheme.tags() {
            return Err(CheckpointError::Inconsistent(format!(
                "scheme `{name}` tag list does not match its categories"
            )));
        }
        schemes.insert(name, scheme);
    }

    let num_params = r.u64()?;
    let mut store = ParameterStore::new();
    for _ in 0..num_params {
        let name = r.string()?;
        let trainable = r.u8()? != 0;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(r.f64()?);
        }
        let tensor = Tensor::from_vec(&shape, values)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        store
            .define(&name, tensor, trainable)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    }

    Ok(Checkpoint {
        config,
        schemes,
        store,
    })
}
