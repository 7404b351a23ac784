//! Pluggable word-vector providers.
//!
//! * `Hashed` — deterministic hash of the token text expanded to a
//!   pseudo-random unit vector; always resolves, needs no files.
//! * `StaticTable` — text file of `word v1 v2 ... vd` lines; unknown words
//!   map to a learned UNK row (the only trainable piece).
//! * `Precomputed` — contextual vectors keyed by (doc id, sentence index,
//!   token index), produced externally and consumed as-is, never updated.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numerics::{stable_hash, NumericsError, ParameterStore, Rng};

/// Parameter name of the trainable unknown-word row for static tables.
pub const UNK_PARAM: &str = "enc.word.unk";

const CONTEXTUAL_MAGIC: &[u8; 4] = b"CTEV";
const CONTEXTUAL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("bad contextual vector file {path}: {message}")]
    BadContextualFile { path: String, message: String },
    #[error("no contextual vector for doc `{doc}` sentence {sentence} token {token}")]
    MissingVector {
        doc: String,
        sentence: usize,
        token: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Where a word vector came from; the UNK row is the only trainable source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordSource {
    Frozen,
    UnkRow,
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hashed {
        dim: usize,
    },
    StaticTable {
        dim: usize,
        table: BTreeMap<String, Vec<f64>>,
    },
    Precomputed {
        dim: usize,
        vectors: BTreeMap<(String, usize, usize), Vec<f64>>,
    },
}

impl EmbeddingProvider {
    pub fn hashed(dim: usize) -> EmbeddingProvider {
        EmbeddingProvider::Hashed { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Hashed { dim }
            | EmbeddingProvider::StaticTable { dim, .. }
            | EmbeddingProvider::Precomputed { dim, .. } => *dim,
        }
    }

    /// Define any trainable parameters the provider needs.
    pub fn define_params(&self, store: &mut ParameterStore, seed: u64) -> Result<(), NumericsError> {
        if let EmbeddingProvider::StaticTable { dim, .. } = self {
            store.define_uniform(UNK_PARAM, &[*dim], *dim, *dim, seed)?;
        }
        Ok(())
    }

    /// Word vector for one token. Exactly one `dim`-width vector per call.
    pub fn vector(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence: usize,
        token: usize,
        text: &str,
    ) -> Result<(Vec<f64>, WordSource), EmbedError> {
        match self {
            EmbeddingProvider::Hashed { dim } => Ok((hashed_vector(text, *dim), WordSource::Frozen)),
            EmbeddingProvider::StaticTable { table, .. } => match table.get(text) {
                Some(v) => Ok((v.clone(), WordSource::Frozen)),
                None => Ok((store.get(UNK_PARAM).data().to_vec(), WordSource::UnkRow)),
            },
            EmbeddingProvider::Precomputed { vectors, .. } => vectors
                .get(&(doc.to_string(), sentence, token))
                .map(|v| (v.clone(), WordSource::Frozen))
                .ok_or_else(|| EmbedError::MissingVector {
                    doc: doc.to_string(),
                    sentence,
                    token,
                }),
        }
    }

    /// Load a `word v1 ... vd` table.
    pub fn load_static_table(path: impl AsRef<Path>) -> Result<EmbeddingProvider, EmbedError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let display = path.display().to_string();
        let mut table = BTreeMap::new();
        let mut dim = None;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap().to_string();
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| EmbedError::Malformed {
                        path: display.clone(),
                        line: idx + 1,
                        message: format!("bad float `{f}`"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(EmbedError::Malformed {
                    path: display.clone(),
                    line: idx + 1,
                    message: "word with no vector".to_string(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EmbedError::Malformed {
                        path: display.clone(),
                        line: idx + 1,
                        message: format!("dimension {} != {}", values.len(), d),
                    })
                }
                _ => {}
            }
            table.insert(word, values);
        }
        let dim = dim.ok_or_else(|| EmbedError::BadContextualFile {
            path: display,
            message: "empty embedding table".to_string(),
        })?;
        Ok(EmbeddingProvider::StaticTable { dim, table })
    }

    pub fn load_contextual(path: impl AsRef<Path>) -> Result<EmbeddingProvider, EmbedError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = fs::read(path).map_err(|source| EmbedError::Io {
            path: display.clone(),
            source,
        })?;
        parse_contextual(&bytes).map_err(|message| EmbedError::BadContextualFile {
            path: display,
            message,
        })
    }
}

fn hashed_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut rng = Rng::new(stable_hash(text));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn parse_contextual(bytes: &[u8]) -> Result<EmbeddingProvider, String> {
    let mut cursor = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cursor.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != CONTEXTUAL_MAGIC {
        return Err("bad magic".to_string());
    }
    let mut u32buf = [0u8; 4];
    cursor.read_exact(&mut u32buf).map_err(|e| e.to_string())?;
    let version = u32::from_le_bytes(u32buf);
    if version != CONTEXTUAL_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    cursor.read_exact(&mut u32buf).map_err(|e| e.to_string())?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim == 0 {
        return Err("zero dimension".to_string());
    }
    let mut u64buf = [0u8; 8];
    cursor.read_exact(&mut u64buf).map_err(|e| e.to_string())?;
    let count = u64::from_le_bytes(u64buf);
    let mut vectors = BTreeMap::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        cursor.read_exact(&mut u16buf).map_err(|e| e.to_string())?;
        let doc_len = u16::from_le_bytes(u16buf) as usize;
        let mut doc_bytes = vec![0u8; doc_len];
        cursor.read_exact(&mut doc_bytes).map_err(|e| e.to_string())?;
        let doc = String::from_utf8(doc_bytes).map_err(|e| e.to_string())?;
        cursor.read_exact(&mut u32buf).map_err(|e| e.to_string())?;
        let sentence = u32::from_le_bytes(u32buf) as usize;
        cursor.read_exact(&mut u32buf).map_err(|e| e.to_string())?;
        let token = u32::from_le_bytes(u32buf) as usize;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            cursor.read_exact(&mut u64buf).map_err(|e| e.to_string())?;
            values.push(f64::from_le_bytes(u64buf));
        }
        vectors.insert((doc, sentence, token), values);
    }
    Ok(EmbeddingProvider::Precomputed { dim, vectors })
}

/// Write a contextual vector file; the inverse of `load_contextual`.
pub fn write_contextual(
    path: impl AsRef<Path>,
    dim: usize,
    records: &BTreeMap<(String, usize, usize), Vec<f64>>,
) -> Result<(), EmbedError> {
    let path = path.as_ref();
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CONTEXTUAL_MAGIC);
    out.extend_from_slice(&CONTEXTUAL_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for ((doc, sentence, token), values) in records {
        assert_eq!(values.len(), dim, "record dimension mismatch");
        out.extend_from_slice(&(doc.len() as u16).to_le_bytes());
        out.extend_from_slice(doc.as_bytes());
        out.extend_from_slice(&(*sentence as u32).to_le_bytes());
        out.extend_from_slice(&(*token as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&out).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_vectors_deterministic_and_unit_norm() {
        let p = EmbeddingProvider::hashed(8);
        let store = ParameterStore::new();
        let (a, src) = p.vector(&store, "d", 0, 0, "edema").unwrap();
        let (b, _) = p.vector(&store, "other", 5, 3, "edema").unwrap();
        assert_eq!(a, b);
        assert_eq!(src, WordSource::Frozen);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let (c, _) = p.vector(&store, "d", 0, 0, "edemas").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn static_table_falls_back_to_unk_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        fs::write(&path, "edema 1.0 2.0\nfever 3.0 4.0\n").unwrap();
        let p = EmbeddingProvider::load_static_table(&path).unwrap();
        assert_eq!(p.dim(), 2);
        let mut store = ParameterStore::new();
        p.define_params(&mut store, 7).unwrap();
        let (known, src) = p.vector(&store, "d", 0, 0, "edema").unwrap();
        assert_eq!(known, vec![1.0, 2.0]);
        assert_eq!(src, WordSource::Frozen);
        let (unk, src) = p.vector(&store, "d", 0, 1, "zzz").unwrap();
        assert_eq!(unk, store.get(UNK_PARAM).data().to_vec());
        assert_eq!(src, WordSource::UnkRow);
    }

    #[test]
    fn static_table_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        fs::write(&path, "a 1.0 2.0\nb 3.0\n").unwrap();
        assert!(matches!(
            EmbeddingProvider::load_static_table(&path),
            Err(EmbedError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn contextual_round_trip_and_missing_coordinate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.bin");
        let mut records = BTreeMap::new();
        records.insert(("doc1".to_string(), 0, 0), vec![0.25, -1.5, 3.0]);
        records.insert(("doc1".to_string(), 0, 1), vec![1.0, 2.0, 4.0]);
        write_contextual(&path, 3, &records).unwrap();
        let p = EmbeddingProvider::load_contextual(&path).unwrap();
        assert_eq!(p.dim(), 3);
        let store = ParameterStore::new();
        let (v, _) = p.vector(&store, "doc1", 0, 1, "ignored").unwrap();
        assert_eq!(v, vec![1.0, 2.0, 4.0]);
        assert!(matches!(
            p.vector(&store, "doc1", 1, 0, "x"),
            Err(EmbedError::MissingVector { .. })
        ));
    }

    #[test]
    fn contextual_rejects_garbage() {
        let err = parse_contextual(b"NOPE").unwrap_err();
        assert!(err.contains("magic") || err.contains("failed"));
    }
}
