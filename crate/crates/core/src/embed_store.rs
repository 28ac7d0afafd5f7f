//! On-disk store of fixed-dimension embeddings, one file per (modality, encoder).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "AEMB" | version u32 = 1 | dim u32 | count u64 | modality u8 (0 audio, 1 text)
//! | encoder_name: u16 length + UTF-8
//! | count x ( id: u16 length + UTF-8 | dim x f32 )
//! ```
//!
//! Vectors are stored exactly as the encoder produced them; no normalization
//! happens at rest.

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample, Split};
use crate::io_util::write_atomic;

pub const MAGIC: &[u8; 4] = b"AEMB";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, not an embedding store")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated store: {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the declared records")]
    TrailingBytes(usize),
    #[error("unknown modality tag {0}")]
    BadModality(u8),
    #[error("invalid UTF-8 in {0}")]
    BadUtf8(&'static str),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("vector for {id:?} has dimension {got}, store dimension is {expected}")]
    DimMismatch { id: String, expected: usize, got: usize },
    #[error("vector for {0:?} has a non-finite component")]
    NonFinite(String),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("{what} longer than 65535 bytes")]
    TooLong { what: &'static str },
    #[error("expected a {expected} store, found {found}")]
    WrongModality { expected: Modality, found: Modality },
    #[error("missing embeddings for {} sample(s), first {:?}", .0.len(), .0.first().map(|m| m.id.as_str()).unwrap_or(""))]
    Missing(Vec<MissingEmbedding>),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

impl Modality {
    fn tag(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Text => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Modality::Audio),
            1 => Ok(Modality::Text),
            t => Err(StoreError::BadModality(t)),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    modality: Modality,
    encoder_name: String,
    dim: usize,
    records: IndexMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(modality: Modality, encoder_name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        let encoder_name = encoder_name.into();
        if encoder_name.len() > u16::MAX as usize {
            return Err(StoreError::TooLong { what: "encoder name" });
        }
        Ok(EmbeddingStore {
            modality,
            encoder_name,
            dim,
            records: IndexMap::new(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.records.get(id).map(Vec::as_slice)
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if id.len() > u16::MAX as usize {
            return Err(StoreError::TooLong { what: "record id" });
        }
        if vector.len() != self.dim {
            return Err(StoreError::DimMismatch {
                id,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite(id));
        }
        if self.records.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.records.insert(id, vector);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per_record = self.dim * 4 + 2;
        let mut out = Vec::with_capacity(23 + self.encoder_name.len() + self.len() * (per_record + 16));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.push(self.modality.tag());
        put_str(&mut out, &self.encoder_name);
        for (id, v) in &self.records {
            put_str(&mut out, id);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dim = r.u32("dim")? as usize;
        let count = r.u64("count")?;
        let modality = Modality::from_tag(r.u8("modality")?)?;
        let encoder_name = r.string("encoder name")?;
        let mut store = EmbeddingStore::new(modality, encoder_name, dim)?;
        for i in 0..count {
            let id = r.string("record id").map_err(|e| match e {
                StoreError::Truncated(_) => {
                    StoreError::Truncated(format!("header declares {count} records, found {i}"))
                }
                e => e,
            })?;
            let raw = r
                .take(dim * 4, "vector")
                .map_err(|_| StoreError::Truncated(format!("record {i} ({id:?}) is cut short")))?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(id, v)?;
        }
        if r.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(store)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| StoreError::Truncated(format!("file ends inside {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| StoreError::BadUtf8(what))
    }
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingStore::from_bytes(&bytes)
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    write_atomic(path, &store.to_bytes()).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissingEmbedding {
    pub id: String,
    pub missing_audio: bool,
    pub missing_text: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Any missing embedding is an error.
    Strict,
    /// Samples lacking an embedding are dropped and reported.
    Lenient,
}

#[derive(Debug, Clone, Copy)]
pub struct AlignedSample<'a> {
    pub sample: &'a Sample,
    pub audio: &'a [f32],
    pub text: &'a [f32],
}

#[derive(Debug, Clone)]
pub struct Alignment<'a> {
    pub samples: Vec<AlignedSample<'a>>,
    pub missing: Vec<MissingEmbedding>,
}

/// Pairs every sample of `split` with its audio and text vectors, in corpus order.
pub fn align<'a>(
    corpus: &'a Corpus,
    audio: &'a EmbeddingStore,
    text: &'a EmbeddingStore,
    split: Split,
    mode: AlignMode,
) -> Result<Alignment<'a>> {
    if audio.modality() != Modality::Audio {
        return Err(StoreError::WrongModality {
            expected: Modality::Audio,
            found: audio.modality(),
        });
    }
    if text.modality() != Modality::Text {
        return Err(StoreError::WrongModality {
            expected: Modality::Text,
            found: text.modality(),
        });
    }
    let mut samples = Vec::new();
    let mut missing = Vec::new();
    for sample in corpus.split(split) {
        match (audio.get(&sample.id), text.get(&sample.id)) {
            (Some(a), Some(t)) => samples.push(AlignedSample { sample, audio: a, text: t }),
            (a, t) => missing.push(MissingEmbedding {
                id: sample.id.clone(),
                missing_audio: a.is_none(),
                missing_text: t.is_none(),
            }),
        }
    }
    if mode == AlignMode::Strict && !missing.is_empty() {
        return Err(StoreError::Missing(missing));
    }
    Ok(Alignment { samples, missing })
}
