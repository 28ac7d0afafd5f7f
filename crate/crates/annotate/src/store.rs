//! Durable annotation state: an in-memory corpus snapshot for readers, and a
//! single writer that journals every label before it becomes visible.
//!
//! The journal sits next to the corpus as `<corpus>.journal`. Each line is one
//! acknowledged write. It is never truncated, so it doubles as the audit trail
//! for re-annotations. The corpus file itself is rewritten every
//! `rewrite_every` writes and on [`AnnotationStore::flush`]; on open, the
//! journal is replayed over whatever the corpus file holds.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use audiohall::corpus::{load_corpus, save_corpus, CorpusError};
use audiohall::{Annotation, Corpus, HallucType, Sample};
use chrono::Utc;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("journal {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("journal {path} line {line}: {message}")]
    Journal { path: PathBuf, line: usize, message: String },
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// Body of a label submission. `type` is accepted as an alias for
/// `halluc_type` so the corpus spelling works too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    #[serde(default)]
    pub sample_id: Option<String>,
    pub hallucinated: bool,
    #[serde(default, alias = "type")]
    pub halluc_type: Option<HallucType>,
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    sample_id: String,
    annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub hallucinated: usize,
    pub per_type: BTreeMap<HallucType, usize>,
    /// `hallucinated / labeled`; null until something is labeled.
    pub hallucination_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextSample {
    pub sample: Option<Sample>,
    pub complete: bool,
}

pub const DEFAULT_REWRITE_EVERY: usize = 50;

pub fn journal_path(corpus: &Path) -> PathBuf {
    let mut s = corpus.as_os_str().to_owned();
    s.push(".journal");
    PathBuf::from(s)
}

struct Writer {
    corpus_path: PathBuf,
    journal_path: PathBuf,
    journal: File,
    pending: usize,
    rewrite_every: usize,
}

impl Writer {
    fn append(&mut self, entry: &JournalEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry).expect("journal entries serialize");
        line.push(b'\n');
        let io_err = |source| StoreError::Io {
            path: self.journal_path.clone(),
            source,
        };
        self.journal.write_all(&line).map_err(io_err)?;
        self.journal.sync_data().map_err(io_err)
    }
}

pub struct AnnotationStore {
    snapshot: RwLock<Arc<Corpus>>,
    writer: Mutex<Writer>,
}

impl AnnotationStore {
    /// Loads the corpus, replays its journal and brings the corpus file up to
    /// date. A torn final journal line (a write that never reached fsync, so
    /// was never acknowledged) is cut off; any other malformed line is an
    /// error.
    pub fn open(corpus_path: &Path, rewrite_every: usize) -> Result<Self> {
        let mut corpus = load_corpus(corpus_path)?;
        let journal_path = journal_path(corpus_path);
        let replayed = replay(&journal_path, &mut corpus)?;
        if replayed > 0 {
            save_corpus(&corpus, corpus_path)?;
            tracing::info!(replayed, journal = %journal_path.display(), "replayed annotation journal");
        }
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(|source| StoreError::Io {
                path: journal_path.clone(),
                source,
            })?;
        Ok(AnnotationStore {
            snapshot: RwLock::new(Arc::new(corpus)),
            writer: Mutex::new(Writer {
                corpus_path: corpus_path.to_path_buf(),
                journal_path,
                journal,
                pending: 0,
                rewrite_every: rewrite_every.max(1),
            }),
        })
    }

    pub fn snapshot(&self) -> Arc<Corpus> {
        Arc::clone(&self.snapshot.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Records a label. Returns once the journal entry is on disk; the new
    /// label is visible to readers from then on. Last write wins.
    pub fn put(&self, sample_id: &str, req: AnnotationRequest) -> Result<Annotation> {
        if let Some(body_id) = &req.sample_id {
            if body_id != sample_id {
                return Err(StoreError::Invalid(format!(
                    "body sample_id {body_id:?} does not match path id {sample_id:?}"
                )));
            }
        }
        let annotation = Annotation::new(req.hallucinated, req.halluc_type, req.annotator, Utc::now())?;

        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.snapshot();
        if current.get(sample_id).is_none() {
            return Err(StoreError::UnknownSample(sample_id.to_string()));
        }
        let entry = JournalEntry {
            sample_id: sample_id.to_string(),
            annotation,
        };
        writer.append(&entry)?;

        let mut next = Corpus::clone(&current);
        next.set_annotation(sample_id, Some(entry.annotation.clone()))?;
        let next = Arc::new(next);
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::clone(&next);

        writer.pending += 1;
        if writer.pending >= writer.rewrite_every {
            // the journal already holds this write, so a failed rewrite only
            // delays compaction
            match save_corpus(&next, &writer.corpus_path) {
                Ok(()) => writer.pending = 0,
                Err(e) => tracing::warn!(error = %e, "corpus rewrite failed; journal remains authoritative"),
            }
        }
        Ok(entry.annotation)
    }

    /// Writes the current snapshot to the corpus file if anything is pending.
    pub fn flush(&self) -> Result<()> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if writer.pending > 0 {
            save_corpus(&self.snapshot(), &writer.corpus_path)?;
            writer.pending = 0;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Sample> {
        self.snapshot().get(id).cloned()
    }

    /// First unlabeled sample strictly after `after` in corpus order. Does not
    /// wrap around; `complete` reports whether anything is unlabeled at all.
    pub fn next_unlabeled(&self, after: Option<&str>) -> Result<NextSample> {
        let corpus = self.snapshot();
        let start = match after {
            None => 0,
            Some(id) => corpus
                .position(id)
                .ok_or_else(|| StoreError::UnknownSample(id.to_string()))?
                + 1,
        };
        let sample = corpus.samples()[start..]
            .iter()
            .find(|s| s.annotation.is_none())
            .cloned();
        let complete = corpus.samples().iter().all(|s| s.annotation.is_some());
        Ok(NextSample { sample, complete })
    }

    pub fn progress(&self) -> Progress {
        progress(&self.snapshot())
    }
}

pub fn progress(corpus: &Corpus) -> Progress {
    let mut per_type: BTreeMap<HallucType, usize> = HallucType::ALL.iter().map(|&t| (t, 0)).collect();
    let mut labeled = 0;
    for ann in corpus.samples().iter().filter_map(|s| s.annotation.as_ref()) {
        labeled += 1;
        if let Some(t) = ann.halluc_type() {
            *per_type.entry(t).or_default() += 1;
        }
    }
    let hallucinated = per_type.values().sum();
    Progress {
        total: corpus.len(),
        labeled,
        hallucinated,
        per_type,
        hallucination_rate: (labeled > 0).then(|| hallucinated as f64 / labeled as f64),
    }
}

fn replay(path: &Path, corpus: &mut Corpus) -> Result<usize> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut applied = 0;
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            tracing::warn!(line = line_no, "dropping torn final journal line");
            truncate(path, offset as u64)?;
            break;
        };
        let line = &bytes[offset..offset + len];
        offset += len + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let entry: JournalEntry = serde_json::from_slice(line).map_err(|e| StoreError::Journal {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        corpus
            .set_annotation(&entry.sample_id, Some(entry.annotation))
            .map_err(|e| StoreError::Journal {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        applied += 1;
    }
    Ok(applied)
}

fn truncate(path: &Path, len: u64) -> Result<()> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = OpenOptions::new().write(true).open(path).map_err(io_err)?;
    f.set_len(len).map_err(io_err)?;
    f.sync_all().map_err(io_err)
}
