//! Subcommand implementations. Each `cmd_*` takes a resolved [`RunConfig`]
//! and returns what it computed, after writing its outputs.

mod analyze;
mod classify;
mod corpus;

use std::path::Path;

use anyhow::{bail, Context, Result};
use audiohall::corpus::{load_corpus, metadata_path, Split};
use audiohall::embed_store::{align, read_store, AlignMode};
use audiohall::pairs::{labeled_pairs, LabeledPair};
use audiohall::{Corpus, EmbeddingStore};

pub use analyze::{cmd_analyze, cmd_baseline};
pub use classify::{cmd_calibrate, cmd_evaluate, cmd_train, cmd_zeroshot, ClassifierRun, EvalSource};
pub use corpus::{cmd_ingest, cmd_serve, cmd_split, cmd_synth, parse_raw};

use crate::config::RunConfig;
use crate::manifest::Manifest;

pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.fush";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    audiohall::io_util::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.out()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(out)
}

pub(crate) fn load_corpus_input(cfg: &RunConfig, manifest: &mut Manifest) -> Result<Corpus> {
    let path = cfg.corpus()?;
    let corpus = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    manifest.input("corpus", path)?;
    manifest.optional_input("corpus_metadata", &metadata_path(path))?;
    Ok(corpus)
}

pub(crate) struct Inputs {
    pub corpus: Corpus,
    pub audio: EmbeddingStore,
    pub text: EmbeddingStore,
}

pub(crate) fn load_inputs(cfg: &RunConfig, manifest: &mut Manifest) -> Result<Inputs> {
    let corpus = load_corpus_input(cfg, manifest)?;
    let store = |role: &str, path: &Path, manifest: &mut Manifest| -> Result<EmbeddingStore> {
        let s = read_store(path).with_context(|| format!("loading {role} embeddings {}", path.display()))?;
        manifest.input(role, path)?;
        Ok(s)
    };
    let audio = store("audio_embs", cfg.audio_embs()?, manifest)?;
    let text = store("text_embs", cfg.text_embs()?, manifest)?;
    Ok(Inputs { corpus, audio, text })
}

impl Inputs {
    /// Labeled embedding pairs for `split`; refuses an empty split.
    pub fn pairs(&self, split: Split, cfg: &RunConfig) -> Result<Vec<LabeledPair<'_>>> {
        let mode = if cfg.lenient { AlignMode::Lenient } else { AlignMode::Strict };
        let aligned = align(&self.corpus, &self.audio, &self.text, split, mode)
            .with_context(|| format!("aligning the {split} split"))?;
        if !aligned.missing.is_empty() {
            tracing::warn!(
                split = %split,
                dropped = aligned.missing.len(),
                "samples without embeddings were skipped"
            );
            eprintln!("warning: {} {split} samples skipped for missing embeddings", aligned.missing.len());
        }
        if aligned.samples.is_empty() {
            bail!("the {split} split is empty");
        }
        labeled_pairs(&aligned.samples).with_context(|| format!("the {split} split"))
    }
}
