use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context, Result};
use audiohall::corpus::{load_corpus, save_corpus, DEFAULT_PROMPT};
use audiohall::embed_store::write_store;
use audiohall::synthetic::{planted_direction, PlantedConfig};
use audiohall::{Corpus, Sample};

use super::out_dir;
use crate::config::RunConfig;
use crate::manifest::Manifest;

/// Parses a raw response dump: `id<TAB>audio_ref<TAB>response` per line,
/// blank lines ignored. The response is everything after the second tab.
pub fn parse_raw(text: &str, prompt: &str) -> Result<Corpus> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(audio_ref), Some(response)) = (parts.next(), parts.next(), parts.next()) else {
            bail!("line {line_no}: expected id<TAB>audio_ref<TAB>response");
        };
        let id = id.trim();
        if id.is_empty() {
            bail!("line {line_no}: empty sample id");
        }
        if let Some(first) = seen.insert(id, line_no) {
            bail!("line {line_no}: duplicate sample id {id:?} (first seen on line {first})");
        }
        let mut s = Sample::new(id, audio_ref.trim(), response.trim());
        s.prompt = prompt.to_string();
        samples.push(s);
    }
    Ok(Corpus::new(samples)?)
}

pub fn cmd_ingest(input: &Path, corpus_path: &Path, prompt: Option<&str>) -> Result<Corpus> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let corpus = parse_raw(&text, prompt.unwrap_or(DEFAULT_PROMPT)).with_context(|| format!("{}", input.display()))?;
    save_corpus(&corpus, corpus_path)?;
    Ok(corpus)
}

pub fn cmd_split(cfg: &RunConfig, output: Option<&Path>) -> Result<Corpus> {
    let path = cfg.corpus()?;
    let corpus = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    let split = corpus.assign_splits(cfg.split, cfg.seed, cfg.require_annotated)?;
    let dest = output.unwrap_or(path);
    save_corpus(&split, dest)?;
    Ok(split)
}

pub fn cmd_serve(service: audiohall_annotate::ServiceConfig, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(audiohall_annotate::serve(service, addr))?;
    Ok(())
}

/// Writes `corpus.jsonl`, `audio.aemb` and `text.aemb` for a planted-direction
/// synthetic set.
pub fn cmd_synth(cfg: &RunConfig, planted: &PlantedConfig) -> Result<()> {
    if planted.splits.total() > planted.samples {
        bail!("split counts {} exceed {} samples", planted.splits.total(), planted.samples);
    }
    let out = out_dir(cfg)?;
    let set = planted_direction(planted);
    save_corpus(&set.corpus, &out.join("corpus.jsonl"))?;
    write_store(&set.audio, &out.join("audio.aemb"))?;
    write_store(&set.text, &out.join("text.aemb"))?;
    let mut manifest = Manifest::new("synth", cfg.to_layer());
    manifest.outputs = vec!["corpus.jsonl".into(), "audio.aemb".into(), "text.aemb".into()];
    manifest.write(out)?;
    Ok(())
}
