use std::path::Path;

use anyhow::{Context, Result};
use audiohall::analysis::{token_stats, ImportedTags, LexiconTagger, PosTagger, StatsReport};
use audiohall::corpus::Split;
use audiohall::evaluation::{random_baseline, RandomBaseline};

use super::{load_corpus_input, out_dir, write_file, write_json};
use crate::config::RunConfig;
use crate::manifest::Manifest;

/// Type frequencies and the top `k` nouns and verbs per type. Writes
/// `stats.json` and `stats.txt` when an output directory is configured.
pub fn cmd_analyze(cfg: &RunConfig, k: usize, tags: Option<&Path>) -> Result<StatsReport> {
    let mut manifest = Manifest::new("analyze", cfg.to_layer());
    let corpus = load_corpus_input(cfg, &mut manifest)?;
    let tagger: Box<dyn PosTagger> = match tags {
        Some(p) => {
            manifest.input("tags", p)?;
            Box::new(ImportedTags::load(p)?)
        }
        None => Box::new(LexiconTagger::default()),
    };
    let stats = token_stats(&corpus, tagger.as_ref(), k)?;
    let table = stats.render_table();
    if cfg.out.is_some() {
        let out = out_dir(cfg)?;
        write_json(&out.join("stats.json"), &stats)?;
        write_file(&out.join("stats.txt"), table.as_bytes())?;
        manifest.outputs = vec!["stats.json".into(), "stats.txt".into()];
        manifest.write(out)?;
    }
    Ok(stats)
}

/// Fair-coin predictor on the labels of `split`: closed form and Monte-Carlo.
pub fn cmd_baseline(cfg: &RunConfig, trials: usize, split: Split) -> Result<RandomBaseline> {
    let mut manifest = Manifest::new("baseline", cfg.to_layer());
    let corpus = load_corpus_input(cfg, &mut manifest)?;
    let labels = corpus
        .split(split)
        .map(|s| s.label().with_context(|| format!("sample {:?} is not annotated", s.id)))
        .collect::<Result<Vec<bool>>>()?;
    let b = random_baseline(&labels, trials, cfg.seed).with_context(|| format!("the {split} split"))?;
    if cfg.out.is_some() {
        let out = out_dir(cfg)?;
        write_json(&out.join("baseline.json"), &b)?;
        manifest.outputs = vec!["baseline.json".into()];
        manifest.write(out)?;
    }
    Ok(b)
}
