use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use audiohall::corpus::Split;
use audiohall::evaluation::{render_tables, EvaluationReport};
use audiohall::fusion::{predict_pairs, read_checkpoint, train, write_checkpoint, write_log, FusionHead};
use audiohall::pairs::LabeledPair;
use audiohall::zeroshot::{
    calibrate_alpha, classify_pairs, parse_grid, read_verdicts, write_verdicts, Calibration, VerdictRecord,
    ZeroShotConfig,
};
use serde::Serialize;

use super::{
    load_corpus_input, load_inputs, out_dir, write_file, write_json, CHECKPOINT_FILE, REPORT_JSON, REPORT_TXT,
    TRAIN_LOG_FILE, VERDICTS_FILE,
};
use crate::config::{Alpha, RunConfig};
use crate::manifest::Manifest;

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierRun {
    pub classifier: String,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub alpha: f64,
    pub val_f1: f64,
    pub val_samples: usize,
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
    pub train_samples: usize,
    pub val_samples: usize,
}

fn label(cfg: &RunConfig, kind: &str) -> String {
    match cfg.preset {
        Some(p) => format!("{p} {kind}"),
        None => kind.to_string(),
    }
}

fn report_for(pairs: &[LabeledPair<'_>], predictions: &[bool]) -> Result<EvaluationReport> {
    let labels: Vec<bool> = pairs.iter().map(|p| p.hallucinated).collect();
    let types: Vec<_> = pairs.iter().map(|p| p.halluc_type).collect();
    Ok(EvaluationReport::build(predictions, &labels, &types)?)
}

fn write_outputs(out: &Path, run: &ClassifierRun, verdicts: &[VerdictRecord], manifest: &mut Manifest) -> Result<()> {
    write_verdicts(&out.join(VERDICTS_FILE), verdicts).with_context(|| format!("writing {VERDICTS_FILE}"))?;
    write_json(&out.join(REPORT_JSON), run)?;
    let table = render_tables(&[(run.classifier.as_str(), &run.report)]);
    write_file(&out.join(REPORT_TXT), table.as_bytes())?;
    manifest.outputs.extend([VERDICTS_FILE, REPORT_JSON, REPORT_TXT].map(String::from));
    manifest.write(out)?;
    Ok(())
}

fn calibrate_on_val(cfg: &RunConfig, pairs: &[LabeledPair<'_>]) -> Result<CalibrationSummary> {
    let grid = parse_grid(&cfg.grid)?;
    let Calibration { alpha, f1 } = calibrate_alpha(pairs, &grid)?;
    Ok(CalibrationSummary {
        alpha,
        val_f1: 100.0 * f1,
        val_samples: pairs.len(),
        grid: cfg.grid.clone(),
    })
}

/// Chooses alpha on the validation split. Writes `calibration.json` and a
/// manifest when an output directory is configured.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<CalibrationSummary> {
    let mut manifest = Manifest::new("calibrate", cfg.to_layer());
    let inputs = load_inputs(cfg, &mut manifest)?;
    let val = inputs.pairs(Split::Val, cfg)?;
    let summary = calibrate_on_val(cfg, &val)?;
    if cfg.out.is_some() {
        let out = out_dir(cfg)?;
        write_json(&out.join("calibration.json"), &summary)?;
        manifest.outputs.push("calibration.json".into());
        manifest.write(out)?;
    }
    Ok(summary)
}

pub fn cmd_zeroshot(cfg: &RunConfig) -> Result<ClassifierRun> {
    let out = out_dir(cfg)?;
    let mut manifest = Manifest::new("zeroshot", cfg.to_layer());
    let inputs = load_inputs(cfg, &mut manifest)?;
    let (alpha, calibration) = match cfg.alpha {
        Alpha::Fixed(a) => (a, None),
        Alpha::Calibrate => {
            let c = calibrate_on_val(cfg, &inputs.pairs(Split::Val, cfg)?)?;
            (c.alpha, Some(c))
        }
    };
    let mut zs = ZeroShotConfig::new(alpha)?;
    zs.strip_prefix_for_text = cfg.text_prefix_stripped;

    let test = inputs.pairs(Split::Test, cfg)?;
    let verdicts = classify_pairs(&test, &zs)?;
    let predictions: Vec<bool> = verdicts.iter().map(|v| v.hallucinated).collect();
    let run = ClassifierRun {
        classifier: label(cfg, "zero-shot"),
        split: Split::Test,
        alpha: Some(alpha),
        calibration,
        threshold: None,
        training: None,
        report: report_for(&test, &predictions)?,
    };
    let records: Vec<VerdictRecord> = verdicts
        .into_iter()
        .map(|v| VerdictRecord {
            sample_id: v.sample_id,
            score: v.score,
            hallucinated: v.hallucinated,
            alpha: Some(alpha),
            threshold: None,
        })
        .collect();
    write_outputs(out, &run, &records, &mut manifest)?;
    Ok(run)
}

fn fusion_verdicts(head: &FusionHead, pairs: &[LabeledPair<'_>], threshold: f64) -> Result<Vec<VerdictRecord>> {
    let probs = predict_pairs(head, pairs)?;
    Ok(pairs
        .iter()
        .zip(probs)
        .map(|(p, y)| VerdictRecord {
            sample_id: p.sample_id.to_string(),
            score: y,
            hallucinated: y >= threshold,
            alpha: None,
            threshold: Some(threshold),
        })
        .collect())
}

/// Trains on train, early-stops on val, evaluates on test. Outputs the
/// checkpoint, the per-epoch log, verdicts and reports.
pub fn cmd_train(cfg: &RunConfig) -> Result<ClassifierRun> {
    let out = out_dir(cfg)?;
    let mut manifest = Manifest::new("train", cfg.to_layer());
    let inputs = load_inputs(cfg, &mut manifest)?;
    let train_pairs = inputs.pairs(Split::Train, cfg)?;
    let val = inputs.pairs(Split::Val, cfg)?;
    let test = inputs.pairs(Split::Test, cfg)?;
    let t = &cfg.train;
    let outcome = train(&train_pairs, &val, t)?;
    write_checkpoint(&outcome.head, &out.join(CHECKPOINT_FILE))?;
    write_log(&out.join(TRAIN_LOG_FILE), &outcome.log).with_context(|| format!("writing {TRAIN_LOG_FILE}"))?;
    manifest.outputs.extend([CHECKPOINT_FILE, TRAIN_LOG_FILE].map(String::from));
    let best_val_f1 = outcome.best_epoch.map(|e| outcome.log[e].val_f1);
    let records = fusion_verdicts(&outcome.head, &test, t.decision_threshold)?;
    let predictions: Vec<bool> = records.iter().map(|r| r.hallucinated).collect();
    let run = ClassifierRun {
        classifier: label(cfg, "fusion"),
        split: Split::Test,
        alpha: None,
        calibration: None,
        threshold: Some(t.decision_threshold),
        training: Some(TrainingSummary {
            epochs_run: outcome.log.len(),
            best_epoch: outcome.best_epoch,
            best_val_f1,
            train_samples: train_pairs.len(),
            val_samples: val.len(),
        }),
        report: report_for(&test, &predictions)?,
    };
    write_outputs(out, &run, &records, &mut manifest)?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    Verdicts(PathBuf),
}

/// Scores a saved fusion checkpoint, or re-scores a verdict file against the
/// corpus labels, on `split`.
pub fn cmd_evaluate(cfg: &RunConfig, source: &EvalSource, split: Split) -> Result<ClassifierRun> {
    let out = out_dir(cfg)?;
    let mut manifest = Manifest::new("evaluate", cfg.to_layer());
    let (run, records) = match source {
        EvalSource::Checkpoint(path) => {
            let head = read_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            manifest.input("checkpoint", path)?;
            let inputs = load_inputs(cfg, &mut manifest)?;
            let pairs = inputs.pairs(split, cfg)?;
            let threshold = cfg.train.decision_threshold;
            let records = fusion_verdicts(&head, &pairs, threshold)?;
            let predictions: Vec<bool> = records.iter().map(|r| r.hallucinated).collect();
            let run = ClassifierRun {
                classifier: label(cfg, "fusion"),
                split,
                alpha: None,
                calibration: None,
                threshold: Some(threshold),
                training: None,
                report: report_for(&pairs, &predictions)?,
            };
            (run, records)
        }
        EvalSource::Verdicts(path) => {
            let verdicts = read_verdicts(path).with_context(|| format!("reading verdicts {}", path.display()))?;
            manifest.input("verdicts", path)?;
            let corpus = load_corpus_input(cfg, &mut manifest)?;
            let by_id: HashMap<&str, &VerdictRecord> = verdicts.iter().map(|v| (v.sample_id.as_str(), v)).collect();
            let (mut predictions, mut labels, mut types, mut records) = (vec![], vec![], vec![], vec![]);
            for s in corpus.split(split) {
                let Some(&v) = by_id.get(s.id.as_str()) else {
                    bail!("no verdict for {split} sample {:?} in {}", s.id, path.display());
                };
                let label = s.label().ok_or_else(|| anyhow::anyhow!("sample {:?} is not annotated", s.id))?;
                predictions.push(v.hallucinated);
                labels.push(label);
                types.push(s.halluc_type());
                records.push(v.clone());
            }
            if records.is_empty() {
                bail!("the {split} split is empty");
            }
            let alpha = records[0].alpha;
            let threshold = records[0].threshold;
            let run = ClassifierRun {
                classifier: if alpha.is_some() { label(cfg, "zero-shot") } else { label(cfg, "fusion") },
                split,
                alpha,
                calibration: None,
                threshold,
                training: None,
                report: EvaluationReport::build(&predictions, &labels, &types)?,
            };
            (run, records)
        }
    };
    write_outputs(out, &run, &records, &mut manifest)?;
    Ok(run)
}
