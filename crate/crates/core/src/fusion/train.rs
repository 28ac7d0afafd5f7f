use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{bce_loss, FusionHead};
use super::optim::{AdamWConfig, OptimizerState};
use super::{FusionError, Result};
use crate::evaluation::{compute_metrics, Confusion};
use crate::io_util::write_atomic;
use crate::pairs::LabeledPair;
use crate::preset::DEFAULT_BATCH_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub normalize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 512,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: 1e-3,
            weight_decay: 0.01,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            decision_threshold: 0.5,
            normalize_inputs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FusionError::Config(m));
        if self.hidden == 0 {
            return bad("hidden size must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!("decision threshold {} must lie in (0, 1)", self.decision_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over batches of the batch-mean BCE.
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation F1, rounded to f32.
    pub head: FusionHead,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

fn dims(pairs: &[LabeledPair<'_>], what: &'static str) -> Result<(usize, usize)> {
    let first = pairs.first().ok_or(FusionError::EmptySplit(what))?;
    let (da, dt) = (first.audio.len(), first.text.len());
    for p in pairs {
        if p.audio.len() != da {
            return Err(FusionError::DimMismatch {
                what: "audio embedding",
                expected: da,
                got: p.audio.len(),
            });
        }
        if p.text.len() != dt {
            return Err(FusionError::DimMismatch {
                what: "text embedding",
                expected: dt,
                got: p.text.len(),
            });
        }
    }
    Ok((da, dt))
}

/// Scores every pair with `head`.
pub fn predict_pairs(head: &FusionHead, pairs: &[LabeledPair<'_>]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| Ok(head.forward(p.audio, p.text)?.y_hat))
        .collect()
}

/// F1 (fraction) of `head` on `pairs` at `threshold`.
pub fn evaluate_f1(head: &FusionHead, pairs: &[LabeledPair<'_>], threshold: f64) -> Result<f64> {
    let preds: Vec<bool> = predict_pairs(head, pairs)?.into_iter().map(|s| s >= threshold).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.hallucinated).collect();
    compute_metrics(&preds, &labels)
        .map(|m| m.f1)
        .map_err(|_| FusionError::EmptySplit("evaluation"))
}

/// Mini-batch BCE training with AdamW and early stopping on validation F1.
///
/// One ChaCha8 generator seeded from `config.seed` drives initialization and
/// the per-epoch shuffles, so a run is a pure function of its inputs. The
/// last partial batch is kept.
pub fn train(train: &[LabeledPair<'_>], val: &[LabeledPair<'_>], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (audio_dim, text_dim) = dims(train, "training")?;
    let (va, vt) = dims(val, "validation")?;
    if (va, vt) != (audio_dim, text_dim) {
        return Err(FusionError::DimMismatch {
            what: "validation embedding",
            expected: audio_dim,
            got: va,
        });
    }
    let positives = train.iter().filter(|p| p.hallucinated).count();
    if positives == 0 || positives == train.len() {
        return Err(FusionError::SingleClass {
            positives,
            total: train.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = FusionHead::init(audio_dim, text_dim, config.hidden, &mut rng)?
        .with_normalized_inputs(config.normalize_inputs);
    let mut opt = OptimizerState::new(head.num_params(), AdamWConfig::new(config.lr, config.weight_decay));
    let mut grads = vec![0.0; head.num_params()];
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = head.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut stale = 0usize;
    let mut log = Vec::new();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &train[i];
                let cache = head.forward(p.audio, p.text)?;
                batch_loss += bce_loss(cache.y_hat, p.hallucinated);
                head.backward_into(&cache, p.hallucinated, scale, &mut grads)?;
            }
            opt.step(head.params_mut(), &grads)?;
            loss_sum += batch_loss * scale;
            batches += 1;
        }
        let snapshot = head.rounded_to_f32();
        let val_f1 = evaluate_f1(&snapshot, val, config.decision_threshold)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_f1,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best = snapshot;
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        head: best,
        log,
        best_epoch,
    })
}

/// Threshold from `grid` with the best F1 on `pairs`, smallest on ties.
pub fn calibrate_threshold(head: &FusionHead, pairs: &[LabeledPair<'_>], grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(FusionError::Config("empty threshold grid".into()));
    }
    let scores = predict_pairs(head, pairs)?;
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let mut c = Confusion::default();
        for (s, p) in scores.iter().zip(pairs) {
            match (*s >= t, p.hallucinated) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        let f1 = c.metrics().f1;
        if best.is_none_or(|(bt, bf)| f1 > bf || (f1 == bf && t < bt)) {
            best = Some((t, f1));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e).expect("log serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<EpochLog>> {
    let file = std::fs::File::open(path)?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            serde_json::from_str(&l?).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
