//! Zero-shot classifier: a sentence is hallucinated when the cosine
//! similarity between its text embedding and the clip's audio embedding is
//! strictly smaller than alpha. A score equal to alpha is not hallucinated.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::Confusion;
use crate::io_util::write_atomic;
use crate::pairs::LabeledPair;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ZeroShotError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite vector component")]
    NonFinite,
    #[error("alpha {0} outside [-1, 1]")]
    AlphaOutOfRange(f64),
    #[error("empty calibration grid")]
    EmptyGrid,
    #[error("invalid grid spec {0:?}: {1}")]
    BadGrid(String, String),
    #[error("calibration needs both classes in the validation set (got {positives} hallucinated of {total})")]
    SingleClass { positives: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, ZeroShotError>;

/// Cosine similarity accumulated in f64 and clamped to [-1, 1].
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ZeroShotError::DimMismatch(u.len(), v.len()));
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = (a.into(), b.into());
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if !(dot.is_finite() && uu.is_finite() && vv.is_finite()) {
        return Err(ZeroShotError::NonFinite);
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(ZeroShotError::ZeroNorm);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotConfig {
    alpha: f64,
    /// Whether the text side was embedded after prefix stripping. Recorded
    /// for provenance; classification does not read it.
    pub strip_prefix_for_text: bool,
}

impl ZeroShotConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&alpha) {
            return Err(ZeroShotError::AlphaOutOfRange(alpha));
        }
        Ok(ZeroShotConfig {
            alpha,
            strip_prefix_for_text: false,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn decide(&self, score: f64) -> bool {
        score < self.alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub sample_id: String,
    pub score: f64,
    pub hallucinated: bool,
}

pub fn classify<T: Copy + Into<f64>>(
    sample_id: &str,
    audio: &[T],
    text: &[T],
    config: &ZeroShotConfig,
) -> Result<Verdict> {
    let score = cosine(audio, text)?;
    Ok(Verdict {
        sample_id: sample_id.to_string(),
        score,
        hallucinated: config.decide(score),
    })
}

pub fn classify_pairs(pairs: &[LabeledPair<'_>], config: &ZeroShotConfig) -> Result<Vec<Verdict>> {
    pairs
        .iter()
        .map(|p| classify(p.sample_id, p.audio, p.text, config))
        .collect()
}

/// `count` evenly spaced points from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// 201 points over [0, 1] in steps of 0.005.
pub fn default_grid() -> Vec<f64> {
    linear_grid(0.0, 1.0, 201)
}

/// Parses `start:stop:step`, e.g. `0:1:0.005`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| ZeroShotError::BadGrid(spec.to_string(), msg.to_string());
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(&e.to_string()))?;
    let [start, stop, step] = parts[..] else {
        return Err(bad("expected start:stop:step"));
    };
    if !(step > 0.0) || !(stop >= start) {
        return Err(bad("need step > 0 and stop >= start"));
    }
    let intervals = ((stop - start) / step).round();
    if !intervals.is_finite() || intervals > 1e7 {
        return Err(bad("too many grid points"));
    }
    Ok(linear_grid(start, stop, intervals as usize + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    /// Fraction in [0, 1].
    pub f1: f64,
}

pub fn calibrate_alpha(pairs: &[LabeledPair<'_>], grid: &[f64]) -> Result<Calibration> {
    let scored = pairs
        .iter()
        .map(|p| Ok((cosine(p.audio, p.text)?, p.hallucinated)))
        .collect::<Result<Vec<_>>>()?;
    calibrate_scores(&scored, grid)
}

/// Picks the grid value with the highest validation F1, smallest alpha on
/// ties. Counting uses sorted scores, so every grid point costs two binary
/// searches.
pub fn calibrate_scores(scored: &[(f64, bool)], grid: &[f64]) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(ZeroShotError::EmptyGrid);
    }
    if let Some(&a) = grid.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
        return Err(ZeroShotError::AlphaOutOfRange(a));
    }
    let mut pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(ZeroShotError::SingleClass {
            positives: pos.len(),
            total: scored.len(),
        });
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let mut best: Option<Calibration> = None;
    for &alpha in grid {
        let tp = pos.partition_point(|&s| s < alpha);
        let fp = neg.partition_point(|&s| s < alpha);
        let f1 = Confusion {
            tp,
            fp,
            tn: neg.len() - fp,
            fn_: pos.len() - tp,
        }
        .metrics()
        .f1;
        let better = match best {
            None => true,
            Some(b) => f1 > b.f1 || (f1 == b.f1 && alpha < b.alpha),
        };
        if better {
            best = Some(Calibration { alpha, f1 });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// One line of a verdict file. Zero-shot runs fill `alpha`, fusion runs fill
/// `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub sample_id: String,
    pub score: f64,
    pub hallucinated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

pub fn write_verdicts(path: &Path, records: &[VerdictRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("verdict serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_verdicts(path: &Path) -> std::io::Result<Vec<VerdictRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(r);
    }
    Ok(out)
}
