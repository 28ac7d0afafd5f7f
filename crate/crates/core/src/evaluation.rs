//! Recall, precision and F1 with "hallucinated" as the positive class, the
//! per-type breakdown of misclassified samples, and the fair-coin baseline.
//!
//! Ratios with a zero denominator are defined as 0 and flagged in
//! [`Degenerate`] instead of failing.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::HallucType;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {predictions} predictions, {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("sample {index} is labelled hallucinated but has no type")]
    MissingType { index: usize },
    #[error("labels contain a single class; {0}")]
    SingleClass(&'static str),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn count(predictions: &[bool], labels: &[bool]) -> Result<Self> {
        check_lengths(predictions.len(), labels.len())?;
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let (recall, recall_deg) = ratio(self.tp, self.tp + self.fn_);
        let (precision, precision_deg) = ratio(self.tp, self.tp + self.fp);
        let f1_deg = precision + recall == 0.0;
        Metrics {
            recall,
            precision,
            f1: f1_score(precision, recall),
            degenerate: Degenerate {
                recall: recall_deg,
                precision: precision_deg,
                f1: f1_deg,
            },
        }
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn check_lengths(predictions: usize, labels: usize) -> Result<()> {
    if predictions != labels {
        return Err(EvalError::LengthMismatch { predictions, labels });
    }
    if labels == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Harmonic mean of precision and recall, on whatever scale they are given.
/// Zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Which ratios hit a 0/0 and were set to 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub recall: bool,
    pub precision: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.recall || self.precision || self.f1
    }
}

/// Fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: Degenerate,
}

impl Metrics {
    pub fn scores(&self) -> Scores {
        Scores {
            recall: self.recall,
            precision: self.precision,
            f1: self.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn compute_metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics> {
    Ok(Confusion::count(predictions, labels)?.metrics())
}

/// Misclassified counts: false positives under `not_hallucinated`, false
/// negatives under their annotated type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub not_hallucinated: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

impl Breakdown {
    pub fn get(&self, t: HallucType) -> usize {
        match t {
            HallucType::A => self.a,
            HallucType::B => self.b,
            HallucType::C => self.c,
        }
    }

    pub fn false_negatives(&self) -> usize {
        self.a + self.b + self.c
    }
}

pub fn misclassification_breakdown(
    predictions: &[bool],
    labels: &[bool],
    types: &[Option<HallucType>],
) -> Result<Breakdown> {
    check_lengths(predictions.len(), labels.len())?;
    check_lengths(types.len(), labels.len())?;
    let mut b = Breakdown::default();
    for (i, ((&p, &l), t)) in predictions.iter().zip(labels).zip(types).enumerate() {
        if l && t.is_none() {
            return Err(EvalError::MissingType { index: i });
        }
        match (p, l, t) {
            (true, false, _) => b.not_hallucinated += 1,
            (false, true, Some(HallucType::A)) => b.a += 1,
            (false, true, Some(HallucType::B)) => b.b += 1,
            (false, true, Some(HallucType::C)) => b.c += 1,
            _ => {}
        }
    }
    Ok(b)
}

/// Full evaluation of one classifier run. Scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub breakdown: Breakdown,
    pub degenerate: Degenerate,
}

impl EvaluationReport {
    pub fn build(predictions: &[bool], labels: &[bool], types: &[Option<HallucType>]) -> Result<Self> {
        let confusion = Confusion::count(predictions, labels)?;
        let breakdown = misclassification_breakdown(predictions, labels, types)?;
        let m = confusion.metrics();
        Ok(EvaluationReport {
            samples: confusion.total(),
            recall: 100.0 * m.recall,
            precision: 100.0 * m.precision,
            f1: 100.0 * m.f1,
            tp: confusion.tp,
            fp: confusion.fp,
            tn: confusion.tn,
            fn_: confusion.fn_,
            breakdown,
            degenerate: m.degenerate,
        })
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

/// Plain-text tables in the layout of the classification and
/// misclassification tables: one row per named run.
pub fn render_tables(rows: &[(&str, &EvaluationReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>9}  {:>6}", "", "Recall", "Precision", "F1");
    for (name, r) in rows {
        let _ = writeln!(out, "{name:<width$}  {:>6.1}  {:>9.1}  {:>6.1}", r.recall, r.precision, r.f1);
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<width$}  {:>16}  {:>8}  {:>8}  {:>8}",
        "", "Not hallucinated", "Type (A)", "Type (B)", "Type (C)"
    );
    for (name, r) in rows {
        let b = &r.breakdown;
        let _ = writeln!(
            out,
            "{name:<width$}  {:>16}  {:>8}  {:>8}  {:>8}",
            b.not_hallucinated, b.a, b.b, b.c
        );
    }
    out
}

/// Fair-coin predictor: closed form and Monte-Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub prevalence: f64,
    pub trials: usize,
    /// Closed-form expectation: recall 0.5, precision p, F1 2·0.5·p/(0.5+p).
    pub analytic: Scores,
    pub mean: Scores,
    /// Per-trial standard deviation.
    pub std_dev: Scores,
}

impl RandomBaseline {
    /// Standard error of the Monte-Carlo means.
    pub fn std_err(&self) -> Scores {
        let k = (self.trials as f64).sqrt();
        Scores {
            recall: self.std_dev.recall / k,
            precision: self.std_dev.precision / k,
            f1: self.std_dev.f1 / k,
        }
    }
}

pub fn analytic_random_baseline(prevalence: f64) -> Scores {
    Scores {
        recall: 0.5,
        precision: prevalence,
        f1: f1_score(prevalence, 0.5),
    }
}

pub fn random_baseline(labels: &[bool], trials: usize, seed: u64) -> Result<RandomBaseline> {
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(EvalError::SingleClass("the random baseline needs both classes"));
    }
    let prevalence = positives as f64 / labels.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut predictions = vec![false; labels.len()];
    for _ in 0..trials {
        for p in predictions.iter_mut() {
            *p = rng.random_bool(0.5);
        }
        let m = compute_metrics(&predictions, labels)?;
        for (k, x) in [m.recall, m.precision, m.f1].into_iter().enumerate() {
            sums[k] += x;
            sq[k] += x * x;
        }
    }
    let n = trials as f64;
    let mean = |k: usize| if trials == 0 { 0.0 } else { sums[k] / n };
    let sd = |k: usize| {
        if trials < 2 {
            0.0
        } else {
            ((sq[k] - sums[k] * sums[k] / n) / (n - 1.0)).max(0.0).sqrt()
        }
    };
    Ok(RandomBaseline {
        prevalence,
        trials,
        analytic: analytic_random_baseline(prevalence),
        mean: Scores {
            recall: mean(0),
            precision: mean(1),
            f1: mean(2),
        },
        std_dev: Scores {
            recall: sd(0),
            precision: sd(1),
            f1: sd(2),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use HallucType::*;

    fn brute_force(predictions: &[bool], labels: &[bool]) -> (usize, usize, usize, usize) {
        let mut counts = (0, 0, 0, 0);
        for i in 0..labels.len() {
            if predictions[i] && labels[i] {
                counts.0 += 1;
            }
            if predictions[i] && !labels[i] {
                counts.1 += 1;
            }
            if !predictions[i] && !labels[i] {
                counts.2 += 1;
            }
            if !predictions[i] && labels[i] {
                counts.3 += 1;
            }
        }
        counts
    }

    #[test]
    fn f1_of_published_fine_tuned_row() {
        let f1 = f1_score(85.4, 90.6);
        assert!((f1 - 87.92).abs() < 0.005, "{f1}");
    }

    #[test]
    fn f1_of_equal_precision_and_recall() {
        for x in [0.1, 0.5, 0.93, 42.0] {
            assert!((f1_score(x, x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn all_negative_predictions_are_degenerate() {
        let m = compute_metrics(&[false, false, false], &[true, false, true]).unwrap();
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
        assert!(m.degenerate.precision);
        assert!(!m.degenerate.recall);
        assert!(m.degenerate.f1);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(matches!(compute_metrics(&[true], &[true, false]), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(compute_metrics(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn breakdown_cases() {
        let labels = [true, false, true, false];
        let types = [Some(B), None, Some(A), None];
        assert_eq!(
            misclassification_breakdown(&labels, &labels, &types).unwrap(),
            Breakdown::default()
        );
        let preds = [false, true, true, false];
        let b = misclassification_breakdown(&preds, &labels, &types).unwrap();
        assert_eq!(b, Breakdown { not_hallucinated: 1, a: 0, b: 1, c: 0 });
        let err = misclassification_breakdown(&preds, &labels, &[None, None, Some(A), None]).unwrap_err();
        assert_eq!(err, EvalError::MissingType { index: 0 });
    }

    #[test]
    fn report_fields_are_percentages() {
        let r = EvaluationReport::build(&[true, true, false, false], &[true, false, true, false], &[Some(C), None, Some(C), None]).unwrap();
        assert_eq!((r.recall, r.precision, r.f1), (50.0, 50.0, 50.0));
        assert_eq!(r.samples, 4);
        assert_eq!(r.breakdown.c, 1);
        let table = render_tables(&[("run", &r)]);
        assert!(table.contains("50.0"));
        assert!(table.contains("Type (C)"));
    }

    #[test]
    fn analytic_baseline_for_published_prevalence() {
        let s = analytic_random_baseline(0.337);
        assert!((100.0 * s.f1 - 40.26).abs() < 0.01);
        let s = analytic_random_baseline(0.5);
        assert_eq!((s.recall, s.precision, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn random_baseline_rejects_single_class() {
        assert!(matches!(random_baseline(&[true, true], 10, 0), Err(EvalError::SingleClass(_))));
        assert_eq!(random_baseline(&[], 10, 0), Err(EvalError::Empty));
    }

    #[test]
    fn random_baseline_is_seeded() {
        let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        assert_eq!(random_baseline(&labels, 100, 9).unwrap(), random_baseline(&labels, 100, 9).unwrap());
    }

    fn triples() -> impl Strategy<Value = Vec<(bool, bool, Option<HallucType>)>> {
        proptest::collection::vec(
            (any::<bool>(), prop_oneof![Just(None), Just(Some(A)), Just(Some(B)), Just(Some(C))]).prop_map(
                |(p, t)| (p, t.is_some(), t),
            ),
            1..300,
        )
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(rows in triples()) {
            let preds: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let c = Confusion::count(&preds, &labels).unwrap();
            prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), brute_force(&preds, &labels));
            prop_assert_eq!(c.total(), rows.len());
        }

        #[test]
        fn f1_between_precision_and_recall(rows in triples()) {
            let preds: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let m = compute_metrics(&preds, &labels).unwrap();
            if m.precision > 0.0 && m.recall > 0.0 {
                let lo = m.precision.min(m.recall) - 1e-12;
                let hi = m.precision.max(m.recall) + 1e-12;
                prop_assert!(lo <= m.f1 && m.f1 <= hi);
            }
        }

        #[test]
        fn report_invariant_under_joint_permutation(rows in triples(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let build = |rows: &[(bool, bool, Option<HallucType>)]| {
                let p: Vec<bool> = rows.iter().map(|r| r.0).collect();
                let l: Vec<bool> = rows.iter().map(|r| r.1).collect();
                let t: Vec<_> = rows.iter().map(|r| r.2).collect();
                EvaluationReport::build(&p, &l, &t).unwrap()
            };
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = (build(&rows), build(&shuffled));
            prop_assert_eq!(a.confusion(), b.confusion());
            prop_assert_eq!(a.breakdown, b.breakdown);
            prop_assert_eq!(a.f1.to_bits(), b.f1.to_bits());
            prop_assert_eq!(a.breakdown.not_hallucinated, a.fp);
            prop_assert_eq!(a.breakdown.false_negatives(), a.fn_);
        }
    }
}
