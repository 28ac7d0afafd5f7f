use crate::corpus::{CorpusError, HallucType};
use crate::embed_store::AlignedSample;

/// An aligned sample with its human label, ready for a classifier.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPair<'a> {
    pub sample_id: &'a str,
    pub hallucinated: bool,
    pub halluc_type: Option<HallucType>,
    pub audio: &'a [f32],
    pub text: &'a [f32],
}

/// Attaches labels to aligned samples; any unannotated sample is an error.
pub fn labeled_pairs<'a>(aligned: &[AlignedSample<'a>]) -> Result<Vec<LabeledPair<'a>>, CorpusError> {
    aligned
        .iter()
        .map(|a| {
            let ann = a
                .sample
                .annotation
                .as_ref()
                .ok_or_else(|| CorpusError::Unannotated(a.sample.id.clone()))?;
            Ok(LabeledPair {
                sample_id: &a.sample.id,
                hallucinated: ann.hallucinated(),
                halluc_type: ann.halluc_type(),
                audio: a.audio,
                text: a.text,
            })
        })
        .collect()
}
