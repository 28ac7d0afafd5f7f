//! Samples, annotations and dataset splits, persisted as newline-delimited JSON.
//!
//! Each line of a corpus file is one [`Sample`]:
//!
//! ```text
//! {"id":"s1","audio_ref":"clips/s1.wav","prompt":"What do you hear?","response":"I hear a dog barking.","split":"test","annotation":{"hallucinated":true,"type":"C","annotator":null,"timestamp":"2024-01-01T00:00:00Z"}}
//! ```
//!
//! Keys this crate does not know about are kept in [`Sample::extra`] and
//! written back unchanged. Corpus-level metadata lives in a sidecar file
//! (`<corpus>.meta.json`) so that every line of the corpus itself stays a
//! sample record.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::io_util::write_atomic;

/// Prompt used to elicit the audio descriptions.
pub const DEFAULT_PROMPT: &str = "What do you hear?";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate sample id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("inconsistent annotation: {0}")]
    InconsistentAnnotation(String),
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("split counts {requested} exceed corpus size {available}")]
    SplitCounts { requested: usize, available: usize },
    #[error("sample {0:?} is not annotated")]
    Unannotated(String),
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("metadata file {path}: {message}")]
    Metadata { path: PathBuf, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Hallucination type of a hallucinated sentence.
///
/// - `A`: both the sounding object and its action are wrong.
/// - `B`: the object is right, the action is wrong.
/// - `C`: the action is right, the object is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HallucType {
    A,
    B,
    C,
}

impl HallucType {
    pub const ALL: [HallucType; 3] = [HallucType::A, HallucType::B, HallucType::C];

    pub fn as_str(self) -> &'static str {
        match self {
            HallucType::A => "A",
            HallucType::B => "B",
            HallucType::C => "C",
        }
    }
}

impl fmt::Display for HallucType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HallucType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(HallucType::A),
            "B" | "b" => Ok(HallucType::B),
            "C" | "c" => Ok(HallucType::C),
            other => Err(format!("unknown hallucination type {other:?} (expected A, B or C)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// A human label for one sample. The type is present iff the sentence is
/// hallucinated; construction and parsing both refuse anything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationRecord", into = "AnnotationRecord")]
pub struct Annotation {
    hallucinated: bool,
    halluc_type: Option<HallucType>,
    annotator: Option<String>,
    timestamp: DateTime<Utc>,
}

impl Annotation {
    pub fn new(
        hallucinated: bool,
        halluc_type: Option<HallucType>,
        annotator: Option<String>,
        timestamp: DateTime<Utc>,
    ) -> Result<Self> {
        match (hallucinated, halluc_type) {
            (true, None) => Err(CorpusError::InconsistentAnnotation(
                "hallucinated sample needs a type (A, B or C)".into(),
            )),
            (false, Some(t)) => Err(CorpusError::InconsistentAnnotation(format!(
                "type {t} given for a sample that is not hallucinated"
            ))),
            _ => Ok(Annotation {
                hallucinated,
                halluc_type,
                annotator,
                timestamp,
            }),
        }
    }

    pub fn not_hallucinated(annotator: Option<String>, timestamp: DateTime<Utc>) -> Self {
        Annotation {
            hallucinated: false,
            halluc_type: None,
            annotator,
            timestamp,
        }
    }

    pub fn hallucinated_as(
        halluc_type: HallucType,
        annotator: Option<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Annotation {
            hallucinated: true,
            halluc_type: Some(halluc_type),
            annotator,
            timestamp,
        }
    }

    pub fn hallucinated(&self) -> bool {
        self.hallucinated
    }

    pub fn halluc_type(&self) -> Option<HallucType> {
        self.halluc_type
    }

    pub fn annotator(&self) -> Option<&str> {
        self.annotator.as_deref()
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    hallucinated: bool,
    #[serde(rename = "type", default)]
    halluc_type: Option<HallucType>,
    #[serde(default)]
    annotator: Option<String>,
    timestamp: DateTime<Utc>,
}

impl TryFrom<AnnotationRecord> for Annotation {
    type Error = CorpusError;

    fn try_from(r: AnnotationRecord) -> Result<Self> {
        Annotation::new(r.hallucinated, r.halluc_type, r.annotator, r.timestamp)
    }
}

impl From<Annotation> for AnnotationRecord {
    fn from(a: Annotation) -> Self {
        AnnotationRecord {
            hallucinated: a.hallucinated,
            halluc_type: a.halluc_type,
            annotator: a.annotator,
            timestamp: a.timestamp,
        }
    }
}

fn default_prompt() -> String {
    DEFAULT_PROMPT.to_string()
}

/// One generated sentence tied to an audio clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub audio_ref: String,
    #[serde(default = "default_prompt")]
    pub prompt: String,
    pub response: String,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub annotation: Option<Annotation>,
    /// Unknown keys, preserved on round trip.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Sample {
    pub fn new(id: impl Into<String>, audio_ref: impl Into<String>, response: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            audio_ref: audio_ref.into(),
            prompt: default_prompt(),
            response: response.into(),
            split: Split::Unassigned,
            annotation: None,
            extra: Map::new(),
        }
    }

    pub fn with_annotation(mut self, annotation: Annotation) -> Self {
        self.annotation = Some(annotation);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// `Some(true)` when labelled hallucinated, `None` when unannotated.
    pub fn label(&self) -> Option<bool> {
        self.annotation.as_ref().map(Annotation::hallucinated)
    }

    pub fn halluc_type(&self) -> Option<HallucType> {
        self.annotation.as_ref().and_then(Annotation::halluc_type)
    }

    fn check(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(CorpusError::InvalidSample("empty id".into()));
        }
        if self.response.is_empty() {
            return Err(CorpusError::InvalidSample(format!("sample {:?} has an empty response", self.id)));
        }
        Ok(())
    }
}

/// Requested split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        SplitCounts { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Ordered samples with unique ids plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
    pub metadata: BTreeMap<String, Value>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            s.check()?;
            if index.insert(s.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: s.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Corpus {
            samples,
            index,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, Value>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Replaces the annotation of `id`, returning the previous one.
    pub fn set_annotation(&mut self, id: &str, annotation: Option<Annotation>) -> Result<Option<Annotation>> {
        let i = self
            .position(id)
            .ok_or_else(|| CorpusError::UnknownSample(id.to_string()))?;
        Ok(std::mem::replace(&mut self.samples[i].annotation, annotation))
    }

    /// Shuffles sample ids with a ChaCha8 generator seeded from `seed`
    /// (`SeedableRng::seed_from_u64`), then slices the permutation into
    /// train, val and test in that order. Samples past the requested counts
    /// become `Unassigned`. The result depends only on the ids in corpus
    /// order, the counts and the seed.
    pub fn assign_splits(&self, counts: SplitCounts, seed: u64, require_annotated: bool) -> Result<Corpus> {
        if counts.total() > self.len() {
            return Err(CorpusError::SplitCounts {
                requested: counts.total(),
                available: self.len(),
            });
        }
        if require_annotated {
            if let Some(s) = self.samples.iter().find(|s| s.annotation.is_none()) {
                return Err(CorpusError::Unannotated(s.id.clone()));
            }
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);

        let mut out = self.clone();
        for (rank, &i) in order.iter().enumerate() {
            out.samples[i].split = if rank < counts.train {
                Split::Train
            } else if rank < counts.train + counts.val {
                Split::Val
            } else if rank < counts.total() {
                Split::Test
            } else {
                Split::Unassigned
            };
        }
        out.metadata.insert(
            "split_counts".into(),
            serde_json::to_value(counts).expect("split counts serialize"),
        );
        out.metadata.insert("split_seed".into(), Value::from(seed));
        Ok(out)
    }

    /// Fraction of hallucinated samples in `split`.
    pub fn prevalence(&self, split: Split) -> Result<f64> {
        let mut total = 0usize;
        let mut positive = 0usize;
        for s in self.split(split) {
            match s.label() {
                Some(h) => {
                    total += 1;
                    positive += usize::from(h);
                }
                None => return Err(CorpusError::Unannotated(s.id.clone())),
            }
        }
        if total == 0 {
            return Err(CorpusError::EmptySplit(split));
        }
        Ok(positive as f64 / total as f64)
    }

    /// Parses corpus lines. Blank lines are skipped; line numbers are 1-based.
    pub fn parse(text: &str) -> Result<Corpus> {
        let mut samples = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let sample: Sample = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            sample.check().map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            if seen.insert(sample.id.clone(), line_no).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: sample.id,
                    line: line_no,
                });
            }
            samples.push(sample);
        }
        Corpus::new(samples)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }
}

/// Sidecar path that holds corpus metadata.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut corpus = Corpus::parse(&text)?;
    let meta_path = metadata_path(path);
    if meta_path.exists() {
        let raw = std::fs::read_to_string(&meta_path).map_err(|source| CorpusError::Io {
            path: meta_path.clone(),
            source,
        })?;
        corpus.metadata = serde_json::from_str(&raw).map_err(|e| CorpusError::Metadata {
            path: meta_path,
            message: e.to_string(),
        })?;
    }
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    write_atomic(path, corpus.to_jsonl().as_bytes()).map_err(io_err(path))?;
    let meta_path = metadata_path(path);
    if corpus.metadata.is_empty() {
        if meta_path.exists() {
            std::fs::remove_file(&meta_path).map_err(io_err(&meta_path))?;
        }
    } else {
        let json = serde_json::to_string_pretty(&corpus.metadata).expect("metadata serializes");
        write_atomic(&meta_path, json.as_bytes()).map_err(io_err(&meta_path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap()
    }

    fn corpus_of(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| Sample::new(format!("s{i}"), format!("clips/{i}.wav"), "I hear a dog barking."))
                .collect(),
        )
        .unwrap()
    }

    fn annotated(labels: &[Option<HallucType>]) -> Corpus {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let a = match t {
                    Some(t) => Annotation::hallucinated_as(*t, None, ts()),
                    None => Annotation::not_hallucinated(None, ts()),
                };
                Sample::new(format!("s{i}"), "a.wav", "x").with_annotation(a).with_split(Split::Test)
            })
            .collect();
        Corpus::new(samples).unwrap()
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(Corpus::parse("").unwrap().is_empty());
    }

    #[test]
    fn parse_keeps_file_order() {
        let text = concat!(
            r#"{"id":"b","audio_ref":"b.wav","prompt":"What do you hear?","response":"I hear rain.","split":"unassigned","annotation":null}"#,
            "\n",
            r#"{"id":"a","audio_ref":"a.wav","prompt":"What do you hear?","response":"I hear a tuba.","split":"test","annotation":{"hallucinated":true,"type":"C","annotator":"x","timestamp":"2024-03-01T12:00:00Z"}}"#,
            "\n"
        );
        let c = Corpus::parse(text).unwrap();
        let ids: Vec<_> = c.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(c.get("a").unwrap().halluc_type(), Some(HallucType::C));
        assert_eq!(Corpus::parse(&c.to_jsonl()).unwrap(), c);
    }

    #[test]
    fn duplicate_id_reports_second_line() {
        let line = |id: &str| format!(r#"{{"id":"{id}","audio_ref":"x.wav","response":"r"}}"#);
        let text = [line("s1"), line("s2"), line("s1")].join("\n");
        match Corpus::parse(&text) {
            Err(CorpusError::DuplicateId { id, line }) => {
                assert_eq!(id, "s1");
                assert_eq!(line, 3);
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"s1\",\"audio_ref\":\"x\",\"response\":\"r\"}\n{not json\n";
        match Corpus::parse(text) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let empty_response = r#"{"id":"s1","audio_ref":"x","response":""}"#;
        assert!(matches!(Corpus::parse(empty_response), Err(CorpusError::Malformed { line: 1, .. })));
    }

    #[test]
    fn type_without_hallucination_rejected_at_parse() {
        let text = r#"{"id":"s1","audio_ref":"x","response":"r","annotation":{"hallucinated":false,"type":"A","timestamp":"2024-03-01T12:00:00Z"}}"#;
        assert!(matches!(Corpus::parse(text), Err(CorpusError::Malformed { line: 1, .. })));
        let text = r#"{"id":"s1","audio_ref":"x","response":"r","annotation":{"hallucinated":true,"type":null,"timestamp":"2024-03-01T12:00:00Z"}}"#;
        assert!(Corpus::parse(text).is_err());
    }

    #[test]
    fn annotation_constructor_enforces_consistency() {
        assert!(Annotation::new(false, Some(HallucType::A), None, ts()).is_err());
        assert!(Annotation::new(true, None, None, ts()).is_err());
        assert!(Annotation::new(true, Some(HallucType::B), None, ts()).is_ok());
        assert!(Annotation::new(false, None, None, ts()).is_ok());
    }

    #[test]
    fn unknown_keys_survive_round_trip() {
        let text = r#"{"id":"s1","audio_ref":"x","prompt":"p","response":"r","split":"train","annotation":null,"video":"v1.mp4","score":0.5}"#;
        let c = Corpus::parse(text).unwrap();
        assert_eq!(c.samples()[0].extra.get("video"), Some(&Value::from("v1.mp4")));
        assert_eq!(c.to_jsonl().trim_end(), text);
    }

    #[test]
    fn missing_prompt_defaults() {
        let c = Corpus::parse(r#"{"id":"s1","audio_ref":"x","response":"r"}"#).unwrap();
        assert_eq!(c.samples()[0].prompt, DEFAULT_PROMPT);
        assert_eq!(c.samples()[0].split, Split::Unassigned);
    }

    #[test]
    fn split_sizes_match_request() {
        let c = corpus_of(1000).assign_splits(SplitCounts::new(400, 100, 500), 7, false).unwrap();
        assert_eq!(c.split_len(Split::Train), 400);
        assert_eq!(c.split_len(Split::Val), 100);
        assert_eq!(c.split_len(Split::Test), 500);
        assert_eq!(c.split_len(Split::Unassigned), 0);
    }

    #[test]
    fn zero_counts_leave_everything_unassigned() {
        let c = corpus_of(10).assign_splits(SplitCounts::new(0, 0, 0), 1, false).unwrap();
        assert_eq!(c.split_len(Split::Unassigned), 10);
    }

    #[test]
    fn split_assignment_is_seeded() {
        let base = corpus_of(100);
        let counts = SplitCounts::new(40, 10, 50);
        let a = base.assign_splits(counts, 42, false).unwrap();
        let b = base.assign_splits(counts, 42, false).unwrap();
        let c = base.assign_splits(counts, 43, false).unwrap();
        assert_eq!(a, b);
        let splits = |c: &Corpus| c.samples().iter().map(|s| s.split).collect::<Vec<_>>();
        assert_ne!(splits(&a), splits(&c));
    }

    #[test]
    fn oversized_split_request_fails() {
        let err = corpus_of(5).assign_splits(SplitCounts::new(3, 2, 1), 0, false).unwrap_err();
        assert!(matches!(err, CorpusError::SplitCounts { requested: 6, available: 5 }));
    }

    #[test]
    fn require_annotated_refuses_unlabelled() {
        let err = corpus_of(3).assign_splits(SplitCounts::new(1, 1, 1), 0, true).unwrap_err();
        assert!(matches!(err, CorpusError::Unannotated(_)));
    }

    #[test]
    fn prevalence_cases() {
        use HallucType::*;
        assert_eq!(annotated(&[Some(A), None, None, None]).prevalence(Split::Test).unwrap(), 0.25);
        assert_eq!(annotated(&[Some(A), Some(B)]).prevalence(Split::Test).unwrap(), 1.0);
        let mut labels = vec![None; 1000];
        for l in labels.iter_mut().take(323) {
            *l = Some(C);
        }
        let p = annotated(&labels).prevalence(Split::Test).unwrap();
        assert!((p - 0.323).abs() < 1e-12);
        assert!(matches!(annotated(&[None]).prevalence(Split::Train), Err(CorpusError::EmptySplit(Split::Train))));
        let unlabelled = corpus_of(2).assign_splits(SplitCounts::new(0, 0, 2), 0, false).unwrap();
        assert!(matches!(unlabelled.prevalence(Split::Test), Err(CorpusError::Unannotated(_))));
    }

    #[test]
    fn set_annotation_on_unknown_id_fails() {
        let mut c = corpus_of(2);
        assert!(c.set_annotation("nope", None).is_err());
        c.set_annotation("s1", Some(Annotation::not_hallucinated(None, ts()))).unwrap();
        assert_eq!(c.get("s1").unwrap().label(), Some(false));
    }
}
