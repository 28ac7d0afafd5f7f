//! Corpus statistics: hallucination-type frequencies and the most frequent
//! nouns and verbs per type, computed on sentences with their boilerplate
//! "I hear ..." opening removed.
//!
//! Part-of-speech tagging is pluggable through [`PosTagger`]. The bundled
//! [`LexiconTagger`] is a small word-list tagger with suffix rules; for exact
//! reproduction, tags produced by an external tagger can be loaded with
//! [`ImportedTags`]. Tokens are counted per occurrence and lowercased.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, HallucType};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("sample {0:?} is not annotated")]
    Unannotated(String),
    #[error("no tags for sample {0:?}")]
    MissingTags(String),
    #[error("tag file line {line}: {message}")]
    BadTagFile { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Leading phrases removed before tagging, longest first.
pub const BOILERPLATE_PREFIXES: [&str; 3] = ["I hear the sound of", "I hear that", "I hear"];

/// Removes the longest matching boilerplate opening (ASCII case-insensitive)
/// once, then leading whitespace. A phrase only matches when followed by a
/// non-alphanumeric character or the end of the sentence.
pub fn strip_prefix(sentence: &str) -> &str {
    for phrase in BOILERPLATE_PREFIXES {
        let Some(head) = sentence.get(..phrase.len()) else {
            continue;
        };
        if !head.eq_ignore_ascii_case(phrase) {
            continue;
        }
        let rest = &sentence[phrase.len()..];
        if rest.chars().next().is_none_or(|c| !c.is_alphanumeric()) {
            return rest.trim_start();
        }
    }
    sentence
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub text: String,
    pub tag: PosTag,
}

impl TaggedToken {
    pub fn new(text: impl Into<String>, tag: PosTag) -> Self {
        TaggedToken { text: text.into(), tag }
    }
}

pub trait PosTagger {
    /// Tags the (already stripped) `text` of sample `sample_id`.
    fn tag(&self, sample_id: &str, text: &str) -> Result<Vec<TaggedToken>>;
}

impl<F> PosTagger for F
where
    F: Fn(&str, &str) -> Vec<TaggedToken>,
{
    fn tag(&self, sample_id: &str, text: &str) -> Result<Vec<TaggedToken>> {
        Ok(self(sample_id, text))
    }
}

const NOUNS: &[&str] = &[
    "accordion", "air", "airplane", "alarm", "animal", "animals", "applause", "audience", "baby", "background",
    "ball", "band", "bass", "beat", "bell", "bells", "bird", "birds", "boat", "building", "car", "cars", "cat",
    "cello", "chainsaw", "chicken", "child", "children", "clock", "cow", "crowd", "dog", "dogs", "door", "drum",
    "drums", "duck", "engine", "fire", "flute", "frog", "game", "glockenspiel", "guitar", "gun", "hammer", "harp",
    "helicopter", "horn", "horse", "insects", "instrument", "instruments", "keyboard", "kid", "kids", "lawnmower",
    "lion", "machine", "man", "men", "microphone", "motor", "motorcycle", "music", "noise", "ocean", "orchestra",
    "organ", "people", "person", "phone", "piano", "plane", "rain", "river", "road", "room", "rooster",
    "saxophone", "sheep", "siren", "snow", "song", "songs", "sound", "sounds", "speech", "street", "thunder",
    "tractor", "traffic", "train", "trombone", "truck", "trumpet", "tuba", "vehicle", "video", "violin", "voice",
    "voices", "water", "waves", "whistle", "wind", "woman", "women", "wood", "xylophone",
];

const VERBS: &[&str] = &[
    "bark", "barks", "blow", "blows", "chirp", "chirps", "cries", "cry", "cut", "cuts", "drive", "drives", "drove",
    "fall", "falls", "fell", "go", "goes", "hit", "hits", "honk", "honks", "make", "makes", "made", "play",
    "plays", "ran", "ring", "rings", "roar", "roars", "run", "runs", "sang", "say", "says", "sing", "sings",
    "speak", "speaks", "spoke", "talk", "talks", "went",
];

const FUNCTION_WORDS: &[&str] = &[
    "a", "about", "above", "across", "after", "again", "against", "all", "along", "also", "am", "an", "and",
    "another", "any", "are", "around", "as", "at", "be", "been", "before", "behind", "being", "below", "between",
    "both", "but", "by", "can", "could", "did", "do", "does", "down", "during", "each", "either", "every", "few",
    "for", "from", "had", "has", "have", "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is",
    "it", "its", "just", "loud", "loudly", "many", "may", "me", "might", "more", "most", "much", "my", "near",
    "no", "not", "of", "off", "on", "one", "only", "or", "other", "our", "out", "over", "quite", "she", "should",
    "slowly", "so", "soft", "softly", "some", "such", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "two", "under", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "will", "with", "would", "you", "your",
];

const ING_NOUNS: &[&str] = &["building", "ceiling", "evening", "morning", "nothing", "something", "anything", "everything", "thing", "things", "string", "strings", "king", "wing", "wings", "spring"];

/// Word lists for frequent audio-description vocabulary, `-ing`/`-ed`
/// suffixes as verbs, function words as other, anything else alphabetic as
/// a noun.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    nouns: HashSet<&'static str>,
    verbs: HashSet<&'static str>,
    function_words: HashSet<&'static str>,
    ing_nouns: HashSet<&'static str>,
}

impl Default for LexiconTagger {
    fn default() -> Self {
        LexiconTagger {
            nouns: NOUNS.iter().copied().collect(),
            verbs: VERBS.iter().copied().collect(),
            function_words: FUNCTION_WORDS.iter().copied().collect(),
            ing_nouns: ING_NOUNS.iter().copied().collect(),
        }
    }
}

impl LexiconTagger {
    pub fn tag_word(&self, word: &str) -> PosTag {
        let w = word.to_lowercase();
        let w = w.as_str();
        if !w.chars().all(char::is_alphabetic) {
            return PosTag::Other;
        }
        if self.function_words.contains(w) {
            PosTag::Other
        } else if self.verbs.contains(w) {
            PosTag::Verb
        } else if self.nouns.contains(w) || self.ing_nouns.contains(w) {
            PosTag::Noun
        } else if (w.len() >= 5 && w.ends_with("ing")) || (w.len() >= 5 && w.ends_with("ed")) {
            PosTag::Verb
        } else if w.len() >= 3 {
            PosTag::Noun
        } else {
            PosTag::Other
        }
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
}

impl PosTagger for LexiconTagger {
    fn tag(&self, _sample_id: &str, text: &str) -> Result<Vec<TaggedToken>> {
        Ok(tokenize(text)
            .map(|t| TaggedToken::new(t, self.tag_word(t)))
            .collect())
    }
}

/// Tags produced elsewhere, one line per sample:
/// `{"sample_id": "s1", "tokens": [["dog", "NOUN"], ["barking", "VERB"]]}`.
#[derive(Debug, Clone, Default)]
pub struct ImportedTags {
    by_sample: HashMap<String, Vec<TaggedToken>>,
}

#[derive(Deserialize)]
struct TagLine {
    sample_id: String,
    tokens: Vec<(String, PosTag)>,
}

impl ImportedTags {
    pub fn parse(text: &str) -> Result<Self> {
        let mut by_sample = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TagLine = serde_json::from_str(line).map_err(|e| AnalysisError::BadTagFile {
                line: i + 1,
                message: e.to_string(),
            })?;
            let tokens = parsed.tokens.into_iter().map(|(t, tag)| TaggedToken::new(t, tag)).collect();
            by_sample.insert(parsed.sample_id, tokens);
        }
        Ok(ImportedTags { by_sample })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ImportedTags::parse(&text)
    }
}

impl PosTagger for ImportedTags {
    fn tag(&self, sample_id: &str, _text: &str) -> Result<Vec<TaggedToken>> {
        self.by_sample
            .get(sample_id)
            .cloned()
            .ok_or_else(|| AnalysisError::MissingTags(sample_id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeFrequency {
    pub type_counts: BTreeMap<HallucType, usize>,
    pub total_hallucinated: usize,
    pub total_sentences: usize,
    /// `total_hallucinated / total_sentences`, 0 for an empty corpus.
    pub rate: f64,
}

pub fn type_frequency(corpus: &Corpus) -> Result<TypeFrequency> {
    let mut type_counts: BTreeMap<HallucType, usize> = HallucType::ALL.iter().map(|&t| (t, 0)).collect();
    let mut total_hallucinated = 0;
    for s in corpus.samples() {
        let ann = s
            .annotation
            .as_ref()
            .ok_or_else(|| AnalysisError::Unannotated(s.id.clone()))?;
        if let Some(t) = ann.halluc_type() {
            *type_counts.get_mut(&t).expect("all types present") += 1;
            total_hallucinated += 1;
        }
    }
    let total_sentences = corpus.len();
    let rate = if total_sentences == 0 {
        0.0
    } else {
        total_hallucinated as f64 / total_sentences as f64
    };
    Ok(TypeFrequency {
        type_counts,
        total_hallucinated,
        total_sentences,
        rate,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRanking {
    pub nouns: Vec<(String, usize)>,
    pub verbs: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub type_counts: BTreeMap<HallucType, usize>,
    pub total_hallucinated: usize,
    pub total_sentences: usize,
    pub top_tokens: BTreeMap<HallucType, TokenRanking>,
}

/// Count descending, then token ascending; first `k`.
pub fn rank(counts: &HashMap<String, usize>, k: usize) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.iter().map(|(t, &c)| (t.clone(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

type WordCounts = HashMap<String, usize>;

pub fn token_stats(corpus: &Corpus, tagger: &dyn PosTagger, k: usize) -> Result<StatsReport> {
    let freq = type_frequency(corpus)?;
    let mut counts: BTreeMap<HallucType, (WordCounts, WordCounts)> =
        HallucType::ALL.iter().map(|&t| (t, Default::default())).collect();
    for s in corpus.samples() {
        let Some(t) = s.halluc_type() else { continue };
        let (nouns, verbs) = counts.get_mut(&t).expect("all types present");
        for tok in tagger.tag(&s.id, strip_prefix(&s.response))? {
            let bucket = match tok.tag {
                PosTag::Noun => &mut *nouns,
                PosTag::Verb => &mut *verbs,
                PosTag::Other => continue,
            };
            *bucket.entry(tok.text.to_lowercase()).or_default() += 1;
        }
    }
    let top_tokens = counts
        .into_iter()
        .map(|(t, (nouns, verbs))| {
            (
                t,
                TokenRanking {
                    nouns: rank(&nouns, k),
                    verbs: rank(&verbs, k),
                },
            )
        })
        .collect();
    Ok(StatsReport {
        type_counts: freq.type_counts,
        total_hallucinated: freq.total_hallucinated,
        total_sentences: freq.total_sentences,
        top_tokens,
    })
}

impl StatsReport {
    /// Per-type block: count and share of hallucinated sentences, then the
    /// ranked noun and verb columns side by side.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let rate = if self.total_sentences == 0 {
            0.0
        } else {
            100.0 * self.total_hallucinated as f64 / self.total_sentences as f64
        };
        let _ = writeln!(
            out,
            "hallucinated: {} / {} sentences ({rate:.1}%)",
            self.total_hallucinated, self.total_sentences
        );
        for (t, count) in &self.type_counts {
            let share = if self.total_hallucinated == 0 {
                0.0
            } else {
                100.0 * *count as f64 / self.total_hallucinated as f64
            };
            let _ = writeln!(out, "\nType ({t}): {count} ({share:.1}%)");
            let Some(r) = self.top_tokens.get(t) else { continue };
            let rows = r.nouns.len().max(r.verbs.len());
            if rows == 0 {
                continue;
            }
            let _ = writeln!(out, "  {:>4}  {:<20} {:<20}", "rank", "noun", "verb");
            for i in 0..rows {
                let cell = |v: &[(String, usize)]| v.get(i).map(|(t, c)| format!("{t} ({c})")).unwrap_or_default();
                let _ = writeln!(out, "  {:>4}  {:<20} {:<20}", i + 1, cell(&r.nouns), cell(&r.verbs));
            }
        }
        out
    }
}
