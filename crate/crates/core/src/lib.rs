//! Detection of audio hallucinations in generated audio descriptions.
//!
//! A sample pairs an audio clip with one generated sentence. Both sides are
//! embedded by a frozen audio-text encoder pair (outside this crate) and the
//! vectors land in [`embed_store`] files. Two classifiers consume them:
//!
//! - [`zeroshot`]: cosine similarity against a threshold alpha.
//! - [`fusion`]: a small trainable head (per-modality ReLU layers, elementwise
//!   product, sigmoid output) trained with BCE and AdamW.
//!
//! [`evaluation`] scores either classifier with hallucinated as the positive
//! class, and [`analysis`] produces the corpus statistics (type counts, top
//! nouns and verbs per hallucination type).

pub mod analysis;
pub mod corpus;
pub mod embed_store;
pub mod evaluation;
pub mod fusion;
pub mod io_util;
pub mod pairs;
pub mod preset;
pub mod synthetic;
pub mod zeroshot;

pub use corpus::{Annotation, Corpus, HallucType, Sample, Split};
pub use embed_store::{EmbeddingStore, Modality};
pub use pairs::LabeledPair;
