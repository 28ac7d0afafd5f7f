//! Hyperparameter presets for the two audio-text encoder families.
//!
//! The names are labels only; nothing here loads an encoder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderPreset {
    MsClap,
    LaionClap,
}

impl EncoderPreset {
    pub const ALL: [EncoderPreset; 2] = [EncoderPreset::MsClap, EncoderPreset::LaionClap];

    pub fn name(self) -> &'static str {
        match self {
            EncoderPreset::MsClap => "ms-clap",
            EncoderPreset::LaionClap => "laion-clap",
        }
    }

    /// Zero-shot similarity threshold.
    pub fn alpha(self) -> f64 {
        match self {
            EncoderPreset::MsClap => 0.3,
            EncoderPreset::LaionClap => 0.45,
        }
    }

    /// Fusion-head hidden width.
    pub fn hidden(self) -> usize {
        match self {
            EncoderPreset::MsClap => 512,
            EncoderPreset::LaionClap => 256,
        }
    }

    /// AdamW learning rate for the fusion head.
    pub fn learning_rate(self) -> f64 {
        match self {
            EncoderPreset::MsClap => 1e-3,
            EncoderPreset::LaionClap => 1e-4,
        }
    }

    pub fn batch_size(self) -> usize {
        DEFAULT_BATCH_SIZE
    }
}

impl fmt::Display for EncoderPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ms-clap" | "msclap" => Ok(EncoderPreset::MsClap),
            "laion-clap" | "laionclap" => Ok(EncoderPreset::LaionClap),
            other => Err(format!("unknown encoder preset {other:?} (expected ms-clap or laion-clap)")),
        }
    }
}
