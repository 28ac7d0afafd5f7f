//! Run configuration. Four layers, lowest first: built-in defaults, the
//! encoder preset, a config file, command-line flags.
//!
//! Config files are TOML, or JSON with the same shape. A run manifest is also
//! accepted as a config file, which is how a past run is repeated.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use audiohall::corpus::SplitCounts;
use audiohall::fusion::TrainConfig;
use audiohall::preset::EncoderPreset;
use serde::{Deserialize, Serialize};

pub const DEFAULT_GRID: &str = "0:1:0.005";
pub const DEFAULT_SPLIT: (usize, usize, usize) = (400, 100, 500);

/// Zero-shot threshold: a fixed value or "calibrate" on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr", into = "AlphaRepr")]
pub enum Alpha {
    Fixed(f64),
    Calibrate,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<AlphaRepr> for Alpha {
    type Error = String;

    fn try_from(r: AlphaRepr) -> Result<Self, String> {
        match r {
            AlphaRepr::Value(v) => Ok(Alpha::Fixed(v)),
            AlphaRepr::Word(w) => w.parse(),
        }
    }
}

impl From<Alpha> for AlphaRepr {
    fn from(a: Alpha) -> Self {
        match a {
            Alpha::Fixed(v) => AlphaRepr::Value(v),
            Alpha::Calibrate => AlphaRepr::Word("calibrate".into()),
        }
    }
}

impl FromStr for Alpha {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("calibrate") {
            return Ok(Alpha::Calibrate);
        }
        s.parse::<f64>()
            .map(Alpha::Fixed)
            .map_err(|_| format!("alpha must be a number or \"calibrate\", got {s:?}"))
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Fixed(v) => write!(f, "{v}"),
            Alpha::Calibrate => f.write_str("calibrate"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize_inputs: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub require_annotated: Option<bool>,
}

/// One layer of configuration; unset fields fall through to the layer below.
/// Flags are parsed into this same shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_embs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_embs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<EncoderPreset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Alpha>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lenient: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_prefix_stripped: Option<bool>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub split: SplitSection,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Deserialize)]
struct ManifestShape {
    config: ConfigLayer,
}

impl ConfigLayer {
    /// Reads a TOML or JSON config file, or the `config` block of a run
    /// manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            let layer = if value.get("config").is_some() {
                serde_json::from_value::<ManifestShape>(value).map(|m| m.config)
            } else {
                serde_json::from_value(value)
            };
            layer.with_context(|| format!("parsing config {}", path.display()))
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
        }
    }

    /// `self` with every field that `over` sets replaced.
    pub fn overlay(self, over: ConfigLayer) -> ConfigLayer {
        macro_rules! pick {
            ($($f:ident).+) => { over.$($f).+.or(self.$($f).+) };
        }
        ConfigLayer {
            corpus: pick!(corpus),
            audio_embs: pick!(audio_embs),
            text_embs: pick!(text_embs),
            out: pick!(out),
            preset: pick!(preset),
            seed: pick!(seed),
            alpha: pick!(alpha),
            grid: pick!(grid),
            lenient: pick!(lenient),
            text_prefix_stripped: pick!(text_prefix_stripped),
            train: TrainSection {
                hidden: pick!(train.hidden),
                batch_size: pick!(train.batch_size),
                lr: pick!(train.lr),
                weight_decay: pick!(train.weight_decay),
                max_epochs: pick!(train.max_epochs),
                patience: pick!(train.patience),
                decision_threshold: pick!(train.decision_threshold),
                normalize_inputs: pick!(train.normalize_inputs),
            },
            split: SplitSection {
                train: pick!(split.train),
                val: pick!(split.val),
                test: pick!(split.test),
                require_annotated: pick!(split.require_annotated),
            },
        }
    }
}

/// Fully resolved configuration for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub audio_embs: Option<PathBuf>,
    pub text_embs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preset: Option<EncoderPreset>,
    pub seed: u64,
    pub alpha: Alpha,
    pub grid: String,
    pub lenient: bool,
    pub text_prefix_stripped: bool,
    pub train: TrainConfig,
    pub split: SplitCounts,
    pub require_annotated: bool,
}

impl RunConfig {
    /// Built-in defaults, then the preset named by `file` or `flags`, then
    /// `file`, then `flags`.
    pub fn resolve(file: Option<ConfigLayer>, flags: ConfigLayer) -> Result<RunConfig> {
        let layer = file.unwrap_or_default().overlay(flags);
        let preset = layer.preset;

        let mut train = TrainConfig::default();
        let mut alpha = Alpha::Calibrate;
        if let Some(p) = preset {
            train.hidden = p.hidden();
            train.lr = p.learning_rate();
            train.batch_size = p.batch_size();
            alpha = Alpha::Fixed(p.alpha());
        }
        let t = &layer.train;
        train.hidden = t.hidden.unwrap_or(train.hidden);
        train.batch_size = t.batch_size.unwrap_or(train.batch_size);
        train.lr = t.lr.unwrap_or(train.lr);
        train.weight_decay = t.weight_decay.unwrap_or(train.weight_decay);
        train.max_epochs = t.max_epochs.unwrap_or(train.max_epochs);
        train.patience = t.patience.unwrap_or(train.patience);
        train.decision_threshold = t.decision_threshold.unwrap_or(train.decision_threshold);
        train.normalize_inputs = t.normalize_inputs.unwrap_or(train.normalize_inputs);
        let seed = layer.seed.unwrap_or(0);
        train.seed = seed;
        train.validate()?;

        let alpha = layer.alpha.unwrap_or(alpha);
        if let Alpha::Fixed(a) = alpha {
            if !(-1.0..=1.0).contains(&a) {
                bail!("alpha {a} is outside [-1, 1]");
            }
        }
        let s = &layer.split;
        Ok(RunConfig {
            corpus: layer.corpus,
            audio_embs: layer.audio_embs,
            text_embs: layer.text_embs,
            out: layer.out,
            preset,
            seed,
            alpha,
            grid: layer.grid.unwrap_or_else(|| DEFAULT_GRID.to_string()),
            lenient: layer.lenient.unwrap_or(false),
            text_prefix_stripped: layer.text_prefix_stripped.unwrap_or(false),
            train,
            split: SplitCounts::new(
                s.train.unwrap_or(DEFAULT_SPLIT.0),
                s.val.unwrap_or(DEFAULT_SPLIT.1),
                s.test.unwrap_or(DEFAULT_SPLIT.2),
            ),
            require_annotated: s.require_annotated.unwrap_or(false),
        })
    }

    /// Every resolved value as a layer, suitable for a manifest. Loading it
    /// back with [`RunConfig::resolve`] gives the same configuration.
    pub fn to_layer(&self) -> ConfigLayer {
        let t = &self.train;
        ConfigLayer {
            corpus: self.corpus.clone(),
            audio_embs: self.audio_embs.clone(),
            text_embs: self.text_embs.clone(),
            out: self.out.clone(),
            preset: self.preset,
            seed: Some(self.seed),
            alpha: Some(self.alpha),
            grid: Some(self.grid.clone()),
            lenient: Some(self.lenient),
            text_prefix_stripped: Some(self.text_prefix_stripped),
            train: TrainSection {
                hidden: Some(t.hidden),
                batch_size: Some(t.batch_size),
                lr: Some(t.lr),
                weight_decay: Some(t.weight_decay),
                max_epochs: Some(t.max_epochs),
                patience: Some(t.patience),
                decision_threshold: Some(t.decision_threshold),
                normalize_inputs: Some(t.normalize_inputs),
            },
            split: SplitSection {
                train: Some(self.split.train),
                val: Some(self.split.val),
                test: Some(self.split.test),
                require_annotated: Some(self.require_annotated),
            },
        }
    }

    pub fn corpus(&self) -> Result<&Path> {
        required(&self.corpus, "--corpus")
    }

    pub fn audio_embs(&self) -> Result<&Path> {
        required(&self.audio_embs, "--audio-embs")
    }

    pub fn text_embs(&self) -> Result<&Path> {
        required(&self.text_embs, "--text-embs")
    }

    pub fn out(&self) -> Result<&Path> {
        required(&self.out, "--out")
    }
}

/// A required setting is missing. The binary exits with status 2 for these,
/// like other usage errors.
#[derive(Debug, thiserror::Error)]
#[error("{0} is required (pass it as a flag or set it in --config)")]
pub struct UsageError(pub &'static str);

fn required<'a>(p: &'a Option<PathBuf>, flag: &'static str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => Err(UsageError(flag).into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_fill_defaults() {
        let ms = RunConfig::resolve(None, ConfigLayer { preset: Some(EncoderPreset::MsClap), ..Default::default() }).unwrap();
        assert_eq!((ms.train.hidden, ms.train.lr, ms.train.batch_size), (512, 1e-3, 32));
        assert_eq!(ms.alpha, Alpha::Fixed(0.3));
        let laion = RunConfig::resolve(None, ConfigLayer { preset: Some(EncoderPreset::LaionClap), ..Default::default() }).unwrap();
        assert_eq!((laion.train.hidden, laion.train.lr), (256, 1e-4));
        assert_eq!(laion.alpha, Alpha::Fixed(0.45));
        let none = RunConfig::resolve(None, ConfigLayer::default()).unwrap();
        assert_eq!(none.alpha, Alpha::Calibrate);
        assert_eq!(none.split, SplitCounts::new(400, 100, 500));
    }

    #[test]
    fn precedence_is_flags_then_file_then_preset() {
        let file: ConfigLayer = toml::from_str(
            r#"
            preset = "laion-clap"
            seed = 7
            [train]
            hidden = 64
            lr = 0.01
            "#,
        )
        .unwrap();
        let flags = ConfigLayer {
            train: TrainSection { lr: Some(0.5), ..Default::default() },
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(file.clone()), flags).unwrap();
        assert_eq!((cfg.train.hidden, cfg.train.lr, cfg.seed, cfg.train.seed), (64, 0.5, 7, 7));
        assert_eq!(cfg.alpha, Alpha::Fixed(0.45));

        let flags = ConfigLayer { preset: Some(EncoderPreset::MsClap), ..Default::default() };
        let cfg = RunConfig::resolve(Some(file), flags).unwrap();
        assert_eq!((cfg.train.hidden, cfg.train.lr), (64, 0.01));
        assert_eq!(cfg.alpha, Alpha::Fixed(0.3));
    }

    #[test]
    fn resolved_layer_round_trips() {
        let flags = ConfigLayer {
            preset: Some(EncoderPreset::LaionClap),
            alpha: Some(Alpha::Calibrate),
            corpus: Some("c.jsonl".into()),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(None, flags).unwrap();
        let json = serde_json::to_string(&cfg.to_layer()).unwrap();
        let back: ConfigLayer = serde_json::from_str(&json).unwrap();
        assert_eq!(RunConfig::resolve(None, back.clone()).unwrap(), cfg);
        let toml_text = toml::to_string(&back).unwrap();
        assert_eq!(RunConfig::resolve(Some(toml::from_str(&toml_text).unwrap()), ConfigLayer::default()).unwrap(), cfg);
    }

    #[test]
    fn alpha_parsing() {
        assert_eq!("calibrate".parse::<Alpha>().unwrap(), Alpha::Calibrate);
        assert_eq!("0.3".parse::<Alpha>().unwrap(), Alpha::Fixed(0.3));
        assert!("high".parse::<Alpha>().is_err());
        let bad = ConfigLayer { alpha: Some(Alpha::Fixed(1.5)), ..Default::default() };
        assert!(RunConfig::resolve(None, bad).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigLayer>("hiden = 3").is_err());
        assert!(toml::from_str::<ConfigLayer>("[train]\nseed = 3").is_err());
    }
}
