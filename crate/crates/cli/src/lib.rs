//! `audiohall` command line: corpus preparation, zero-shot and trained
//! hallucination classifiers, evaluation, corpus statistics and the
//! annotation server.

pub mod commands;
pub mod config;
pub mod manifest;

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use audiohall::corpus::{Split, SplitCounts};
use audiohall::evaluation::render_tables;
use audiohall::preset::EncoderPreset;
use audiohall::synthetic::PlantedConfig;
use clap::{Args, Parser, Subcommand};

use crate::commands::*;
use crate::config::{Alpha, ConfigLayer, RunConfig, SplitSection, TrainSection};

#[derive(Debug, Parser)]
#[command(name = "audiohall", version, about = "Detect audio hallucinations in generated audio descriptions")]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Corpus file (newline-delimited JSON).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Audio embedding store.
    #[arg(long)]
    pub audio_embs: Option<PathBuf>,
    /// Text embedding store.
    #[arg(long)]
    pub text_embs: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Encoder preset: ms-clap or laion-clap.
    #[arg(long)]
    pub preset: Option<EncoderPreset>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML or JSON config file, or a run manifest to repeat.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drop samples with missing embeddings instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

impl CommonArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            corpus: self.corpus.clone(),
            audio_embs: self.audio_embs.clone(),
            text_embs: self.text_embs.clone(),
            out: self.out.clone(),
            preset: self.preset,
            seed: self.seed,
            lenient: self.lenient.then_some(true),
            ..ConfigLayer::default()
        }
    }

    /// Resolves flags (with `extra` merged in) against the config file.
    pub fn resolve(&self, extra: ConfigLayer) -> Result<RunConfig> {
        let file = self.config.as_deref().map(ConfigLayer::load).transpose()?;
        RunConfig::resolve(file, self.layer().overlay(extra))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Probability at or above which a sample is called hallucinated.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// L2-normalize embeddings before the head.
    #[arg(long)]
    pub normalize_inputs: bool,
}

impl TrainArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            train: TrainSection {
                hidden: self.hidden,
                batch_size: self.batch_size,
                lr: self.lr,
                weight_decay: self.weight_decay,
                max_epochs: self.max_epochs,
                patience: self.patience,
                decision_threshold: self.threshold,
                normalize_inputs: self.normalize_inputs.then_some(true),
            },
            ..ConfigLayer::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw tab-separated dump (id, audio_ref, response) into a corpus.
    Ingest {
        /// Raw file, one `id<TAB>audio_ref<TAB>response` per line.
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Prompt recorded on every sample.
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Assign train/val/test splits.
    Split {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Refuse corpora with unannotated samples.
        #[arg(long)]
        require_annotated: bool,
        /// Where to write the split corpus; defaults to overwriting --corpus.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pick the zero-shot threshold that maximizes F1 on the validation split.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Candidate thresholds as start:stop:step.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Classify the test split by audio-text cosine similarity.
    Zeroshot {
        #[command(flatten)]
        common: CommonArgs,
        /// Threshold, or "calibrate" to choose it on the validation split.
        #[arg(long)]
        alpha: Option<Alpha>,
        #[arg(long)]
        grid: Option<String>,
        /// Text embeddings were computed on prefix-stripped sentences.
        #[arg(long)]
        text_prefix_stripped: bool,
    },
    /// Train the fusion head and evaluate it on the test split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a saved checkpoint or verdict file.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with = "verdicts", required_unless_present = "verdicts")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a fair-coin predictor on a split.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Hallucination type frequencies and top nouns and verbs per type.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Tokens listed per type and tag.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Pre-computed part-of-speech tags (JSONL) to use instead of the lexicon.
        #[arg(long)]
        tags: Option<PathBuf>,
    },
    /// Run the annotation server.
    Serve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory with a built annotation UI.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Base directory for relative audio paths; defaults to the corpus directory.
        #[arg(long)]
        audio_root: Option<PathBuf>,
        /// Rewrite the corpus file after this many labels.
        #[arg(long, default_value_t = audiohall_annotate::store::DEFAULT_REWRITE_EVERY)]
        rewrite_every: usize,
    },
    /// Generate a synthetic corpus with matching embedding stores.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Standard deviation of the components off the planted direction.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
}

fn print_run(run: &ClassifierRun) {
    print!("{}", render_tables(&[(run.classifier.as_str(), &run.report)]));
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, common, prompt } => {
            let cfg = common.resolve(ConfigLayer::default())?;
            let corpus = cmd_ingest(&input, cfg.corpus()?, prompt.as_deref())?;
            println!("wrote {} samples to {}", corpus.len(), cfg.corpus()?.display());
        }
        Command::Split {
            common,
            train,
            val,
            test,
            require_annotated,
            output,
        } => {
            let cfg = common.resolve(ConfigLayer {
                split: SplitSection {
                    train,
                    val,
                    test,
                    require_annotated: require_annotated.then_some(true),
                },
                ..ConfigLayer::default()
            })?;
            let split = cmd_split(&cfg, output.as_deref())?;
            println!(
                "train {} / val {} / test {} / unassigned {} (seed {}) -> {}",
                split.split_len(Split::Train),
                split.split_len(Split::Val),
                split.split_len(Split::Test),
                split.split_len(Split::Unassigned),
                cfg.seed,
                output.as_deref().unwrap_or(cfg.corpus()?).display()
            );
        }
        Command::Calibrate { common, grid } => {
            let cfg = common.resolve(ConfigLayer {
                grid,
                ..ConfigLayer::default()
            })?;
            let c = cmd_calibrate(&cfg)?;
            println!(
                "alpha = {} (val F1 {:.1} over {} samples, grid {})",
                c.alpha, c.val_f1, c.val_samples, c.grid
            );
        }
        Command::Zeroshot {
            common,
            alpha,
            grid,
            text_prefix_stripped,
        } => {
            let cfg = common.resolve(ConfigLayer {
                alpha,
                grid,
                text_prefix_stripped: text_prefix_stripped.then_some(true),
                ..ConfigLayer::default()
            })?;
            let run = cmd_zeroshot(&cfg)?;
            let alpha = run.alpha.expect("zero-shot runs record alpha");
            match (&run.calibration, cfg.preset) {
                (Some(c), _) => println!("alpha = {alpha} (calibrated, val F1 {:.1})", c.val_f1),
                (None, Some(p)) if cfg.alpha == Alpha::Fixed(p.alpha()) => println!("alpha = {alpha} (preset {p})"),
                (None, _) => println!("alpha = {alpha}"),
            }
            print_run(&run);
        }
        Command::Train { common, train } => {
            let cfg = common.resolve(train.layer())?;
            let run = cmd_train(&cfg)?;
            let t = &cfg.train;
            println!(
                "training: hidden {}, batch {}, lr {}, weight decay {}, up to {} epochs (patience {}), seed {}",
                t.hidden, t.batch_size, t.lr, t.weight_decay, t.max_epochs, t.patience, t.seed
            );
            if let Some(s) = &run.training {
                println!(
                    "ran {} epochs, best epoch {} (val F1 {})",
                    s.epochs_run,
                    s.best_epoch.map_or("none".into(), |e| e.to_string()),
                    s.best_val_f1.map_or("n/a".into(), |f| format!("{:.1}", 100.0 * f)),
                );
            }
            print_run(&run);
        }
        Command::Evaluate {
            common,
            checkpoint,
            verdicts,
            split,
            threshold,
        } => {
            let cfg = common.resolve(
                TrainArgs {
                    threshold,
                    ..TrainArgs::default()
                }
                .layer(),
            )?;
            let source = match (checkpoint, verdicts) {
                (Some(c), _) => EvalSource::Checkpoint(c),
                (None, Some(v)) => EvalSource::Verdicts(v),
                (None, None) => unreachable!("clap requires one of --checkpoint/--verdicts"),
            };
            print_run(&cmd_evaluate(&cfg, &source, split)?);
        }
        Command::Baseline { common, trials, split } => {
            let cfg = common.resolve(ConfigLayer::default())?;
            let b = cmd_baseline(&cfg, trials, split)?;
            let se = b.std_err();
            println!("prevalence {:.3} on the {split} split, {} trials", b.prevalence, b.trials);
            println!("{:<10} {:>8} {:>10} {:>8}", "", "Recall", "Precision", "F1");
            for (name, s) in [("analytic", &b.analytic), ("simulated", &b.mean)] {
                println!(
                    "{name:<10} {:>8.1} {:>10.1} {:>8.1}",
                    100.0 * s.recall,
                    100.0 * s.precision,
                    100.0 * s.f1
                );
            }
            println!(
                "{:<10} {:>8.2} {:>10.2} {:>8.2}",
                "std err",
                100.0 * se.recall,
                100.0 * se.precision,
                100.0 * se.f1
            );
        }
        Command::Analyze { common, k, tags } => {
            let cfg = common.resolve(ConfigLayer::default())?;
            print!("{}", cmd_analyze(&cfg, k, tags.as_deref())?.render_table());
        }
        Command::Serve {
            common,
            addr,
            ui_dir,
            audio_root,
            rewrite_every,
        } => {
            let cfg = common.resolve(ConfigLayer::default())?;
            let service = audiohall_annotate::ServiceConfig {
                corpus: cfg.corpus()?.to_path_buf(),
                audio_root,
                ui_dir,
                rewrite_every,
            };
            eprintln!("serving {} on http://{addr}", service.corpus.display());
            cmd_serve(service, addr)?;
        }
        Command::Synth {
            common,
            samples,
            dim,
            train,
            val,
            test,
            noise,
        } => {
            let cfg = common.resolve(ConfigLayer::default())?;
            let splits = SplitCounts::new(
                train.unwrap_or(samples * 3 / 5),
                val.unwrap_or(samples / 5),
                test.unwrap_or(samples - samples * 3 / 5 - samples / 5),
            );
            let planted = PlantedConfig {
                samples,
                dim,
                splits,
                seed: cfg.seed,
                noise,
                ..Default::default()
            };
            cmd_synth(&cfg, &planted)?;
            println!("wrote {samples} synthetic samples (dim {dim}) to {}", cfg.out()?.display());
        }
    }
    Ok(())
}
