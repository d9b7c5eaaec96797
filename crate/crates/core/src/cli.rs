//! Command-line front end. Each subcommand is a thin wrapper over the
//! library; results go to the given writer, progress to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::corpus::{read_corpus, Corpus};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{case_study, compare, evaluate, robustness_run};
use crate::lexicon::{read_lexicon, write_lexicon, Lexicon, NormalizationMode};
use crate::model::{matched_baseline, DecoderKind, LanguageModel, ModelConfig};
use crate::preprocess::{decode_utf8, preprocess, PreprocessConfig, Preprocessed};
use crate::synthetic::{gen_synthetic, SyntheticConfig};
use crate::training::{train, EpochStats, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "sdlm", version, about = "Sememe-driven language modeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Canonicalize, segment and vocabulary-map raw text splits.
    Preprocess(PreprocessArgs),
    /// Write a synthetic lexicon, corpus splits and ground-truth tables.
    GenSynthetic(SyntheticArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report perplexity and bucketed perplexity on a corpus.
    Eval(EvalArgs),
    /// Show the top next words and sememes for given contexts.
    Inspect(InspectArgs),
    /// Train on the full and on an edge-ablated lexicon and compare.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    #[arg(long)]
    pub no_canonicalize: bool,
    #[arg(long)]
    pub no_segment: bool,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub sememes: usize,
    #[arg(long, default_value_t = 160)]
    pub senses: usize,
    #[arg(long, default_value_t = 100)]
    pub words: usize,
    #[arg(long, default_value_t = 50_000)]
    pub train_tokens: usize,
    #[arg(long, default_value_t = 5_000)]
    pub valid_tokens: usize,
    #[arg(long, default_value_t = 5_000)]
    pub test_tokens: usize,
    #[arg(long, default_value_t = 0.9)]
    pub signal: f64,
    #[arg(long, default_value_t = 2)]
    pub fanout: usize,
    #[arg(long, default_value_t = 6.0)]
    pub sharpness: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "sdlm")]
    pub decoder: DecoderKind,
    #[arg(long, default_value = "left")]
    pub norm: NormalizationMode,
    /// Number of basis matrices.
    #[arg(long, default_value_t = 5)]
    pub basis: usize,
    #[arg(long, default_value_t = 64)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub context_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    /// With `--decoder baseline`, widen the baseline until it has at least as
    /// many parameters as the sememe-driven model with these settings.
    #[arg(long)]
    pub match_budget: bool,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    #[arg(long, default_value_t = 35)]
    pub bptt: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    /// Gradient-norm clipping threshold; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn train_config(&self, lex: &Lexicon) -> Result<TrainConfig> {
        let sdlm = ModelConfig {
            encoder: EncoderConfig {
                input_dim: self.input_dim,
                context_dim: self.context_dim,
                layers: self.layers,
                dropout: self.dropout,
            },
            decoder: DecoderKind::Sdlm,
            norm: self.norm,
            bases: self.basis,
            init_scale: self.init_scale,
        };
        let model = match (self.decoder, self.match_budget) {
            (DecoderKind::Sdlm, false) => sdlm,
            (DecoderKind::Sdlm, true) => {
                return Err(Error::argument("--match-budget only applies to --decoder baseline"));
            }
            (DecoderKind::Baseline, false) => ModelConfig { decoder: DecoderKind::Baseline, ..sdlm },
            (DecoderKind::Baseline, true) => {
                sdlm.validate()?;
                let target = LanguageModel::shapes(&sdlm, lex).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
                matched_baseline(&sdlm, lex, target)
            }
        };
        let config = TrainConfig {
            model,
            lr0: self.lr,
            batch_size: self.batch,
            bptt_len: self.bptt,
            max_epochs: self.epochs,
            clip_norm: (self.clip > 0.0).then_some(self.clip),
            seed: self.seed,
            min_lr: self.min_lr,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also evaluate this checkpoint and print a comparison table.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Write `<prefix>.txt` and `<prefix>.tsv` (and `<prefix>.compare.tsv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Space-separated context; may be repeated.
    #[arg(long, required = true)]
    pub context: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Fraction of sense-sememe edges to remove.
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub ablation_seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Schema { .. } | Error::Validation(_) | Error::Format(_) | Error::Json(_) | Error::Io(_) => 2,
        Error::Argument(_) => 3,
        Error::Contract(_) => 4,
        Error::NonFinite { .. } | Error::Diverged { .. } => 5,
    }
}

fn read_text(path: &Path) -> Result<String> {
    decode_utf8(fs::read(path)?)
}

fn load_model(lexicon: &Arc<Lexicon>, path: &Path) -> Result<LanguageModel> {
    Checkpoint::load(path)?.into_model(Arc::clone(lexicon))
}

fn log_epoch(s: &EpochStats) {
    eprintln!(
        "epoch {:>3}  lr {:.6}  train ppl {:.3}  valid ppl {}  clipped {}/{}",
        s.epoch,
        s.lr,
        s.train_ppl,
        s.valid_ppl.map_or_else(|| "-".to_string(), |v| format!("{v:.3}")),
        s.clipped_windows,
        s.windows
    );
}

pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => {
            let lex = read_lexicon(&a.lexicon)?;
            let config = PreprocessConfig { min_count: a.min_count, canonicalize: !a.no_canonicalize, segment: !a.no_segment };
            let result = preprocess(&read_text(&a.train)?, &read_text(&a.valid)?, &read_text(&a.test)?, &lex, &config)?;
            fs::create_dir_all(&a.out)?;
            write_lexicon(&result.lexicon, a.out.join("lexicon.tsv"))?;
            let vocab: String = result.vocabulary.iter().map(|(w, c)| format!("{w}\t{c}\n")).collect();
            fs::write(a.out.join("vocab.tsv"), vocab)?;
            for (name, split) in [("train", &result.train), ("valid", &result.valid), ("test", &result.test)] {
                fs::write(a.out.join(format!("{name}.txt")), Preprocessed::split_text(split))?;
            }
            writeln!(
                out,
                "vocabulary {} words, {} senses, {} sememes; train {} sentences",
                result.lexicon.num_words(),
                result.lexicon.num_senses(),
                result.lexicon.num_sememes(),
                result.train.len()
            )?;
        }
        Command::GenSynthetic(a) => {
            let config = SyntheticConfig {
                sememes: a.sememes,
                senses: a.senses,
                words: a.words,
                train_tokens: a.train_tokens,
                valid_tokens: a.valid_tokens,
                test_tokens: a.test_tokens,
                signal: a.signal,
                fanout: a.fanout,
                sharpness: a.sharpness,
                seed: a.seed,
            };
            let data = gen_synthetic(&config)?;
            data.write_to(&a.out)?;
            let ppl = data.oracle_nll(&data.test).exp();
            writeln!(out, "oracle test perplexity {ppl:.6}")?;
        }
        Command::Train(a) => {
            let lex = Arc::new(read_lexicon(&a.lexicon)?);
            let config = a.model.train_config(&lex)?;
            let train_corpus = read_corpus(&a.train, &lex)?;
            let valid_corpus = read_corpus(&a.valid, &lex)?;
            let quiet = a.quiet;
            let outcome = train(lex, &train_corpus, &valid_corpus, &config, |s| {
                if !quiet {
                    log_epoch(s);
                }
            })?;
            Checkpoint::from_outcome(&config, &outcome).save(&a.out)?;
            writeln!(
                out,
                "best epoch {} valid ppl {:.6}; {} parameters",
                outcome.best_epoch,
                outcome.valid_history[outcome.best_epoch - 1],
                outcome.model.parameter_count()
            )?;
        }
        Command::Eval(a) => {
            let lex = Arc::new(read_lexicon(&a.lexicon)?);
            let corpus: Corpus = read_corpus(&a.corpus, &lex)?;
            let report = evaluate(&load_model(&lex, &a.checkpoint)?, &corpus)?;
            out.write_all(report.to_text().as_bytes())?;
            let comparison = match &a.baseline {
                Some(path) => {
                    let base = evaluate(&load_model(&lex, path)?, &corpus)?;
                    let table = compare(&base, &report)?.to_tsv();
                    out.write_all(table.as_bytes())?;
                    Some(table)
                }
                None => None,
            };
            if let Some(prefix) = &a.out {
                let with_ext = |ext: &str| {
                    let mut p = prefix.clone().into_os_string();
                    p.push(ext);
                    PathBuf::from(p)
                };
                fs::write(with_ext(".txt"), report.to_text())?;
                fs::write(with_ext(".tsv"), report.to_tsv())?;
                if let Some(table) = comparison {
                    fs::write(with_ext(".compare.tsv"), table)?;
                }
            }
        }
        Command::Inspect(a) => {
            let lex = Arc::new(read_lexicon(&a.lexicon)?);
            let model = load_model(&lex, &a.checkpoint)?;
            for context in &a.context {
                let ids = context
                    .split_whitespace()
                    .map(|w| lex.word_id(w).map(|id| id.index()).ok_or_else(|| Error::argument(format!("`{w}` is not in the lexicon"))))
                    .collect::<Result<Vec<_>>>()?;
                out.write_all(case_study(&model, &ids, a.k)?.to_text().as_bytes())?;
            }
        }
        Command::Ablate(a) => {
            let lex = Arc::new(read_lexicon(&a.lexicon)?);
            let config = a.model.train_config(&lex)?;
            let corpora = [&a.train, &a.valid, &a.test].map(|p| read_corpus(p, &lex));
            let [train_c, valid_c, test_c] = corpora;
            let r = robustness_run(&config, &lex, a.fraction, a.ablation_seed, &train_c?, &valid_c?, &test_c?)?;
            writeln!(out, "edges_full = {}", r.edges_full)?;
            writeln!(out, "edges_ablated = {}", r.edges_ablated)?;
            writeln!(out, "ppl_full = {:.6}", r.ppl_full)?;
            writeln!(out, "ppl_ablated = {:.6}", r.ppl_ablated)?;
        }
    }
    Ok(())
}
