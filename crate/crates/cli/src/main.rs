//! `phononer` command-line interface.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "phononer",
    version,
    about = "Phonetically informed NER for noisy social-media text"
)]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    train: Option<String>,
    #[arg(long, global = true)]
    dev: Option<String>,
    #[arg(long, global = true)]
    input: Option<String>,
    #[arg(long, short = 'o', global = true)]
    output: Option<String>,
    #[arg(long, global = true)]
    gold: Option<String>,
    #[arg(long, global = true)]
    embeddings: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    #[arg(long = "crf-checkpoint", global = true)]
    crf_checkpoint: Option<String>,
    #[arg(long, global = true)]
    features: Option<String>,
    #[arg(long, global = true)]
    log: Option<String>,
    /// e2e or stacked.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Replace URLs, emojis, mentions and numbers with reserved tokens.
    Preprocess,
    /// Corpus statistics as JSON.
    Stats,
    /// Train an e2e or stacked model and save a checkpoint.
    Train,
    /// Write extractor features for a corpus.
    ExtractFeatures,
    /// Fit a standalone CRF to feature records.
    TrainCrf,
    /// Append predicted labels to a corpus.
    Predict,
    /// Score predictions against gold labels.
    Evaluate,
    /// Retrain the stacked model with components switched off.
    Ablate,
    /// Finite-difference checks of every gradient.
    Gradcheck,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            if !p.exists() {
                return Err(CliError::Missing(p.clone()));
            }
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Core(phononer::Error::io(p, e)))?;
            cfg.apply_text(&text, p)?;
        }
        let flags = [
            ("train", &self.train),
            ("dev", &self.dev),
            ("input", &self.input),
            ("output", &self.output),
            ("gold", &self.gold),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
            ("crf-checkpoint", &self.crf_checkpoint),
            ("features", &self.features),
            ("log", &self.log),
            ("model", &self.model),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for pair in &self.set {
            cfg.apply_override(pair)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn execute(&self) -> Result<(), CliError> {
        let cfg = self.run_config()?;
        match self.command {
            Command::Preprocess => commands::preprocess_cmd(&cfg),
            Command::Stats => commands::stats_cmd(&cfg),
            Command::Train => commands::train_cmd(&cfg),
            Command::ExtractFeatures => commands::extract_features_cmd(&cfg),
            Command::TrainCrf => commands::train_crf_cmd(&cfg),
            Command::Predict => commands::predict_cmd(&cfg),
            Command::Evaluate => commands::evaluate_cmd(&cfg),
            Command::Ablate => commands::ablate_cmd(&cfg),
            Command::Gradcheck => commands::gradcheck_cmd(&cfg),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    match cli.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
