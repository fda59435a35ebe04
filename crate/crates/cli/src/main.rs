use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use antispoof_cli::{commands, config};
use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "antispoof",
    about = "Train and evaluate synthetic-speech countermeasures: cepstral \
             features on mel, inverted and corpus-adaptive scales, GMM \
             detectors and ROCCH EER reports.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Key=value experiment config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus root that protocol audio paths are relative to.
    #[arg(long)]
    corpus_root: Option<PathBuf>,
    /// Training protocol file.
    #[arg(long)]
    train_protocol: Option<PathBuf>,
    /// Development protocol file.
    #[arg(long)]
    dev_protocol: Option<PathBuf>,
    /// Directory for warp, cache, model, score and report files.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Comma-separated feature families, or `all`.
    #[arg(long = "family", value_delimiter = ',')]
    family: Option<Vec<String>>,
    /// Comma-separated dynamics modes (static, static+dd, dd), or `all`.
    #[arg(long = "dynamics", value_delimiter = ',')]
    dynamics: Option<Vec<String>>,
    /// Gaussian components per model.
    #[arg(long)]
    components: Option<usize>,
    /// Seed for model initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            corpus_root: self.corpus_root.clone(),
            train_protocol: self.train_protocol.clone(),
            dev_protocol: self.dev_protocol.clone(),
            work_dir: self.work_dir.clone(),
            families: self.family.clone(),
            dynamics: self.dynamics.clone(),
            components: self.components,
            seed: self.seed,
            workers: self.workers,
        })?;
        if cfg.workers > 0 {
            // ignore failure: the global pool can only be set once
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build_global();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learn the corpus-adaptive frequency warp from the training split.
    LearnWarp(CommonArgs),
    /// Extract and cache features for every configured family/dynamics.
    Extract(CommonArgs),
    /// Train the natural and synthetic models per configuration.
    Train(CommonArgs),
    /// Score development utterances by log-likelihood ratio.
    Score(CommonArgs),
    /// Assemble per-attack EER tables from score files.
    Report(CommonArgs),
    /// Run learn-warp, extract, train, score and report in sequence.
    RunAll(CommonArgs),
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::LearnWarp(args) => commands::learn_warp(&args.resolve()?),
        Command::Extract(args) => commands::extract(&args.resolve()?),
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Score(args) => commands::score(&args.resolve()?),
        Command::Report(args) => commands::report(&args.resolve()?),
        Command::RunAll(args) => commands::run_all(&args.resolve()?),
    }
}

fn error_category(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|c| c.downcast_ref::<antispoof_core::Error>())
        .map(|c| c.category())
        .unwrap_or("cli")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {:#}", error_category(&err), err);
            ExitCode::FAILURE
        }
    }
}
