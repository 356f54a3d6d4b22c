//! `posefix` — batch front end over the pose-refinement toolkit: synthesize
//! corrupted poses from ground truth, diagnose error-type frequencies,
//! evaluate results files with OKS AP/AR, train and run the toy refiner,
//! and run the pipeline ablation.
//!
//! Every subcommand is deterministic for a fixed `--seed` and writes a
//! `<output>.manifest.json` describing the run.

mod ablate;
mod codec_check;
mod config;
mod diagnose;
mod evaluate;
mod manifest;
mod refine;
mod synthesize;
mod train_toy;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Exit codes: 0 success, 2 usage (from clap), 3 input/schema failure,
/// 4 numeric failure, 1 anything else.
const EXIT_SCHEMA: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

#[derive(Parser)]
#[command(name = "posefix", version, about = "Model-agnostic human pose refinement toolkit")]
struct Cli {
    /// Global config file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Skeleton TOML overriding the config/default.
    #[arg(long, global = true)]
    skeleton: Option<PathBuf>,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt ground-truth poses per the error-distribution table.
    Synthesize(synthesize::Args),
    /// Classify a results file against ground truth into error types.
    Diagnose(diagnose::Args),
    /// OKS-thresholded AP/AR of a results file (optionally before/after).
    Evaluate(evaluate::Args),
    /// Run the heatmap codec round-trip and gradient self-checks.
    CodecCheck(codec_check::Args),
    /// Train the toy refiner on generated stick-figure data.
    TrainToy(train_toy::Args),
    /// Refine a results file with trained parameters.
    Refine(refine::Args),
    /// Train every pipeline variant under one budget and compare.
    Ablate(ablate::Args),
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    use posefix_core::{
        codec::CodecError, evaluator::EvalError, model::ModelError, pipeline::PipelineError,
        refiner::RefinerError, similarity::SimilarityError, synthesis::SynthesisError,
        taxonomy::TaxonomyError,
    };
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RefinerError>() {
            return match e {
                RefinerError::Diverged { .. } => EXIT_NUMERIC,
                _ => EXIT_SCHEMA,
            };
        }
        if let Some(e) = cause.downcast_ref::<CodecError>() {
            return match e {
                CodecError::NonFinite(_) | CodecError::NotNormalized(_) => EXIT_NUMERIC,
                _ => EXIT_SCHEMA,
            };
        }
        if cause.downcast_ref::<PipelineError>().is_some()
            || cause.downcast_ref::<ModelError>().is_some()
            || cause.downcast_ref::<SynthesisError>().is_some()
            || cause.downcast_ref::<TaxonomyError>().is_some()
            || cause.downcast_ref::<EvalError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<toml::de::Error>().is_some()
        {
            return EXIT_SCHEMA;
        }
        if cause.downcast_ref::<SimilarityError>().is_some() {
            return EXIT_NUMERIC;
        }
    }
    1
}

fn main() {
    let cli = Cli::parse();
    let config = match config::GlobalConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(EXIT_SCHEMA);
        }
    };
    let level = cli
        .log_level
        .clone()
        .or_else(|| config.log_level.clone())
        .unwrap_or_else(|| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();

    let ctx = CommandContext {
        config,
        config_path: cli.config.clone(),
        skeleton_flag: cli.skeleton.clone(),
    };
    let result: Result<()> = match cli.command {
        Command::Synthesize(args) => synthesize::run(&ctx, args),
        Command::Diagnose(args) => diagnose::run(&ctx, args),
        Command::Evaluate(args) => evaluate::run(&ctx, args),
        Command::CodecCheck(args) => codec_check::run(&ctx, args),
        Command::TrainToy(args) => train_toy::run(&ctx, args),
        Command::Refine(args) => refine::run(&ctx, args),
        Command::Ablate(args) => ablate::run(&ctx, args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}

/// Shared state handed to every subcommand.
pub struct CommandContext {
    pub config: config::GlobalConfig,
    pub config_path: Option<PathBuf>,
    pub skeleton_flag: Option<PathBuf>,
}

impl CommandContext {
    pub fn skeleton(&self) -> Result<posefix_core::model::SkeletonSpec> {
        self.config
            .skeleton(self.skeleton_flag.as_deref(), self.config_path.as_deref())
    }

    pub fn table(
        &self,
        flag: Option<&std::path::Path>,
        spec: &posefix_core::model::SkeletonSpec,
    ) -> Result<posefix_core::synthesis::ErrorDistributionTable> {
        self.config.table(flag, self.config_path.as_deref(), spec)
    }
}
