//! `posefix ablate`: train every requested pipeline variant under one toy
//! budget and emit a CSV of held-out OKS per (mode, seed).

use crate::manifest::ManifestBuilder;
use crate::CommandContext;
use anyhow::{Context, Result};
use clap::Parser;
use posefix_core::refiner::{ablation_csv, ablation_mode_means, run_ablation, LossMode};
use std::path::PathBuf;

#[derive(Parser)]
pub struct Args {
    /// Comma-separated modes (C2F, C2C, F2F, C2F_LH, C2F_LC).
    #[arg(long, value_delimiter = ',', default_values_t = [
        "C2F".to_string(), "C2C".to_string(), "F2F".to_string(),
        "C2F_LH".to_string(), "C2F_LC".to_string()
    ])]
    pub modes: Vec<String>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds; config default when omitted.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Training-set size override.
    #[arg(long)]
    pub train_samples: Option<usize>,
    /// Held-out set size override.
    #[arg(long)]
    pub eval_samples: Option<usize>,
    /// Epoch count override.
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn run(ctx: &CommandContext, args: Args) -> Result<()> {
    let modes: Vec<LossMode> = args
        .modes
        .iter()
        .map(|m| m.parse::<LossMode>().map_err(anyhow::Error::msg))
        .collect::<Result<_>>()?;
    let spec = match (&ctx.skeleton_flag, &ctx.config.skeleton) {
        (None, None) => posefix_core::model::SkeletonSpec::toy_stick_figure(),
        _ => ctx.skeleton()?,
    };
    let table = ctx.table(None, &spec)?;
    let mut ablation = ctx.config.ablation.clone();
    if let Some(seeds) = &args.seeds {
        ablation.seeds = seeds.clone();
    }
    if let Some(n) = args.train_samples {
        ablation.train_samples = n;
    }
    if let Some(n) = args.eval_samples {
        ablation.eval_samples = n;
    }
    if let Some(e) = args.epochs {
        ablation.base_config.epochs = e;
    }
    ablation.base_config.validate()?;

    log::info!(
        "ablating {} modes x {} seeds ({} train / {} eval samples)",
        modes.len(),
        ablation.seeds.len(),
        ablation.train_samples,
        ablation.eval_samples
    );
    let rows = run_ablation(&modes, &ablation, &spec, &table)?;
    let csv = ablation_csv(&rows);
    std::fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;

    println!("{:<8} {:>14}", "mode", "mean OKS");
    for (mode, mean) in ablation_mode_means(&rows) {
        println!("{mode:<8} {mean:>14.4}");
    }
    println!("full table -> {}", args.out.display());

    ManifestBuilder::new("ablate")
        .config_value("ablation", &ablation)
        .config_value("modes", &args.modes)
        .config_value("skeleton", &spec)
        .output(&args.out)
        .write(&args.out)?;
    Ok(())
}
