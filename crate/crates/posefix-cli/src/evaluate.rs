//! `posefix evaluate`: OKS-thresholded AP/AR of a results file, with an
//! optional before/after delta table.

use crate::manifest::ManifestBuilder;
use crate::CommandContext;
use anyhow::{Context, Result};
use clap::Parser;
use posefix_core::evaluator::{evaluate, Metrics};
use posefix_core::pipeline::{load_coco_results, GtDataset};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
pub struct Args {
    /// COCO ground-truth keypoint JSON.
    #[arg(long)]
    pub gt: PathBuf,
    /// Results JSON to score (the "after" side).
    #[arg(long)]
    pub dt: PathBuf,
    /// Baseline results JSON for a before/after comparison.
    #[arg(long)]
    pub dt_before: Option<PathBuf>,
    /// Write the metrics as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the metrics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Output {
    after: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    before: Option<Metrics>,
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "   --".into(),
    }
}

pub fn run(ctx: &CommandContext, args: Args) -> Result<()> {
    let spec = ctx.skeleton()?;
    let params = ctx.config.eval.clone();
    params.validate()?;
    let gt = GtDataset::load(&args.gt, &spec)?;
    let after = evaluate(&gt, &load_coco_results(&args.dt, &spec)?, &params, &spec)?;
    let before = match &args.dt_before {
        Some(path) => Some(evaluate(
            &gt,
            &load_coco_results(path, &spec)?,
            &params,
            &spec,
        )?),
        None => None,
    };

    match before {
        Some(before) => {
            println!("{:<7} {:>8} {:>8} {:>8}", "metric", "before", "after", "delta");
            for ((name, a), (_, b)) in after.rows().iter().zip(before.rows().iter()) {
                let delta = match (a, b) {
                    (Some(a), Some(b)) => format!("{:+.4}", a - b),
                    _ => "   --".into(),
                };
                println!("{:<7} {:>8} {:>8} {:>8}", name, fmt(*b), fmt(*a), delta);
            }
        }
        None => {
            for (name, v) in after.rows() {
                println!("{name:<7} {}", fmt(v));
            }
        }
    }

    if let Some(path) = &args.json {
        let out = Output { after, before };
        std::fs::write(path, serde_json::to_string_pretty(&out).expect("serialize"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.csv {
        let mut csv = String::from("metric,after,before\n");
        let before_rows = before.map(|b| b.rows());
        for (i, (name, a)) in after.rows().iter().enumerate() {
            let b = before_rows
                .as_ref()
                .and_then(|r| r[i].1)
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            let a = a.map(|v| format!("{v:.6}")).unwrap_or_default();
            csv.push_str(&format!("{name},{a},{b}\n"));
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }

    let primary = args
        .json
        .clone()
        .or_else(|| args.csv.clone())
        .unwrap_or_else(|| args.dt.with_extension("eval"));
    let mut manifest = ManifestBuilder::new("evaluate")
        .config_value("eval", &params)
        .config_value("skeleton", &spec)
        .input("gt", &args.gt)
        .input("dt", &args.dt);
    if let Some(b) = &args.dt_before {
        manifest = manifest.input("dt_before", b);
    }
    for out in [&args.json, &args.csv].into_iter().flatten() {
        manifest = manifest.output(out);
    }
    manifest.write(&primary)?;
    Ok(())
}
