//! `posefix diagnose`: classify each estimated keypoint of a results file
//! against ground truth and report error-type frequencies per joint.

use crate::manifest::ManifestBuilder;
use crate::CommandContext;
use anyhow::{Context, Result};
use clap::Parser;
use posefix_core::model::Pose;
use posefix_core::pipeline::{load_coco_results, GtDataset};
use posefix_core::similarity::oks;
use posefix_core::taxonomy::diagnose;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Parser)]
pub struct Args {
    /// COCO ground-truth keypoint JSON.
    #[arg(long)]
    pub gt: PathBuf,
    /// COCO results JSON to classify.
    #[arg(long)]
    pub dt: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn run(ctx: &CommandContext, args: Args) -> Result<()> {
    let spec = ctx.skeleton()?;
    let thresholds = ctx.config.synthesis.thresholds;
    let gt = GtDataset::load(&args.gt, &spec)?;
    let dts = load_coco_results(&args.dt, &spec)?;

    let mut truths = BTreeMap::new();
    for instance in gt.instances.iter().filter(|i| i.usable()) {
        truths.insert(instance.id, gt.context_for(instance)?);
    }

    // Pair estimates with instances: by recorded annotation id when the
    // producer kept it, otherwise greedy OKS matching within the image.
    let mut estimates: Vec<(u64, Pose)> = Vec::new();
    let mut unmatched: Vec<&posefix_core::pipeline::DtInstance> = Vec::new();
    for dt in &dts {
        match dt.source_annotation_id {
            Some(id) if truths.contains_key(&id) => estimates.push((id, dt.pose.clone())),
            _ => unmatched.push(dt),
        }
    }
    let mut taken: std::collections::BTreeSet<u64> =
        estimates.iter().map(|(id, _)| *id).collect();
    let mut leftovers = 0u64;
    for dt in unmatched {
        let mut best: Option<(u64, f64)> = None;
        for instance in gt.instances.iter().filter(|i| i.usable()) {
            if instance.image_id != dt.image_id || taken.contains(&instance.id) {
                continue;
            }
            let instance_ctx = &truths[&instance.id];
            let score = oks(&dt.pose, &instance.pose, instance_ctx, &spec)?.value;
            if best.map(|(_, b)| score > b).unwrap_or(true) {
                best = Some((instance.id, score));
            }
        }
        match best {
            Some((id, _)) => {
                taken.insert(id);
                estimates.push((id, dt.pose.clone()));
            }
            None => leftovers += 1,
        }
    }

    let mut report = diagnose(&estimates, &truths, &spec, &thresholds)?;
    report.skipped_estimates += leftovers;

    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&report).expect("report serialize"),
    )
    .with_context(|| format!("writing report {}", args.out.display()))?;
    if let Some(csv) = &args.csv {
        std::fs::write(csv, report.to_csv())
            .with_context(|| format!("writing csv {}", csv.display()))?;
    }

    println!(
        "classified {} keypoints over {} instances ({} estimates skipped)",
        report.total,
        estimates.len(),
        report.skipped_estimates
    );
    for ty in posefix_core::model::ErrorType::ALL {
        let count = report.overall.get(ty);
        let pct = 100.0 * count as f64 / report.total.max(1) as f64;
        println!("  {:<9} {:>8}  {:>5.1}%", ty.name(), count, pct);
    }

    let mut manifest = ManifestBuilder::new("diagnose")
        .config_value("thresholds", &thresholds)
        .config_value("skeleton", &spec)
        .input("gt", &args.gt)
        .input("dt", &args.dt)
        .output(&args.out);
    if let Some(csv) = &args.csv {
        manifest = manifest.output(csv);
    }
    manifest.write(&args.out)?;
    Ok(())
}
