//! `posefix synthesize`: corrupt every usable ground-truth instance and emit
//! a COCO results file plus a sidecar of the per-joint error-type labels.

use crate::manifest::ManifestBuilder;
use crate::CommandContext;
use anyhow::{Context, Result};
use clap::Parser;
use posefix_core::model::ErrorType;
use posefix_core::pipeline::{save_coco_results, DtInstance, GtDataset};
use posefix_core::refiner::derive_seed;
use posefix_core::synthesis::synthesize_pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Parser)]
pub struct Args {
    /// COCO ground-truth keypoint JSON.
    #[arg(long)]
    pub gt: PathBuf,
    /// Error-distribution table (TOML); embedded default when omitted.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Master seed; per-instance streams derive from (seed, annotation id).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output results JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Sidecar with per-joint error-type labels (default `<out>.labels.json`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Serialize)]
struct LabelEntry {
    annotation_id: u64,
    image_id: u64,
    error_types: Vec<Option<ErrorType>>,
}

pub fn run(ctx: &CommandContext, args: Args) -> Result<()> {
    let spec = ctx.skeleton()?;
    let table = ctx.table(args.table.as_deref(), &spec)?;
    let mut synth_config = ctx.config.synthesis.clone();
    if let Some(seed) = args.seed {
        synth_config.rng_seed = seed;
    }
    synth_config.validate()?;
    let seed = synth_config.rng_seed;

    let gt = GtDataset::load(&args.gt, &spec)?;
    let mut results = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0usize;
    for instance in &gt.instances {
        if !instance.usable() {
            skipped += 1;
            continue;
        }
        let instance_ctx = gt.context_for(instance)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, instance.id));
        let synth = synthesize_pose(&instance_ctx, &spec, &table, &synth_config, &mut rng)?;
        let mut pose = synth.pose;
        pose.score = Some(1.0);
        results.push(DtInstance {
            image_id: instance.image_id,
            category_id: 1,
            pose,
            source_annotation_id: Some(instance.id),
        });
        labels.push(LabelEntry {
            annotation_id: instance.id,
            image_id: instance.image_id,
            error_types: synth.error_types,
        });
    }
    save_coco_results(&results, &args.out)?;
    let labels_path = args
        .labels
        .clone()
        .unwrap_or_else(|| label_sidecar_path(&args.out));
    std::fs::write(
        &labels_path,
        serde_json::to_string(&labels).expect("labels serialize"),
    )
    .with_context(|| format!("writing labels {}", labels_path.display()))?;

    log::info!(
        "synthesized {} instances ({skipped} skipped) -> {}",
        results.len(),
        args.out.display()
    );
    ManifestBuilder::new("synthesize")
        .seed(seed)
        .config_value("synthesis", &synth_config)
        .config_value("skeleton", &spec)
        .input("gt", &args.gt)
        .output(&args.out)
        .output(&labels_path)
        .write(&args.out)?;
    Ok(())
}

pub fn label_sidecar_path(out: &std::path::Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    name.push_str(".labels.json");
    out.with_file_name(name)
}
