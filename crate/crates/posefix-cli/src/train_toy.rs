//! `posefix train-toy`: generate a stick-figure dataset, train the refiner,
//! and save the parameters. Optionally exports a slice of the generated
//! samples as a self-contained COCO-style bundle (ground truth, corrupted
//! results, image tensor dumps, skeleton) for exercising `refine` and
//! `evaluate` end to end.

use crate::manifest::ManifestBuilder;
use crate::CommandContext;
use anyhow::{Context, Result};
use clap::Parser;
use posefix_core::dump::write_tensor;
use posefix_core::model::Pose;
use posefix_core::pipeline::{save_coco_results, BBox, DtInstance, GtDataset, GtInstance, ImageInfo};
use posefix_core::refiner::{
    derive_seed, generate_toy_dataset_with, save_params, train, ToySample,
};
use posefix_core::synthesis::synthesize_pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
pub struct Args {
    /// Output prefix for the trained parameters (`<out>.json` + `<out>.bin`).
    #[arg(long)]
    pub out: PathBuf,
    /// Training set size.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Seed override for dataset generation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Export a bundle of generated samples for refine/evaluate runs.
    #[arg(long)]
    pub export_samples: Option<PathBuf>,
    /// How many samples the export bundle holds.
    #[arg(long, default_value_t = 50)]
    pub export_count: usize,
}

pub fn run(ctx: &CommandContext, args: Args) -> Result<()> {
    // The toy trainer defaults to the embedded stick-figure skeleton; an
    // explicit --skeleton/config skeleton wins if it names the toy joints.
    let spec = match (&ctx.skeleton_flag, &ctx.config.skeleton) {
        (None, None) => posefix_core::model::SkeletonSpec::toy_stick_figure(),
        _ => ctx.skeleton()?,
    };
    let table = ctx.table(None, &spec)?;
    let mut refiner_config = ctx.config.refiner.clone();
    let toy_config = ctx.config.toy.clone();
    if let Some(seed) = args.seed {
        refiner_config.seed = seed;
    }
    refiner_config.validate()?;
    let seed = refiner_config.seed;

    log::info!("generating {} samples", args.samples);
    let samples =
        generate_toy_dataset_with(args.samples, &spec, &table, seed, &toy_config)?;
    log::info!("training {} epochs", refiner_config.epochs);
    let outcome = train(&samples, &spec, &refiner_config)?;
    for m in &outcome.metrics {
        println!(
            "epoch {:>2}  lr {:.1e}  loss {:.4}  input OKS {:.4}  refined OKS {:.4}",
            m.epoch, m.learning_rate, m.mean_loss, m.mean_input_oks, m.mean_refined_oks
        );
    }
    save_params(&args.out, &outcome.params, &refiner_config)?;
    println!("params -> {}.json / .bin", args.out.display());

    let mut manifest = ManifestBuilder::new("train-toy")
        .seed(seed)
        .config_value("refiner", &refiner_config)
        .config_value("toy", &toy_config)
        .config_value("skeleton", &spec)
        .output(&args.out.with_extension("json"))
        .output(&args.out.with_extension("bin"));

    if let Some(dir) = &args.export_samples {
        let count = args.export_count.min(samples.len());
        export_bundle(dir, &samples[..count], &spec, &table, &toy_config, seed)?;
        println!("exported {count} samples -> {}", dir.display());
        manifest = manifest.output(dir);
    }
    manifest.write(&args.out.with_extension("json"))?;
    Ok(())
}

/// Write `gt.json`, `dt.json`, `skeleton.toml` and `images/img_<id>` dumps.
fn export_bundle(
    dir: &Path,
    samples: &[ToySample],
    spec: &posefix_core::model::SkeletonSpec,
    table: &posefix_core::synthesis::ErrorDistributionTable,
    toy_config: &posefix_core::refiner::ToyConfig,
    seed: u64,
) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .with_context(|| format!("creating {}", images_dir.display()))?;

    let mut images = Vec::new();
    let mut instances = Vec::new();
    let mut dts = Vec::new();
    let mut next_ann_id = 1u64;
    for (i, sample) in samples.iter().enumerate() {
        let image_id = i as u64 + 1;
        images.push(ImageInfo {
            id: image_id,
            width: sample.image.width as u32,
            height: sample.image.height as u32,
        });
        write_tensor(images_dir.join(format!("img_{image_id}")), &sample.image)?;

        // The target instance, with its recorded corruption.
        let mut figures: Vec<(Pose, Pose)> =
            vec![(sample.gt_pose.clone(), sample.corrupted_pose.clone())];
        // Neighbors get a corruption of their own so the bundle scores like
        // a complete detection run.
        for (n, neighbor) in sample.neighbors.iter().enumerate() {
            let mut others: Vec<Pose> = vec![sample.gt_pose.clone()];
            others.extend(
                sample
                    .neighbors
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| *m != n)
                    .map(|(_, p)| p.clone()),
            );
            let extent = pose_bbox(neighbor);
            let scale = (extent.width * extent.height).max(1.0).sqrt();
            let n_ctx = posefix_core::model::InstanceContext::new(
                neighbor.clone(),
                others,
                scale,
                (sample.image.width as u32, sample.image.height as u32),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                0xE0_0000 ^ (image_id << 8) ^ n as u64,
            ));
            let synth = synthesize_pose(&n_ctx, spec, table, &toy_config.synthesis, &mut rng)?;
            figures.push((neighbor.clone(), synth.pose));
        }

        for (gt_pose, corrupted) in figures {
            let bbox = pose_bbox(&gt_pose);
            let area = bbox.width * bbox.height;
            instances.push(GtInstance {
                id: next_ann_id,
                image_id,
                area,
                bbox: Some(bbox),
                iscrowd: false,
                degenerate: false,
                pose: gt_pose,
            });
            let mut pose = corrupted;
            pose.score = Some(1.0);
            dts.push(DtInstance {
                image_id,
                category_id: 1,
                pose,
                source_annotation_id: Some(next_ann_id),
            });
            next_ann_id += 1;
        }
    }

    let gt = GtDataset { images, instances };
    gt.save(dir.join("gt.json"), spec)?;
    save_coco_results(&dts, dir.join("dt.json"))?;
    let skeleton_toml = toml::to_string(spec).expect("skeleton serialize");
    std::fs::write(dir.join("skeleton.toml"), skeleton_toml)
        .with_context(|| "writing skeleton.toml".to_string())?;
    Ok(())
}

fn pose_bbox(pose: &Pose) -> BBox {
    let mut it = pose.keypoints.iter().filter_map(|k| k.position());
    let (x0, y0) = it.next().expect("toy poses are fully labeled");
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
    for (x, y) in it {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    BBox {
        x: min_x,
        y: min_y,
        width: (max_x - min_x).max(1.0),
        height: (max_y - min_y).max(1.0),
    }
}
