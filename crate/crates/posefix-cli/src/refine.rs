//! `posefix refine`: run trained parameters over a results file, reading
//! image pixels from tensor dumps, and write the refined results.

use crate::manifest::ManifestBuilder;
use crate::CommandContext;
use anyhow::{bail, Context, Result};
use clap::Parser;
use posefix_core::dump::read_tensor;
use posefix_core::pipeline::{load_coco_results, save_coco_results, GtDataset};
use posefix_core::refiner::{load_params, refine};
use posefix_core::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Parser)]
pub struct Args {
    /// Params manifest written by train-toy (`<prefix>.json`).
    #[arg(long)]
    pub params: PathBuf,
    /// COCO ground-truth JSON (image list; validates sizes).
    #[arg(long)]
    pub gt: PathBuf,
    /// Results JSON holding the input poses.
    #[arg(long)]
    pub dt: PathBuf,
    /// Directory of `img_<image_id>` tensor dumps.
    #[arg(long)]
    pub images: PathBuf,
    /// Output refined results JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Merge predictions with the mirrored crop.
    #[arg(long, default_value_t = false)]
    pub flip_tta: bool,
}

pub fn run(ctx: &CommandContext, args: Args) -> Result<()> {
    let spec = ctx.skeleton()?;
    let (params, refiner_config) = load_params(&args.params)?;
    if params.num_joints != spec.num_joints() {
        bail!(
            "params were trained for {} joints but the skeleton has {}",
            params.num_joints,
            spec.num_joints()
        );
    }
    let gt = GtDataset::load(&args.gt, &spec)?;
    let dts = load_coco_results(&args.dt, &spec)?;

    let mut cache: BTreeMap<u64, Tensor> = BTreeMap::new();
    let mut refined = Vec::with_capacity(dts.len());
    let mut passthrough = 0usize;
    for dt in &dts {
        let image = match cache.entry(dt.image_id) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let path = args.images.join(format!("img_{}", dt.image_id));
                let tensor = read_tensor(&path)
                    .with_context(|| format!("loading image dump for image {}", dt.image_id))?;
                if let Some(info) = gt.image(dt.image_id) {
                    if (tensor.width as u32, tensor.height as u32) != (info.width, info.height) {
                        bail!(
                            "image {} dump is {}x{} but ground truth says {}x{}",
                            dt.image_id,
                            tensor.width,
                            tensor.height,
                            info.width,
                            info.height
                        );
                    }
                }
                e.insert(tensor)
            }
        };
        if dt.pose.num_labeled() < 2 {
            // Not enough keypoints to place a crop; pass the pose through.
            passthrough += 1;
            refined.push(dt.clone());
            continue;
        }
        let pose = refine(
            &params,
            image,
            &dt.pose,
            &spec,
            &refiner_config,
            args.flip_tta,
        )?;
        let mut out = dt.clone();
        out.pose = pose;
        refined.push(out);
    }
    save_coco_results(&refined, &args.out)?;
    println!(
        "refined {} poses ({passthrough} passed through) -> {}",
        refined.len(),
        args.out.display()
    );

    ManifestBuilder::new("refine")
        .config_value("refiner", &refiner_config)
        .config_value("skeleton", &spec)
        .config_value("flip_tta", &args.flip_tta)
        .input("params", &args.params)
        .input("gt", &args.gt)
        .input("dt", &args.dt)
        .input("images", &args.images)
        .output(&args.out)
        .write(&args.out)?;
    Ok(())
}
