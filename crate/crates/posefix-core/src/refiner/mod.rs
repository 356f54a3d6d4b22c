//! The trainable coarse-to-fine refiner at desk scale: a small convolutional
//! stack that takes image channels concatenated with per-joint Gaussian
//! pose heatmaps and emits one logit map per joint, decoded through spatial
//! softmax and soft-argmax.
//!
//! Supported training pipelines (the ablation axes):
//!
//! * `C2F`    — Gaussian input pose, cross-entropy + coordinate L1.
//! * `C2F_LH` — heatmap cross-entropy only.
//! * `C2F_LC` — coordinate L1 only.
//! * `C2C`    — Gaussian input pose, mean-square error against Gaussian
//!              targets, decoded by hard argmax.
//! * `F2F`    — near-delta input pose (sigma 0.5 px), C2F head.

pub mod net;
pub mod toy;

pub use net::{FeatureMap, NetParams};
pub use toy::{generate_toy_dataset, generate_toy_dataset_with, derive_seed, ToyConfig, ToySample};

use crate::codec::{
    gaussian_encode, integral_loss_weighted, soft_argmax, spatial_softmax, CodecError, Coord,
    Heatmap, JointTarget,
};
use crate::model::{Pose, SkeletonSpec, Visibility};
use crate::pipeline::{
    apply_to_pose, bbox_from_pose, crop_transform, extend_aspect, flip_merge, sample_augmentation,
    warp_image, AffineTransform, AugmentParams, Augmentation, PipelineError,
};
use crate::similarity::{oks, SimilarityError};
use crate::synthesis::{ErrorDistributionTable, SynthesisError};
use crate::tensor::Tensor;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefinerError {
    #[error("refiner config: {0}")]
    BadConfig(String),
    #[error("training diverged at batch {batch}: {detail}")]
    Diverged { batch: usize, detail: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("params manifest: {0}")]
    Manifest(String),
}

/// Input/target pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    C2F,
    C2C,
    F2F,
    #[serde(rename = "C2F_LH")]
    C2FHeatmapOnly,
    #[serde(rename = "C2F_LC")]
    C2FCoordOnly,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::C2F,
        LossMode::C2C,
        LossMode::F2F,
        LossMode::C2FHeatmapOnly,
        LossMode::C2FCoordOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::C2F => "C2F",
            LossMode::C2C => "C2C",
            LossMode::F2F => "F2F",
            LossMode::C2FHeatmapOnly => "C2F_LH",
            LossMode::C2FCoordOnly => "C2F_LC",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C2F" => Ok(LossMode::C2F),
            "C2C" => Ok(LossMode::C2C),
            "F2F" => Ok(LossMode::F2F),
            "C2F_LH" => Ok(LossMode::C2FHeatmapOnly),
            "C2F_LC" => Ok(LossMode::C2FCoordOnly),
            other => Err(format!(
                "unknown loss mode {other:?} (expected C2F, C2C, F2F, C2F_LH or C2F_LC)"
            )),
        }
    }
}

/// Hyperparameters of the toy refiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    /// Crop size fed to the network, (width, height); divisible by four.
    pub input_size: (usize, usize),
    /// Logit resolution; the architecture fixes it at half the input.
    pub heatmap_size: (usize, usize),
    /// Channel widths of the two stages.
    pub widths: (usize, usize),
    /// Gaussian sigma (px at input resolution) of the coarse pose channels.
    pub input_sigma: f64,
    /// Near-delta sigma used by the F2F input encoding.
    pub f2f_input_sigma: f64,
    /// Target-blob sigma (px at heatmap resolution) for C2C supervision.
    pub c2c_target_sigma: f64,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Epochs at which the rate decays; `None` derives 2/3 and 5/6 of the
    /// total.
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Margin fraction when deriving the crop box from keypoints.
    pub bbox_margin: f64,
    /// Per-epoch OKS metrics are computed over at most this many samples.
    pub metrics_subset: usize,
    /// Geometric train-time augmentation (scale/rotation/flip); off by
    /// default — the synthesized corruptions already diversify the input.
    pub augment: Option<AugmentParams>,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            input_size: (64, 48),
            heatmap_size: (32, 24),
            widths: (32, 64),
            input_sigma: 2.0,
            f2f_input_sigma: 0.5,
            c2c_target_sigma: 1.5,
            learning_rate: 2e-3,
            lr_decay_factor: 0.1,
            lr_decay_epochs: None,
            batch_size: 8,
            epochs: 5,
            loss_mode: LossMode::C2F,
            seed: 0,
            bbox_margin: 0.25,
            metrics_subset: 200,
            augment: None,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<(), RefinerError> {
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % 4 != 0 || h % 4 != 0 {
            return Err(RefinerError::BadConfig(format!(
                "input size {w}x{h} must be divisible by 4"
            )));
        }
        if self.heatmap_size != (w / 2, h / 2) {
            return Err(RefinerError::BadConfig(format!(
                "heatmap size {:?} must be half the input size (the stack \
                 downsamples x4 and upsamples x2)",
                self.heatmap_size
            )));
        }
        if self.widths.0 == 0 || self.widths.1 == 0 {
            return Err(RefinerError::BadConfig("widths must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(RefinerError::BadConfig(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("input_sigma", self.input_sigma),
            ("f2f_input_sigma", self.f2f_input_sigma),
            ("c2c_target_sigma", self.c2c_target_sigma),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RefinerError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn decay_epochs(&self) -> Vec<usize> {
        match &self.lr_decay_epochs {
            Some(e) => e.clone(),
            None => vec![self.epochs * 2 / 3, self.epochs * 5 / 6],
        }
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self
            .decay_epochs()
            .iter()
            .filter(|&&e| epoch >= e)
            .count() as i32;
        self.learning_rate * self.lr_decay_factor.powi(decays)
    }

    /// Sigma of the pose input channels for this mode.
    fn pose_sigma(&self) -> f64 {
        match self.loss_mode {
            LossMode::F2F => self.f2f_input_sigma,
            _ => self.input_sigma,
        }
    }

    /// Crop -> heatmap coordinates with pixel-center alignment: heatmap
    /// cell `h` covers input pixels `2h` and `2h+1`, so its center sits at
    /// `2h + 0.5`. This keeps the heatmap mirror `x' = w-1-x` exactly
    /// consistent with the input mirror, which flip TTA relies on.
    fn crop_to_heatmap(&self, x: f64, y: f64) -> (f64, f64) {
        let r = (self.input_size.0 / self.heatmap_size.0) as f64;
        let off = (r - 1.0) / 2.0;
        ((x - off) / r, (y - off) / r)
    }

    fn heatmap_to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        let r = (self.input_size.0 / self.heatmap_size.0) as f64;
        let off = (r - 1.0) / 2.0;
        (r * x + off, r * y + off)
    }
}

/// Crop transform for a pose in image coordinates: keypoint bbox with
/// margin, aspect-extended to the network input, plus the given
/// augmentation.
fn crop_for(
    pose: &Pose,
    config: &RefinerConfig,
    aug: Augmentation,
) -> Result<AffineTransform, RefinerError> {
    let (in_w, in_h) = config.input_size;
    let b = bbox_from_pose(pose, config.bbox_margin)?;
    let b = extend_aspect(&b, in_h as f64 / in_w as f64);
    Ok(crop_transform(&b, in_w, in_h, aug.scale, aug.rotation_deg, aug.flip)?)
}

/// Stack the image channels and the per-joint pose blobs into the network
/// input. `image` must already be crop-sized; `pose` in crop coordinates.
fn assemble_input(
    image: &Tensor,
    pose: &Pose,
    spec: &SkeletonSpec,
    config: &RefinerConfig,
) -> Result<FeatureMap, RefinerError> {
    let (in_w, in_h) = config.input_size;
    if image.width != in_w || image.height != in_h || image.channels != 3 {
        return Err(RefinerError::BadConfig(format!(
            "expected a 3x{in_h}x{in_w} crop, got {}x{}x{}",
            image.channels, image.height, image.width
        )));
    }
    let k = spec.num_joints();
    let mut input = FeatureMap::zeros(3 + k, in_h, in_w);
    for c in 0..3 {
        for (dst, src) in input.plane_mut(c).iter_mut().zip(image.channel(c)) {
            *dst = *src as f64;
        }
    }
    let sigma = config.pose_sigma();
    for j in 0..k {
        if let Some((x, y)) = pose.keypoints[j].position() {
            let blob = gaussian_encode(Coord::new(x, y), sigma, in_w, in_h)?;
            input.plane_mut(3 + j).copy_from_slice(blob.data());
        }
    }
    Ok(input)
}

/// One joint logit map per channel.
fn split_logits(logits: &FeatureMap) -> Vec<Heatmap> {
    (0..logits.channels)
        .map(|c| {
            Heatmap::from_data(logits.width, logits.height, logits.plane(c).to_vec())
                .expect("plane length matches")
        })
        .collect()
}

fn merge_grads(grads: &[Heatmap]) -> FeatureMap {
    let (w, h) = (grads[0].width(), grads[0].height());
    let mut out = FeatureMap::zeros(grads.len(), h, w);
    for (c, g) in grads.iter().enumerate() {
        out.plane_mut(c).copy_from_slice(g.data());
    }
    out
}

/// Run the network on a crop-sized image plus an input pose in crop
/// coordinates; returns one logit heatmap per joint.
pub fn forward(
    params: &NetParams,
    image: &Tensor,
    input_pose: &Pose,
    spec: &SkeletonSpec,
    config: &RefinerConfig,
) -> Result<Vec<Heatmap>, RefinerError> {
    let input = assemble_input(image, input_pose, spec, config)?;
    let (logits, _) = net::forward(params, input);
    Ok(split_logits(&logits))
}

/// A sample already cropped and target-encoded for the trainer.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// Crop-sized image channels.
    pub crop_image: Tensor,
    /// Input pose in crop coordinates.
    pub input_pose: Pose,
    /// Integral-loss targets at heatmap resolution (None = excluded).
    pub targets: Vec<Option<JointTarget>>,
    /// Gaussian targets for C2C supervision.
    pub c2c_targets: Vec<Option<Heatmap>>,
}

/// Crop a toy sample around its ground-truth box and encode targets. Joints
/// landing outside the crop are excluded from the loss.
pub fn prepare_sample(
    sample: &ToySample,
    spec: &SkeletonSpec,
    config: &RefinerConfig,
) -> Result<PreparedSample, RefinerError> {
    prepare_sample_augmented(sample, spec, config, Augmentation::identity())
}

/// [`prepare_sample`] under a sampled geometric augmentation.
pub fn prepare_sample_augmented(
    sample: &ToySample,
    spec: &SkeletonSpec,
    config: &RefinerConfig,
    aug: Augmentation,
) -> Result<PreparedSample, RefinerError> {
    let (in_w, in_h) = config.input_size;
    let (hm_w, hm_h) = config.heatmap_size;
    let crop = crop_for(&sample.gt_pose, config, aug)?;
    let crop_image = warp_image(&sample.image, &crop, in_w, in_h)?;
    let input_pose = apply_to_pose(&crop, &sample.corrupted_pose, spec, aug.flip, None).pose;
    let gt_crop = apply_to_pose(&crop, &sample.gt_pose, spec, aug.flip, Some((in_w, in_h)));
    let mut targets = Vec::with_capacity(spec.num_joints());
    let mut c2c_targets = Vec::with_capacity(spec.num_joints());
    for j in 0..spec.num_joints() {
        let kp = &gt_crop.pose.keypoints[j];
        if !kp.is_labeled() || gt_crop.out_of_bounds[j] {
            targets.push(None);
            c2c_targets.push(None);
            continue;
        }
        // In-crop joints can map up to a quarter heatmap pixel outside the
        // grid at the very edge; target_encode clamps that sliver.
        let (hx, hy) = config.crop_to_heatmap(kp.x, kp.y);
        let c = Coord::new(
            hx.clamp(0.0, (hm_w - 1) as f64),
            hy.clamp(0.0, (hm_h - 1) as f64),
        );
        targets.push(Some(JointTarget::at(c, hm_w, hm_h)?));
        c2c_targets.push(Some(gaussian_encode(c, config.c2c_target_sigma, hm_w, hm_h)?));
    }
    Ok(PreparedSample {
        crop_image,
        input_pose,
        targets,
        c2c_targets,
    })
}

fn mse_loss(logits: &[Heatmap], targets: &[Option<Heatmap>]) -> Option<(f64, Vec<Heatmap>)> {
    let labeled = targets.iter().flatten().count();
    if labeled == 0 {
        return None;
    }
    let cells = logits[0].width() * logits[0].height();
    let norm = 1.0 / (labeled * cells) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (logit, target) in logits.iter().zip(targets) {
        let mut grad = Heatmap::zeros(logit.width(), logit.height());
        if let Some(target) = target {
            for (i, (p, t)) in logit.data().iter().zip(target.data()).enumerate() {
                let diff = p - t;
                loss += diff * diff * norm;
                grad.data_mut()[i] = 2.0 * diff * norm;
            }
        }
        grads.push(grad);
    }
    Some((loss, grads))
}

/// Loss value and d(loss)/d(logits) for one sample under the given mode.
fn sample_loss(
    mode: LossMode,
    logits: &[Heatmap],
    prepared: &PreparedSample,
) -> Result<Option<(f64, Vec<Heatmap>)>, RefinerError> {
    let labeled = prepared.targets.iter().flatten().count();
    if labeled == 0 {
        return Ok(None);
    }
    let (wh, wc) = match mode {
        LossMode::C2F | LossMode::F2F => (1.0, 1.0),
        LossMode::C2FHeatmapOnly => (1.0, 0.0),
        LossMode::C2FCoordOnly => (0.0, 1.0),
        LossMode::C2C => {
            return Ok(mse_loss(logits, &prepared.c2c_targets));
        }
    };
    let out = integral_loss_weighted(logits, &prepared.targets, wh, wc)?;
    Ok(Some((out.total, out.grads)))
}

/// Loss and parameter gradients averaged over a batch of prepared samples.
pub fn backward(
    params: &NetParams,
    batch: &[&PreparedSample],
    mode: LossMode,
    spec: &SkeletonSpec,
    config: &RefinerConfig,
) -> Result<(f64, NetParams), RefinerError> {
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (i, prepared) in batch.iter().enumerate() {
        let input = assemble_input(&prepared.crop_image, &prepared.input_pose, spec, config)?;
        let (logits, cache) = net::forward(params, input);
        let maps = split_logits(&logits);
        let Some((loss, dmaps)) = sample_loss(mode, &maps, prepared)? else {
            continue;
        };
        if !loss.is_finite() {
            return Err(RefinerError::Diverged {
                batch: 0,
                detail: format!("non-finite loss at batch sample {i}"),
            });
        }
        total += loss;
        counted += 1;
        let dlogits = merge_grads(&dmaps);
        let sample_grads = net::backward(params, &cache, &dlogits);
        grads.add_scaled(&sample_grads, 1.0);
    }
    if counted == 0 {
        return Err(RefinerError::BadConfig(
            "batch holds no sample with labeled joints".into(),
        ));
    }
    let inv = 1.0 / counted as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

fn decode(mode: LossMode, logits: &[Heatmap]) -> Result<Vec<Coord>, RefinerError> {
    logits
        .iter()
        .map(|map| match mode {
            LossMode::C2C => {
                let (x, y) = map.argmax();
                Ok(Coord::new(x as f64, y as f64))
            }
            _ => Ok(soft_argmax(&spatial_softmax(map)?)?),
        })
        .collect()
}

/// Refine an input pose against an image: crop around the input pose, run
/// the network (optionally merged with the mirrored crop), decode, and map
/// the coordinates back to image space. The input score is carried over.
pub fn refine(
    params: &NetParams,
    image: &Tensor,
    input_pose: &Pose,
    spec: &SkeletonSpec,
    config: &RefinerConfig,
    flip_tta: bool,
) -> Result<Pose, RefinerError> {
    let (in_w, in_h) = config.input_size;
    let crop = crop_for(input_pose, config, Augmentation::identity())?;
    let crop_image = warp_image(image, &crop, in_w, in_h)?;
    let pose_crop = apply_to_pose(&crop, input_pose, spec, false, None).pose;

    let input = assemble_input(&crop_image, &pose_crop, spec, config)?;
    let (logit_map, _) = net::forward(params, input);
    let mut logits = split_logits(&logit_map);

    if flip_tta {
        let mirror = AffineTransform::mirror_x(in_w);
        let mut mirrored_image = Tensor::zeros(3, in_h, in_w);
        for c in 0..3 {
            for y in 0..in_h {
                for x in 0..in_w {
                    mirrored_image.set(c, y, x, crop_image.get(c, y, in_w - 1 - x));
                }
            }
        }
        let flipped_pose = apply_to_pose(&mirror, &pose_crop, spec, true, None).pose;
        let flipped_input = assemble_input(&mirrored_image, &flipped_pose, spec, config)?;
        let (flipped_logits, _) = net::forward(params, flipped_input);
        logits = flip_merge(&logits, &split_logits(&flipped_logits), spec)?;
    }

    let coords = decode(config.loss_mode, &logits)?;
    let inv = crop.inverse()?;
    let keypoints = coords
        .iter()
        .map(|c| {
            let (cx, cy) = config.heatmap_to_crop(c.x, c.y);
            let (x, y) = inv.apply(cx, cy);
            crate::model::Keypoint {
                x,
                y,
                visibility: Visibility::Visible,
            }
        })
        .collect();
    Ok(Pose {
        keypoints,
        score: input_pose.score,
    })
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    /// OKS of the corrupted inputs against ground truth (metrics subset).
    pub mean_input_oks: f64,
    /// OKS of the refined outputs against ground truth (metrics subset).
    pub mean_refined_oks: f64,
}

/// Trained parameters plus the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean OKS of the corrupted inputs and of the refined outputs over a
/// sample set.
pub fn mean_oks(
    params: &NetParams,
    samples: &[ToySample],
    spec: &SkeletonSpec,
    config: &RefinerConfig,
    flip_tta: bool,
) -> Result<(f64, f64), RefinerError> {
    let mut input_sum = 0.0;
    let mut refined_sum = 0.0;
    for sample in samples {
        let ctx = sample.context();
        input_sum += oks(&sample.corrupted_pose, &sample.gt_pose, &ctx, spec)?.value;
        let refined = refine(params, &sample.image, &sample.corrupted_pose, spec, config, flip_tta)?;
        refined_sum += oks(&refined, &sample.gt_pose, &ctx, spec)?.value;
    }
    let n = samples.len().max(1) as f64;
    Ok((input_sum / n, refined_sum / n))
}

/// Train the refiner on toy samples. Deterministic for a fixed config.
pub fn train(
    dataset: &[ToySample],
    spec: &SkeletonSpec,
    config: &RefinerConfig,
) -> Result<TrainOutcome, RefinerError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(RefinerError::BadConfig("dataset is empty".into()));
    }
    let k = spec.num_joints();
    let in_channels = 3 + k;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x1217));
    let mut params = NetParams::init(in_channels, config.widths, k, &mut init_rng);
    let mut adam = net::Adam::new(params.num_params());

    // Without augmentation the crops never change, so prepare once.
    let prepared_once: Option<Vec<PreparedSample>> = match config.augment {
        None => Some(
            dataset
                .iter()
                .map(|s| prepare_sample(s, spec, config))
                .collect::<Result<_, _>>()?,
        ),
        Some(_) => None,
    };

    let metric_count = config.metrics_subset.min(dataset.len());
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        let epoch_storage: Vec<PreparedSample>;
        let prepared: &[PreparedSample] = match (&prepared_once, &config.augment) {
            (Some(p), _) => p,
            (None, Some(params)) => {
                epoch_storage = dataset
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let label = 0xA11C_0000u64 ^ ((epoch as u64) << 24) ^ i as u64;
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, label));
                        let aug = sample_augmentation(params, &mut rng);
                        prepare_sample_augmented(s, spec, config, aug)
                    })
                    .collect::<Result<_, _>>()?;
                &epoch_storage
            }
            (None, None) => unreachable!("prepared_once is Some when augment is None"),
        };
        let lr = config.learning_rate_at(epoch);
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5F00 + epoch as u64));
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (loss, grads) =
                backward(&params, &batch, config.loss_mode, spec, config).map_err(|e| match e {
                    RefinerError::Diverged { detail, .. } => RefinerError::Diverged {
                        batch: batch_idx,
                        detail,
                    },
                    other => other,
                })?;
            adam.step(&mut params, &grads, lr);
            loss_sum += loss;
            batches += 1;
        }
        let (mean_input_oks, mean_refined_oks) =
            mean_oks(&params, &dataset[..metric_count], spec, config, false)?;
        metrics.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / batches.max(1) as f64,
            mean_input_oks,
            mean_refined_oks,
        });
    }
    Ok(TrainOutcome { params, metrics })
}

// -------------------------------------------------------------------------
// Params serialization (tensor-dump format plus a JSON manifest).

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset and length in f32 elements within the binary payload.
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsManifest {
    bin: String,
    dtype: String,
    in_channels: usize,
    widths: (usize, usize),
    num_joints: usize,
    config: RefinerConfig,
    tensors: Vec<TensorEntry>,
}

/// Write `<prefix>.json` (manifest) and `<prefix>.bin` (f32le payload).
pub fn save_params(
    prefix: impl AsRef<Path>,
    params: &NetParams,
    config: &RefinerConfig,
) -> Result<(), RefinerError> {
    let prefix = prefix.as_ref();
    let mut tensors = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        let s = layer.spec;
        tensors.push(TensorEntry {
            name: format!("conv{i}.weight"),
            shape: vec![s.out_ch, s.in_ch, s.ksize, s.ksize],
            offset: payload.len(),
            len: layer.weight.len(),
        });
        payload.extend(layer.weight.iter().map(|&v| v as f32));
        tensors.push(TensorEntry {
            name: format!("conv{i}.bias"),
            shape: vec![s.out_ch],
            offset: payload.len(),
            len: layer.bias.len(),
        });
        payload.extend(layer.bias.iter().map(|&v| v as f32));
    }
    let bin_name = format!(
        "{}.bin",
        prefix
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "params".into())
    );
    let manifest = ParamsManifest {
        bin: bin_name.clone(),
        dtype: crate::dump::DTYPE.into(),
        in_channels: params.in_channels,
        widths: params.widths,
        num_joints: params.num_joints,
        config: config.clone(),
        tensors,
    };
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source: std::io::Error| RefinerError::Io { path: p, source }
    };
    let bin_path = prefix.with_extension("bin");
    let mut bytes = Vec::with_capacity(payload.len() * 4);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin_path, bytes).map_err(io(&bin_path))?;
    let manifest_path = prefix.with_extension("json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail"),
    )
    .map_err(io(&manifest_path))?;
    Ok(())
}

/// Load parameters and the training-time config back from a manifest
/// written by [`save_params`].
pub fn load_params(manifest_path: impl AsRef<Path>) -> Result<(NetParams, RefinerConfig), RefinerError> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|source| RefinerError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    let manifest: ParamsManifest =
        serde_json::from_str(&text).map_err(|e| RefinerError::Manifest(e.to_string()))?;
    if manifest.dtype != crate::dump::DTYPE {
        return Err(RefinerError::Manifest(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let bin_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.bin);
    let bytes = std::fs::read(&bin_path).map_err(|source| RefinerError::Io {
        path: bin_path.display().to_string(),
        source,
    })?;
    if bytes.len() % 4 != 0 {
        return Err(RefinerError::Manifest("payload length not a multiple of 4".into()));
    }
    let payload: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut params =
        NetParams::zeros(manifest.in_channels, manifest.widths, manifest.num_joints);
    let mut entries = manifest.tensors.iter();
    for (i, layer) in params.layers.iter_mut().enumerate() {
        for (name, dst) in [
            (format!("conv{i}.weight"), &mut layer.weight),
            (format!("conv{i}.bias"), &mut layer.bias),
        ] {
            let entry = entries
                .next()
                .filter(|e| e.name == name && e.len == dst.len())
                .ok_or_else(|| {
                    RefinerError::Manifest(format!("missing or mismatched tensor {name}"))
                })?;
            let src = payload
                .get(entry.offset..entry.offset + entry.len)
                .ok_or_else(|| RefinerError::Manifest(format!("tensor {name} out of range")))?;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s as f64;
            }
        }
    }
    Ok((params, manifest.config))
}

// -------------------------------------------------------------------------
// Ablation harness.

/// One (mode, seed) training run of the ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub seed: u64,
    pub mean_input_oks: f64,
    pub mean_refined_oks: f64,
}

/// Budget shared by every ablation arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationParams {
    pub train_samples: usize,
    pub eval_samples: usize,
    pub seeds: Vec<u64>,
    pub base_config: RefinerConfig,
    pub toy_config: ToyConfig,
}

impl Default for AblationParams {
    fn default() -> Self {
        // Calibrated so the C2F arm is past its crossover with C2C on a
        // single desk core: ~1050 Adam steps at three-quarter width.
        AblationParams {
            train_samples: 350,
            eval_samples: 100,
            seeds: vec![0, 1, 2],
            base_config: RefinerConfig {
                widths: (24, 48),
                batch_size: 2,
                epochs: 6,
                metrics_subset: 0,
                ..RefinerConfig::default()
            },
            toy_config: ToyConfig::default(),
        }
    }
}

/// Train every mode under identical budgets and seeds; each seed gets its
/// own dataset, shared across modes.
pub fn run_ablation(
    modes: &[LossMode],
    ablation: &AblationParams,
    spec: &SkeletonSpec,
    table: &ErrorDistributionTable,
) -> Result<Vec<AblationRow>, RefinerError> {
    let mut rows = Vec::new();
    for &seed in &ablation.seeds {
        let total = ablation.train_samples + ablation.eval_samples;
        let samples =
            generate_toy_dataset_with(total, spec, table, seed, &ablation.toy_config)?;
        let (train_set, eval_set) = samples.split_at(ablation.train_samples);
        for &mode in modes {
            let config = RefinerConfig {
                loss_mode: mode,
                seed,
                ..ablation.base_config.clone()
            };
            let outcome = train(train_set, spec, &config)?;
            let (mean_input_oks, mean_refined_oks) =
                mean_oks(&outcome.params, eval_set, spec, &config, false)?;
            rows.push(AblationRow {
                mode: mode.name().into(),
                seed,
                mean_input_oks,
                mean_refined_oks,
            });
        }
    }
    Ok(rows)
}

/// Flat CSV with one row per (mode, seed) plus per-mode means.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("mode,seed,mean_input_oks,mean_refined_oks\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.mode, r.seed, r.mean_input_oks, r.mean_refined_oks
        ));
    }
    let mut modes: Vec<&str> = Vec::new();
    for r in rows {
        if !modes.contains(&r.mode.as_str()) {
            modes.push(&r.mode);
        }
    }
    for mode in modes {
        let subset: Vec<&AblationRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let n = subset.len() as f64;
        let input: f64 = subset.iter().map(|r| r.mean_input_oks).sum::<f64>() / n;
        let refined: f64 = subset.iter().map(|r| r.mean_refined_oks).sum::<f64>() / n;
        out.push_str(&format!("{mode},mean,{input:.6},{refined:.6}\n"));
    }
    out
}

/// Mean refined OKS per mode.
pub fn ablation_mode_means(rows: &[AblationRow]) -> Vec<(String, f64)> {
    let mut modes: Vec<String> = Vec::new();
    for r in rows {
        if !modes.contains(&r.mode) {
            modes.push(r.mode.clone());
        }
    }
    modes
        .into_iter()
        .map(|mode| {
            let subset: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.mean_refined_oks)
                .collect();
            let mean = subset.iter().sum::<f64>() / subset.len() as f64;
            (mode, mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::entropy;

    #[test]
    fn config_validation() {
        assert!(RefinerConfig::default().validate().is_ok());
        let mut c = RefinerConfig::default();
        c.heatmap_size = (16, 12);
        assert!(c.validate().is_err());
        let mut c = RefinerConfig::default();
        c.input_size = (63, 48);
        assert!(c.validate().is_err());
        let mut c = RefinerConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_mode_names_round_trip() {
        for mode in LossMode::ALL {
            assert_eq!(mode.name().parse::<LossMode>().unwrap(), mode);
        }
        assert!("c2f".parse::<LossMode>().is_err());
    }

    #[test]
    fn learning_rate_schedule_decays_at_two_thirds_and_five_sixths() {
        let config = RefinerConfig {
            epochs: 12,
            ..RefinerConfig::default()
        };
        assert_eq!(config.learning_rate_at(0), config.learning_rate);
        assert_eq!(config.learning_rate_at(7), config.learning_rate);
        assert!((config.learning_rate_at(8) - config.learning_rate * 0.1).abs() < 1e-15);
        assert!((config.learning_rate_at(10) - config.learning_rate * 0.01).abs() < 1e-15);
    }

    #[test]
    fn heatmap_coordinate_mapping_round_trips_and_centers() {
        let config = RefinerConfig::default();
        for (x, y) in [(0.0, 0.0), (31.5, 23.5), (63.0, 47.0), (12.3, 40.7)] {
            let (hx, hy) = config.crop_to_heatmap(x, y);
            let (bx, by) = config.heatmap_to_crop(hx, hy);
            assert!((bx - x).abs() < 1e-12 && (by - y).abs() < 1e-12);
        }
        // The heatmap grid center back-projects to the crop center.
        let (cx, cy) = config.heatmap_to_crop(31.0 / 2.0, 23.0 / 2.0);
        assert!((cx - 31.5).abs() < 1e-12 && (cy - 23.5).abs() < 1e-12);
    }

    #[test]
    fn mse_loss_zero_on_identical_prediction() {
        let target = gaussian_encode(Coord::new(3.0, 2.0), 1.5, 8, 6).unwrap();
        let logits = vec![target.clone()];
        let (loss, grads) = mse_loss(&logits, &[Some(target)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn c2f_loss_at_perfect_prediction_reduces_to_entropy() {
        // Softmax(logits) == target and C == C* leaves only the CE floor.
        let (target, _) = crate::codec::target_encode(Coord::new(2.5, 1.5), 8, 6).unwrap();
        let logits: Vec<Heatmap> = vec![Heatmap::from_data(
            8,
            6,
            target
                .data()
                .iter()
                .map(|&t| if t > 0.0 { t.ln() } else { -745.0 })
                .collect(),
        )
        .unwrap()];
        let prepared = PreparedSample {
            crop_image: Tensor::zeros(3, 12, 16),
            input_pose: Pose::empty(1),
            targets: vec![Some(JointTarget {
                heatmap: target.clone(),
                coord: Coord::new(2.5, 1.5),
            })],
            c2c_targets: vec![None],
        };
        let (loss, grads) = sample_loss(LossMode::C2F, &logits, &prepared)
            .unwrap()
            .unwrap();
        assert!((loss - entropy(&target)).abs() < 1e-9);
        // The coordinate term's gradient vanishes at C == C*; the remaining
        // CE gradient is softmax - target == 0.
        assert!(grads[0].data().iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn single_term_modes_weight_the_loss() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let logits: Vec<Heatmap> = vec![Heatmap::from_data(
            8,
            6,
            (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()];
        let prepared = PreparedSample {
            crop_image: Tensor::zeros(3, 12, 16),
            input_pose: Pose::empty(1),
            targets: vec![Some(JointTarget::at(Coord::new(2.0, 3.0), 8, 6).unwrap())],
            c2c_targets: vec![None],
        };
        let (full, _) = sample_loss(LossMode::C2F, &logits, &prepared).unwrap().unwrap();
        let (lh, _) = sample_loss(LossMode::C2FHeatmapOnly, &logits, &prepared)
            .unwrap()
            .unwrap();
        let (lc, _) = sample_loss(LossMode::C2FCoordOnly, &logits, &prepared)
            .unwrap()
            .unwrap();
        assert!((full - (lh + lc)).abs() < 1e-12);
        assert!(lh > 0.0 && lc > 0.0);
    }
}
