//! Data plumbing around the refiner: instance bounding boxes, the fixed
//! aspect-ratio crop, geometric augmentation, test-time flip merging, and
//! COCO-format keypoint file IO.
//!
//! Crop coordinates follow the integer-pixel-center convention: the crop
//! covers the continuous area `[-0.5, w-0.5] x [-0.5, h-0.5]`, so the bbox
//! center lands on `((w-1)/2, (h-1)/2)` and the horizontal mirror is
//! `x' = w-1-x`. One mirror convention is shared by cropping, pose flipping,
//! and heatmap flip merging.

mod coco;

pub use coco::{
    load_coco_results, save_coco_results, DtInstance, GtDataset, GtInstance, ImageInfo,
};

use crate::codec::Heatmap;
use crate::model::{Keypoint, Pose, SkeletonSpec};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bbox must have positive extent, got {width}x{height}")]
    DegenerateBBox { width: f64, height: f64 },
    #[error("pose has no labeled keypoints")]
    NoLabeledKeypoints,
    #[error("affine transform is singular (det = {0})")]
    Singular(f64),
    #[error("augmentation scale must be positive, got {0}")]
    BadScale(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("annotation {annotation_id}: {message}")]
    Schema { annotation_id: u64, message: String },
    #[error("results file: {0}")]
    BadResults(String),
}

/// Axis-aligned box in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self, PipelineError> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(PipelineError::DegenerateBBox { width, height });
        }
        Ok(BBox {
            x,
            y,
            width,
            height,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let iy = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Tight box over the pose's labeled keypoints, expanded on each side by
/// `margin_fraction` of the tight width/height.
pub fn bbox_from_pose(pose: &Pose, margin_fraction: f64) -> Result<BBox, PipelineError> {
    let mut it = pose.keypoints.iter().filter_map(|k| k.position());
    let Some((x0, y0)) = it.next() else {
        return Err(PipelineError::NoLabeledKeypoints);
    };
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
    for (x, y) in it {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let w = max_x - min_x;
    let h = max_y - min_y;
    BBox::new(
        min_x - margin_fraction * w,
        min_y - margin_fraction * h,
        w * (1.0 + 2.0 * margin_fraction),
        h * (1.0 + 2.0 * margin_fraction),
    )
}

/// Grow exactly one dimension about the center so `height/width` equals
/// `target_h_over_w`; never shrinks either dimension. Idempotent.
pub fn extend_aspect(b: &BBox, target_h_over_w: f64) -> BBox {
    let (cx, cy) = b.center();
    let (mut w, mut h) = (b.width, b.height);
    if h / w < target_h_over_w {
        h = w * target_h_over_w;
    } else {
        w = h / target_h_over_w;
    }
    BBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        width: w,
        height: h,
    }
}

/// 2x3 affine transform mapping source-image coordinates to crop
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    /// Rows of `[a, b, t]` for `x' = a x + b y + t`.
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Pure horizontal mirror on a crop of the given width: `x' = w-1-x`.
    pub fn mirror_x(crop_width: usize) -> Self {
        AffineTransform {
            m: [[-1.0, 0.0, (crop_width - 1) as f64], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Result<AffineTransform, PipelineError> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(PipelineError::Singular(det));
        }
        let inv = 1.0 / det;
        let a = self.m[1][1] * inv;
        let b = -self.m[0][1] * inv;
        let c = -self.m[1][0] * inv;
        let d = self.m[0][0] * inv;
        let tx = -(a * self.m[0][2] + b * self.m[1][2]);
        let ty = -(c * self.m[0][2] + d * self.m[1][2]);
        Ok(AffineTransform {
            m: [[a, b, tx], [c, d, ty]],
        })
    }

    /// `self` applied after `inner`.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        let a = &self.m;
        let b = &inner.m;
        AffineTransform {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                    a[0][0] * b[0][2] + a[0][1] * b[1][2] + a[0][2],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                    a[1][0] * b[0][2] + a[1][1] * b[1][2] + a[1][2],
                ],
            ],
        }
    }
}

/// Forward transform from source-image coordinates into a `out_w x out_h`
/// crop of `b`, composing the scale augmentation (region grows by
/// `scale_aug` about the bbox center), rotation about the bbox center,
/// resize, and optionally the horizontal mirror.
///
/// The caller is expected to pass an aspect-matched box (see
/// [`extend_aspect`]); the resize factor is isotropic, derived from the
/// width.
pub fn crop_transform(
    b: &BBox,
    out_w: usize,
    out_h: usize,
    scale_aug: f64,
    rot_aug_deg: f64,
    flip: bool,
) -> Result<AffineTransform, PipelineError> {
    if !(b.width > 0.0 && b.height > 0.0) {
        return Err(PipelineError::DegenerateBBox {
            width: b.width,
            height: b.height,
        });
    }
    if !(scale_aug > 0.0) || !scale_aug.is_finite() {
        return Err(PipelineError::BadScale(scale_aug));
    }
    let (cx, cy) = b.center();
    let k = out_w as f64 / (b.width * scale_aug);
    let theta = rot_aug_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (a00, a01) = (k * cos, -k * sin);
    let (a10, a11) = (k * sin, k * cos);
    let ox = (out_w as f64 - 1.0) / 2.0;
    let oy = (out_h as f64 - 1.0) / 2.0;
    let base = AffineTransform {
        m: [
            [a00, a01, ox - a00 * cx - a01 * cy],
            [a10, a11, oy - a10 * cx - a11 * cy],
        ],
    };
    Ok(if flip {
        AffineTransform::mirror_x(out_w).compose(&base)
    } else {
        base
    })
}

/// A pose mapped through a crop transform, with per-joint out-of-crop flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedPose {
    pub pose: Pose,
    /// True where a labeled keypoint landed outside the crop area (it keeps
    /// its coordinates but should be excluded from losses).
    pub out_of_bounds: Vec<bool>,
}

/// Transform every labeled keypoint and, when `flipped`, swap left/right
/// joint slots so channel semantics stay anatomical.
///
/// `crop_size` enables the out-of-bounds flags against the crop area
/// `[-0.5, w-0.5] x [-0.5, h-0.5]`.
pub fn apply_to_pose(
    t: &AffineTransform,
    pose: &Pose,
    spec: &SkeletonSpec,
    flipped: bool,
    crop_size: Option<(usize, usize)>,
) -> MappedPose {
    let mut moved: Vec<Keypoint> = pose
        .keypoints
        .iter()
        .map(|kp| {
            if kp.is_labeled() {
                let (x, y) = t.apply(kp.x, kp.y);
                Keypoint {
                    x,
                    y,
                    visibility: kp.visibility,
                }
            } else {
                *kp
            }
        })
        .collect();
    if flipped {
        for &(a, b) in spec.flip_pairs() {
            moved.swap(a, b);
        }
    }
    let out_of_bounds = moved
        .iter()
        .map(|kp| match crop_size {
            Some((w, h)) if kp.is_labeled() => {
                kp.x < -0.5 || kp.y < -0.5 || kp.x >= w as f64 - 0.5 || kp.y >= h as f64 - 0.5
            }
            _ => false,
        })
        .collect();
    MappedPose {
        pose: Pose {
            keypoints: moved,
            score: pose.score,
        },
        out_of_bounds,
    }
}

/// Merge logits predicted on the original crop with logits predicted on the
/// mirrored crop: un-mirror the flipped maps (x-reverse plus flip-pair
/// channel swap) and average elementwise, pre-softmax.
pub fn flip_merge(
    heatmaps: &[Heatmap],
    flipped_heatmaps: &[Heatmap],
    spec: &SkeletonSpec,
) -> Result<Vec<Heatmap>, PipelineError> {
    if heatmaps.len() != flipped_heatmaps.len() || heatmaps.len() != spec.num_joints() {
        return Err(PipelineError::ShapeMismatch(format!(
            "{} vs {} joint maps for a {}-joint skeleton",
            heatmaps.len(),
            flipped_heatmaps.len(),
            spec.num_joints()
        )));
    }
    for (a, b) in heatmaps.iter().zip(flipped_heatmaps) {
        if !a.same_shape(b) {
            return Err(PipelineError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
    }
    let mut out = Vec::with_capacity(heatmaps.len());
    for j in 0..heatmaps.len() {
        let source = spec.flip_partner(j).unwrap_or(j);
        let unflipped = flipped_heatmaps[source].mirrored_x();
        let mut merged = heatmaps[j].clone();
        for (m, u) in merged.data_mut().iter_mut().zip(unflipped.data()) {
            *m = 0.5 * (*m + u);
        }
        out.push(merged);
    }
    Ok(out)
}

/// Geometric augmentation ranges and application probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Scale factor range (uniform), applied with `scale_prob`.
    pub scale_range: (f64, f64),
    pub scale_prob: f64,
    /// Rotation range in degrees (uniform), applied with `rotation_prob`.
    pub rotation_range_deg: (f64, f64),
    pub rotation_prob: f64,
    pub flip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            scale_range: (0.7, 1.3),
            scale_prob: 1.0,
            rotation_range_deg: (-40.0, 40.0),
            rotation_prob: 0.6,
            flip_prob: 0.5,
        }
    }
}

/// One sampled augmentation: arguments for [`crop_transform`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            scale: 1.0,
            rotation_deg: 0.0,
            flip: false,
        }
    }
}

/// Draw one augmentation from the configured ranges.
pub fn sample_augmentation(params: &AugmentParams, rng: &mut impl rand::Rng) -> Augmentation {
    let scale = if rng.gen_bool(params.scale_prob) {
        rng.gen_range(params.scale_range.0..=params.scale_range.1)
    } else {
        1.0
    };
    let rotation_deg = if rng.gen_bool(params.rotation_prob) {
        rng.gen_range(params.rotation_range_deg.0..=params.rotation_range_deg.1)
    } else {
        0.0
    };
    let flip = rng.gen_bool(params.flip_prob);
    Augmentation {
        scale,
        rotation_deg,
        flip,
    }
}

/// Resample `src` into a `out_w x out_h` crop through the forward transform
/// (bilinear, zero outside the source).
pub fn warp_image(
    src: &Tensor,
    forward: &AffineTransform,
    out_w: usize,
    out_h: usize,
) -> Result<Tensor, PipelineError> {
    let inv = forward.inverse()?;
    let mut out = Tensor::zeros(src.channels, out_h, out_w);
    for c in 0..src.channels {
        for y in 0..out_h {
            for x in 0..out_w {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                out.set(c, y, x, src.sample(c, sx, sy) as f32);
            }
        }
    }
    Ok(out)
}
