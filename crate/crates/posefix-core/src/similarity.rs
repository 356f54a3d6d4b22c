//! Keypoint similarity (KS), object keypoint similarity (OKS), and the
//! inverse radius `d_j^k` that the synthesis bands and the error taxonomy are
//! built from.
//!
//! KS follows the standard Gaussian form `exp(-d^2 / (2 s^2 kappa^2))` where
//! `s` is the instance scale and `kappa` the per-joint falloff constant from
//! [`SkeletonSpec`](crate::model::SkeletonSpec). `ks_radius` inverts it:
//! the distance at which KS hits a requested level `k`.

use crate::model::{InstanceContext, Pose, SkeletonSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("scale and kappa must be positive, got s={scale}, kappa={kappa}")]
    BadScaleOrKappa { scale: f64, kappa: f64 },
    #[error("KS level must lie in (0, 1], got {0}")]
    BadLevel(f64),
    #[error("pose has {got} keypoints, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// A target similarity level `k` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct KsLevel(f64);

impl KsLevel {
    pub fn new(k: f64) -> Result<Self, SimilarityError> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(SimilarityError::BadLevel(k));
        }
        Ok(KsLevel(k))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for KsLevel {
    type Error = SimilarityError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        KsLevel::new(v)
    }
}

impl From<KsLevel> for f64 {
    fn from(l: KsLevel) -> f64 {
        l.0
    }
}

/// Keypoint similarity of a displacement `distance` at instance scale
/// `scale` for a joint with falloff `kappa`.
pub fn ks(distance: f64, scale: f64, kappa: f64) -> Result<f64, SimilarityError> {
    if !distance.is_finite() || !scale.is_finite() || !kappa.is_finite() {
        return Err(SimilarityError::NonFinite(format!(
            "d={distance}, s={scale}, kappa={kappa}"
        )));
    }
    if distance < 0.0 {
        return Err(SimilarityError::NegativeDistance(distance));
    }
    if scale <= 0.0 || kappa <= 0.0 {
        return Err(SimilarityError::BadScaleOrKappa { scale, kappa });
    }
    let z = distance / (scale * kappa);
    Ok((-0.5 * z * z).exp())
}

/// The distance `d_j^k` at which KS equals `level`: `s * kappa * sqrt(-2 ln k)`.
///
/// Inverse of [`ks`]: `ks(ks_radius(k)) == k` to machine precision.
pub fn ks_radius(level: KsLevel, scale: f64, kappa: f64) -> Result<f64, SimilarityError> {
    if !scale.is_finite() || !kappa.is_finite() {
        return Err(SimilarityError::NonFinite(format!(
            "s={scale}, kappa={kappa}"
        )));
    }
    if scale <= 0.0 || kappa <= 0.0 {
        return Err(SimilarityError::BadScaleOrKappa { scale, kappa });
    }
    Ok(scale * kappa * (-2.0 * level.get().ln()).sqrt())
}

/// OKS of an estimated pose against a ground-truth pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oks {
    /// Mean KS over the truth's labeled joints; 0.0 when degenerate.
    pub value: f64,
    /// True when the truth has no labeled joints at all, so the mean is the
    /// empty-set convention rather than a real similarity.
    pub degenerate: bool,
}

/// Mean keypoint similarity over the joints labeled in `truth`, using the
/// instance scale from `ctx`.
///
/// Estimate-side visibility is ignored: an unlabeled estimate keypoint is
/// scored at its stored coordinates like any other. Only the truth's
/// labeling decides which joints enter the mean.
pub fn oks(
    estimate: &Pose,
    truth: &Pose,
    ctx: &InstanceContext,
    spec: &SkeletonSpec,
) -> Result<Oks, SimilarityError> {
    let k = spec.num_joints();
    if estimate.keypoints.len() != k {
        return Err(SimilarityError::LengthMismatch {
            got: estimate.keypoints.len(),
            expected: k,
        });
    }
    if truth.keypoints.len() != k {
        return Err(SimilarityError::LengthMismatch {
            got: truth.keypoints.len(),
            expected: k,
        });
    }
    let mut sum = 0.0;
    let mut labeled = 0usize;
    for j in 0..k {
        let Some((tx, ty)) = truth.keypoints[j].position() else {
            continue;
        };
        let e = &estimate.keypoints[j];
        let d = ((e.x - tx).powi(2) + (e.y - ty).powi(2)).sqrt();
        sum += ks(d, ctx.scale, spec.kappa(j))?;
        labeled += 1;
    }
    if labeled == 0 {
        return Ok(Oks {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Oks {
        value: sum / labeled as f64,
        degenerate: false,
    })
}
