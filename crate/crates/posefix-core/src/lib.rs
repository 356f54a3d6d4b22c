//! Model-agnostic human pose refinement toolkit.
//!
//! The crate turns a ground-truth pose file plus an error-statistics table
//! into realistic corrupted poses, classifies estimated keypoints into the
//! good/jitter/inversion/swap/miss taxonomy, encodes poses as coarse
//! Gaussian heatmaps and decodes fine softmax heatmaps through a
//! differentiable soft-argmax, trains a small coarse-to-fine refiner on a
//! procedurally rendered toy dataset, and scores results with OKS-thresholded
//! average precision.
//!
//! Modules, roughly in pipeline order:
//!
//! * [`model`] — skeletons, keypoints, poses, instance contexts, anchors.
//! * [`similarity`] — KS/OKS and the inverse radius `d^k`.
//! * [`taxonomy`] — keypoint error classification and frequency reports.
//! * [`synthesis`] — distribution-driven pose corruption.
//! * [`codec`] — heatmap encode/decode and the cross-entropy + L1 loss.
//! * [`pipeline`] — COCO ingestion, cropping, augmentation, flip merging.
//! * [`refiner`] — the trainable toy coarse-to-fine network.
//! * [`evaluator`] — OKS-thresholded AP/AR.
//! * [`dump`] — the raw float32 tensor-dump interchange format.

pub mod codec;
pub mod dump;
pub mod evaluator;
pub mod model;
pub mod pipeline;
pub mod refiner;
pub mod similarity;
pub mod synthesis;
pub mod taxonomy;
pub mod tensor;

pub use model::{
    anchor_set, nearest_anchor, Anchor, ErrorType, InstanceContext, JointRole, Keypoint,
    ModelError, PersonRole, Pose, SkeletonSpec, Visibility,
};
pub use similarity::{ks, ks_radius, oks, KsLevel, Oks, SimilarityError};
pub use synthesis::{
    sample_error_type, synthesize_keypoint, synthesize_pose, ErrorDistributionTable, ErrorProbs,
    SynthesisConfig, SynthesisError,
};
pub use taxonomy::{classify_keypoint, diagnose, ErrorFrequencyReport, TaxonomyThresholds};
