//! Canonical domain types shared by every other module: skeleton description,
//! keypoints, poses, per-instance context, the five-way error taxonomy labels,
//! and the anchor sets that the synthesis and classification rules reason over.
//!
//! All types are immutable values after construction and safe to share across
//! threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("failed to read skeleton config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse skeleton config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("pose has {got} keypoints, skeleton expects {expected}")]
    PoseLength { got: usize, expected: usize },
    #[error("instance scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Annotation state of a single keypoint.
///
/// Occluded keypoints are treated identically to visible ones everywhere in
/// this crate (synthesis, losses, similarity); only [`Visibility::NotLabeled`]
/// is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    NotLabeled,
    Occluded,
    Visible,
}

impl Visibility {
    pub fn is_labeled(self) -> bool {
        !matches!(self, Visibility::NotLabeled)
    }

    /// Map the COCO `v` convention (0 = not labeled, 1 = occluded, 2 = visible).
    pub fn from_coco(v: u8) -> Option<Self> {
        match v {
            0 => Some(Visibility::NotLabeled),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::Visible),
            _ => None,
        }
    }

    pub fn to_coco(self) -> u8 {
        match self {
            Visibility::NotLabeled => 0,
            Visibility::Occluded => 1,
            Visibility::Visible => 2,
        }
    }
}

/// One 2D keypoint of a person instance, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub fn labeled(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            visibility: Visibility::Visible,
        }
    }

    pub fn not_labeled() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            visibility: Visibility::NotLabeled,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.visibility.is_labeled()
    }

    /// Coordinates when labeled, `None` otherwise.
    pub fn position(&self) -> Option<(f64, f64)> {
        self.is_labeled().then_some((self.x, self.y))
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

/// A full pose for one person instance: `K` keypoints plus an optional
/// detector confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub keypoints: Vec<Keypoint>,
    pub score: Option<f64>,
}

impl Pose {
    pub fn new(keypoints: Vec<Keypoint>) -> Self {
        Pose {
            keypoints,
            score: None,
        }
    }

    pub fn with_score(keypoints: Vec<Keypoint>, score: f64) -> Self {
        Pose {
            keypoints,
            score: Some(score),
        }
    }

    /// All-unlabeled pose of length `k`.
    pub fn empty(k: usize) -> Self {
        Pose::new(vec![Keypoint::not_labeled(); k])
    }

    pub fn num_labeled(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_labeled()).count()
    }

    pub fn check_len(&self, spec: &SkeletonSpec) -> Result<(), ModelError> {
        if self.keypoints.len() != spec.num_joints() {
            return Err(ModelError::PoseLength {
                got: self.keypoints.len(),
                expected: spec.num_joints(),
            });
        }
        Ok(())
    }
}

/// Skeleton description: joint names, left/right flip pairing, and the
/// per-joint KS falloff constants.
///
/// Flip pairs are stored as an involution over joint indices; a joint without
/// a partner (nose, pelvis, ...) simply has no entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletonSpec {
    joint_names: Vec<String>,
    flip_pairs: Vec<(usize, usize)>,
    kappa: Vec<f64>,
    /// flip_map[j] = partner of j, or j itself when unpaired.
    #[serde(skip)]
    flip_map: Vec<usize>,
}

#[derive(Deserialize)]
struct SkeletonFile {
    joint_names: Vec<String>,
    flip_pairs: Vec<(usize, usize)>,
    kappa: Vec<f64>,
}

impl SkeletonSpec {
    pub fn new(
        joint_names: Vec<String>,
        flip_pairs: Vec<(usize, usize)>,
        kappa: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let k = joint_names.len();
        if k == 0 {
            return Err(ModelError::InvalidSkeleton("no joints".into()));
        }
        if kappa.len() != k {
            return Err(ModelError::InvalidSkeleton(format!(
                "kappa has {} entries for {} joints",
                kappa.len(),
                k
            )));
        }
        if let Some(bad) = kappa.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(ModelError::InvalidSkeleton(format!(
                "kappa entries must be positive and finite, got {bad}"
            )));
        }
        let mut flip_map: Vec<usize> = (0..k).collect();
        let mut seen = vec![false; k];
        for &(a, b) in &flip_pairs {
            if a >= k || b >= k {
                return Err(ModelError::InvalidSkeleton(format!(
                    "flip pair ({a}, {b}) out of range for {k} joints"
                )));
            }
            if a == b {
                return Err(ModelError::InvalidSkeleton(format!(
                    "flip pair ({a}, {b}) pairs a joint with itself"
                )));
            }
            if seen[a] || seen[b] {
                return Err(ModelError::InvalidSkeleton(format!(
                    "joint {} appears in more than one flip pair",
                    if seen[a] { a } else { b }
                )));
            }
            seen[a] = true;
            seen[b] = true;
            flip_map[a] = b;
            flip_map[b] = a;
        }
        Ok(SkeletonSpec {
            joint_names,
            flip_pairs,
            kappa,
            flip_map,
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let file: SkeletonFile = toml::from_str(s)?;
        SkeletonSpec::new(file.joint_names, file.flip_pairs, file.kappa)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The standard 17-joint COCO person skeleton with evaluator-derived kappa.
    pub fn coco17() -> Self {
        Self::from_toml_str(include_str!("../../../configs/coco17.toml"))
            .expect("embedded coco17 skeleton is valid")
    }

    /// The 11-joint stick-figure skeleton used by the toy dataset generator.
    pub fn toy_stick_figure() -> Self {
        Self::from_toml_str(include_str!("../../../configs/toy_skeleton.toml"))
            .expect("embedded toy skeleton is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn flip_pairs(&self) -> &[(usize, usize)] {
        &self.flip_pairs
    }

    /// Left/right partner of `j`, or `None` when `j` is unpaired.
    pub fn flip_partner(&self, j: usize) -> Option<usize> {
        let p = self.flip_map[j];
        (p != j).then_some(p)
    }

    pub fn kappa(&self, j: usize) -> f64 {
        self.kappa[j]
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappa
    }
}

/// A target person instance plus everything error synthesis and
/// classification need to reason about it: the neighboring people in the
/// same image and the instance scale `s` (square root of the annotated
/// area, in pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceContext {
    pub target: Pose,
    pub neighbors: Vec<Pose>,
    pub scale: f64,
    /// Source image size (width, height) in pixels.
    pub image_size: (u32, u32),
}

impl InstanceContext {
    pub fn new(
        target: Pose,
        neighbors: Vec<Pose>,
        scale: f64,
        image_size: (u32, u32),
    ) -> Result<Self, ModelError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(ModelError::NonPositiveScale(scale));
        }
        for n in &neighbors {
            if n.keypoints.len() != target.keypoints.len() {
                return Err(ModelError::PoseLength {
                    got: n.keypoints.len(),
                    expected: target.keypoints.len(),
                });
            }
        }
        Ok(InstanceContext {
            target,
            neighbors,
            scale,
            image_size,
        })
    }

    /// Single-person context.
    pub fn solo(target: Pose, scale: f64, image_size: (u32, u32)) -> Result<Self, ModelError> {
        Self::new(target, Vec::new(), scale, image_size)
    }
}

/// Status of one estimated keypoint relative to ground truth: near-correct,
/// small offset, left/right confusion within the person, cross-person
/// confusion, or large displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorType {
    Good,
    Jitter,
    Inversion,
    Swap,
    Miss,
}

impl ErrorType {
    pub const ALL: [ErrorType; 5] = [
        ErrorType::Good,
        ErrorType::Jitter,
        ErrorType::Inversion,
        ErrorType::Swap,
        ErrorType::Miss,
    ];

    pub fn index(self) -> usize {
        match self {
            ErrorType::Good => 0,
            ErrorType::Jitter => 1,
            ErrorType::Inversion => 2,
            ErrorType::Swap => 3,
            ErrorType::Miss => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorType::Good => "good",
            ErrorType::Jitter => "jitter",
            ErrorType::Inversion => "inversion",
            ErrorType::Swap => "swap",
            ErrorType::Miss => "miss",
        }
    }
}

impl std::fmt::Display for ErrorType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which person an anchor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PersonRole {
    Target,
    /// Index into `InstanceContext::neighbors`.
    Neighbor(usize),
}

/// Whether an anchor is the joint itself or its left/right partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointRole {
    Same,
    Flipped,
}

/// One labeled anchor coordinate, tagged with where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub person: PersonRole,
    pub joint: JointRole,
    pub x: f64,
    pub y: f64,
}

impl Anchor {
    pub fn is_target_same(&self) -> bool {
        self.person == PersonRole::Target && self.joint == JointRole::Same
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

/// Every labeled anchor for joint `j` of the target person: the joint itself,
/// its flip partner, and both of those on each neighbor.
///
/// Anchors missing a flip partner or labeled visibility are omitted. The
/// returned order is the tie-break order used everywhere: target-same,
/// target-flipped, then per neighbor (in input order) same before flipped.
pub fn anchor_set(ctx: &InstanceContext, spec: &SkeletonSpec, joint: usize) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    let partner = spec.flip_partner(joint);
    let mut push = |person: PersonRole, pose: &Pose| {
        if let Some((x, y)) = pose.keypoints[joint].position() {
            anchors.push(Anchor {
                person,
                joint: JointRole::Same,
                x,
                y,
            });
        }
        if let Some(p) = partner {
            if let Some((x, y)) = pose.keypoints[p].position() {
                anchors.push(Anchor {
                    person,
                    joint: JointRole::Flipped,
                    x,
                    y,
                });
            }
        }
    };
    push(PersonRole::Target, &ctx.target);
    for (i, neighbor) in ctx.neighbors.iter().enumerate() {
        push(PersonRole::Neighbor(i), neighbor);
    }
    anchors
}

/// Index of the anchor nearest to `(x, y)`, with exact ties resolved by the
/// anchor ordering of [`anchor_set`] (target-same wins first).
pub fn nearest_anchor(anchors: &[Anchor], x: f64, y: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in anchors.iter().enumerate() {
        let d = a.distance_to(x, y);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i)
}
