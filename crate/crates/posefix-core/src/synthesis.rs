//! Synthetic pose-error generation: corrupt ground-truth poses joint by
//! joint according to a per-joint error-type distribution, producing the
//! diverse-but-realistic input poses the refiner trains on.
//!
//! Per-type procedure, with all radii `d^k` taken from
//! [`TaxonomyThresholds`] at the target joint's kappa and the instance
//! scale:
//!
//! * good    — offset from the joint, angle U[0, 2pi), length U[0, d^good);
//!             must stay nearest to the joint itself.
//! * jitter  — same, length U[d^good, d^jitter).
//! * inversion — the jitter offset applied to the flip partner; must stay
//!             nearest to the flip partner.
//! * swap    — the jitter offset applied to a uniformly chosen labeled
//!             neighbor anchor; the nearest anchor must belong to a neighbor.
//! * miss    — offset length U[d^jitter, d^miss) from a uniformly chosen
//!             labeled anchor; must end at least d^jitter from every anchor.
//!
//! Constraints are enforced by rejection sampling with the same
//! nearest-anchor rule the classifier uses, which is what makes the
//! synthesis -> classification round trip exact.

use crate::model::{
    anchor_set, nearest_anchor, Anchor, ErrorType, InstanceContext, Keypoint, PersonRole, Pose,
    SkeletonSpec,
};
use crate::taxonomy::{TaxonomyError, TaxonomyThresholds};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("error type {error_type} is unavailable for joint {joint}: {reason}; resample the type")]
    TypeUnavailable {
        joint: usize,
        error_type: ErrorType,
        reason: String,
    },
    #[error("no table row matches joint {joint} and the table has no fallback")]
    MissingRow { joint: usize },
    #[error("distribution table: {0}")]
    BadTable(String),
    #[error("failed to read table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("target has no labeled joints")]
    NoLabeledJoints,
}

/// Probability vector over the five error types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorProbs {
    pub good: f64,
    pub jitter: f64,
    pub inversion: f64,
    pub swap: f64,
    pub miss: f64,
}

impl ErrorProbs {
    pub fn as_array(&self) -> [f64; 5] {
        [self.good, self.jitter, self.inversion, self.swap, self.miss]
    }

    fn validate(&self) -> Result<(), SynthesisError> {
        let arr = self.as_array();
        if arr.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SynthesisError::BadTable(format!(
                "probabilities must be finite and non-negative: {arr:?}"
            )));
        }
        let sum: f64 = arr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthesisError::BadTable(format!(
                "probabilities must sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }
}

/// One conditional row: omitted keys match anything.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub joints: Option<Vec<usize>>,
    pub visible_bin: Option<usize>,
    pub overlap: Option<bool>,
    pub probs: ErrorProbs,
}

impl TableRow {
    fn matches(&self, joint: usize, visible_bin: Option<usize>, overlap: bool) -> bool {
        if let Some(js) = &self.joints {
            if !js.contains(&joint) {
                return false;
            }
        }
        if let Some(b) = self.visible_bin {
            if visible_bin != Some(b) {
                return false;
            }
        }
        if let Some(o) = self.overlap {
            if o != overlap {
                return false;
            }
        }
        true
    }
}

/// Per-joint categorical error-type distribution conditioned on joint,
/// visible-keypoint-count bin, and person overlap, with a mandatory
/// fallback row.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDistributionTable {
    rows: Vec<TableRow>,
    fallback: ErrorProbs,
}

#[derive(Deserialize)]
struct TableFileRow {
    joints: Option<Vec<String>>,
    visible_bin: Option<usize>,
    overlap: Option<bool>,
    good: f64,
    jitter: f64,
    inversion: f64,
    swap: f64,
    miss: f64,
}

#[derive(Deserialize)]
struct TableFile {
    fallback: TableFileProbs,
    #[serde(default)]
    rows: Vec<TableFileRow>,
}

#[derive(Deserialize)]
struct TableFileProbs {
    good: f64,
    jitter: f64,
    inversion: f64,
    swap: f64,
    miss: f64,
}

impl ErrorDistributionTable {
    pub fn new(rows: Vec<TableRow>, fallback: ErrorProbs) -> Result<Self, SynthesisError> {
        fallback.validate()?;
        for row in &rows {
            row.probs.validate()?;
        }
        Ok(ErrorDistributionTable { rows, fallback })
    }

    /// Single-row table applying `probs` to everything.
    pub fn uniform(probs: ErrorProbs) -> Result<Self, SynthesisError> {
        Self::new(Vec::new(), probs)
    }

    /// Parse the TOML table format, resolving joint names against `spec`.
    pub fn from_toml_str(s: &str, spec: &SkeletonSpec) -> Result<Self, SynthesisError> {
        let file: TableFile = toml::from_str(s)?;
        let mut rows = Vec::with_capacity(file.rows.len());
        for row in file.rows {
            let joints = match row.joints {
                None => None,
                Some(names) => {
                    let mut idx = Vec::with_capacity(names.len());
                    for name in names {
                        idx.push(spec.joint_index(&name).ok_or_else(|| {
                            SynthesisError::BadTable(format!("unknown joint name {name:?}"))
                        })?);
                    }
                    Some(idx)
                }
            };
            rows.push(TableRow {
                joints,
                visible_bin: row.visible_bin,
                overlap: row.overlap,
                probs: ErrorProbs {
                    good: row.good,
                    jitter: row.jitter,
                    inversion: row.inversion,
                    swap: row.swap,
                    miss: row.miss,
                },
            });
        }
        let f = file.fallback;
        Self::new(
            rows,
            ErrorProbs {
                good: f.good,
                jitter: f.jitter,
                inversion: f.inversion,
                swap: f.swap,
                miss: f.miss,
            },
        )
    }

    pub fn load(
        path: impl AsRef<std::path::Path>,
        spec: &SkeletonSpec,
    ) -> Result<Self, SynthesisError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthesisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, spec)
    }

    /// Invented defaults for the COCO-17 skeleton.
    pub fn default_coco17(spec: &SkeletonSpec) -> Self {
        Self::from_toml_str(include_str!("../../../configs/default_table.toml"), spec)
            .expect("embedded default table is valid")
    }

    /// Jitter-heavy defaults for the toy trainer.
    pub fn toy_jitter_heavy(spec: &SkeletonSpec) -> Self {
        Self::from_toml_str(include_str!("../../../configs/toy_table.toml"), spec)
            .expect("embedded toy table is valid")
    }

    /// First matching row, or the fallback.
    pub fn probs_for(&self, joint: usize, visible_bin: Option<usize>, overlap: bool) -> ErrorProbs {
        self.rows
            .iter()
            .find(|r| r.matches(joint, visible_bin, overlap))
            .map(|r| r.probs)
            .unwrap_or(self.fallback)
    }
}

/// Knobs of the synthesis procedure the distributions leave open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub thresholds: TaxonomyThresholds,
    pub max_rejection_attempts: u32,
    pub rng_seed: u64,
    /// Half-open `[lo, hi)` ranges over the labeled-keypoint count.
    pub visible_count_bins: Vec<(u32, u32)>,
    /// Neighbor bbox IoU at or above this flags the instance as overlapping.
    pub overlap_iou_threshold: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            thresholds: TaxonomyThresholds::default(),
            max_rejection_attempts: 100,
            rng_seed: 0,
            visible_count_bins: vec![(1, 6), (6, 11), (11, 18)],
            overlap_iou_threshold: 0.1,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.max_rejection_attempts == 0 {
            return Err(SynthesisError::BadTable(
                "max_rejection_attempts must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_iou_threshold) {
            return Err(SynthesisError::BadTable(format!(
                "overlap_iou_threshold must lie in [0, 1], got {}",
                self.overlap_iou_threshold
            )));
        }
        self.thresholds.validate()?;
        Ok(())
    }

    pub fn visible_bin(&self, visible_count: usize) -> Option<usize> {
        let c = visible_count as u32;
        self.visible_count_bins
            .iter()
            .position(|&(lo, hi)| c >= lo && c < hi)
    }
}

/// Draw an error type from the raw table row for this condition.
pub fn sample_error_type(
    table: &ErrorDistributionTable,
    joint: usize,
    visible_count: usize,
    overlap: bool,
    config: &SynthesisConfig,
    rng: &mut impl Rng,
) -> ErrorType {
    let probs = table.probs_for(joint, config.visible_bin(visible_count), overlap);
    draw_categorical(&probs.as_array(), rng)
}

fn draw_categorical(probs: &[f64; 5], rng: &mut impl Rng) -> ErrorType {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for ty in ErrorType::ALL {
        u -= probs[ty.index()];
        if u < 0.0 {
            return ty;
        }
    }
    // Numerical spill of the cumulative sum lands on the last type.
    ErrorType::Miss
}

/// Result of synthesizing one keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesizedKeypoint {
    pub keypoint: Keypoint,
    /// Rejection-sampling attempts consumed (1 = first draw accepted).
    pub attempts: u32,
    /// True when the constraint never held within the attempt budget and
    /// the ground-truth keypoint was emitted instead (tagged good).
    pub fell_back: bool,
}

struct Bands {
    d_good: f64,
    d_jitter: f64,
    d_miss: f64,
}

fn bands(
    ctx: &InstanceContext,
    spec: &SkeletonSpec,
    joint: usize,
    thresholds: &TaxonomyThresholds,
) -> Result<Bands, SynthesisError> {
    let (d_good, d_jitter, d_miss) = thresholds.radii(ctx.scale, spec.kappa(joint))?;
    Ok(Bands {
        d_good,
        d_jitter,
        d_miss,
    })
}

fn offset_from(anchor: (f64, f64), lo: f64, hi: f64, rng: &mut impl Rng) -> (f64, f64) {
    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
    let len = lo + rng.gen::<f64>() * (hi - lo);
    (anchor.0 + len * angle.cos(), anchor.1 + len * angle.sin())
}

fn neighbor_anchors(anchors: &[Anchor]) -> Vec<&Anchor> {
    anchors
        .iter()
        .filter(|a| matches!(a.person, PersonRole::Neighbor(_)))
        .collect()
}

/// Whether `error_type` can be synthesized for this joint at all.
pub fn type_available(
    error_type: ErrorType,
    ctx: &InstanceContext,
    spec: &SkeletonSpec,
    joint: usize,
) -> bool {
    match error_type {
        ErrorType::Good | ErrorType::Jitter | ErrorType::Miss => {
            ctx.target.keypoints[joint].is_labeled()
        }
        ErrorType::Inversion => spec
            .flip_partner(joint)
            .map(|p| ctx.target.keypoints[p].is_labeled())
            .unwrap_or(false),
        ErrorType::Swap => {
            let anchors = anchor_set(ctx, spec, joint);
            !neighbor_anchors(&anchors).is_empty()
        }
    }
}

/// Synthesize a single keypoint of the requested error type.
///
/// Errors with [`SynthesisError::TypeUnavailable`] when the type's
/// precondition does not hold (no flip partner for inversion, no labeled
/// neighbor anchor for swap, unlabeled target joint); the caller should
/// resample the error type in that case.
pub fn synthesize_keypoint(
    error_type: ErrorType,
    ctx: &InstanceContext,
    spec: &SkeletonSpec,
    joint: usize,
    config: &SynthesisConfig,
    rng: &mut impl Rng,
) -> Result<SynthesizedKeypoint, SynthesisError> {
    let unavailable = |reason: &str| SynthesisError::TypeUnavailable {
        joint,
        error_type,
        reason: reason.into(),
    };
    let gt = ctx.target.keypoints[joint]
        .position()
        .ok_or_else(|| unavailable("target keypoint is not labeled"))?;
    let b = bands(ctx, spec, joint, &config.thresholds)?;
    let anchors = anchor_set(ctx, spec, joint);

    let flip_anchor = anchors
        .iter()
        .find(|a| a.person == PersonRole::Target && a.joint == crate::model::JointRole::Flipped)
        .map(|a| (a.x, a.y));
    let neighbors: Vec<(f64, f64)> = neighbor_anchors(&anchors)
        .iter()
        .map(|a| (a.x, a.y))
        .collect();

    match error_type {
        ErrorType::Inversion if flip_anchor.is_none() => {
            return Err(unavailable("no labeled flip partner"));
        }
        ErrorType::Swap if neighbors.is_empty() => {
            return Err(unavailable("no labeled neighbor anchors"));
        }
        _ => {}
    }

    for attempt in 1..=config.max_rejection_attempts {
        let (x, y) = match error_type {
            ErrorType::Good => offset_from(gt, 0.0, b.d_good, rng),
            ErrorType::Jitter => offset_from(gt, b.d_good, b.d_jitter, rng),
            ErrorType::Inversion => {
                offset_from(flip_anchor.expect("checked above"), b.d_good, b.d_jitter, rng)
            }
            ErrorType::Swap => {
                let center = neighbors[rng.gen_range(0..neighbors.len())];
                offset_from(center, b.d_good, b.d_jitter, rng)
            }
            ErrorType::Miss => {
                let all: Vec<(f64, f64)> = anchors.iter().map(|a| (a.x, a.y)).collect();
                let center = all[rng.gen_range(0..all.len())];
                offset_from(center, b.d_jitter, b.d_miss, rng)
            }
        };
        let ok = match error_type {
            ErrorType::Good | ErrorType::Jitter => {
                let n = nearest_anchor(&anchors, x, y).expect("anchor set is non-empty");
                anchors[n].is_target_same()
            }
            ErrorType::Inversion => {
                let n = nearest_anchor(&anchors, x, y).expect("anchor set is non-empty");
                anchors[n].person == PersonRole::Target
                    && anchors[n].joint == crate::model::JointRole::Flipped
            }
            ErrorType::Swap => {
                let n = nearest_anchor(&anchors, x, y).expect("anchor set is non-empty");
                matches!(anchors[n].person, PersonRole::Neighbor(_))
            }
            ErrorType::Miss => anchors.iter().all(|a| a.distance_to(x, y) >= b.d_jitter),
        };
        if ok {
            return Ok(SynthesizedKeypoint {
                keypoint: Keypoint::labeled(x, y),
                attempts: attempt,
                fell_back: false,
            });
        }
    }

    // Degenerate geometry: emit the ground truth tagged good.
    Ok(SynthesizedKeypoint {
        keypoint: Keypoint::labeled(gt.0, gt.1),
        attempts: config.max_rejection_attempts,
        fell_back: true,
    })
}

/// A corrupted pose plus the per-joint record of what was synthesized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedPose {
    pub pose: Pose,
    /// Per joint: `None` for unlabeled joints, otherwise the type actually
    /// achieved (fallbacks record `Good`).
    pub error_types: Vec<Option<ErrorType>>,
    /// Joints that hit the rejection-budget fallback.
    pub fallback_count: u32,
}

/// Tight bbox over labeled keypoints as (x0, y0, x1, y1), if any.
fn keypoint_bbox(pose: &Pose) -> Option<(f64, f64, f64, f64)> {
    let mut it = pose.keypoints.iter().filter_map(|k| k.position());
    let (x0, y0) = it.next()?;
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
    for (x, y) in it {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    Some((min_x, min_y, max_x, max_y))
}

fn bbox_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let ix = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let iy = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = ix * iy;
    let area_a = (a.2 - a.0) * (a.3 - a.1);
    let area_b = (b.2 - b.0) * (b.3 - b.1);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Whether any neighbor's keypoint bbox overlaps the target's at or above
/// the configured IoU threshold.
pub fn instance_overlaps(ctx: &InstanceContext, config: &SynthesisConfig) -> bool {
    let Some(target_box) = keypoint_bbox(&ctx.target) else {
        return false;
    };
    ctx.neighbors.iter().any(|n| {
        keypoint_bbox(n)
            .map(|nb| bbox_iou(target_box, nb) >= config.overlap_iou_threshold)
            .unwrap_or(false)
    })
}

/// Corrupt a whole pose: draw an error type per labeled joint (with
/// unavailable types' probability mass redistributed proportionally over
/// the available ones) and synthesize it. Unlabeled joints stay unlabeled.
pub fn synthesize_pose(
    ctx: &InstanceContext,
    spec: &SkeletonSpec,
    table: &ErrorDistributionTable,
    config: &SynthesisConfig,
    rng: &mut impl Rng,
) -> Result<SynthesizedPose, SynthesisError> {
    let k = spec.num_joints();
    ctx.target
        .check_len(spec)
        .map_err(|_| SynthesisError::BadTable("pose/skeleton length mismatch".into()))?;
    let visible_count = ctx.target.num_labeled();
    if visible_count == 0 {
        return Err(SynthesisError::NoLabeledJoints);
    }
    let overlap = instance_overlaps(ctx, config);
    let visible_bin = config.visible_bin(visible_count);

    let mut keypoints = Vec::with_capacity(k);
    let mut error_types = vec![None; k];
    let mut fallback_count = 0;
    for joint in 0..k {
        if !ctx.target.keypoints[joint].is_labeled() {
            keypoints.push(Keypoint::not_labeled());
            continue;
        }
        let mut probs = table.probs_for(joint, visible_bin, overlap).as_array();
        for ty in ErrorType::ALL {
            if !type_available(ty, ctx, spec, joint) {
                probs[ty.index()] = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            // All mass sat on unavailable types; fall back to uniform over
            // whatever is available (good always is for a labeled joint).
            for ty in ErrorType::ALL {
                probs[ty.index()] = if type_available(ty, ctx, spec, joint) {
                    1.0
                } else {
                    0.0
                };
            }
        }
        let ty = draw_categorical(&probs, rng);
        let synth = synthesize_keypoint(ty, ctx, spec, joint, config, rng)?;
        error_types[joint] = Some(if synth.fell_back { ErrorType::Good } else { ty });
        if synth.fell_back {
            fallback_count += 1;
        }
        keypoints.push(synth.keypoint);
    }
    Ok(SynthesizedPose {
        pose: Pose::new(keypoints),
        error_types,
        fallback_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstanceContext, Keypoint, Pose, SkeletonSpec};
    use crate::taxonomy::classify_keypoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec3() -> SkeletonSpec {
        SkeletonSpec::new(
            vec!["left".into(), "right".into(), "mid".into()],
            vec![(0, 1)],
            vec![0.1, 0.1, 0.1],
        )
        .unwrap()
    }

    fn solo_ctx() -> (SkeletonSpec, InstanceContext) {
        let spec = spec3();
        let target = Pose::new(vec![
            Keypoint::labeled(50.0, 50.0),
            Keypoint::labeled(150.0, 50.0),
            Keypoint::labeled(100.0, 120.0),
        ]);
        (spec, InstanceContext::solo(target, 100.0, (400, 400)).unwrap())
    }

    fn multi_ctx() -> (SkeletonSpec, InstanceContext) {
        let spec = spec3();
        let target = Pose::new(vec![
            Keypoint::labeled(50.0, 50.0),
            Keypoint::labeled(150.0, 50.0),
            Keypoint::labeled(100.0, 120.0),
        ]);
        let neighbor = Pose::new(vec![
            Keypoint::labeled(70.0, 100.0),
            Keypoint::labeled(170.0, 100.0),
            Keypoint::labeled(120.0, 170.0),
        ]);
        (
            spec,
            InstanceContext::new(target, vec![neighbor], 100.0, (400, 400)).unwrap(),
        )
    }

    fn probs(good: f64, jitter: f64, inversion: f64, swap: f64, miss: f64) -> ErrorProbs {
        ErrorProbs {
            good,
            jitter,
            inversion,
            swap,
            miss,
        }
    }

    #[test]
    fn table_validates_sum_and_sign() {
        assert!(ErrorDistributionTable::uniform(probs(1.0, 0.0, 0.0, 0.0, 0.0)).is_ok());
        assert!(ErrorDistributionTable::uniform(probs(0.9, 0.0, 0.0, 0.0, 0.0)).is_err());
        assert!(ErrorDistributionTable::uniform(probs(1.2, -0.2, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn table_file_requires_fallback_and_known_joints() {
        let spec = spec3();
        assert!(ErrorDistributionTable::from_toml_str("[[rows]]\ngood=1.0\njitter=0.0\ninversion=0.0\nswap=0.0\nmiss=0.0\n", &spec).is_err());
        let bad_joint = r#"
[fallback]
good = 1.0
jitter = 0.0
inversion = 0.0
swap = 0.0
miss = 0.0

[[rows]]
joints = ["no_such_joint"]
good = 1.0
jitter = 0.0
inversion = 0.0
swap = 0.0
miss = 0.0
"#;
        assert!(ErrorDistributionTable::from_toml_str(bad_joint, &spec).is_err());
    }

    #[test]
    fn embedded_tables_parse() {
        let coco = SkeletonSpec::coco17();
        ErrorDistributionTable::default_coco17(&coco);
        let toy = SkeletonSpec::toy_stick_figure();
        ErrorDistributionTable::toy_jitter_heavy(&toy);
    }

    #[test]
    fn degenerate_rows_always_draw_that_type() {
        let (_, _ctx) = solo_ctx();
        let cfg = SynthesisConfig::default();
        let table = ErrorDistributionTable::uniform(probs(1.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(
                sample_error_type(&table, 0, 3, false, &cfg, &mut rng),
                ErrorType::Good
            );
        }
        let table = ErrorDistributionTable::uniform(probs(0.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        for _ in 0..100 {
            assert_eq!(
                sample_error_type(&table, 0, 3, false, &cfg, &mut rng),
                ErrorType::Miss
            );
        }
    }

    #[test]
    fn empirical_rate_matches_row() {
        // 100k draws from {good: 0.5, jitter: 0.5}; the good rate lands
        // within a generous binomial bound of 0.5 (sigma ~ 0.0016).
        let table = ErrorDistributionTable::uniform(probs(0.5, 0.5, 0.0, 0.0, 0.0)).unwrap();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let good = (0..n)
            .filter(|_| {
                sample_error_type(&table, 0, 3, false, &cfg, &mut rng) == ErrorType::Good
            })
            .count();
        let rate = good as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn good_lands_inside_open_disc() {
        // s=100, kappa=0.1 => d^0.85 = 5.7012.
        let (spec, ctx) = solo_ctx();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let s = synthesize_keypoint(ErrorType::Good, &ctx, &spec, 2, &cfg, &mut rng).unwrap();
            assert!(!s.fell_back);
            let d = s.keypoint.distance_to(100.0, 120.0);
            assert!(d < 5.7012, "distance {d}");
        }
    }

    #[test]
    fn miss_lands_in_band_single_person_unpaired() {
        // Joint 2 has no flip partner and there are no neighbors, so the
        // only anchor is the joint itself: distance in [d^0.5, d^0.1).
        let (spec, ctx) = solo_ctx();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let s = synthesize_keypoint(ErrorType::Miss, &ctx, &spec, 2, &cfg, &mut rng).unwrap();
            assert!(!s.fell_back);
            let d = s.keypoint.distance_to(100.0, 120.0);
            assert!((11.7741..21.4598).contains(&d), "distance {d}");
        }
    }

    #[test]
    fn coincident_flip_partner_forces_fallback() {
        // Flip partner exactly on top of the joint: "strictly nearest to the
        // partner" can never hold under the target-first tie-break.
        let spec = spec3();
        let target = Pose::new(vec![
            Keypoint::labeled(50.0, 50.0),
            Keypoint::labeled(50.0, 50.0),
            Keypoint::labeled(100.0, 120.0),
        ]);
        let ctx = InstanceContext::solo(target, 100.0, (400, 400)).unwrap();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = synthesize_keypoint(ErrorType::Inversion, &ctx, &spec, 0, &cfg, &mut rng).unwrap();
        assert!(s.fell_back);
        assert_eq!(s.attempts, cfg.max_rejection_attempts);
        assert_eq!(s.keypoint, Keypoint::labeled(50.0, 50.0));
    }

    #[test]
    fn unavailable_types_error_out() {
        let (spec, ctx) = solo_ctx();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Joint 2 has no flip partner.
        assert!(matches!(
            synthesize_keypoint(ErrorType::Inversion, &ctx, &spec, 2, &cfg, &mut rng),
            Err(SynthesisError::TypeUnavailable { .. })
        ));
        // No neighbors at all.
        assert!(matches!(
            synthesize_keypoint(ErrorType::Swap, &ctx, &spec, 0, &cfg, &mut rng),
            Err(SynthesisError::TypeUnavailable { .. })
        ));
    }

    #[test]
    fn swap_probability_redistributed_without_neighbors() {
        let (spec, ctx) = solo_ctx();
        let cfg = SynthesisConfig::default();
        let table = ErrorDistributionTable::uniform(probs(0.0, 0.0, 0.0, 1.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = synthesize_pose(&ctx, &spec, &table, &cfg, &mut rng).unwrap();
        assert!(out
            .error_types
            .iter()
            .flatten()
            .all(|&t| t != ErrorType::Swap));
    }

    #[test]
    fn near_degenerate_band_reproduces_ground_truth() {
        // k_good -> 1 collapses the good band to a sliver around zero.
        let (spec, ctx) = solo_ctx();
        let mut cfg = SynthesisConfig::default();
        cfg.thresholds = TaxonomyThresholds::new(1.0 - 1e-15, 0.5, 0.1).unwrap();
        let table = ErrorDistributionTable::uniform(probs(1.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let out = synthesize_pose(&ctx, &spec, &table, &cfg, &mut rng).unwrap();
        for (got, want) in out.pose.keypoints.iter().zip(&ctx.target.keypoints) {
            assert!(got.distance_to(want.x, want.y) < 1e-5);
        }
    }

    #[test]
    fn synthesize_pose_is_deterministic() {
        let (spec, ctx) = multi_ctx();
        let cfg = SynthesisConfig::default();
        let table = ErrorDistributionTable::uniform(probs(0.3, 0.3, 0.15, 0.15, 0.1)).unwrap();
        let a = synthesize_pose(&ctx, &spec, &table, &cfg, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap();
        let b = synthesize_pose(&ctx, &spec, &table, &cfg, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unlabeled_joints_stay_unlabeled() {
        let (spec, mut ctx) = multi_ctx();
        ctx.target.keypoints[2] = Keypoint::not_labeled();
        let cfg = SynthesisConfig::default();
        let table = ErrorDistributionTable::uniform(probs(1.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        let out =
            synthesize_pose(&ctx, &spec, &table, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(!out.pose.keypoints[2].is_labeled());
        assert_eq!(out.error_types[2], None);
    }

    #[test]
    fn overlap_flag_follows_iou_threshold() {
        let (_, ctx) = multi_ctx();
        let mut cfg = SynthesisConfig::default();
        cfg.overlap_iou_threshold = 0.01;
        assert!(instance_overlaps(&ctx, &cfg));
        cfg.overlap_iou_threshold = 0.9;
        assert!(!instance_overlaps(&ctx, &cfg));
        let (_, solo) = solo_ctx();
        cfg.overlap_iou_threshold = 0.0;
        assert!(!instance_overlaps(&solo, &cfg));
    }

    #[test]
    fn accepted_samples_round_trip_through_classifier() {
        let (spec, ctx) = multi_ctx();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for ty in ErrorType::ALL {
            let mut accepted = 0;
            while accepted < 1000 {
                let joint = rng.gen_range(0..spec.num_joints());
                if !type_available(ty, &ctx, &spec, joint) {
                    continue;
                }
                let s = synthesize_keypoint(ty, &ctx, &spec, joint, &cfg, &mut rng).unwrap();
                if s.fell_back {
                    continue;
                }
                accepted += 1;
                let got =
                    classify_keypoint(&s.keypoint, &ctx, &spec, joint, &cfg.thresholds).unwrap();
                assert_eq!(got, ty, "joint {joint} sample {:?}", s.keypoint);
            }
        }
    }

    #[test]
    fn good_offsets_are_isotropic() {
        let (spec, ctx) = solo_ctx();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let s = synthesize_keypoint(ErrorType::Good, &ctx, &spec, 2, &cfg, &mut rng).unwrap();
            sx += s.keypoint.x - 100.0;
            sy += s.keypoint.y - 120.0;
        }
        // Var of one coordinate of a uniform-angle, uniform-radius draw on
        // radius R is R^2/6; the mean's sigma is R/sqrt(6 n).
        let r = 5.7012;
        let bound = 3.0 * r / (6.0 * n as f64).sqrt();
        assert!((sx / n as f64).abs() < bound);
        assert!((sy / n as f64).abs() < bound);
    }

    #[test]
    fn attempts_are_mostly_one_in_clean_geometry() {
        let (spec, ctx) = multi_ctx();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut attempts = Vec::new();
        for _ in 0..1000 {
            let s = synthesize_keypoint(ErrorType::Jitter, &ctx, &spec, 0, &cfg, &mut rng).unwrap();
            attempts.push(s.attempts);
        }
        attempts.sort_unstable();
        assert_eq!(attempts[attempts.len() / 2], 1);
    }
}
