//! Five-way classification of estimated keypoints against ground truth
//! (good / jitter / inversion / swap / miss) and aggregation into
//! error-frequency reports.
//!
//! The classifier mirrors the synthesis bands exactly, so a keypoint
//! produced by [`crate::synthesis`] with target type `T` always classifies
//! back to `T` under the same thresholds.

use crate::model::{
    anchor_set, nearest_anchor, ErrorType, InstanceContext, Keypoint, PersonRole, SkeletonSpec,
};
use crate::similarity::{ks_radius, KsLevel, SimilarityError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("ground-truth keypoint for joint {0} is not labeled; skip it instead")]
    UnlabeledTruth(usize),
    #[error("thresholds must satisfy 1 > k_good > k_jitter > k_miss > 0, got {0:?}")]
    BadThresholds((f64, f64, f64)),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// KS levels bounding the error bands: `[0, d^k_good)` is good,
/// `[d^k_good, d^k_jitter)` is jitter, and `[d^k_jitter, d^k_miss)` is the
/// miss sampling band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxonomyThresholds {
    pub k_good: f64,
    pub k_jitter: f64,
    pub k_miss: f64,
}

impl Default for TaxonomyThresholds {
    fn default() -> Self {
        TaxonomyThresholds {
            k_good: 0.85,
            k_jitter: 0.5,
            k_miss: 0.1,
        }
    }
}

impl TaxonomyThresholds {
    pub fn new(k_good: f64, k_jitter: f64, k_miss: f64) -> Result<Self, TaxonomyError> {
        if !(1.0 > k_good && k_good > k_jitter && k_jitter > k_miss && k_miss > 0.0) {
            return Err(TaxonomyError::BadThresholds((k_good, k_jitter, k_miss)));
        }
        Ok(TaxonomyThresholds {
            k_good,
            k_jitter,
            k_miss,
        })
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        Self::new(self.k_good, self.k_jitter, self.k_miss).map(|_| ())
    }

    /// The three band radii `(d^good, d^jitter, d^miss)` for one joint.
    pub fn radii(
        &self,
        scale: f64,
        kappa: f64,
    ) -> Result<(f64, f64, f64), TaxonomyError> {
        let r = |k: f64| -> Result<f64, TaxonomyError> {
            Ok(ks_radius(KsLevel::new(k)?, scale, kappa)?)
        };
        Ok((r(self.k_good)?, r(self.k_jitter)?, r(self.k_miss)?))
    }
}

/// Classify an estimated keypoint for joint `joint` of the target person.
///
/// Rules fire in order against the nearest anchor `a*` (ties resolved
/// toward the target joint, then its flip partner, then neighbors in input
/// order):
///
/// 1. `a*` is the joint itself and the distance is under `d^k_good` -> good
/// 2. `a*` is the joint itself and the distance is under `d^k_jitter` -> jitter
/// 3. `a*` is the flip partner within `d^k_jitter` -> inversion
/// 4. `a*` belongs to a neighbor within `d^k_jitter` -> swap
/// 5. otherwise -> miss
///
/// All radii use the target joint's kappa and the instance scale, so the
/// result is invariant to a common rescaling of coordinates and scale.
pub fn classify_keypoint(
    estimate: &Keypoint,
    ctx: &InstanceContext,
    spec: &SkeletonSpec,
    joint: usize,
    thresholds: &TaxonomyThresholds,
) -> Result<ErrorType, TaxonomyError> {
    if !ctx.target.keypoints[joint].is_labeled() {
        return Err(TaxonomyError::UnlabeledTruth(joint));
    }
    let (d_good, d_jitter, _) = thresholds.radii(ctx.scale, spec.kappa(joint))?;
    let anchors = anchor_set(ctx, spec, joint);
    let idx = nearest_anchor(&anchors, estimate.x, estimate.y)
        .expect("target joint is labeled, so the anchor set is non-empty");
    let a = &anchors[idx];
    let dist = a.distance_to(estimate.x, estimate.y);
    Ok(if a.is_target_same() && dist < d_good {
        ErrorType::Good
    } else if a.is_target_same() && dist < d_jitter {
        ErrorType::Jitter
    } else if a.person == PersonRole::Target && dist < d_jitter {
        // a* is the target's flip partner.
        ErrorType::Inversion
    } else if matches!(a.person, PersonRole::Neighbor(_)) && dist < d_jitter {
        ErrorType::Swap
    } else {
        ErrorType::Miss
    })
}

/// Counts per error type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub good: u64,
    pub jitter: u64,
    pub inversion: u64,
    pub swap: u64,
    pub miss: u64,
}

impl TypeCounts {
    pub fn bump(&mut self, ty: ErrorType) {
        match ty {
            ErrorType::Good => self.good += 1,
            ErrorType::Jitter => self.jitter += 1,
            ErrorType::Inversion => self.inversion += 1,
            ErrorType::Swap => self.swap += 1,
            ErrorType::Miss => self.miss += 1,
        }
    }

    pub fn get(&self, ty: ErrorType) -> u64 {
        match ty {
            ErrorType::Good => self.good,
            ErrorType::Jitter => self.jitter,
            ErrorType::Inversion => self.inversion,
            ErrorType::Swap => self.swap,
            ErrorType::Miss => self.miss,
        }
    }

    pub fn total(&self) -> u64 {
        self.good + self.jitter + self.inversion + self.swap + self.miss
    }

    fn add(&mut self, other: &TypeCounts) {
        self.good += other.good;
        self.jitter += other.jitter;
        self.inversion += other.inversion;
        self.swap += other.swap;
        self.miss += other.miss;
    }
}

/// Per-joint and overall error-type histogram over a set of matched
/// estimate/ground-truth instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrequencyReport {
    /// One row per joint, in skeleton order.
    pub per_joint: Vec<JointRow>,
    pub overall: TypeCounts,
    /// Number of classified keypoints (equals `overall.total()`).
    pub total: u64,
    /// Estimates that had no matching ground-truth instance.
    pub skipped_estimates: u64,
    /// Ground-truth instances that had no estimate.
    pub unmatched_truths: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub joint: String,
    #[serde(flatten)]
    pub counts: TypeCounts,
}

impl ErrorFrequencyReport {
    fn empty(spec: &SkeletonSpec) -> Self {
        ErrorFrequencyReport {
            per_joint: spec
                .joint_names()
                .iter()
                .map(|n| JointRow {
                    joint: n.clone(),
                    counts: TypeCounts::default(),
                })
                .collect(),
            overall: TypeCounts::default(),
            total: 0,
            skipped_estimates: 0,
            unmatched_truths: 0,
        }
    }

    /// Flat CSV with one row per joint plus an `overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("joint,good,jitter,inversion,swap,miss,total\n");
        let mut row = |name: &str, c: &TypeCounts| {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                name,
                c.good,
                c.jitter,
                c.inversion,
                c.swap,
                c.miss,
                c.total()
            ));
        };
        for j in &self.per_joint {
            row(&j.joint, &j.counts);
        }
        row("overall", &self.overall);
        out
    }
}

/// Classify every labeled joint of every estimate matched to its
/// ground-truth context by instance id.
///
/// Estimates whose id has no ground truth are counted in
/// `skipped_estimates`, not treated as errors; ground truths never
/// estimated are counted in `unmatched_truths`.
pub fn diagnose(
    estimates: &[(u64, crate::model::Pose)],
    truths: &BTreeMap<u64, InstanceContext>,
    spec: &SkeletonSpec,
    thresholds: &TaxonomyThresholds,
) -> Result<ErrorFrequencyReport, TaxonomyError> {
    let mut report = ErrorFrequencyReport::empty(spec);
    let mut seen = std::collections::BTreeSet::new();
    for (id, est) in estimates {
        let Some(ctx) = truths.get(id) else {
            report.skipped_estimates += 1;
            continue;
        };
        seen.insert(*id);
        for joint in 0..spec.num_joints() {
            if !ctx.target.keypoints[joint].is_labeled() {
                continue;
            }
            let ty = classify_keypoint(&est.keypoints[joint], ctx, spec, joint, thresholds)?;
            report.per_joint[joint].counts.bump(ty);
        }
    }
    report.unmatched_truths = truths.keys().filter(|id| !seen.contains(id)).count() as u64;
    for row in &report.per_joint {
        report.overall.add(&row.counts);
    }
    report.total = report.overall.total();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InstanceContext, Keypoint, Pose, SkeletonSpec};
    use proptest::prelude::*;

    fn spec2() -> SkeletonSpec {
        // Two paired joints plus an unpaired one, kappa 0.1 everywhere.
        SkeletonSpec::new(
            vec!["left".into(), "right".into(), "mid".into()],
            vec![(0, 1)],
            vec![0.1, 0.1, 0.1],
        )
        .unwrap()
    }

    fn solo_ctx() -> (SkeletonSpec, InstanceContext) {
        let spec = spec2();
        // s=100, kappa=0.1: d^0.85 = 5.7012, d^0.5 = 11.7741, d^0.1 = 21.4597.
        let target = Pose::new(vec![
            Keypoint::labeled(50.0, 50.0),
            Keypoint::labeled(150.0, 50.0),
            Keypoint::labeled(100.0, 120.0),
        ]);
        let ctx = InstanceContext::solo(target, 100.0, (400, 400)).unwrap();
        (spec, ctx)
    }

    #[test]
    fn classify_bands_match_closed_form_radii() {
        let (spec, ctx) = solo_ctx();
        let thr = TaxonomyThresholds::default();
        let classify = |x: f64, y: f64| {
            classify_keypoint(&Keypoint::labeled(x, y), &ctx, &spec, 0, &thr).unwrap()
        };
        // 3.0 < 5.7012
        assert_eq!(classify(53.0, 50.0), ErrorType::Good);
        // 5.7012 <= 8.0 < 11.7741
        assert_eq!(classify(58.0, 50.0), ErrorType::Jitter);
        // 30 px from everything.
        assert_eq!(classify(50.0, 80.0), ErrorType::Miss);
    }

    #[test]
    fn classify_inversion_and_swap() {
        let spec = spec2();
        let target = Pose::new(vec![
            Keypoint::labeled(50.0, 50.0),
            Keypoint::labeled(150.0, 50.0),
            Keypoint::labeled(100.0, 120.0),
        ]);
        let neighbor = Pose::new(vec![
            Keypoint::labeled(50.0, 250.0),
            Keypoint::labeled(150.0, 250.0),
            Keypoint::labeled(100.0, 320.0),
        ]);
        let ctx = InstanceContext::new(target, vec![neighbor], 100.0, (400, 400)).unwrap();
        let thr = TaxonomyThresholds::default();
        // Near the flip partner.
        let got = classify_keypoint(&Keypoint::labeled(152.0, 50.0), &ctx, &spec, 0, &thr);
        assert_eq!(got.unwrap(), ErrorType::Inversion);
        // Near the neighbor's same joint.
        let got = classify_keypoint(&Keypoint::labeled(51.0, 251.0), &ctx, &spec, 0, &thr);
        assert_eq!(got.unwrap(), ErrorType::Swap);
        // Near the neighbor but outside d^0.5.
        let got = classify_keypoint(&Keypoint::labeled(50.0, 235.0), &ctx, &spec, 0, &thr);
        assert_eq!(got.unwrap(), ErrorType::Miss);
    }

    #[test]
    fn classify_requires_labeled_truth() {
        let (spec, mut ctx) = solo_ctx();
        ctx.target.keypoints[0] = Keypoint::not_labeled();
        let got = classify_keypoint(&Keypoint::labeled(0.0, 0.0), &ctx, &spec, 0, &TaxonomyThresholds::default());
        assert!(matches!(got, Err(TaxonomyError::UnlabeledTruth(0))));
    }

    #[test]
    fn thresholds_validate_ordering() {
        assert!(TaxonomyThresholds::new(0.85, 0.5, 0.1).is_ok());
        assert!(TaxonomyThresholds::new(0.5, 0.85, 0.1).is_err());
        assert!(TaxonomyThresholds::new(1.0, 0.5, 0.1).is_err());
        assert!(TaxonomyThresholds::new(0.85, 0.5, 0.0).is_err());
    }

    #[test]
    fn diagnose_counts_and_skips() {
        let (spec, ctx) = solo_ctx();
        let mut truths = BTreeMap::new();
        truths.insert(7u64, ctx.clone());
        truths.insert(8u64, ctx.clone());
        // Estimate identical to truth -> all good; id 99 unmatched -> skipped.
        let estimates = vec![(7u64, ctx.target.clone()), (99u64, ctx.target.clone())];
        let report = diagnose(&estimates, &truths, &spec, &TaxonomyThresholds::default()).unwrap();
        assert_eq!(report.overall.good, 3);
        assert_eq!(report.total, 3);
        assert_eq!(report.skipped_estimates, 1);
        assert_eq!(report.unmatched_truths, 1);
        // Per-joint counts sum to the number of classified keypoints.
        let sum: u64 = report.per_joint.iter().map(|r| r.counts.total()).sum();
        assert_eq!(sum, report.total);
    }

    #[test]
    fn diagnose_empty_input_is_all_zero() {
        let (spec, _) = solo_ctx();
        let report = diagnose(&[], &BTreeMap::new(), &spec, &TaxonomyThresholds::default()).unwrap();
        assert_eq!(report.total, 0);
        assert_eq!(report.overall, TypeCounts::default());
    }

    #[test]
    fn diagnose_single_jitter_among_goods() {
        let spec = SkeletonSpec::coco17();
        let target = Pose::new(
            (0..17)
                .map(|j| Keypoint::labeled(20.0 * (j % 5) as f64 + 30.0, 25.0 * (j / 5) as f64 + 30.0))
                .collect(),
        );
        let ctx = InstanceContext::solo(target.clone(), 100.0, (400, 400)).unwrap();
        let mut est = target.clone();
        // Push one joint into its jitter band: kappa(j=0) = 0.052 at s=100
        // puts d^0.85 at 2.965 and d^0.5 at 6.12.
        est.keypoints[0].x += 4.0;
        let mut truths = BTreeMap::new();
        truths.insert(1u64, ctx);
        let report = diagnose(&[(1u64, est)], &truths, &spec, &TaxonomyThresholds::default()).unwrap();
        assert_eq!(report.overall.good, 16);
        assert_eq!(report.overall.jitter, 1);
        assert_eq!(report.total, 17);
    }

    #[test]
    fn csv_shape() {
        let (spec, _) = solo_ctx();
        let report = diagnose(&[], &BTreeMap::new(), &spec, &TaxonomyThresholds::default()).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1); // header + joints + overall
        assert!(lines[0].starts_with("joint,good"));
        assert!(lines.last().unwrap().starts_with("overall,"));
    }

    proptest! {
        /// Scaling all coordinates and the instance scale by a common factor
        /// leaves the class unchanged.
        #[test]
        fn classify_is_scale_consistent(
            ex in -30.0f64..230.0,
            ey in -30.0f64..230.0,
            lambda in 0.05f64..20.0,
        ) {
            let (spec, ctx) = solo_ctx();
            let thr = TaxonomyThresholds::default();
            let base = classify_keypoint(&Keypoint::labeled(ex, ey), &ctx, &spec, 0, &thr).unwrap();
            let scale_pose = |p: &Pose| Pose::new(
                p.keypoints.iter()
                    .map(|k| Keypoint::labeled(k.x * lambda, k.y * lambda))
                    .collect());
            let scaled = InstanceContext::new(
                scale_pose(&ctx.target),
                ctx.neighbors.iter().map(scale_pose).collect(),
                ctx.scale * lambda,
                ctx.image_size,
            ).unwrap();
            let got = classify_keypoint(
                &Keypoint::labeled(ex * lambda, ey * lambda), &scaled, &spec, 0, &thr).unwrap();
            prop_assert_eq!(base, got);
        }

        /// Exactly one class fires for any estimate position.
        #[test]
        fn classes_partition_the_plane(ex in -500.0f64..500.0, ey in -500.0f64..500.0) {
            let (spec, ctx) = solo_ctx();
            let thr = TaxonomyThresholds::default();
            // classify_keypoint returning Ok at all is the partition property;
            // spot-check determinism as well.
            let a = classify_keypoint(&Keypoint::labeled(ex, ey), &ctx, &spec, 0, &thr).unwrap();
            let b = classify_keypoint(&Keypoint::labeled(ex, ey), &ctx, &spec, 0, &thr).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
