//! OKS-thresholded average precision and recall over COCO-style results,
//! following the public evaluator's conventions: greedy score-ordered
//! matching, 101-point interpolated precision-recall, area-restricted
//! variants with ignore (not penalize) semantics, and the
//! {AP, AP.50, AP.75, AP_M, AP_L, AR, ...} summary record.
//!
//! Crowd and degenerate (no labeled keypoint) ground truths are excluded
//! outright. Ground truths whose area falls outside the active range are
//! kept as "ignore" targets: a detection matched to one is dropped from the
//! precision-recall tally instead of counting as a false positive, and an
//! unmatched detection whose own keypoint-extent area is out of range is
//! dropped likewise.

use crate::model::SkeletonSpec;
use crate::pipeline::{DtInstance, GtDataset, GtInstance};
use crate::similarity::ks;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("OKS thresholds must be strictly increasing within (0, 1], got {0:?}")]
    BadThresholds(Vec<f64>),
    #[error("detection for image {0} has no score")]
    MissingScore(u64),
    #[error("similarity: {0}")]
    Similarity(#[from] crate::similarity::SimilarityError),
}

/// Evaluation knobs: OKS thresholds, named area ranges, detections-per-image
/// cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub oks_thresholds: Vec<f64>,
    /// `(name, lo, hi)` in px^2; `hi` may be infinite.
    pub area_ranges: Vec<(String, f64, f64)>,
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            oks_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            area_ranges: vec![
                ("all".into(), 0.0, f64::INFINITY),
                ("medium".into(), 32.0 * 32.0, 96.0 * 96.0),
                ("large".into(), 96.0 * 96.0, f64::INFINITY),
            ],
            max_dets: 20,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        let t = &self.oks_thresholds;
        let ok = !t.is_empty()
            && t.windows(2).all(|w| w[0] < w[1])
            && t.iter().all(|&v| v > 0.0 && v <= 1.0);
        if !ok {
            return Err(EvalError::BadThresholds(t.clone()));
        }
        Ok(())
    }

    fn threshold_index(&self, value: f64) -> Option<usize> {
        self.oks_thresholds
            .iter()
            .position(|&t| (t - value).abs() < 1e-9)
    }
}

/// Match outcome for one detection at one (threshold, area range).
#[derive(Debug, Clone, Copy, PartialEq)]
struct DtOutcome {
    score: f64,
    /// Matched to a counted (non-ignored) ground truth.
    matched: bool,
    /// Dropped from the tally: matched an ignored gt, or unmatched with
    /// out-of-range area.
    ignored: bool,
}

/// Everything `average_precision` needs, per (threshold, area range): the
/// outcome of every detection plus the number of counted ground truths.
#[derive(Debug, Clone)]
pub struct MatchMatrix {
    num_thresholds: usize,
    /// `[range][threshold]` -> detections in global evaluation order.
    outcomes: Vec<Vec<Vec<DtOutcome>>>,
    /// `[range]` -> counted ground truths.
    num_gt: Vec<usize>,
}

fn keypoint_extent_area(pose: &crate::model::Pose) -> f64 {
    let mut it = pose.keypoints.iter().filter_map(|k| k.position());
    let Some((x0, y0)) = it.next() else {
        return 0.0;
    };
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
    for (x, y) in it {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    (max_x - min_x) * (max_y - min_y)
}

fn oks_dt_gt(dt: &DtInstance, gt: &GtInstance, spec: &SkeletonSpec) -> Result<f64, EvalError> {
    let s = gt.scale();
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..spec.num_joints() {
        let Some((tx, ty)) = gt.pose.keypoints[j].position() else {
            continue;
        };
        let e = &dt.pose.keypoints[j];
        let d = ((e.x - tx).powi(2) + (e.y - ty).powi(2)).sqrt();
        sum += ks(d, s, spec.kappa(j))?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Greedy per-image matching over every threshold and area range.
///
/// Per image, detections are taken in descending score order (ties by input
/// index) and capped at `max_dets`; each grabs the unmatched counted ground
/// truth with the highest OKS at or above the threshold (ties toward the
/// smaller annotation id), falling back to ignored ground truths.
pub fn match_and_score(
    gts: &GtDataset,
    dts: &[DtInstance],
    params: &EvalParams,
    spec: &SkeletonSpec,
) -> Result<MatchMatrix, EvalError> {
    params.validate()?;
    let num_thresholds = params.oks_thresholds.len();
    let num_ranges = params.area_ranges.len();

    // Group by image, preserving input order for determinism.
    let mut gt_by_image: BTreeMap<u64, Vec<&GtInstance>> = BTreeMap::new();
    for gt in gts.instances.iter().filter(|g| g.usable()) {
        gt_by_image.entry(gt.image_id).or_default().push(gt);
    }
    let mut dt_by_image: BTreeMap<u64, Vec<(usize, &DtInstance)>> = BTreeMap::new();
    for (i, dt) in dts.iter().enumerate() {
        if dt.pose.score.is_none() {
            return Err(EvalError::MissingScore(dt.image_id));
        }
        dt_by_image.entry(dt.image_id).or_default().push((i, dt));
    }
    let image_ids: std::collections::BTreeSet<u64> = gt_by_image
        .keys()
        .chain(dt_by_image.keys())
        .cloned()
        .collect();

    let mut outcomes = vec![vec![Vec::new(); num_thresholds]; num_ranges];
    let mut num_gt = vec![0usize; num_ranges];

    for image_id in image_ids {
        let gt_list = gt_by_image.get(&image_id).map(|v| &v[..]).unwrap_or(&[]);
        let mut dt_list: Vec<(usize, &DtInstance)> = dt_by_image
            .get(&image_id)
            .map(|v| v.clone())
            .unwrap_or_default();
        dt_list.sort_by(|a, b| {
            let sa = a.1.pose.score.unwrap();
            let sb = b.1.pose.score.unwrap();
            sb.partial_cmp(&sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        dt_list.truncate(params.max_dets);

        // Stable gt order by annotation id for tie-breaking.
        let mut gt_sorted: Vec<&GtInstance> = gt_list.to_vec();
        gt_sorted.sort_by_key(|g| g.id);

        // OKS matrix for this image.
        let mut oks_matrix = vec![vec![0.0f64; gt_sorted.len()]; dt_list.len()];
        for (di, (_, dt)) in dt_list.iter().enumerate() {
            for (gi, gt) in gt_sorted.iter().enumerate() {
                oks_matrix[di][gi] = oks_dt_gt(dt, gt, spec)?;
            }
        }
        let dt_areas: Vec<f64> = dt_list
            .iter()
            .map(|(_, dt)| keypoint_extent_area(&dt.pose))
            .collect();

        for (ri, (_, lo, hi)) in params.area_ranges.iter().enumerate() {
            let gt_in_range: Vec<bool> = gt_sorted
                .iter()
                .map(|g| g.area >= *lo && g.area < *hi)
                .collect();
            num_gt[ri] += gt_in_range.iter().filter(|&&x| x).count();
            for (ti, &thr) in params.oks_thresholds.iter().enumerate() {
                let mut gt_taken = vec![false; gt_sorted.len()];
                for (di, (_, dt)) in dt_list.iter().enumerate() {
                    // Counted ground truths first, ignored ones second.
                    let mut pick = None;
                    for pass_counted in [true, false] {
                        if pick.is_some() {
                            break;
                        }
                        let mut best = thr;
                        for gi in 0..gt_sorted.len() {
                            if gt_taken[gi] || gt_in_range[gi] != pass_counted {
                                continue;
                            }
                            let o = oks_matrix[di][gi];
                            if o >= best && pick.map(|(_, b)| o > b).unwrap_or(true) {
                                best = o;
                                pick = Some((gi, o));
                            }
                        }
                    }
                    let outcome = match pick {
                        Some((gi, _)) => {
                            gt_taken[gi] = true;
                            DtOutcome {
                                score: dt.pose.score.unwrap(),
                                matched: gt_in_range[gi],
                                ignored: !gt_in_range[gi],
                            }
                        }
                        None => DtOutcome {
                            score: dt.pose.score.unwrap(),
                            matched: false,
                            ignored: !(dt_areas[di] >= *lo && dt_areas[di] < *hi),
                        },
                    };
                    outcomes[ri][ti].push(outcome);
                }
            }
        }
    }

    Ok(MatchMatrix {
        num_thresholds,
        outcomes,
        num_gt,
    })
}

/// The COCO-style summary record. Area-restricted entries are `None` when
/// the corresponding range holds no ground truths (undefined, not 0).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar: Option<f64>,
    pub ar50: Option<f64>,
    pub ar75: Option<f64>,
    pub ar_medium: Option<f64>,
    pub ar_large: Option<f64>,
}

impl Metrics {
    pub fn rows(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("AP", self.ap),
            ("AP.50", self.ap50),
            ("AP.75", self.ap75),
            ("AP_M", self.ap_medium),
            ("AP_L", self.ap_large),
            ("AR", self.ar),
            ("AR.50", self.ar50),
            ("AR.75", self.ar75),
            ("AR_M", self.ar_medium),
            ("AR_L", self.ar_large),
        ]
    }
}

/// Average precision at one (range, threshold): 101-point interpolation of
/// the precision-recall curve.
fn ap_single(outcomes: &[DtOutcome], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| {
        outcomes[b]
            .score
            .partial_cmp(&outcomes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recalls = Vec::new();
    let mut precisions = Vec::new();
    for &i in &order {
        let o = &outcomes[i];
        if o.ignored {
            continue;
        }
        if o.matched {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / num_gt as f64);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }
    // Right-to-left maximum makes precision monotone non-increasing.
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut total = 0.0;
    let mut idx = 0usize;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        while idx < recalls.len() && recalls[idx] < target {
            idx += 1;
        }
        if idx < precisions.len() {
            total += precisions[idx];
        }
    }
    Some(total / 101.0)
}

/// Final recall at one (range, threshold).
fn ar_single(outcomes: &[DtOutcome], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let tp = outcomes.iter().filter(|o| o.matched).count();
    Some(tp as f64 / num_gt as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = values.collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Reduce a match matrix to the summary metrics record.
pub fn average_precision(matches: &MatchMatrix, params: &EvalParams) -> Metrics {
    let range_index = |name: &str| {
        params
            .area_ranges
            .iter()
            .position(|(n, _, _)| n == name)
    };
    let ap_at = |ri: usize, ti: usize| ap_single(&matches.outcomes[ri][ti], matches.num_gt[ri]);
    let ar_at = |ri: usize, ti: usize| ar_single(&matches.outcomes[ri][ti], matches.num_gt[ri]);
    let ap_mean = |ri: usize| mean((0..matches.num_thresholds).map(|ti| ap_at(ri, ti)));
    let ar_mean = |ri: usize| mean((0..matches.num_thresholds).map(|ti| ar_at(ri, ti)));

    let all = range_index("all");
    let medium = range_index("medium");
    let large = range_index("large");
    let t50 = params.threshold_index(0.5);
    let t75 = params.threshold_index(0.75);

    let mut metrics = Metrics::default();
    if let Some(ri) = all {
        metrics.ap = ap_mean(ri);
        metrics.ar = ar_mean(ri);
        if let Some(ti) = t50 {
            metrics.ap50 = ap_at(ri, ti);
            metrics.ar50 = ar_at(ri, ti);
        }
        if let Some(ti) = t75 {
            metrics.ap75 = ap_at(ri, ti);
            metrics.ar75 = ar_at(ri, ti);
        }
    }
    if let Some(ri) = medium {
        metrics.ap_medium = ap_mean(ri);
        metrics.ar_medium = ar_mean(ri);
    }
    if let Some(ri) = large {
        metrics.ap_large = ap_mean(ri);
        metrics.ar_large = ar_mean(ri);
    }
    metrics
}

/// Convenience wrapper: match then accumulate.
pub fn evaluate(
    gts: &GtDataset,
    dts: &[DtInstance],
    params: &EvalParams,
    spec: &SkeletonSpec,
) -> Result<Metrics, EvalError> {
    let matches = match_and_score(gts, dts, params, spec)?;
    Ok(average_precision(&matches, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Keypoint, Pose, SkeletonSpec};
    use crate::pipeline::{GtDataset, GtInstance, ImageInfo};
    use crate::similarity::{ks_radius, KsLevel};

    fn spec() -> SkeletonSpec {
        SkeletonSpec::new(
            vec!["a".into(), "b".into()],
            vec![],
            vec![0.1, 0.1],
        )
        .unwrap()
    }

    fn gt_instance(id: u64, image_id: u64, x: f64, y: f64, area: f64) -> GtInstance {
        GtInstance {
            id,
            image_id,
            pose: Pose::new(vec![Keypoint::labeled(x, y), Keypoint::labeled(x + 20.0, y)]),
            area,
            bbox: None,
            iscrowd: false,
            degenerate: false,
        }
    }

    /// Detection whose OKS against `gt` is (numerically just above) `target`.
    fn dt_at_oks(gt: &GtInstance, target: f64, score: f64) -> DtInstance {
        let s = gt.scale();
        let d = if target >= 1.0 {
            0.0
        } else {
            ks_radius(KsLevel::new(target).unwrap(), s, 0.1).unwrap() * (1.0 - 1e-9)
        };
        let pose = Pose::with_score(
            gt.pose
                .keypoints
                .iter()
                .map(|k| Keypoint::labeled(k.x + d, k.y))
                .collect(),
            score,
        );
        DtInstance {
            image_id: gt.image_id,
            category_id: 1,
            pose,
            source_annotation_id: Some(gt.id),
        }
    }

    fn dataset(instances: Vec<GtInstance>) -> GtDataset {
        let mut image_ids: Vec<u64> = instances.iter().map(|i| i.image_id).collect();
        image_ids.sort_unstable();
        image_ids.dedup();
        GtDataset {
            images: image_ids
                .into_iter()
                .map(|id| ImageInfo {
                    id,
                    width: 1000,
                    height: 1000,
                })
                .collect(),
            instances,
        }
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts = dataset(vec![
            gt_instance(1, 1, 100.0, 100.0, 2500.0),
            gt_instance(2, 2, 100.0, 100.0, 2500.0),
        ]);
        let dts: Vec<DtInstance> = gts
            .instances
            .iter()
            .map(|g| dt_at_oks(g, 1.0, 0.9))
            .collect();
        let m = evaluate(&gts, &dts, &EvalParams::default(), &spec()).unwrap();
        assert_eq!(m.ap, Some(1.0));
        assert_eq!(m.ar, Some(1.0));
        assert_eq!(m.ap50, Some(1.0));
    }

    #[test]
    fn single_detection_oks_09_gives_ap_09() {
        // Matched at thresholds 0.50..=0.90 (9 of 10), unmatched at 0.95.
        let gts = dataset(vec![gt_instance(1, 1, 100.0, 100.0, 2500.0)]);
        let dts = vec![dt_at_oks(&gts.instances[0], 0.9, 0.8)];
        let m = evaluate(&gts, &dts, &EvalParams::default(), &spec()).unwrap();
        assert!((m.ap.unwrap() - 0.9).abs() < 1e-9, "AP {:?}", m.ap);
        assert!((m.ar.unwrap() - 0.9).abs() < 1e-9);
        assert_eq!(m.ap50, Some(1.0));
        assert_eq!(m.ap75, Some(1.0));
    }

    #[test]
    fn greedy_matching_prefers_higher_score() {
        let gts = dataset(vec![gt_instance(1, 1, 100.0, 100.0, 2500.0)]);
        let dt_hi = dt_at_oks(&gts.instances[0], 0.9, 0.9);
        let dt_lo = dt_at_oks(&gts.instances[0], 0.9, 0.8);
        let m = match_and_score(&gts, &[dt_lo, dt_hi], &EvalParams::default(), &spec()).unwrap();
        // At threshold index 0 in range "all": exactly one matched, one FP.
        let o = &m.outcomes[0][0];
        assert_eq!(o.len(), 2);
        let matched: Vec<bool> = o.iter().map(|x| x.matched).collect();
        assert_eq!(matched.iter().filter(|&&x| x).count(), 1);
        // The matched one is the higher-score detection.
        let hi = o.iter().find(|x| (x.score - 0.9).abs() < 1e-12).unwrap();
        assert!(hi.matched);
    }

    #[test]
    fn no_detections_means_zero_recall() {
        let gts = dataset(vec![gt_instance(1, 1, 100.0, 100.0, 2500.0)]);
        let m = evaluate(&gts, &[], &EvalParams::default(), &spec()).unwrap();
        assert_eq!(m.ap, Some(0.0));
        assert_eq!(m.ar, Some(0.0));
    }

    #[test]
    fn empty_area_range_is_undefined_not_zero() {
        // Large-only ground truth: medium metrics must be None.
        let gts = dataset(vec![gt_instance(1, 1, 100.0, 100.0, 10000.0)]);
        let dts = vec![dt_at_oks(&gts.instances[0], 1.0, 0.9)];
        let m = evaluate(&gts, &dts, &EvalParams::default(), &spec()).unwrap();
        assert_eq!(m.ap_medium, None);
        assert_eq!(m.ap_large, Some(1.0));
    }

    /// Hand-computed three-image micro-dataset.
    ///
    /// Images 1..3 hold one gt each; detections: OKS 1.0 (score 0.9),
    /// OKS ~0.7 (score 0.8), OKS ~0.3 (score 0.7), plus one zero-OKS FP in
    /// image 1 (score 0.85).
    ///
    /// Thresholds 0.50..0.70 (5 of them): order by score ->
    ///   TP, FP, TP, FP; P after each kept det: 1, 1/2, 2/3, 1/2 at recall
    ///   1/3, 1/3, 2/3, 2/3. Interpolated: r <= 1/3 -> 1 (34 points),
    ///   1/3 < r <= 2/3 -> 2/3 (33 points), else 0. AP = (34 + 22)/101.
    /// Thresholds 0.75..0.95 (5 of them): only the OKS-1.0 det matches:
    ///   AP = 34/101.
    /// AP = (5*(56/101) + 5*(34/101))/10 = 45/101.
    /// AR = (5*(2/3) + 5*(1/3))/10 = 0.5.
    #[test]
    fn three_image_micro_dataset_matches_hand_computation() {
        let gts = dataset(vec![
            gt_instance(1, 1, 100.0, 100.0, 2500.0),
            gt_instance(2, 2, 100.0, 100.0, 2500.0),
            gt_instance(3, 3, 100.0, 100.0, 2500.0),
        ]);
        let mut dts = vec![
            dt_at_oks(&gts.instances[0], 1.0, 0.9),
            dt_at_oks(&gts.instances[1], 0.7, 0.8),
            dt_at_oks(&gts.instances[2], 0.3, 0.7),
        ];
        // Far-away false positive in image 1.
        let mut fp = dt_at_oks(&gts.instances[0], 1.0, 0.85);
        for kp in &mut fp.pose.keypoints {
            kp.x += 500.0;
        }
        dts.push(fp);

        let m = evaluate(&gts, &dts, &EvalParams::default(), &spec()).unwrap();
        let expected_ap = 45.0 / 101.0;
        assert!(
            (m.ap.unwrap() - expected_ap).abs() < 1e-12,
            "AP {} vs {}",
            m.ap.unwrap(),
            expected_ap
        );
        assert!((m.ar.unwrap() - 0.5).abs() < 1e-12);
        assert!((m.ap50.unwrap() - 56.0 / 101.0).abs() < 1e-12);
        assert!((m.ap75.unwrap() - 34.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn ap_monotone_in_oks() {
        let gts = dataset(vec![
            gt_instance(1, 1, 100.0, 100.0, 2500.0),
            gt_instance(2, 2, 100.0, 100.0, 2500.0),
        ]);
        let params = EvalParams::default();
        let mut prev = 0.0;
        for oks_target in [0.3, 0.55, 0.72, 0.9, 1.0] {
            let dts: Vec<DtInstance> = gts
                .instances
                .iter()
                .map(|g| dt_at_oks(g, oks_target, 0.9))
                .collect();
            let m = evaluate(&gts, &dts, &params, &spec()).unwrap();
            let ap = m.ap.unwrap();
            assert!(ap >= prev - 1e-12, "ap {ap} dropped below {prev}");
            prev = ap;
        }
    }

    #[test]
    fn image_order_does_not_change_metrics() {
        let gts_a = dataset(vec![
            gt_instance(1, 1, 100.0, 100.0, 2500.0),
            gt_instance(2, 2, 100.0, 100.0, 2500.0),
            gt_instance(3, 3, 100.0, 100.0, 2500.0),
        ]);
        let dts_a: Vec<DtInstance> = gts_a
            .instances
            .iter()
            .zip([0.9, 0.6, 0.95])
            .map(|(g, t)| dt_at_oks(g, t, 0.5 + t / 2.0))
            .collect();
        let mut instances_b = gts_a.instances.clone();
        instances_b.reverse();
        let gts_b = dataset(instances_b);
        let mut dts_b = dts_a.clone();
        dts_b.reverse();
        let params = EvalParams::default();
        let ma = evaluate(&gts_a, &dts_a, &params, &spec()).unwrap();
        let mb = evaluate(&gts_b, &dts_b, &params, &spec()).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn ap_bounded_by_ar() {
        let gts = dataset(vec![
            gt_instance(1, 1, 100.0, 100.0, 2500.0),
            gt_instance(2, 1, 300.0, 100.0, 2500.0),
            gt_instance(3, 2, 100.0, 100.0, 2500.0),
        ]);
        let mut dts: Vec<DtInstance> = gts
            .instances
            .iter()
            .zip([0.85, 0.4, 0.92])
            .map(|(g, t)| dt_at_oks(g, t, t))
            .collect();
        let mut fp = dt_at_oks(&gts.instances[0], 1.0, 0.99);
        for kp in &mut fp.pose.keypoints {
            kp.y += 700.0;
        }
        dts.push(fp);
        let m = evaluate(&gts, &dts, &EvalParams::default(), &spec()).unwrap();
        let (ap, ar) = (m.ap.unwrap(), m.ar.unwrap());
        assert!(ap <= ar + 1e-12 && ar <= 1.0);
    }

    #[test]
    fn crowd_and_degenerate_are_excluded() {
        let mut crowd = gt_instance(9, 1, 500.0, 500.0, 2500.0);
        crowd.iscrowd = true;
        let gts = dataset(vec![gt_instance(1, 1, 100.0, 100.0, 2500.0), crowd]);
        let dts = vec![dt_at_oks(&gts.instances[0], 1.0, 0.9)];
        let m = evaluate(&gts, &dts, &EvalParams::default(), &spec()).unwrap();
        // The crowd gt neither counts as a target nor penalizes recall.
        assert_eq!(m.ap, Some(1.0));
        assert_eq!(m.ar, Some(1.0));
    }

    #[test]
    fn params_validation() {
        let mut p = EvalParams::default();
        assert!(p.validate().is_ok());
        p.oks_thresholds = vec![0.9, 0.5];
        assert!(p.validate().is_err());
        p.oks_thresholds = vec![];
        assert!(p.validate().is_err());
        p.oks_thresholds = vec![0.0, 0.5];
        assert!(p.validate().is_err());
    }
}
