//! Procedural stick-figure dataset for training the toy refiner at desk
//! scale: random articulations of a fixed kinematic tree rendered as
//! anti-aliased limb segments plus color-coded joint discs, paired with a
//! synthesized corruption of the ground-truth pose.

use crate::model::{ErrorType, InstanceContext, Keypoint, Pose, SkeletonSpec};
use crate::synthesis::{synthesize_pose, ErrorDistributionTable, SynthesisConfig};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RefinerError;

/// One training sample: rendered image, clean pose, corrupted pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    /// 3-channel image in `[0, 1]`.
    pub image: Tensor,
    pub gt_pose: Pose,
    pub corrupted_pose: Pose,
    /// Other rendered figures in the frame.
    pub neighbors: Vec<Pose>,
    /// Instance scale `s` (sqrt of the keypoint-extent area).
    pub scale: f64,
    /// Per-joint record of the synthesized error types.
    pub error_types: Vec<Option<ErrorType>>,
}

impl ToySample {
    pub fn context(&self) -> InstanceContext {
        InstanceContext::new(
            self.gt_pose.clone(),
            self.neighbors.clone(),
            self.scale,
            (self.image.width as u32, self.image.height as u32),
        )
        .expect("toy samples always carry a positive scale")
    }
}

/// Generator knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Canvas (width, height); both must be divisible by four for the net.
    pub canvas: (usize, usize),
    /// Probability of rendering a second, possibly overlapping figure.
    pub two_person_prob: f64,
    pub synthesis: SynthesisConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            canvas: (64, 48),
            two_person_prob: 0.35,
            synthesis: SynthesisConfig {
                // 11 toy joints: rebin the visible-count conditioning.
                visible_count_bins: vec![(1, 5), (5, 9), (9, 12)],
                ..SynthesisConfig::default()
            },
        }
    }
}

/// Joint indices of the toy kinematic tree, resolved by name so the caller
/// controls kappa and flip pairs through the skeleton config.
struct ToyTree {
    head: usize,
    neck: usize,
    pelvis: usize,
    elbows: [usize; 2],
    hands: [usize; 2],
    knees: [usize; 2],
    feet: [usize; 2],
}

impl ToyTree {
    fn resolve(spec: &SkeletonSpec) -> Result<Self, RefinerError> {
        let need = |name: &str| {
            spec.joint_index(name).ok_or_else(|| {
                RefinerError::BadConfig(format!(
                    "toy generator needs a joint named {name:?} in the skeleton"
                ))
            })
        };
        Ok(ToyTree {
            head: need("head")?,
            neck: need("neck")?,
            pelvis: need("pelvis")?,
            elbows: [need("left_elbow")?, need("right_elbow")?],
            hands: [need("left_hand")?, need("right_hand")?],
            knees: [need("left_knee")?, need("right_knee")?],
            feet: [need("left_foot")?, need("right_foot")?],
        })
    }
}

const TAU: f64 = std::f64::consts::TAU;

/// Distinct per-joint disc colors (index = toy joint index).
const PALETTE: [[f32; 3]; 11] = [
    [1.00, 0.25, 0.25],
    [1.00, 0.85, 0.20],
    [0.25, 1.00, 0.35],
    [0.20, 0.85, 1.00],
    [0.30, 0.35, 1.00],
    [1.00, 0.30, 0.90],
    [0.95, 0.60, 0.15],
    [0.40, 1.00, 0.85],
    [0.80, 0.30, 1.00],
    [0.60, 0.95, 0.20],
    [1.00, 0.55, 0.55],
];

fn articulate(
    tree: &ToyTree,
    k: usize,
    canvas: (usize, usize),
    rng: &mut impl Rng,
) -> Pose {
    let (w, h) = (canvas.0 as f64, canvas.1 as f64);
    let margin = 2.5;
    // Resample the whole figure until every joint is inside the canvas.
    for _ in 0..80 {
        let body = rng.gen_range(0.42..0.68) * h;
        let root = (
            rng.gen_range(0.25 * w..0.75 * w),
            rng.gen_range(0.55 * h..0.85 * h),
        );
        let mut joints = vec![(0.0f64, 0.0f64); k];
        let polar = |origin: (f64, f64), len: f64, angle: f64| {
            (origin.0 + len * angle.cos(), origin.1 + len * angle.sin())
        };
        // Screen coordinates: +x right, +y down; "up" is -pi/2.
        let torso_dir = -TAU / 4.0 + rng.gen_range(-0.35..0.35);
        joints[tree.pelvis] = root;
        joints[tree.neck] = polar(root, 0.34 * body, torso_dir);
        joints[tree.head] = polar(
            joints[tree.neck],
            0.16 * body,
            torso_dir + rng.gen_range(-0.25..0.25),
        );
        // side 0 = left (leans toward -x, i.e. angles around pi),
        // side 1 = right (mirrored).
        for side in 0..2 {
            let mirror = |a: f64| {
                if side == 0 {
                    a
                } else {
                    std::f64::consts::PI - a
                }
            };
            let upper_arm = mirror(rng.gen_range(0.45..1.10) * std::f64::consts::PI);
            joints[tree.elbows[side]] =
                polar(joints[tree.neck], 0.20 * body, upper_arm);
            joints[tree.hands[side]] = polar(
                joints[tree.elbows[side]],
                0.18 * body,
                upper_arm + rng.gen_range(-0.55..0.55),
            );
            let thigh = mirror(rng.gen_range(0.54..0.82) * std::f64::consts::PI);
            joints[tree.knees[side]] = polar(root, 0.24 * body, thigh);
            joints[tree.feet[side]] = polar(
                joints[tree.knees[side]],
                0.22 * body,
                thigh + rng.gen_range(-0.30..0.30),
            );
        }
        let inside = joints
            .iter()
            .all(|&(x, y)| x >= margin && y >= margin && x <= w - 1.0 - margin && y <= h - 1.0 - margin);
        if inside {
            return Pose::new(
                joints
                    .into_iter()
                    .map(|(x, y)| Keypoint::labeled(x, y))
                    .collect(),
            );
        }
    }
    // Last resort: a canned centered figure clamped into bounds; reachable
    // only on absurd canvas sizes.
    let mut joints = vec![(w / 2.0, h / 2.0); k];
    joints[tree.head] = (w / 2.0, (h / 2.0 - 0.3 * h).max(margin));
    Pose::new(
        joints
            .into_iter()
            .map(|(x, y)| Keypoint::labeled(x, y))
            .collect(),
    )
}

fn draw_segment(image: &mut Tensor, a: (f64, f64), b: (f64, f64), intensity: f32) {
    let half_width = 0.7;
    let x0 = (a.0.min(b.0) - half_width - 1.0).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + half_width + 1.0).ceil().min(image.width as f64 - 1.0) as usize;
    let y0 = (a.1.min(b.1) - half_width - 1.0).floor().max(0.0) as usize;
    let y1 = (a.1.max(b.1) + half_width + 1.0).ceil().min(image.height as f64 - 1.0) as usize;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - a.0, y as f64 - a.1);
            let t = if len2 > 0.0 {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (px - t * dx, py - t * dy);
            let dist = (cx * cx + cy * cy).sqrt();
            let coverage = (half_width + 0.5 - dist).clamp(0.0, 1.0) as f32;
            if coverage > 0.0 {
                for c in 0..3 {
                    let i = image.idx(c, y, x);
                    image.data[i] = image.data[i].max(coverage * intensity);
                }
            }
        }
    }
}

fn draw_disc(image: &mut Tensor, center: (f64, f64), radius: f64, color: [f32; 3]) {
    let x0 = (center.0 - radius - 1.0).floor().max(0.0) as usize;
    let x1 = (center.0 + radius + 1.0).ceil().min(image.width as f64 - 1.0) as usize;
    let y0 = (center.1 - radius - 1.0).floor().max(0.0) as usize;
    let y1 = (center.1 + radius + 1.0).ceil().min(image.height as f64 - 1.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dist = ((x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2)).sqrt();
            let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0) as f32;
            if coverage > 0.0 {
                for c in 0..3 {
                    let i = image.idx(c, y, x);
                    image.data[i] = image.data[i].max(coverage * color[c]);
                }
            }
        }
    }
}

fn render_figure(image: &mut Tensor, tree: &ToyTree, pose: &Pose) {
    let p = |j: usize| (pose.keypoints[j].x, pose.keypoints[j].y);
    let bones = [
        (tree.pelvis, tree.neck),
        (tree.neck, tree.head),
        (tree.neck, tree.elbows[0]),
        (tree.elbows[0], tree.hands[0]),
        (tree.neck, tree.elbows[1]),
        (tree.elbows[1], tree.hands[1]),
        (tree.pelvis, tree.knees[0]),
        (tree.knees[0], tree.feet[0]),
        (tree.pelvis, tree.knees[1]),
        (tree.knees[1], tree.feet[1]),
    ];
    for (a, b) in bones {
        draw_segment(image, p(a), p(b), 0.35);
    }
    for (j, kp) in pose.keypoints.iter().enumerate() {
        draw_disc(image, (kp.x, kp.y), 1.6, PALETTE[j % PALETTE.len()]);
    }
}

fn keypoint_extent(pose: &Pose) -> (f64, f64) {
    let mut it = pose.keypoints.iter().filter_map(|k| k.position());
    let (x0, y0) = it.next().expect("articulated poses are fully labeled");
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
    for (x, y) in it {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    (max_x - min_x, max_y - min_y)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Stable per-label stream derivation so parallel assembly can never alter
/// results.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

/// Generate `n` samples; bit-identical for a fixed `(seed, spec, table,
/// config)` regardless of call order.
pub fn generate_toy_dataset_with(
    n: usize,
    spec: &SkeletonSpec,
    table: &ErrorDistributionTable,
    seed: u64,
    config: &ToyConfig,
) -> Result<Vec<ToySample>, RefinerError> {
    if n == 0 {
        return Err(RefinerError::BadConfig("dataset size must be >= 1".into()));
    }
    let (w, h) = config.canvas;
    if w % 4 != 0 || h % 4 != 0 || w == 0 || h == 0 {
        return Err(RefinerError::BadConfig(format!(
            "canvas {w}x{h} must be divisible by 4"
        )));
    }
    let tree = ToyTree::resolve(spec)?;
    let k = spec.num_joints();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let gt_pose = articulate(&tree, k, config.canvas, &mut rng);
        let mut neighbors = Vec::new();
        if rng.gen_bool(config.two_person_prob) {
            neighbors.push(articulate(&tree, k, config.canvas, &mut rng));
        }
        let mut image = Tensor::zeros(3, h, w);
        for other in &neighbors {
            render_figure(&mut image, &tree, other);
        }
        render_figure(&mut image, &tree, &gt_pose);

        let (ext_w, ext_h) = keypoint_extent(&gt_pose);
        let scale = (ext_w * ext_h).max(1.0).sqrt();
        let ctx = InstanceContext::new(
            gt_pose.clone(),
            neighbors.clone(),
            scale,
            (w as u32, h as u32),
        )
        .expect("scale is positive");
        let synth = synthesize_pose(&ctx, spec, table, &config.synthesis, &mut rng)?;
        samples.push(ToySample {
            image,
            gt_pose,
            corrupted_pose: synth.pose,
            neighbors,
            scale,
            error_types: synth.error_types,
        });
    }
    Ok(samples)
}

/// [`generate_toy_dataset_with`] under the default generator config.
pub fn generate_toy_dataset(
    n: usize,
    spec: &SkeletonSpec,
    table: &ErrorDistributionTable,
    seed: u64,
) -> Result<Vec<ToySample>, RefinerError> {
    generate_toy_dataset_with(n, spec, table, seed, &ToyConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn setup() -> (SkeletonSpec, ErrorDistributionTable) {
        let spec = SkeletonSpec::toy_stick_figure();
        let table = ErrorDistributionTable::toy_jitter_heavy(&spec);
        (spec, table)
    }

    #[test]
    fn zero_samples_is_an_error() {
        let (spec, table) = setup();
        assert!(generate_toy_dataset(0, &spec, &table, 1).is_err());
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (spec, table) = setup();
        let a = generate_toy_dataset(20, &spec, &table, 7).unwrap();
        let b = generate_toy_dataset(20, &spec, &table, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_dataset(20, &spec, &table, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gt_joints_inside_canvas_and_image_lit() {
        let (spec, table) = setup();
        let samples = generate_toy_dataset(50, &spec, &table, 3).unwrap();
        for s in &samples {
            for kp in &s.gt_pose.keypoints {
                assert!(kp.is_labeled());
                assert!(kp.x >= 0.0 && kp.x <= 63.0, "x {}", kp.x);
                assert!(kp.y >= 0.0 && kp.y <= 47.0, "y {}", kp.y);
            }
            assert!(s.image.data.iter().any(|&v| v > 0.2));
            assert!(s.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.scale > 1.0);
        }
        // Some samples carry a neighbor.
        assert!(samples.iter().any(|s| !s.neighbors.is_empty()));
        assert!(samples.iter().any(|s| s.neighbors.is_empty()));
    }

    #[test]
    fn every_error_type_appears_over_a_thousand_samples() {
        let (spec, table) = setup();
        let samples = generate_toy_dataset(1000, &spec, &table, 42).unwrap();
        let seen: BTreeSet<ErrorType> = samples
            .iter()
            .flat_map(|s| s.error_types.iter().flatten().cloned())
            .collect();
        assert_eq!(seen.len(), 5, "missing types: {seen:?}");
    }

    #[test]
    fn corruption_respects_recorded_labels() {
        use crate::taxonomy::classify_keypoint;
        let (spec, table) = setup();
        let cfg = ToyConfig::default();
        let samples = generate_toy_dataset(100, &spec, &table, 11).unwrap();
        for s in &samples {
            let ctx = s.context();
            for j in 0..spec.num_joints() {
                let Some(expected) = s.error_types[j] else {
                    continue;
                };
                let got = classify_keypoint(
                    &s.corrupted_pose.keypoints[j],
                    &ctx,
                    &spec,
                    j,
                    &cfg.synthesis.thresholds,
                )
                .unwrap();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn non_toy_skeleton_is_rejected() {
        let coco = SkeletonSpec::coco17();
        let table = ErrorDistributionTable::default_coco17(&coco);
        assert!(matches!(
            generate_toy_dataset(5, &coco, &table, 1),
            Err(RefinerError::BadConfig(_))
        ));
    }
}
