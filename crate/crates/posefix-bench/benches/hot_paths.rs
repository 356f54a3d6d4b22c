//! Benchmarks of the paths that dominate synthesis, evaluation, and
//! training time.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use posefix_core::codec::{integral_loss, Coord, Heatmap, JointTarget};
use posefix_core::model::{InstanceContext, Keypoint, Pose, SkeletonSpec};
use posefix_core::refiner::net::{backward, forward, FeatureMap, NetParams};
use posefix_core::similarity::oks;
use posefix_core::synthesis::{synthesize_pose, ErrorDistributionTable, SynthesisConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pose(k: usize, rng: &mut impl Rng) -> Pose {
    Pose::new(
        (0..k)
            .map(|_| Keypoint::labeled(rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0)))
            .collect(),
    )
}

fn bench_oks(c: &mut Criterion) {
    let spec = SkeletonSpec::coco17();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = random_pose(17, &mut rng);
    let estimate = random_pose(17, &mut rng);
    let ctx = InstanceContext::solo(truth.clone(), 80.0, (300, 300)).unwrap();
    c.bench_function("oks_17_joints", |b| {
        b.iter(|| oks(&estimate, &truth, &ctx, &spec).unwrap())
    });
}

fn bench_synthesize_pose(c: &mut Criterion) {
    let spec = SkeletonSpec::coco17();
    let table = ErrorDistributionTable::default_coco17(&spec);
    let config = SynthesisConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = random_pose(17, &mut rng);
    let neighbor = random_pose(17, &mut rng);
    let ctx = InstanceContext::new(target, vec![neighbor], 80.0, (300, 300)).unwrap();
    c.bench_function("synthesize_pose_two_people", |b| {
        let mut draw = ChaCha8Rng::seed_from_u64(3);
        b.iter(|| synthesize_pose(&ctx, &spec, &table, &config, &mut draw).unwrap())
    });
}

fn bench_integral_loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (32, 24);
    let logits: Vec<Heatmap> = (0..11)
        .map(|_| {
            Heatmap::from_data(w, h, (0..w * h).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap()
        })
        .collect();
    let targets: Vec<Option<JointTarget>> = (0..11)
        .map(|_| {
            Some(
                JointTarget::at(
                    Coord::new(rng.gen_range(0.0..31.0), rng.gen_range(0.0..23.0)),
                    w,
                    h,
                )
                .unwrap(),
            )
        })
        .collect();
    c.bench_function("integral_loss_11_joints_32x24", |b| {
        b.iter(|| integral_loss(&logits, &targets).unwrap())
    });
}

fn bench_net(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = NetParams::init(14, (32, 64), 11, &mut rng);
    let mut input = FeatureMap::zeros(14, 48, 64);
    for v in &mut input.data {
        *v = rng.gen_range(0.0..1.0);
    }
    c.bench_function("net_forward_64x48", |b| {
        b.iter_batched(
            || input.clone(),
            |x| forward(&params, x),
            BatchSize::LargeInput,
        )
    });
    let (logits, cache) = forward(&params, input.clone());
    let mut dlogits = FeatureMap::zeros(logits.channels, logits.height, logits.width);
    for v in &mut dlogits.data {
        *v = rng.gen_range(-0.1..0.1);
    }
    c.bench_function("net_backward_64x48", |b| {
        b.iter(|| backward(&params, &cache, &dlogits))
    });
}

criterion_group!(benches, bench_oks, bench_synthesize_pose, bench_integral_loss, bench_net);
criterion_main!(benches);
