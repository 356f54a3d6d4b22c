//! `posefix codec-check`: self-check of the heatmap codec — encode/decode
//! round trips, Gaussian spot values, softmax properties, and the loss
//! gradient against central finite differences. Prints one pass/fail line
//! per check and exits nonzero on any failure.

use crate::CommandContext;
use anyhow::{bail, Result};
use clap::Parser;
use posefix_core::codec::{
    gaussian_encode, integral_loss, soft_argmax, spatial_softmax, target_encode, Coord, Heatmap,
    JointTarget,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
pub struct Args {
    /// Seed of the randomized checks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

struct Reporter {
    failures: usize,
}

impl Reporter {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if pass {
            println!("[PASS] {name}: {detail}");
        } else {
            println!("[FAIL] {name}: {detail}");
            self.failures += 1;
        }
    }
}

pub fn run(_ctx: &CommandContext, args: Args) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut report = Reporter { failures: 0 };
    let (w, h) = (32usize, 24usize);

    // Round trip: soft_argmax(target_encode(c)) == c.
    let mut max_err = 0.0f64;
    for _ in 0..10_000 {
        let c = Coord::new(
            rng.gen_range(0.0..(w - 1) as f64),
            rng.gen_range(0.0..(h - 1) as f64),
        );
        let (map, clamped) = target_encode(c, w, h)?;
        if clamped {
            bail!("in-grid center reported as clamped");
        }
        let back = soft_argmax(&map)?;
        max_err = max_err.max((back.x - c.x).abs().max((back.y - c.y).abs()));
    }
    report.check(
        "target round trip",
        max_err < 1e-9,
        format!("max |coord error| = {max_err:.3e} over 10000 draws"),
    );

    // Gaussian spot values.
    let g = gaussian_encode(Coord::new(10.0, 12.0), 2.0, w, h)?;
    let peak = g.get(10, 12);
    let at_sigma = g.get(12, 12);
    let expected = (-0.5f64).exp();
    report.check(
        "gaussian peak",
        (peak - 1.0).abs() < 1e-6,
        format!("value at center = {peak}"),
    );
    report.check(
        "gaussian sigma point",
        (at_sigma - expected).abs() < 1e-6,
        format!("value one sigma out = {at_sigma:.6} (want {expected:.6})"),
    );

    // Softmax properties.
    let logits = Heatmap::from_data(
        w,
        h,
        (0..w * h).map(|_| rng.gen_range(-5.0..5.0)).collect(),
    )?;
    let sm = spatial_softmax(&logits)?;
    let sum = sm.sum();
    report.check(
        "softmax normalization",
        (sum - 1.0).abs() < 1e-9 && sm.data().iter().all(|&v| v >= 0.0),
        format!("sum = {sum}"),
    );

    // Loss gradient vs central finite differences.
    let logits: Vec<Heatmap> = (0..3)
        .map(|_| {
            Heatmap::from_data(8, 6, (0..48).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .expect("shape matches")
        })
        .collect();
    let targets: Vec<Option<JointTarget>> = (0..3)
        .map(|_| {
            let c = Coord::new(rng.gen_range(0.0..7.0), rng.gen_range(0.0..5.0));
            Some(JointTarget::at(c, 8, 6).expect("in grid"))
        })
        .collect();
    let analytic = integral_loss(&logits, &targets)?;
    let step = 1e-5;
    let mut max_rel = 0.0f64;
    for n in 0..logits.len() {
        for i in 0..logits[n].data().len() {
            let mut plus = logits.clone();
            plus[n].data_mut()[i] += step;
            let mut minus = logits.clone();
            minus[n].data_mut()[i] -= step;
            let fd = (integral_loss(&plus, &targets)?.total
                - integral_loss(&minus, &targets)?.total)
                / (2.0 * step);
            let an = analytic.grads[n].data()[i];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((an - fd).abs() / denom);
        }
    }
    report.check(
        "loss gradient",
        max_rel < 1e-4,
        format!("max relative error vs finite differences = {max_rel:.3e}"),
    );

    if report.failures > 0 {
        bail!("{} codec check(s) failed", report.failures);
    }
    Ok(())
}
