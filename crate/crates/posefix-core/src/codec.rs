//! Coarse and fine pose representations plus the combined heatmap/coordinate
//! loss, with analytic gradients with respect to the logits.
//!
//! The coarse input form is a dense Gaussian blob per joint; the fine target
//! is a bilinear near-one-hot distribution over the grid. Decoding goes
//! spatial softmax -> soft-argmax (the expectation of the grid coordinates
//! under the softmax), which is differentiable and quantization-free.
//!
//! Grid coordinates are 0-based throughout: cell `(x, y)` sits at coordinate
//! `(x, y)`, so `soft_argmax(target_encode(c)) == c` exactly for any in-grid
//! `c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("heatmap is not normalized: sum = {0}")]
    NotNormalized(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("heatmap shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("no labeled joints to average the loss over")]
    NoLabeledJoints,
    #[error("grid must be non-empty")]
    EmptyGrid,
}

/// A continuous 2D grid coordinate in heatmap cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub x: f64,
    pub y: f64,
}

impl Coord {
    pub fn new(x: f64, y: f64) -> Self {
        Coord { x, y }
    }
}

/// A `w x h` grid of reals, row-major.
///
/// The same type carries raw logits, Gaussian input blobs, and probability
/// maps; the probability invariants (non-negative, sums to one) apply to
/// softmax outputs and encode targets, and are what [`soft_argmax`] checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(w: usize, h: usize) -> Self {
        Heatmap {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    pub fn from_data(w: usize, h: usize, data: Vec<f64>) -> Result<Self, CodecError> {
        if data.len() != w * h {
            return Err(CodecError::ShapeMismatch(w, h, data.len(), 1));
        }
        Ok(Heatmap { w, h, data })
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.w == other.w && self.h == other.h
    }

    /// Index of a maximum cell as (x, y); first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best % self.w, best / self.w)
    }

    /// Reverse each row (the mirror that pairs with the `x' = w-1-x` flip).
    pub fn mirrored_x(&self) -> Heatmap {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.w) {
            row.reverse();
        }
        out
    }
}

/// Dense Gaussian blob around `center`; an input feature map, deliberately
/// not normalized (peak value is 1 only when the center lies on a grid
/// point).
pub fn gaussian_encode(center: Coord, sigma: f64, w: usize, h: usize) -> Result<Heatmap, CodecError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CodecError::BadSigma(sigma));
    }
    if !center.x.is_finite() || !center.y.is_finite() {
        return Err(CodecError::NonFinite("gaussian center"));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut map = Heatmap::zeros(w, h);
    for y in 0..h {
        let dy2 = (y as f64 - center.y).powi(2);
        let row = &mut map.data[y * w..(y + 1) * w];
        for (x, cell) in row.iter_mut().enumerate() {
            let dx2 = (x as f64 - center.x).powi(2);
            *cell = (-(dx2 + dy2) * inv).exp();
        }
    }
    Ok(map)
}

/// Bilinear near-one-hot target around `center`.
///
/// Integer centers produce an exact one-hot; fractional centers spread mass
/// over the floor/ceil cells of each axis with linear weights, so the map
/// sums to one and its soft-argmax is exactly `center`. Out-of-grid centers
/// are clamped to the grid and flagged.
pub fn target_encode(center: Coord, w: usize, h: usize) -> Result<(Heatmap, bool), CodecError> {
    if w == 0 || h == 0 {
        return Err(CodecError::EmptyGrid);
    }
    if !center.x.is_finite() || !center.y.is_finite() {
        return Err(CodecError::NonFinite("target center"));
    }
    let cx = center.x.clamp(0.0, (w - 1) as f64);
    let cy = center.y.clamp(0.0, (h - 1) as f64);
    let clamped = cx != center.x || cy != center.y;
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let mut map = Heatmap::zeros(w, h);
    let mut put = |x: usize, y: usize, v: f64| {
        if v != 0.0 {
            map.set(x, y, v);
        }
    };
    put(x0, y0, (1.0 - fx) * (1.0 - fy));
    if fx > 0.0 {
        put(x0 + 1, y0, fx * (1.0 - fy));
    }
    if fy > 0.0 {
        put(x0, y0 + 1, (1.0 - fx) * fy);
    }
    if fx > 0.0 && fy > 0.0 {
        put(x0 + 1, y0 + 1, fx * fy);
    }
    Ok((map, clamped))
}

/// Exp-normalize over all cells, with max subtraction for stability.
pub fn spatial_softmax(logits: &Heatmap) -> Result<Heatmap, CodecError> {
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite("softmax logits"));
    }
    if logits.data.is_empty() {
        return Err(CodecError::EmptyGrid);
    }
    let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.clone();
    let mut sum = 0.0;
    for v in &mut out.data {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut out.data {
        *v /= sum;
    }
    Ok(out)
}

/// Log of the spatial softmax, computed in log space.
fn log_softmax(logits: &Heatmap) -> (Heatmap, Heatmap) {
    let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logits.clone();
    let mut sum = 0.0;
    for v in &mut probs.data {
        *v = (*v - max).exp();
        sum += *v;
    }
    let log_sum = sum.ln();
    let mut logs = logits.clone();
    for v in &mut logs.data {
        *v = (*v - max) - log_sum;
    }
    for v in &mut probs.data {
        *v /= sum;
    }
    (probs, logs)
}

/// Expectation of the 0-based grid coordinates under a probability heatmap.
pub fn soft_argmax(prob: &Heatmap) -> Result<Coord, CodecError> {
    let sum = prob.sum();
    if !sum.is_finite() {
        return Err(CodecError::NonFinite("probability heatmap"));
    }
    if (sum - 1.0).abs() > 1e-4 {
        return Err(CodecError::NotNormalized(sum));
    }
    Ok(expectation(prob))
}

fn expectation(prob: &Heatmap) -> Coord {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..prob.h {
        let row = &prob.data[y * prob.w..(y + 1) * prob.w];
        let mut row_sum = 0.0;
        for (x, v) in row.iter().enumerate() {
            cx += x as f64 * v;
            row_sum += v;
        }
        cy += y as f64 * row_sum;
    }
    Coord::new(cx, cy)
}

/// Supervision for one joint: the target distribution and the continuous
/// target coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTarget {
    pub heatmap: Heatmap,
    pub coord: Coord,
}

impl JointTarget {
    /// Bilinear target at `coord` (which must land in grid after clamping).
    pub fn at(coord: Coord, w: usize, h: usize) -> Result<Self, CodecError> {
        let (heatmap, _) = target_encode(coord, w, h)?;
        Ok(JointTarget { heatmap, coord })
    }
}

/// Value and gradient of the combined loss.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralLoss {
    /// `heatmap_term + coord_term`.
    pub total: f64,
    /// Cross-entropy of the softmaxed logits against the targets, averaged
    /// over labeled joints.
    pub heatmap_term: f64,
    /// L1 distance between soft-argmax outputs and target coordinates,
    /// averaged over labeled joints.
    pub coord_term: f64,
    /// d(total)/d(logits), one map per joint; zero maps for masked joints.
    pub grads: Vec<Heatmap>,
    /// Decoded coordinates per joint (softmax -> soft-argmax), `None` for
    /// masked joints.
    pub coords: Vec<Option<Coord>>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cross-entropy-plus-L1 loss over per-joint logits.
///
/// `targets[n] = None` masks joint `n` out of both terms and out of the
/// averaging denominator; at least one joint must be labeled.
pub fn integral_loss(
    logits: &[Heatmap],
    targets: &[Option<JointTarget>],
) -> Result<IntegralLoss, CodecError> {
    integral_loss_weighted(logits, targets, 1.0, 1.0)
}

/// [`integral_loss`] with term weights, for training on a single term
/// (weight 0 removes a term from the total and its gradient; the reported
/// `heatmap_term`/`coord_term` stay unweighted).
pub fn integral_loss_weighted(
    logits: &[Heatmap],
    targets: &[Option<JointTarget>],
    heatmap_weight: f64,
    coord_weight: f64,
) -> Result<IntegralLoss, CodecError> {
    if logits.len() != targets.len() {
        return Err(CodecError::ShapeMismatch(logits.len(), 0, targets.len(), 0));
    }
    let labeled = targets.iter().flatten().count();
    if labeled == 0 {
        return Err(CodecError::NoLabeledJoints);
    }
    let inv_n = 1.0 / labeled as f64;
    let mut heatmap_term = 0.0;
    let mut coord_term = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    let mut coords = Vec::with_capacity(logits.len());
    for (logit, target) in logits.iter().zip(targets) {
        let Some(target) = target else {
            grads.push(Heatmap::zeros(logit.w, logit.h));
            coords.push(None);
            continue;
        };
        if !logit.same_shape(&target.heatmap) {
            return Err(CodecError::ShapeMismatch(
                logit.w,
                logit.h,
                target.heatmap.w,
                target.heatmap.h,
            ));
        }
        let (probs, logs) = log_softmax(logit);
        let c = expectation(&probs);
        coords.push(Some(c));

        let mut ce = 0.0;
        for (t, lp) in target.heatmap.data.iter().zip(&logs.data) {
            if *t != 0.0 {
                ce -= t * lp;
            }
        }
        heatmap_term += ce * inv_n;

        let dx = c.x - target.coord.x;
        let dy = c.y - target.coord.y;
        coord_term += (dx.abs() + dy.abs()) * inv_n;
        let sx = sign(dx);
        let sy = sign(dy);

        // d(CE)/d(logit_k)    = (softmax_k - target_k) / N
        // d(|C - C*|_1)/d(logit_k) = [sx (x_k - C_x) + sy (y_k - C_y)] softmax_k / N
        let mut grad = Heatmap::zeros(logit.w, logit.h);
        for y in 0..logit.h {
            for x in 0..logit.w {
                let i = y * logit.w + x;
                let p = probs.data[i];
                let ce_g = p - target.heatmap.data[i];
                let l1_g = (sx * (x as f64 - c.x) + sy * (y as f64 - c.y)) * p;
                grad.data[i] = (heatmap_weight * ce_g + coord_weight * l1_g) * inv_n;
            }
        }
        grads.push(grad);
    }
    Ok(IntegralLoss {
        total: heatmap_weight * heatmap_term + coord_weight * coord_term,
        heatmap_term,
        coord_term,
        grads,
        coords,
    })
}

/// Entropy of a probability heatmap (the lower bound of the cross-entropy
/// term for a perfectly matching prediction).
pub fn entropy(prob: &Heatmap) -> f64 {
    prob.data
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
