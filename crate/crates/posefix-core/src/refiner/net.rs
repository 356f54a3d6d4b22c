//! The toy refiner network and its hand-written reverse-mode gradients.
//!
//! Fixed architecture: two stride-2 3x3 convolutions down to quarter
//! resolution, two same-resolution 3x3 convolutions, a nearest-neighbor x2
//! upsample, one more 3x3 convolution and a 1x1 projection to one logit map
//! per joint at half the input resolution. ReLU after every convolution but
//! the last. All math is f64 so gradient checks hold at 64-bit tolerances.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Channel-major f64 activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// Shape of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.ksize) / self.stride + 1,
            (w + 2 * self.pad - self.ksize) / self.stride + 1,
        )
    }

    pub fn num_weights(&self) -> usize {
        self.out_ch * self.in_ch * self.ksize * self.ksize
    }
}

/// Weights and bias of one convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// `[out_ch][in_ch][ky][kx]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(spec: ConvSpec) -> Self {
        ConvLayer {
            weight: vec![0.0; spec.num_weights()],
            bias: vec![0.0; spec.out_ch],
            spec,
        }
    }

    fn init(spec: ConvSpec, sigma: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, sigma).expect("sigma is positive");
        ConvLayer {
            weight: (0..spec.num_weights())
                .map(|_| normal.sample(rng))
                .collect(),
            bias: vec![0.0; spec.out_ch],
            spec,
        }
    }

    #[inline]
    fn w_at(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        let k = self.spec.ksize;
        self.weight[((oc * self.spec.in_ch + ic) * k + ky) * k + kx]
    }
}

/// Convolution forward pass; 3x3/stride-1/pad-1 layers take a fused-tap
/// fast path, everything else the generic shift-and-accumulate one.
pub fn conv_forward(x: &FeatureMap, layer: &ConvLayer) -> FeatureMap {
    let s = &layer.spec;
    if s.ksize == 3 && s.stride == 1 && s.pad == 1 && x.width >= 2 {
        return conv_forward_k3s1(x, layer);
    }
    conv_forward_generic(x, layer)
}

/// Fused three-tap rows: the accumulator row stays hot across all input
/// channels and kernel rows of one output row.
fn conv_forward_k3s1(x: &FeatureMap, layer: &ConvLayer) -> FeatureMap {
    let s = &layer.spec;
    let (ih, iw) = (x.height, x.width);
    let n = iw;
    let mut out = FeatureMap::zeros(s.out_ch, ih, iw);
    let mut acc = vec![0.0f64; n];
    for oc in 0..s.out_ch {
        for oy in 0..ih {
            acc.fill(layer.bias[oc]);
            for ic in 0..s.in_ch {
                let in_plane = x.plane(ic);
                let wbase = (oc * s.in_ch + ic) * 9;
                for ky in 0..3usize {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let in_row = &in_plane[iy as usize * iw..][..iw];
                    let w0 = layer.weight[wbase + ky * 3];
                    let w1 = layer.weight[wbase + ky * 3 + 1];
                    let w2 = layer.weight[wbase + ky * 3 + 2];
                    acc[0] += w1 * in_row[0] + w2 * in_row[1];
                    acc[n - 1] += w0 * in_row[n - 2] + w1 * in_row[n - 1];
                    let dst = &mut acc[1..n - 1];
                    let a = &in_row[0..n - 2];
                    let b = &in_row[1..n - 1];
                    let c = &in_row[2..n];
                    for i in 0..dst.len() {
                        dst[i] += w0 * a[i] + w1 * b[i] + w2 * c[i];
                    }
                }
            }
            out.plane_mut(oc)[oy * iw..][..iw].copy_from_slice(&acc);
        }
    }
    out
}

fn conv_forward_generic(x: &FeatureMap, layer: &ConvLayer) -> FeatureMap {
    let s = &layer.spec;
    debug_assert_eq!(x.channels, s.in_ch);
    let (oh, ow) = s.out_size(x.height, x.width);
    let (ih, iw) = (x.height, x.width);
    let mut out = FeatureMap::zeros(s.out_ch, oh, ow);
    for oc in 0..s.out_ch {
        let bias = layer.bias[oc];
        let out_plane = out.plane_mut(oc);
        out_plane.fill(bias);
        for ic in 0..s.in_ch {
            let in_plane = x.plane(ic);
            for ky in 0..s.ksize {
                for kx in 0..s.ksize {
                    let w = layer.w_at(oc, ic, ky, kx);
                    let dy = ky as isize - s.pad as isize;
                    let dx = kx as isize - s.pad as isize;
                    for oy in 0..oh {
                        let iy = oy as isize * s.stride as isize + dy;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * iw..][..iw];
                        let out_row = &mut out_plane[oy * ow..][..ow];
                        if s.stride == 1 {
                            let ox0 = (-dx).max(0) as usize;
                            let ox1 = ow.min((iw as isize - dx).max(0) as usize);
                            if ox0 < ox1 {
                                let src = &in_row[(ox0 as isize + dx) as usize..][..ox1 - ox0];
                                for (o, v) in out_row[ox0..ox1].iter_mut().zip(src) {
                                    *o += w * v;
                                }
                            }
                        } else {
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                let ix = ox as isize * s.stride as isize + dx;
                                if ix >= 0 && ix < iw as isize {
                                    *o += w * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution backward pass: gradient with respect to the input (skipped
/// when `need_dx` is false), the weights, and the bias.
pub fn conv_backward(
    x: &FeatureMap,
    layer: &ConvLayer,
    dout: &FeatureMap,
    need_dx: bool,
) -> (Option<FeatureMap>, ConvLayer) {
    let s = &layer.spec;
    if s.ksize == 3 && s.stride == 1 && s.pad == 1 && x.width >= 2 {
        return conv_backward_k3s1(x, layer, dout, need_dx);
    }
    conv_backward_generic(x, layer, dout, need_dx)
}

/// Split backward for the 3x3/stride-1/pad-1 case: the input gradient is a
/// mirrored-kernel convolution of `dout`, the weight gradient nine shifted
/// row dot products per channel pair.
fn conv_backward_k3s1(
    x: &FeatureMap,
    layer: &ConvLayer,
    dout: &FeatureMap,
    need_dx: bool,
) -> (Option<FeatureMap>, ConvLayer) {
    let s = &layer.spec;
    let (ih, iw) = (x.height, x.width);
    let n = iw;
    let mut grad = ConvLayer::zeros(*s);

    for oc in 0..s.out_ch {
        grad.bias[oc] = dout.plane(oc).iter().sum();
        let dout_plane = dout.plane(oc);
        for ic in 0..s.in_ch {
            let in_plane = x.plane(ic);
            let wbase = (oc * s.in_ch + ic) * 9;
            let mut acc = [0.0f64; 9];
            for oy in 0..ih {
                let dout_row = &dout_plane[oy * iw..][..iw];
                for ky in 0..3usize {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let in_row = &in_plane[iy as usize * iw..][..iw];
                    // kx = 0: ix = ox - 1, valid for ox in 1..n.
                    let mut d0 = 0.0;
                    for (g, v) in dout_row[1..n].iter().zip(&in_row[0..n - 1]) {
                        d0 += g * v;
                    }
                    // kx = 1: aligned.
                    let mut d1 = 0.0;
                    for (g, v) in dout_row.iter().zip(in_row) {
                        d1 += g * v;
                    }
                    // kx = 2: ix = ox + 1, valid for ox in 0..n-1.
                    let mut d2 = 0.0;
                    for (g, v) in dout_row[0..n - 1].iter().zip(&in_row[1..n]) {
                        d2 += g * v;
                    }
                    acc[ky * 3] += d0;
                    acc[ky * 3 + 1] += d1;
                    acc[ky * 3 + 2] += d2;
                }
            }
            for (k, v) in acc.iter().enumerate() {
                grad.weight[wbase + k] = *v;
            }
        }
    }

    let dx = need_dx.then(|| {
        let mut dx = FeatureMap::zeros(s.in_ch, ih, iw);
        let mut acc = vec![0.0f64; n];
        for ic in 0..s.in_ch {
            for iy in 0..ih {
                acc.fill(0.0);
                for oc in 0..s.out_ch {
                    let dout_plane = dout.plane(oc);
                    let wbase = (oc * s.in_ch + ic) * 9;
                    for ky in 0..3usize {
                        // iy = oy + ky - 1  =>  oy = iy + 1 - ky.
                        let oy = iy as isize + 1 - ky as isize;
                        if oy < 0 || oy >= ih as isize {
                            continue;
                        }
                        let dout_row = &dout_plane[oy as usize * iw..][..iw];
                        // ix = ox + kx - 1  =>  contribution of tap kx comes
                        // from dout[ix - kx + 1]: mirrored taps.
                        let w0 = layer.weight[wbase + ky * 3];
                        let w1 = layer.weight[wbase + ky * 3 + 1];
                        let w2 = layer.weight[wbase + ky * 3 + 2];
                        acc[0] += w1 * dout_row[0] + w0 * dout_row[1];
                        acc[n - 1] += w2 * dout_row[n - 2] + w1 * dout_row[n - 1];
                        let dst = &mut acc[1..n - 1];
                        let a = &dout_row[2..n];
                        let b = &dout_row[1..n - 1];
                        let c = &dout_row[0..n - 2];
                        for i in 0..dst.len() {
                            dst[i] += w0 * a[i] + w1 * b[i] + w2 * c[i];
                        }
                    }
                }
                dx.plane_mut(ic)[iy * iw..][..iw].copy_from_slice(&acc);
            }
        }
        dx
    });
    (dx, grad)
}

fn conv_backward_generic(
    x: &FeatureMap,
    layer: &ConvLayer,
    dout: &FeatureMap,
    need_dx: bool,
) -> (Option<FeatureMap>, ConvLayer) {
    let s = &layer.spec;
    let (ih, iw) = (x.height, x.width);
    let (oh, ow) = (dout.height, dout.width);
    let mut grad = ConvLayer::zeros(*s);
    let mut dx = need_dx.then(|| FeatureMap::zeros(s.in_ch, ih, iw));
    for oc in 0..s.out_ch {
        let dout_plane = dout.plane(oc);
        grad.bias[oc] = dout_plane.iter().sum();
        for ic in 0..s.in_ch {
            let in_plane = x.plane(ic);
            let dx_plane = dx.as_mut().map(|d| {
                let n = ih * iw;
                // Split borrow by raw range; planes never alias.
                d.data[ic * n..(ic + 1) * n].as_mut_ptr()
            });
            for ky in 0..s.ksize {
                for kx in 0..s.ksize {
                    let w = layer.w_at(oc, ic, ky, kx);
                    let dy = ky as isize - s.pad as isize;
                    let dx_off = kx as isize - s.pad as isize;
                    let mut dw_acc = 0.0;
                    for oy in 0..oh {
                        let iy = oy as isize * s.stride as isize + dy;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * iw..][..iw];
                        let dout_row = &dout_plane[oy * ow..][..ow];
                        if s.stride == 1 {
                            let ox0 = (-dx_off).max(0) as usize;
                            let ox1 = ow.min((iw as isize - dx_off).max(0) as usize);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let base = (ox0 as isize + dx_off) as usize;
                            let src = &in_row[base..][..ox1 - ox0];
                            let gs = &dout_row[ox0..ox1];
                            match dx_plane {
                                Some(ptr) => {
                                    // Safety: planes are disjoint per (ic) and
                                    // rows per iy; no concurrent access.
                                    let row = unsafe {
                                        std::slice::from_raw_parts_mut(
                                            ptr.add(iy as usize * iw + base),
                                            ox1 - ox0,
                                        )
                                    };
                                    for ((g, v), d) in gs.iter().zip(src).zip(row) {
                                        dw_acc += g * v;
                                        *d += w * g;
                                    }
                                }
                                None => {
                                    for (g, v) in gs.iter().zip(src) {
                                        dw_acc += g * v;
                                    }
                                }
                            }
                        } else {
                            for (ox, g) in dout_row.iter().enumerate() {
                                let ix = ox as isize * s.stride as isize + dx_off;
                                if ix < 0 || ix >= iw as isize {
                                    continue;
                                }
                                dw_acc += g * in_row[ix as usize];
                                if let Some(ptr) = dx_plane {
                                    unsafe {
                                        *ptr.add(iy as usize * iw + ix as usize) += w * g;
                                    }
                                }
                            }
                        }
                    }
                    let k = s.ksize;
                    grad.weight[((oc * s.in_ch + ic) * k + ky) * k + kx] += dw_acc;
                }
            }
        }
    }
    (dx, grad)
}

fn relu_inplace(x: &mut FeatureMap) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn relu_backward_inplace(dz: &mut FeatureMap, post: &FeatureMap) {
    for (d, &p) in dz.data.iter_mut().zip(&post.data) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
}

fn upsample2_forward(x: &FeatureMap) -> FeatureMap {
    let mut out = FeatureMap::zeros(x.channels, x.height * 2, x.width * 2);
    for c in 0..x.channels {
        for y in 0..out.height {
            for x_ in 0..out.width {
                let v = x.get(c, y / 2, x_ / 2);
                out.set(c, y, x_, v);
            }
        }
    }
    out
}

fn upsample2_backward(dout: &FeatureMap) -> FeatureMap {
    let mut dx = FeatureMap::zeros(dout.channels, dout.height / 2, dout.width / 2);
    for c in 0..dout.channels {
        for y in 0..dout.height {
            for x_ in 0..dout.width {
                let v = dout.get(c, y, x_);
                let i = (c * dx.height + y / 2) * dx.width + x_ / 2;
                dx.data[i] += v;
            }
        }
    }
    dx
}

/// All trainable parameters plus the architecture hyperparameters needed to
/// rebuild the layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub in_channels: usize,
    pub widths: (usize, usize),
    pub num_joints: usize,
    pub layers: Vec<ConvLayer>,
}

impl NetParams {
    pub fn layer_specs(in_channels: usize, widths: (usize, usize), num_joints: usize) -> [ConvSpec; 6] {
        let (w1, w2) = widths;
        let c3 = |in_ch, out_ch, stride| ConvSpec {
            in_ch,
            out_ch,
            ksize: 3,
            stride,
            pad: 1,
        };
        [
            c3(in_channels, w1, 2),
            c3(w1, w2, 2),
            c3(w2, w2, 1),
            c3(w2, w2, 1),
            c3(w2, w1, 1),
            ConvSpec {
                in_ch: w1,
                out_ch: num_joints,
                ksize: 1,
                stride: 1,
                pad: 0,
            },
        ]
    }

    /// Zero-mean Gaussian weights (sigma 0.01), zero biases.
    pub fn init(
        in_channels: usize,
        widths: (usize, usize),
        num_joints: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = Self::layer_specs(in_channels, widths, num_joints)
            .into_iter()
            .map(|spec| ConvLayer::init(spec, 0.01, rng))
            .collect();
        NetParams {
            in_channels,
            widths,
            num_joints,
            layers,
        }
    }

    pub fn zeros(in_channels: usize, widths: (usize, usize), num_joints: usize) -> Self {
        let layers = Self::layer_specs(in_channels, widths, num_joints)
            .into_iter()
            .map(ConvLayer::zeros)
            .collect();
        NetParams {
            in_channels,
            widths,
            num_joints,
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            in_channels: self.in_channels,
            widths: self.widths,
            num_joints: self.num_joints,
            layers: self.layers.iter().map(|l| ConvLayer::zeros(l.spec)).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Visit every parameter slice in a fixed order (weights then bias,
    /// layer by layer).
    pub fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for layer in &mut self.layers {
            f(&mut layer.weight);
            f(&mut layer.bias);
        }
    }

    pub fn for_each_slice(&self, mut f: impl FnMut(&[f64])) {
        for layer in &self.layers {
            f(&layer.weight);
            f(&layer.bias);
        }
    }

    pub fn add_scaled(&mut self, other: &NetParams, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += factor * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += factor * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for v in &mut layer.weight {
                *v *= factor;
            }
            for v in &mut layer.bias {
                *v *= factor;
            }
        }
    }
}

/// Activations retained for the backward pass.
pub struct ForwardCache {
    /// Inputs of conv layers 0..6 in order (the upsample output sits at
    /// index 4).
    conv_inputs: Vec<FeatureMap>,
    /// Post-ReLU outputs of conv layers 0..5 (for the ReLU masks).
    post_relu: Vec<FeatureMap>,
}

/// Full forward pass; `input` must have `in_channels` planes and spatial
/// dimensions divisible by four.
pub fn forward(params: &NetParams, input: FeatureMap) -> (FeatureMap, ForwardCache) {
    assert_eq!(input.channels, params.in_channels, "input channel mismatch");
    assert!(
        input.height % 4 == 0 && input.width % 4 == 0,
        "input size must be divisible by 4"
    );
    let mut conv_inputs = Vec::with_capacity(6);
    let mut post_relu = Vec::with_capacity(5);

    let mut x = input;
    for i in 0..4 {
        let mut y = conv_forward(&x, &params.layers[i]);
        relu_inplace(&mut y);
        conv_inputs.push(x);
        post_relu.push(y.clone());
        x = y;
    }
    let up = upsample2_forward(&x);
    conv_inputs.push(up.clone());
    let mut y = conv_forward(&up, &params.layers[4]);
    relu_inplace(&mut y);
    post_relu.push(y.clone());
    conv_inputs.push(y.clone());
    let logits = conv_forward(&y, &params.layers[5]);
    (
        logits,
        ForwardCache {
            conv_inputs,
            post_relu,
        },
    )
}

/// Reverse-mode gradients of every parameter given d(loss)/d(logits).
pub fn backward(params: &NetParams, cache: &ForwardCache, dlogits: &FeatureMap) -> NetParams {
    let mut grads = params.zeros_like();

    let (dx5, g5) = conv_backward(&cache.conv_inputs[5], &params.layers[5], dlogits, true);
    grads.layers[5] = g5;
    let mut d = dx5.expect("dx requested");
    relu_backward_inplace(&mut d, &cache.post_relu[4]);

    let (dx4, g4) = conv_backward(&cache.conv_inputs[4], &params.layers[4], &d, true);
    grads.layers[4] = g4;
    let mut d = upsample2_backward(&dx4.expect("dx requested"));
    relu_backward_inplace(&mut d, &cache.post_relu[3]);

    for i in (1..4).rev() {
        let (dx, g) = conv_backward(&cache.conv_inputs[i], &params.layers[i], &d, true);
        grads.layers[i] = g;
        d = dx.expect("dx requested");
        relu_backward_inplace(&mut d, &cache.post_relu[i - 1]);
    }
    let (_, g0) = conv_backward(&cache.conv_inputs[0], &params.layers[0], &d, false);
    grads.layers[0] = g0;
    grads
}

/// Adam with the standard moment constants.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &NetParams, lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let mut offset = 0usize;
        for (layer, glayer) in params.layers.iter_mut().zip(&grads.layers) {
            for (p, g) in [
                (&mut layer.weight, &glayer.weight),
                (&mut layer.bias, &glayer.bias),
            ] {
                for (i, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                    let j = offset + i;
                    self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * gv;
                    self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * gv * gv;
                    let m_hat = self.m[j] / b1t;
                    let v_hat = self.v[j] / b2t;
                    *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
                offset += p.len();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> FeatureMap {
        let mut m = FeatureMap::zeros(c, h, w);
        for v in &mut m.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    /// Direct quadruple-loop convolution used as the oracle.
    fn conv_oracle(x: &FeatureMap, layer: &ConvLayer) -> FeatureMap {
        let s = &layer.spec;
        let (oh, ow) = s.out_size(x.height, x.width);
        let mut out = FeatureMap::zeros(s.out_ch, oh, ow);
        for oc in 0..s.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.bias[oc];
                    for ic in 0..s.in_ch {
                        for ky in 0..s.ksize {
                            for kx in 0..s.ksize {
                                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < x.height
                                    && (ix as usize) < x.width
                                {
                                    acc += layer.w_at(oc, ic, ky, kx)
                                        * x.get(ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(oc, oy, ox, acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, ksize, pad) in [(1, 3, 1), (2, 3, 1), (1, 1, 0)] {
            let spec = ConvSpec {
                in_ch: 3,
                out_ch: 4,
                ksize,
                stride,
                pad,
            };
            let layer = ConvLayer::init(spec, 0.5, &mut rng);
            let x = random_map(3, 8, 12, &mut rng);
            let fast = conv_forward(&x, &layer);
            let slow = conv_oracle(&x, &layer);
            assert_eq!(fast.data.len(), slow.data.len());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Covers the specialized k3/s1/p1 path, the strided generic path,
        // and the 1x1 projection.
        for (ksize, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            let spec = ConvSpec {
                in_ch: 2,
                out_ch: 3,
                ksize,
                stride,
                pad,
            };
            let layer = ConvLayer::init(spec, 0.5, &mut rng);
            let x = random_map(2, 6, 8, &mut rng);
            let (oh, ow) = spec.out_size(6, 8);
            let dout = random_map(3, oh, ow, &mut rng);
            // Scalar objective L = <conv(x), dout>.
            let (dx, dlayer) = conv_backward(&x, &layer, &dout, true);
            let dx = dx.unwrap();
            let objective = |layer: &ConvLayer, x: &FeatureMap| -> f64 {
                conv_forward(x, layer)
                    .data
                    .iter()
                    .zip(&dout.data)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let h = 1e-6;
            for idx in [0usize, layer.weight.len() / 3, layer.weight.len() / 2, layer.weight.len() - 1] {
                let mut lp = layer.clone();
                lp.weight[idx] += h;
                let mut lm = layer.clone();
                lm.weight[idx] -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert!(
                    (fd - dlayer.weight[idx]).abs() < 1e-6,
                    "weight {idx} of k{ksize}s{stride}"
                );
            }
            for idx in [0usize, x.data.len() / 2, x.data.len() - 1] {
                let mut xp = x.clone();
                xp.data[idx] += h;
                let mut xm = x.clone();
                xm.data[idx] -= h;
                let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
                assert!(
                    (fd - dx.data[idx]).abs() < 1e-6,
                    "input {idx} of k{ksize}s{stride}"
                );
            }
            let fd_bias: f64 = dout.plane(1).iter().sum();
            assert!((fd_bias - dlayer.bias[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn upsample_round_trip_shapes_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(2, 3, 4, &mut rng);
        let up = upsample2_forward(&x);
        assert_eq!((up.height, up.width), (6, 8));
        assert_eq!(up.get(0, 5, 7), x.get(0, 2, 3));
        // <up(x), y> == <x, up^T(y)>.
        let y = random_map(2, 6, 8, &mut rng);
        let lhs: f64 = up.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let yt = upsample2_backward(&y);
        let rhs: f64 = x.data.iter().zip(&yt.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn forward_zero_params_gives_zero_logits() {
        let params = NetParams::zeros(5, (3, 4), 2);
        let x = FeatureMap::zeros(5, 8, 8);
        let (logits, _) = forward(&params, x);
        assert_eq!((logits.channels, logits.height, logits.width), (2, 4, 4));
        assert!(logits.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NetParams::init(5, (3, 4), 2, &mut rng);
        let x = random_map(5, 8, 8, &mut rng);
        let (a, _) = forward(&params, x.clone());
        let (b, _) = forward(&params, x);
        assert_eq!(a, b);
    }

    #[test]
    fn full_network_gradient_check() {
        // Miniature config on an 8x8 input; scalar objective
        // L = <logits, G> for a fixed random G exercises every layer.
        // Weights are scaled to O(0.5) and biases randomized so every
        // pre-activation sits away from the ReLU kink the finite-difference
        // step would otherwise straddle (zero biases put padding-border
        // cells exactly on it).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = NetParams::init(5, (3, 4), 2, &mut rng);
        params.scale(50.0);
        for layer in &mut params.layers {
            for b in &mut layer.bias {
                *b = rng.gen_range(-0.3..0.3);
            }
        }
        let x = random_map(5, 8, 8, &mut rng);
        let (logits, cache) = forward(&params, x.clone());
        let g = random_map(logits.channels, logits.height, logits.width, &mut rng);
        let grads = backward(&params, &cache, &g);

        let objective = |p: &NetParams| -> f64 {
            let (l, _) = forward(p, x.clone());
            l.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        let mut checked = 0;
        let mut pick = ChaCha8Rng::seed_from_u64(6);
        for li in 0..params.layers.len() {
            for _ in 0..4 {
                let wi = pick.gen_range(0..params.layers[li].weight.len());
                let mut pp = params.clone();
                pp.layers[li].weight[wi] += h;
                let mut pm = params.clone();
                pm.layers[li].weight[wi] -= h;
                let fd = (objective(&pp) - objective(&pm)) / (2.0 * h);
                let an = grads.layers[li].weight[wi];
                let denom = an.abs().max(fd.abs()).max(1e-8);
                max_rel = max_rel.max((an - fd).abs() / denom);
                checked += 1;
            }
            let bi = pick.gen_range(0..params.layers[li].bias.len());
            let mut pp = params.clone();
            pp.layers[li].bias[bi] += h;
            let mut pm = params.clone();
            pm.layers[li].bias[bi] -= h;
            let fd = (objective(&pp) - objective(&pm)) / (2.0 * h);
            let an = grads.layers[li].bias[bi];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((an - fd).abs() / denom);
            checked += 1;
        }
        assert!(checked >= 20);
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn adam_moves_toward_minimum() {
        // Minimize ||w||^2 via grads 2w; Adam should shrink every entry.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = NetParams::init(5, (3, 4), 2, &mut rng);
        let before: f64 = {
            let mut acc = 0.0;
            params.for_each_slice(|s| acc += s.iter().map(|v| v * v).sum::<f64>());
            acc
        };
        let mut adam = Adam::new(params.num_params());
        for _ in 0..50 {
            let mut grads = params.clone();
            grads.scale(2.0);
            adam.step(&mut params, &grads, 1e-3);
        }
        let after: f64 = {
            let mut acc = 0.0;
            params.for_each_slice(|s| acc += s.iter().map(|v| v * v).sum::<f64>());
            acc
        };
        assert!(after < before);
    }
}
