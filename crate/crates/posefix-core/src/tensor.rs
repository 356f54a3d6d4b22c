//! A minimal channel-major float32 tensor used for image data and the raw
//! dump interchange format. Network activations live in their own f64
//! buffers inside [`crate::refiner`]; this type is for storage and IO.

use serde::{Deserialize, Serialize};

/// `(c, h, w)` tensor, channel-major row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Bilinear sample of one channel at a continuous position; zero outside
    /// the grid.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                if wx == 0.0 {
                    continue;
                }
                let sx = x0 + dx;
                let sy = y0 + dy;
                if sx >= 0.0 && sy >= 0.0 && (sx as usize) < self.width && (sy as usize) < self.height
                {
                    acc += wx * wy * self.get(c, sy as usize, sx as usize) as f64;
                }
            }
        }
        acc
    }
}
