//! The raw tensor-dump interchange format: little-endian float32, row-major,
//! channel-major, with a JSON sidecar describing the shape.
//!
//! The sidecar lives at `<path>.json` next to the `<path>.bin` payload:
//!
//! ```json
//! {"w": 64, "h": 48, "joints": 3, "dtype": "f32le", "layout": "row-major"}
//! ```
//!
//! `joints` counts planes; for heatmap stacks that is the joint count, for
//! image tensors the color channel count. The same format (with a manifest
//! on top) stores trained network parameters.

use crate::codec::Heatmap;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DTYPE: &str = "f32le";
pub const LAYOUT: &str = "row-major";

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad sidecar {path}: {source}")]
    Sidecar {
        path: String,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Format(String),
}

/// Sidecar schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub w: usize,
    pub h: usize,
    pub joints: usize,
    pub dtype: String,
    pub layout: String,
}

fn bin_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DumpError + '_ {
    move |source| DumpError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `<path>.bin` and `<path>.json` (any extension on `path` is
/// replaced).
pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), DumpError> {
    let path = path.as_ref();
    let header = DumpHeader {
        w: tensor.width,
        h: tensor.height,
        joints: tensor.channels,
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
    };
    let mut bytes = Vec::with_capacity(tensor.data.len() * 4);
    for v in &tensor.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bp = bin_path(path);
    std::fs::write(&bp, bytes).map_err(io_err(&bp))?;
    let sp = sidecar_path(path);
    std::fs::write(
        &sp,
        serde_json::to_string(&header).expect("header serialization cannot fail"),
    )
    .map_err(io_err(&sp))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, DumpError> {
    let path = path.as_ref();
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(io_err(&sp))?;
    let header: DumpHeader =
        serde_json::from_str(&text).map_err(|source| DumpError::Sidecar {
            path: sp.display().to_string(),
            source,
        })?;
    if header.dtype != DTYPE || header.layout != LAYOUT {
        return Err(DumpError::Format(format!(
            "unsupported dtype/layout {}/{}",
            header.dtype, header.layout
        )));
    }
    let bp = bin_path(path);
    let bytes = std::fs::read(&bp).map_err(io_err(&bp))?;
    let expected = header.w * header.h * header.joints * 4;
    if bytes.len() != expected {
        return Err(DumpError::Format(format!(
            "{} holds {} bytes, header implies {}",
            bp.display(),
            bytes.len(),
            expected
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor {
        channels: header.joints,
        height: header.h,
        width: header.w,
        data,
    })
}

/// Dump a per-joint heatmap stack (debugging aid).
pub fn write_heatmaps(path: impl AsRef<Path>, maps: &[Heatmap]) -> Result<(), DumpError> {
    let (w, h) = match maps.first() {
        Some(m) => (m.width(), m.height()),
        None => return Err(DumpError::Format("empty heatmap stack".into())),
    };
    let mut tensor = Tensor::zeros(maps.len(), h, w);
    for (c, map) in maps.iter().enumerate() {
        if map.width() != w || map.height() != h {
            return Err(DumpError::Format("heatmap shapes differ".into()));
        }
        for (dst, src) in tensor.channel_mut(c).iter_mut().zip(map.data()) {
            *dst = *src as f32;
        }
    }
    write_tensor(path, &tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Tensor::zeros(2, 3, 4);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = i as f32 * 0.25 - 1.5;
        }
        let path = dir.path().join("sample.bin");
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn length_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::zeros(1, 2, 2);
        let path = dir.path().join("bad.bin");
        write_tensor(&path, &t).unwrap();
        std::fs::write(path.with_extension("bin"), [0u8; 7]).unwrap();
        assert!(matches!(read_tensor(&path), Err(DumpError::Format(_))));
    }

    #[test]
    fn heatmap_stack_dump() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Heatmap::zeros(3, 2);
        a.set(1, 1, 0.5);
        let b = Heatmap::zeros(3, 2);
        let path = dir.path().join("maps");
        write_heatmaps(&path, &[a, b]).unwrap();
        let t = read_tensor(&path).unwrap();
        assert_eq!((t.channels, t.height, t.width), (2, 2, 3));
        assert_eq!(t.get(0, 1, 1), 0.5);
    }
}
