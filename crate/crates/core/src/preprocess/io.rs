//! Landmark CSV records and the `CLP1` clip container.
//!
//! A clip file is the 4-byte magic `CLP1`, then `T, H, W, C` as `u32` LE,
//! then `T·H·W·C` pixels as `f32` LE in row-major order.

use std::fmt::Write as _;
use std::path::Path;

use super::{LandmarkFrame, PreprocessError, Result, LANDMARK_COUNT};
use crate::tensor::Tensor;

pub const CLIP_MAGIC: &[u8; 4] = b"CLP1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PreprocessError + '_ {
    move |source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_landmark_line(line: &str) -> Result<LandmarkFrame> {
    let values = line
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| PreprocessError::Format(format!("bad landmark value {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != 2 * LANDMARK_COUNT {
        return Err(PreprocessError::Format(format!(
            "landmark record has {} values, expected {}",
            values.len(),
            2 * LANDMARK_COUNT
        )));
    }
    let points: Vec<(f64, f64)> = values.chunks(2).map(|p| (p[0], p[1])).collect();
    LandmarkFrame::from_slice(&points)
}

/// One record per non-empty line; errors carry the 1-based line number.
pub fn read_landmarks(text: &str) -> Result<Vec<LandmarkFrame>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_landmark_line(l).map_err(|e| PreprocessError::Format(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_landmarks(frames: &[LandmarkFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        for (i, (x, y)) in f.points().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x},{y}");
        }
        out.push('\n');
    }
    out
}

pub fn read_landmarks_file(path: &Path) -> Result<Vec<LandmarkFrame>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    read_landmarks(&text).map_err(|e| PreprocessError::Format(format!("{}: {e}", path.display())))
}

pub fn write_landmarks_file(path: &Path, frames: &[LandmarkFrame]) -> Result<()> {
    crate::fsutil::write_atomic(path, write_landmarks(frames).as_bytes()).map_err(io_err(path))
}

pub fn write_clip(frames: &Tensor<f32>) -> Result<Vec<u8>> {
    if frames.rank() != 4 {
        return Err(PreprocessError::Usage(format!(
            "clip tensor must be [T,H,W,C], got shape {:?}",
            frames.shape()
        )));
    }
    let mut out = Vec::with_capacity(20 + 4 * frames.numel());
    out.extend_from_slice(CLIP_MAGIC);
    for &d in frames.shape() {
        let d = u32::try_from(d).map_err(|_| PreprocessError::Usage(format!("clip dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_clip(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 20 || &bytes[..4] != CLIP_MAGIC {
        return Err(PreprocessError::Format("missing CLP1 header".into()));
    }
    let dims: Vec<usize> = bytes[4..20]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| PreprocessError::Format("clip dimensions overflow".into()))?;
    let body = &bytes[20..];
    if n.checked_mul(4) != Some(body.len()) {
        return Err(PreprocessError::Format(format!(
            "clip {:?} needs {} pixel bytes, file has {}",
            dims,
            n.saturating_mul(4),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, data).map_err(|e| PreprocessError::Format(e.to_string()))
}

pub fn read_clip_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    read_clip(&bytes).map_err(|e| PreprocessError::Format(format!("{}: {e}", path.display())))
}

pub fn write_clip_file(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    crate::fsutil::write_atomic(path, &write_clip(frames)?).map_err(io_err(path))
}
