//! Landmark-driven lip cropping.
//!
//! Per frame: take the tight box around the 24 lip landmarks, grow it about
//! its center to the target aspect ratio, then crop and bilinearly resample
//! to 30×18. The cropped frames are then brought to a fixed clip length.

mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClipId;
use crate::tensor::Tensor;

pub use io::{
    parse_landmark_line, read_clip, read_clip_file, read_landmarks, read_landmarks_file, write_clip,
    write_clip_file, write_landmarks, write_landmarks_file, CLIP_MAGIC,
};

pub const LANDMARK_COUNT: usize = 24;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("degenerate landmarks: zero {axis} extent")]
    DegenerateLandmarks { axis: &'static str },
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
    #[error("bounding box {0:?} lies entirely outside the frame")]
    OutOfFrame(BoundingBox),
    #[error("invalid preprocess config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<PreprocessError>,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PreprocessError> = std::result::Result<T, E>;

/// The 24 (x, y) lip landmarks of one frame, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkFrame {
    points: [(f64, f64); LANDMARK_COUNT],
}

impl LandmarkFrame {
    pub fn new(points: [(f64, f64); LANDMARK_COUNT]) -> Result<Self> {
        for (i, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
                return Err(PreprocessError::InvalidLandmarks(format!(
                    "point {i} = ({x}, {y}) must be finite and non-negative"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn from_slice(points: &[(f64, f64)]) -> Result<Self> {
        let arr: [(f64, f64); LANDMARK_COUNT] = points.try_into().map_err(|_| {
            PreprocessError::InvalidLandmarks(format!("expected {LANDMARK_COUNT} points, got {}", points.len()))
        })?;
        Self::new(arr)
    }

    pub fn points(&self) -> &[(f64, f64); LANDMARK_COUNT] {
        &self.points
    }
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.width() / self.height()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_aspect_ratio: f64,
    pub target_width: usize,
    pub target_height: usize,
    pub clip_length: usize,
    pub interpolation: Interpolation,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_aspect_ratio: 5.0 / 3.0,
            target_width: 30,
            target_height: 18,
            clip_length: 32,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_aspect_ratio > 0.0 && self.target_aspect_ratio.is_finite()) {
            return Err(PreprocessError::Config("target_aspect_ratio must be positive".into()));
        }
        if self.target_width == 0 || self.target_height == 0 || self.clip_length == 0 {
            return Err(PreprocessError::Config("target size and clip_length must be >= 1".into()));
        }
        let ratio = self.target_width as f64 / self.target_height as f64;
        if (ratio - self.target_aspect_ratio).abs() > 1e-9 {
            return Err(PreprocessError::Config(format!(
                "target_width/target_height = {ratio} does not equal target_aspect_ratio {}",
                self.target_aspect_ratio
            )));
        }
        Ok(())
    }
}

/// Row-major `H×W×C` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(PreprocessError::Usage(format!(
                "image {height}×{width}×{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: &[f32]) -> Self {
        let mut data = Vec::with_capacity(height * width * value.len());
        for _ in 0..height * width {
            data.extend_from_slice(value);
        }
        Self {
            height,
            width,
            channels: value.len(),
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Preprocessed network input.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    /// `[T, 18, 30, C]`
    pub frames: Tensor<f32>,
    pub id: ClipId,
}

/// Tight axis-aligned hull of the landmarks.
pub fn lip_bbox(landmarks: &LandmarkFrame) -> Result<BoundingBox> {
    let mut b = BoundingBox {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for &(x, y) in landmarks.points() {
        b.x_min = b.x_min.min(x);
        b.x_max = b.x_max.max(x);
        b.y_min = b.y_min.min(y);
        b.y_max = b.y_max.max(y);
    }
    if b.width() <= 0.0 {
        return Err(PreprocessError::DegenerateLandmarks { axis: "x" });
    }
    if b.height() <= 0.0 {
        return Err(PreprocessError::DegenerateLandmarks { axis: "y" });
    }
    Ok(b)
}

/// Grows the box about its center until `width / height == ar`: a box that
/// is too narrow gains width, any other gains height.
pub fn adjust_aspect(b: BoundingBox, ar: f64) -> BoundingBox {
    let (cx, cy) = b.center();
    let (mut w, mut h) = (b.width(), b.height());
    if w / h < ar {
        w = h * ar;
    } else {
        h = w * (1.0 / ar);
    }
    BoundingBox {
        x_min: cx - w / 2.0,
        x_max: cx + w / 2.0,
        y_min: cy - h / 2.0,
        y_max: cy + h / 2.0,
    }
}

#[inline]
fn bilinear(frame: &Image, x: f64, y: f64, out: &mut [f32]) {
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let (xa, xb) = (clamp(x0, frame.width), clamp(x0 + 1, frame.width));
    let (ya, yb) = (clamp(y0, frame.height), clamp(y0 + 1, frame.height));
    let (p00, p01) = (frame.pixel(ya, xa), frame.pixel(ya, xb));
    let (p10, p11) = (frame.pixel(yb, xa), frame.pixel(yb, xb));
    for c in 0..out.len() {
        let top = p00[c] + (p01[c] - p00[c]) * fx;
        let bot = p10[c] + (p11[c] - p10[c]) * fx;
        out[c] = top + (bot - top) * fy;
    }
}

/// Resamples the region under `b` to `target_height × target_width`.
///
/// Output pixel `(u, v)` samples the source at the center of its cell in
/// box coordinates; source pixel `j` has its center at `j`. Samples beyond
/// the frame replicate the edge.
pub fn crop_resize(frame: &Image, b: &BoundingBox, cfg: &PreprocessConfig) -> Result<Image> {
    if b.x_max <= 0.0 || b.y_max <= 0.0 || b.x_min >= frame.width as f64 || b.y_min >= frame.height as f64 {
        return Err(PreprocessError::OutOfFrame(*b));
    }
    let (tw, th, c) = (cfg.target_width, cfg.target_height, frame.channels);
    let sx = b.width() / tw as f64;
    let sy = b.height() / th as f64;
    let mut data = vec![0f32; th * tw * c];
    for v in 0..th {
        let y = b.y_min + (v as f64 + 0.5) * sy - 0.5;
        for u in 0..tw {
            let x = b.x_min + (u as f64 + 0.5) * sx - 0.5;
            let o = (v * tw + u) * c;
            bilinear(frame, x, y, &mut data[o..o + c]);
        }
    }
    data.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    Image::new(th, tw, c, data)
}

/// Indices of `t` frames chosen from `n`: uniformly spaced including both
/// ends when `n >= t`, otherwise every frame followed by repeats of the last.
pub fn temporal_indices(n: usize, t: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(PreprocessError::Usage("temporal_sample of an empty frame list".into()));
    }
    if t == 0 {
        return Err(PreprocessError::Usage("clip length must be >= 1".into()));
    }
    if n < t {
        return Ok((0..t).map(|i| i.min(n - 1)).collect());
    }
    if t == 1 {
        return Ok(vec![0]);
    }
    Ok((0..t)
        .map(|i| ((i * (n - 1)) as f64 / (t - 1) as f64).round() as usize)
        .collect())
}

pub fn temporal_sample<T: Clone>(frames: &[T], t: usize) -> Result<Vec<T>> {
    Ok(temporal_indices(frames.len(), t)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Crops a single frame by its landmarks.
pub fn preprocess_frame(frame: &Image, landmarks: &LandmarkFrame, cfg: &PreprocessConfig) -> Result<Image> {
    let b = adjust_aspect(lip_bbox(landmarks)?, cfg.target_aspect_ratio);
    crop_resize(frame, &b, cfg)
}

/// Full per-video pipeline producing a `[T, 18, 30, C]` clip.
pub fn preprocess_clip(
    frames: &[Image],
    landmarks: &[LandmarkFrame],
    cfg: &PreprocessConfig,
    id: ClipId,
) -> Result<VideoClip> {
    cfg.validate()?;
    if frames.len() != landmarks.len() {
        return Err(PreprocessError::Usage(format!(
            "{} frames but {} landmark records",
            frames.len(),
            landmarks.len()
        )));
    }
    let crops = frames
        .iter()
        .zip(landmarks)
        .enumerate()
        .map(|(index, (f, l))| {
            preprocess_frame(f, l, cfg).map_err(|e| PreprocessError::Frame {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let picked = temporal_sample(&crops, cfg.clip_length)?;
    let c = picked[0].channels;
    let mut data = Vec::with_capacity(cfg.clip_length * cfg.target_height * cfg.target_width * c);
    for img in &picked {
        data.extend_from_slice(&img.data);
    }
    let frames = Tensor::new(vec![cfg.clip_length, cfg.target_height, cfg.target_width, c], data)
        .map_err(|e| PreprocessError::Usage(e.to_string()))?;
    Ok(VideoClip { frames, id })
}
