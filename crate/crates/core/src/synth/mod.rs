//! Procedural lip-video generator.
//!
//! Each utterance is a pair of closed contours (outer and inner lip edge)
//! whose opening, width and protrusion follow a phrase trajectory. Static
//! appearance comes from [`Appearance`]; how a client moves through a phrase
//! comes from [`Behavior`]; emotions stretch time and bias the geometry.

mod corpus;

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::preprocess::{Image, LandmarkFrame, LANDMARK_COUNT};
use crate::seed;

pub use corpus::{
    gen_corpus, render_clip, CorpusConfig, CorpusError, Manifest, ManifestEntry, SplitSizes, Splits,
    MANIFEST_FILE,
};

const SKIN: [f32; 3] = [0.87, 0.72, 0.62];
const CAVITY: [f32; 3] = [0.16, 0.05, 0.06];
const SUPERSAMPLE: usize = 3;
/// Largest corner displacement produced by `corner_lift = ±1`, in pixels.
const CORNER_LIFT_PX: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub base_width: f64,
    /// Mouth opening at full aperture.
    pub base_height: f64,
    pub lip_thickness: f64,
    pub color: [f64; 3],
    /// Exponent of the `(1 − s²)^c` lip profile; larger is more pointed.
    pub corner_curvature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub tempo_scale: f64,
    pub amplitude_scale: f64,
    pub phase_offset: f64,
    /// Left/right imbalance of the opening, in `(−0.25, 0.25)`.
    pub asymmetry: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub appearance: Appearance,
    pub behavior: Behavior,
}

impl IdentityParams {
    pub fn appearance_vector(&self) -> [f64; 7] {
        let a = &self.appearance;
        [
            a.base_width,
            a.base_height,
            a.lip_thickness,
            a.color[0],
            a.color[1],
            a.color[2],
            a.corner_curvature,
        ]
    }

    pub fn as_vector(&self) -> Vec<f64> {
        let b = &self.behavior;
        let mut v = self.appearance_vector().to_vec();
        v.extend([b.tempo_scale, b.amplitude_scale, b.phase_offset, b.asymmetry]);
        v
    }
}

pub fn make_identity(seed: u64) -> IdentityParams {
    let mut rng = seed::rng(seed, &[]);
    IdentityParams {
        appearance: Appearance {
            base_width: rng.random_range(36.0..60.0),
            base_height: rng.random_range(7.0..18.0),
            lip_thickness: rng.random_range(3.0..6.5),
            color: [
                rng.random_range(0.40..0.95),
                rng.random_range(0.10..0.55),
                rng.random_range(0.15..0.60),
            ],
            corner_curvature: rng.random_range(0.6..1.6),
        },
        behavior: Behavior {
            tempo_scale: rng.random_range(0.8..1.25),
            amplitude_scale: rng.random_range(0.7..1.4),
            phase_offset: rng.random_range(0.0..TAU),
            asymmetry: rng.random_range(-0.25..0.25),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Cycles per utterance.
    pub frequency: f64,
    pub phase: f64,
}

/// Control trajectory of one phrase: aperture, width and protrusion over
/// normalized time `τ ∈ [0, 1]`, each a sum of sinusoids around 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseScript {
    pub phrase_id: u32,
    pub channels: [Vec<Sinusoid>; 3],
}

/// Sum of amplitudes per channel; keeps the base trajectory in `[0.05, 0.95]`.
const PHRASE_SWING: f64 = 0.45;

pub fn make_phrase(phrase_id: u32, seed: u64) -> PhraseScript {
    let mut rng = seed::rng(seed, &[]);
    let mut channel = || {
        let n = rng.random_range(3..=5);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights
            .into_iter()
            .map(|w| Sinusoid {
                amplitude: PHRASE_SWING * w / total,
                frequency: rng.random_range(0.5..3.5),
                phase: rng.random_range(0.0..TAU),
            })
            .collect::<Vec<_>>()
    };
    let channels = [channel(), channel(), channel()];
    PhraseScript { phrase_id, channels }
}

impl PhraseScript {
    /// `(aperture, width, protrusion)` at `τ`, with each sinusoid shifted by
    /// `phase_offset` and the swing scaled by `amplitude_scale`.
    pub fn sample(&self, tau: f64, phase_offset: f64, amplitude_scale: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (o, comps) in out.iter_mut().zip(&self.channels) {
            let swing: f64 = comps
                .iter()
                .map(|c| c.amplitude * (TAU * c.frequency * tau + c.phase + phase_offset).sin())
                .sum();
            *o = (0.5 + amplitude_scale * swing).clamp(0.0, 1.0);
        }
        out
    }

    pub fn base(&self, tau: f64) -> [f64; 3] {
        self.sample(tau, 0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionParams {
    pub emotion_id: u32,
    pub tempo_multiplier: f64,
    /// `(corner_lift, aperture_bias)`.
    pub expression_offset: (f64, f64),
    pub jitter_std: f64,
}

impl EmotionParams {
    pub fn neutral(emotion_id: u32) -> Self {
        Self {
            emotion_id,
            tempo_multiplier: 1.0,
            expression_offset: (0.0, 0.0),
            jitter_std: 0.0,
        }
    }
}

/// Emotion 0 is neutral; the others draw tempo, expression and jitter.
pub fn make_emotion(emotion_id: u32, seed: u64) -> EmotionParams {
    if emotion_id == 0 {
        return EmotionParams::neutral(0);
    }
    let mut rng = seed::rng(seed, &[]);
    EmotionParams {
        emotion_id,
        tempo_multiplier: rng.random_range(0.75..1.35),
        expression_offset: (rng.random_range(-0.35..0.35), rng.random_range(-0.12..0.12)),
        jitter_std: rng.random_range(0.005..0.03),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            frames_per_video: 48,
            height: 64,
            width: 96,
        }
    }
}

pub struct Utterance {
    pub frames: Vec<Image>,
    pub landmarks: Vec<LandmarkFrame>,
}

pub fn frame_count(frames_per_video: usize, id: &IdentityParams, emo: &EmotionParams) -> usize {
    let n = (frames_per_video as f64 / (id.behavior.tempo_scale * emo.tempo_multiplier)).round();
    (n as usize).max(2)
}

/// Lip geometry of one frame, evaluated column by column.
struct MouthShape {
    cx: f64,
    cy: f64,
    half_width: f64,
    open: f64,
    thick_upper: f64,
    thick_lower: f64,
    curvature: f64,
    asymmetry: f64,
    lift: f64,
}

/// Vertical edges at one column: outer top, inner top, inner bottom, outer bottom.
type Edges = [f64; 4];

impl MouthShape {
    fn new(id: &IdentityParams, emo: &EmotionParams, ctrl: [f64; 3], cfg: &RenderConfig) -> Self {
        let a = &id.appearance;
        let [aperture, width, protrusion] = ctrl;
        let thick = a.lip_thickness * (0.8 + 0.4 * protrusion);
        Self {
            cx: (cfg.width as f64 - 1.0) / 2.0,
            cy: (cfg.height as f64 - 1.0) / 2.0,
            half_width: a.base_width / 2.0 * (0.85 + 0.3 * width),
            open: a.base_height * aperture,
            thick_upper: thick,
            thick_lower: thick * 1.2,
            curvature: a.corner_curvature,
            asymmetry: id.behavior.asymmetry,
            lift: emo.expression_offset.0 * CORNER_LIFT_PX,
        }
    }

    /// Edges at normalized horizontal position `s ∈ [−1, 1]`.
    fn edges(&self, s: f64) -> Edges {
        let prof = (1.0 - s * s).max(0.0).powf(self.curvature);
        let body = prof.sqrt();
        let mid = self.cy - self.lift * s * s;
        let half_open = self.open * (1.0 + self.asymmetry * s) / 2.0 * prof;
        let it = mid - half_open;
        let ib = mid + half_open;
        [it - self.thick_upper * body, it, ib, ib + self.thick_lower * body]
    }

    fn x_at(&self, s: f64) -> f64 {
        self.cx + s * self.half_width
    }

    /// 12 points at equal arc-length fractions around the closed contour
    /// given by edge indices `top`/`bottom`, starting at the left corner.
    fn contour_landmarks(&self, top: usize, bottom: usize) -> Vec<(f64, f64)> {
        const SAMPLES: usize = 256;
        let mut path = Vec::with_capacity(2 * SAMPLES + 1);
        for i in 0..=SAMPLES {
            let s = -1.0 + 2.0 * i as f64 / SAMPLES as f64;
            path.push((self.x_at(s), self.edges(s)[top]));
        }
        for i in (0..SAMPLES).rev() {
            let s = -1.0 + 2.0 * i as f64 / SAMPLES as f64;
            path.push((self.x_at(s), self.edges(s)[bottom]));
        }
        let mut cum = vec![0.0];
        for w in path.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        let per = LANDMARK_COUNT / 2;
        let mut out = Vec::with_capacity(per);
        let mut j = 0;
        for k in 0..per {
            let target = total * k as f64 / per as f64;
            while j + 1 < cum.len() - 1 && cum[j + 1] < target {
                j += 1;
            }
            let seg = cum[j + 1] - cum[j];
            let f = if seg > 0.0 { (target - cum[j]) / seg } else { 0.0 };
            let (a, b) = (path[j], path[j + 1]);
            out.push((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)));
        }
        out
    }

    fn landmarks(&self) -> LandmarkFrame {
        let mut pts = self.contour_landmarks(0, 3);
        pts.extend(self.contour_landmarks(1, 2));
        for p in &mut pts {
            p.0 = p.0.max(0.0);
            p.1 = p.1.max(0.0);
        }
        LandmarkFrame::from_slice(&pts).expect("contour points are finite")
    }

    fn render(&self, color: [f32; 3], cfg: &RenderConfig) -> Image {
        let mut img = Image::filled(cfg.height, cfg.width, &SKIN);
        let upper: [f32; 3] = color.map(|c| c * 0.88);
        let x0 = (self.cx - self.half_width - 1.0).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.half_width + 1.0).ceil() as usize).min(cfg.width - 1);
        let offsets: Vec<f64> = (0..SUPERSAMPLE)
            .map(|i| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5)
            .collect();
        let cols: Vec<Option<Edges>> = (x0..=x1)
            .flat_map(|x| offsets.iter().map(move |o| x as f64 + o))
            .map(|x| {
                let s = (x - self.cx) / self.half_width;
                (s.abs() < 1.0).then(|| self.edges(s))
            })
            .collect();
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for e in cols.iter().flatten() {
            y0 = y0.min(e[0]);
            y1 = y1.max(e[3]);
        }
        if !y0.is_finite() {
            return img;
        }
        let y0 = (y0 - 1.0).floor().max(0.0) as usize;
        let y1 = ((y1 + 1.0).ceil() as usize).min(cfg.height - 1);
        let weight = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut acc = [0f32; 3];
                for (ci, _) in offsets.iter().enumerate() {
                    let edges = cols[(x - x0) * SUPERSAMPLE + ci];
                    for oy in &offsets {
                        let py = y as f64 + oy;
                        let c = match edges {
                            Some([ot, it, ib, ob]) if py >= ot && py <= ob => {
                                if py < it {
                                    upper
                                } else if py <= ib {
                                    if ib > it {
                                        CAVITY
                                    } else {
                                        color
                                    }
                                } else {
                                    color
                                }
                            }
                            _ => SKIN,
                        };
                        for k in 0..3 {
                            acc[k] += c[k] * weight;
                        }
                    }
                }
                let o = (y * cfg.width + x) * 3;
                img.data[o..o + 3].copy_from_slice(&acc);
            }
        }
        img
    }
}

/// Renders one take. Noise is drawn only from `take_seed`, so the same
/// arguments always give the same frames.
pub fn render_utterance(
    id: &IdentityParams,
    phrase: &PhraseScript,
    emo: &EmotionParams,
    take_seed: u64,
    cfg: &RenderConfig,
) -> Utterance {
    let n = frame_count(cfg.frames_per_video, id, emo);
    let mut rng = seed::rng(take_seed, &[]);
    let jitter = Normal::new(0.0, emo.jitter_std.max(0.0)).expect("finite jitter std");
    let color = id.appearance.color.map(|c| c as f32);
    let mut frames = Vec::with_capacity(n);
    let mut landmarks = Vec::with_capacity(n);
    for i in 0..n {
        let tau = i as f64 / (n - 1) as f64;
        let mut ctrl = phrase.sample(tau, id.behavior.phase_offset, id.behavior.amplitude_scale);
        ctrl[0] += emo.expression_offset.1;
        if emo.jitter_std > 0.0 {
            for c in &mut ctrl {
                *c += jitter.sample(&mut rng);
            }
        }
        let ctrl = ctrl.map(|c| c.clamp(0.0, 1.0));
        let shape = MouthShape::new(id, emo, ctrl, cfg);
        frames.push(shape.render(color, cfg));
        landmarks.push(shape.landmarks());
    }
    Utterance { frames, landmarks }
}
