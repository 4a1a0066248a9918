//! Two-pathway 3-D CNN embedder.
//!
//! The fast pathway sees every frame with `β·C` channels; the slow pathway
//! sees every α-th frame with `C` channels. After each stage a strided
//! temporal convolution compresses fast features to the slow frame rate and
//! appends them to the slow stream. Information only flows fast→slow. Both
//! streams are globally pooled, concatenated, projected and L2-normalized.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::par::Execution;
use crate::seed::{self, tag};
use crate::tensor::{
    self, conv_output_len, glorot_bound, ParamStore, Scalar, Tape, Tensor, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed model config: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub slow_channels: usize,
    /// `[kT, kH, kW]`, each odd so "same" padding is symmetric.
    pub kernel: [usize; 3],
    pub spatial_stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlowFastConfig {
    pub alpha: usize,
    pub beta: f64,
    pub clip_length: usize,
    pub stages: Vec<StageConfig>,
    pub embed_dim: usize,
    pub input: InputShape,
    /// Lateral output channels per fast channel.
    pub lateral_multiplier: usize,
}

impl Default for SlowFastConfig {
    fn default() -> Self {
        let stage = |c| StageConfig {
            slow_channels: c,
            kernel: [3, 3, 3],
            spatial_stride: 2,
        };
        Self {
            alpha: 8,
            beta: 0.125,
            clip_length: 32,
            stages: vec![stage(16), stage(32), stage(64)],
            embed_dim: 64,
            input: InputShape {
                height: 18,
                width: 30,
                channels: 3,
            },
            lateral_multiplier: 2,
        }
    }
}

/// Resolved per-stage dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageDims {
    pub fast_in: usize,
    pub fast_out: usize,
    pub slow_in: usize,
    pub slow_out: usize,
    pub lateral_out: usize,
    /// Spatial `(H, W)` after this stage.
    pub spatial: (usize, usize),
}

impl SlowFastConfig {
    pub fn fast_channels(&self, slow_channels: usize) -> usize {
        (self.beta * slow_channels as f64).round() as usize
    }

    pub fn slow_frames(&self) -> usize {
        self.clip_length / self.alpha
    }

    /// Validates invariants and resolves every stage's channel and spatial
    /// sizes.
    pub fn stage_dims(&self) -> Result<Vec<StageDims>> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.alpha < 2 {
            return bad(format!("alpha = {} must be >= 2", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if self.clip_length == 0 || !self.clip_length.is_multiple_of(self.alpha) {
            return bad(format!(
                "clip_length {} is not divisible by alpha {}",
                self.clip_length, self.alpha
            ));
        }
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.embed_dim == 0 || self.lateral_multiplier == 0 {
            return bad("embed_dim and lateral_multiplier must be >= 1".into());
        }
        let InputShape {
            height,
            width,
            channels,
        } = self.input;
        if height == 0 || width == 0 || channels == 0 {
            return bad("input dimensions must be >= 1".into());
        }
        let (mut h, mut w) = (height, width);
        let (mut fast_in, mut slow_in) = (channels, channels);
        let mut dims = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel.iter().any(|k| k % 2 == 0) {
                return bad(format!("stage {i}: kernel sizes must be odd, got {:?}", s.kernel));
            }
            if s.spatial_stride == 0 {
                return bad(format!("stage {i}: spatial_stride must be >= 1"));
            }
            let fast_out = self.fast_channels(s.slow_channels);
            if fast_out == 0 {
                return bad(format!(
                    "stage {i}: beta·slow_channels = {}·{} rounds to zero fast channels",
                    self.beta, s.slow_channels
                ));
            }
            let [_, kh, kw] = s.kernel;
            let oh = conv_output_len(h, kh, s.spatial_stride, kh / 2);
            let ow = conv_output_len(w, kw, s.spatial_stride, kw / 2);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return bad(format!("stage {i}: spatial size {h}x{w} collapses below 1"));
            };
            let lateral_out = self.lateral_multiplier * fast_out;
            dims.push(StageDims {
                fast_in,
                fast_out,
                slow_in,
                slow_out: s.slow_channels,
                lateral_out,
                spatial: (oh, ow),
            });
            (h, w) = (oh, ow);
            fast_in = fast_out;
            slow_in = s.slow_channels + lateral_out;
        }
        Ok(dims)
    }

    /// Width of the pooled, concatenated pathway features.
    pub fn feature_dim(&self) -> Result<usize> {
        let dims = self.stage_dims()?;
        let last = dims.last().expect("at least one stage");
        Ok(last.fast_out + last.slow_out + last.lateral_out)
    }

    /// Parameter count derived from the layer shapes without building.
    pub fn analytic_param_count(&self) -> Result<usize> {
        let dims = self.stage_dims()?;
        let mut n = 0;
        for (s, d) in self.stages.iter().zip(&dims) {
            let taps: usize = s.kernel.iter().product();
            n += taps * d.fast_in * d.fast_out + 2 * d.fast_out;
            n += taps * d.slow_in * d.slow_out + 2 * d.slow_out;
            n += self.alpha * d.fast_out * d.lateral_out + d.lateral_out;
        }
        Ok(n + (self.feature_dim()? + 1) * self.embed_dim)
    }
}

/// Parameter indices for one stage of both pathways.
#[derive(Clone, Debug, PartialEq, Eq)]
struct StageParams {
    fast: [usize; 3],
    slow: [usize; 3],
    lateral: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlowFastModel {
    config: SlowFastConfig,
    params: ParamStore<f32>,
}

/// Tape handles to intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub input: Var,
    /// Fast stage outputs, `[T, H, W, Cf]`.
    pub fast: Vec<Var>,
    /// Slow stage outputs before fusion, `[T/α, H, W, Cs]`.
    pub slow: Vec<Var>,
    pub fast_pooled: Var,
    pub slow_pooled: Var,
    pub embedding: Var,
}

/// Fast→slow fusion: a `[α,1,1]` convolution with temporal stride α plus
/// bias, concatenated onto the slow channels.
pub fn lateral_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    fast: Var,
    slow: Var,
    weight: Var,
    bias: Var,
    alpha: usize,
) -> tensor::Result<Var> {
    let (tf, ts) = (tape.value(fast).shape()[0], tape.value(slow).shape()[0]);
    if tf != alpha * ts {
        return Err(TensorError::Dimension {
            op: "lateral_fuse",
            axis: "T",
            expected: alpha * ts,
            got: tf,
        });
    }
    let lateral = tape.conv3d(fast, weight, [alpha, 1, 1], [0, 0, 0])?;
    let lateral = tape.bias_add(lateral, bias)?;
    tape.concat_last(slow, lateral)
}

fn stage_param_indices(params: &ParamStore<impl Scalar>, i: usize) -> StageParams {
    let idx = |name: String| params.position(&name).unwrap_or_else(|| panic!("missing parameter {name}"));
    let path = |p: &str| {
        [
            idx(format!("{p}.stage{i}.conv.weight")),
            idx(format!("{p}.stage{i}.affine.scale")),
            idx(format!("{p}.stage{i}.affine.shift")),
        ]
    };
    StageParams {
        fast: path("fast"),
        slow: path("slow"),
        lateral: [
            idx(format!("lateral.stage{i}.conv.weight")),
            idx(format!("lateral.stage{i}.bias")),
        ],
    }
}

/// Builds the initial parameter set; every tensor draws from its own
/// seed path so adding a layer does not reshuffle the others.
fn init_params(cfg: &SlowFastConfig, seed_value: u64) -> Result<ParamStore<f32>> {
    let dims = cfg.stage_dims()?;
    let mut store = ParamStore::new();
    let add = |store: &mut ParamStore<f32>, name: String, t: Tensor<f32>| store.add(name, t).map(|_| ());
    let mut next = 0u64;
    let mut glorot = |shape: Vec<usize>, fan_in: usize, fan_out: usize| {
        next += 1;
        Tensor::uniform(shape, glorot_bound(fan_in, fan_out), &mut seed::rng(seed_value, &[tag::INIT, next]))
    };
    for (i, (s, d)) in cfg.stages.iter().zip(&dims).enumerate() {
        let taps: usize = s.kernel.iter().product();
        let [kt, kh, kw] = s.kernel;
        for (path, cin, cout) in [("fast", d.fast_in, d.fast_out), ("slow", d.slow_in, d.slow_out)] {
            let w = glorot(vec![kt, kh, kw, cin, cout], taps * cin, taps * cout);
            add(&mut store, format!("{path}.stage{i}.conv.weight"), w)?;
            add(&mut store, format!("{path}.stage{i}.affine.scale"), Tensor::full(vec![cout], 1.0))?;
            add(&mut store, format!("{path}.stage{i}.affine.shift"), Tensor::zeros(vec![cout]))?;
        }
        let w = glorot(
            vec![cfg.alpha, 1, 1, d.fast_out, d.lateral_out],
            cfg.alpha * d.fast_out,
            cfg.alpha * d.lateral_out,
        );
        add(&mut store, format!("lateral.stage{i}.conv.weight"), w)?;
        add(&mut store, format!("lateral.stage{i}.bias"), Tensor::zeros(vec![d.lateral_out]))?;
    }
    let din = cfg.feature_dim()?;
    let w = glorot(vec![din, cfg.embed_dim], din, cfg.embed_dim);
    add(&mut store, "head.linear.weight".into(), w)?;
    add(&mut store, "head.linear.bias".into(), Tensor::zeros(vec![cfg.embed_dim]))?;
    Ok(store)
}

/// Runs the network on `tape` with parameters taken from `params`.
pub fn forward<T: Scalar>(
    cfg: &SlowFastConfig,
    params: &ParamStore<T>,
    tape: &mut Tape<T>,
    input: Var,
) -> Result<Forward> {
    let shape = tape.value(input).shape().to_vec();
    let expected = [cfg.clip_length, cfg.input.height, cfg.input.width, cfg.input.channels];
    if shape.len() != 4 {
        return Err(TensorError::Rank {
            op: "embed",
            expected: 4,
            got: shape.len(),
        }
        .into());
    }
    for (axis, (&e, &g)) in ["T", "H", "W", "C"].into_iter().zip(expected.iter().zip(&shape)) {
        if e != g {
            return Err(TensorError::Dimension {
                op: "embed",
                axis,
                expected: e,
                got: g,
            }
            .into());
        }
    }
    let p = |tape: &mut Tape<T>, i: usize| tape.param(i, &params.get(i).tensor);
    let mut fast = input;
    let mut slow = tape.temporal_stride(input, cfg.alpha)?;
    let mut fast_stages = Vec::with_capacity(cfg.stages.len());
    let mut slow_stages = Vec::with_capacity(cfg.stages.len());
    for (i, s) in cfg.stages.iter().enumerate() {
        let ix = stage_param_indices(params, i);
        let stride = [1, s.spatial_stride, s.spatial_stride];
        let pad = s.kernel.map(|k| k / 2);
        let run = |tape: &mut Tape<T>, x: Var, [w, a, b]: [usize; 3]| -> tensor::Result<Var> {
            let (w, a, b) = (p(tape, w), p(tape, a), p(tape, b));
            let y = tape.conv3d(x, w, stride, pad)?;
            let y = tape.channel_affine(y, a, b)?;
            Ok(tape.relu(y))
        };
        fast = run(tape, fast, ix.fast)?;
        let slow_out = run(tape, slow, ix.slow)?;
        let (lw, lb) = (p(tape, ix.lateral[0]), p(tape, ix.lateral[1]));
        slow = lateral_fuse(tape, fast, slow_out, lw, lb, cfg.alpha)?;
        fast_stages.push(fast);
        slow_stages.push(slow_out);
    }
    let fast_pooled = tape.global_avg_pool(fast)?;
    let slow_pooled = tape.global_avg_pool(slow)?;
    let feat = tape.concat_last(slow_pooled, fast_pooled)?;
    let (hw, hb) = (
        p(tape, params.position("head.linear.weight").expect("head weight")),
        p(tape, params.position("head.linear.bias").expect("head bias")),
    );
    let proj = tape.linear(feat, hw, hb)?;
    let embedding = tape.l2_normalize(proj)?;
    Ok(Forward {
        input,
        fast: fast_stages,
        slow: slow_stages,
        fast_pooled,
        slow_pooled,
        embedding,
    })
}

/// Unit-norm embedding vector.
pub type Embedding = Vec<f32>;

pub const CONFIG_SUFFIX: &str = "json";

impl SlowFastModel {
    /// Deterministically initializes a model and dry-runs it once at the
    /// configured input shape.
    pub fn build(config: SlowFastConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let model = Self { config, params };
        model.embed(&model.grey_input())?;
        Ok(model)
    }

    pub fn from_parts(config: SlowFastConfig, params: ParamStore<f32>) -> Result<Self> {
        let reference = init_params(&config, 0)?;
        if reference.len() != params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint holds {} parameters, config expects {}",
                params.len(),
                reference.len()
            )));
        }
        for r in reference.iter() {
            let got = params
                .by_name(&r.name)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks parameter {}", r.name)))?;
            if got.tensor.shape() != r.tensor.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {} has shape {:?}, config expects {:?}",
                    r.name,
                    got.tensor.shape(),
                    r.tensor.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    fn grey_input(&self) -> Tensor<f32> {
        let c = &self.config;
        Tensor::full(vec![c.clip_length, c.input.height, c.input.width, c.input.channels], 0.5)
    }

    pub fn config(&self) -> &SlowFastConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Records a forward pass for `clip` on a fresh tape.
    pub fn trace(&self, clip: &Tensor<f32>) -> Result<(Tape<f32>, Forward)> {
        let mut tape = Tape::new();
        let input = tape.leaf(clip.clone().with_requires_grad(false));
        let fwd = forward(&self.config, &self.params, &mut tape, input)?;
        Ok((tape, fwd))
    }

    pub fn embed(&self, clip: &Tensor<f32>) -> Result<Embedding> {
        let (tape, fwd) = self.trace(clip)?;
        Ok(tape.value(fwd.embedding).data().to_vec())
    }

    /// Embeds every clip; output order follows input order.
    pub fn embed_batch(&self, clips: &[&Tensor<f32>], exec: Execution) -> Result<Vec<Embedding>> {
        exec.try_map(clips, |c| self.embed(c))
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        tensor::write_checkpoint(&self.params, &mut out).expect("writing to memory cannot fail");
        out
    }

    /// SHA-256 of the checkpoint encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.checkpoint_bytes()).into()
    }

    /// Writes the checkpoint to `path` and the config next to it with a
    /// `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        tensor::save_checkpoint(&self.params, path)?;
        let cfg_path = path.with_extension(CONFIG_SUFFIX);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes") + "\n";
        crate::fsutil::write_atomic(&cfg_path, json.as_bytes()).map_err(|source| ModelError::Io {
            path: cfg_path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = path.with_extension(CONFIG_SUFFIX);
        let text = std::fs::read_to_string(&cfg_path).map_err(|source| ModelError::Io {
            path: cfg_path.display().to_string(),
            source,
        })?;
        let config: SlowFastConfig = serde_json::from_str(&text).map_err(|source| ModelError::Json {
            path: cfg_path.display().to_string(),
            source,
        })?;
        config.stage_dims()?;
        let params = tensor::load_checkpoint(path)?;
        Self::from_parts(config, params)
    }
}
