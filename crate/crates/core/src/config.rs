//! Unified run configuration.
//!
//! One JSON document holds every section; omitted sections and fields take
//! the desk-scale defaults. Unknown fields are rejected so typos surface at
//! load time.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::PreprocessConfig;
use crate::slowfast::SlowFastConfig;
use crate::synth::CorpusConfig;
use crate::triplet::{TrainConfig, TripletUniverse};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of test triplets scored, each giving one genuine and one
    /// imposter score.
    pub pair_budget: usize,
    pub seed: u64,
    pub sweep_step: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pair_budget: 4000,
            seed: 7,
            sweep_step: 0.001,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub preprocess: PreprocessConfig,
    pub model: SlowFastConfig,
    /// Seed for weight initialization.
    pub model_seed: u64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Checks each section and the constraints that span sections.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.corpus.validate().map_err(|e| inv(&e))?;
        self.preprocess.validate().map_err(|e| inv(&e))?;
        self.model.stage_dims().map_err(|e| inv(&e))?;
        self.train.validate().map_err(|e| inv(&e))?;
        let (p, m) = (&self.preprocess, &self.model);
        if p.clip_length != m.clip_length {
            return Err(ConfigError::Invalid(format!(
                "preprocess.clip_length {} differs from model.clip_length {}",
                p.clip_length, m.clip_length
            )));
        }
        if (p.target_height, p.target_width) != (m.input.height, m.input.width) {
            return Err(ConfigError::Invalid(format!(
                "preprocess target {}x{} differs from model input {}x{}",
                p.target_height, p.target_width, m.input.height, m.input.width
            )));
        }
        if m.input.channels != 3 {
            return Err(ConfigError::Invalid(format!(
                "model.input.channels = {} but clips are RGB",
                m.input.channels
            )));
        }
        let train_clients: Vec<u32> = (0..self.corpus.splits.train as u32).collect();
        let universe = TripletUniverse::new(
            &train_clients,
            self.corpus.n_phrases,
            self.corpus.n_emotions,
            self.train.negative_filter,
        )
        .map_err(|e| inv(&e))?;
        if self.train.batch_size as u64 > universe.size() {
            return Err(ConfigError::Invalid(format!(
                "train.batch_size {} exceeds the {} triplets of the training split",
                self.train.batch_size,
                universe.size()
            )));
        }
        if !(self.eval.sweep_step > 0.0 && self.eval.sweep_step <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "eval.sweep_step {} must lie in (0, 1]",
                self.eval.sweep_step
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
