use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{make_emotion, make_identity, make_phrase, render_utterance, RenderConfig, Utterance};
use super::{EmotionParams, IdentityParams, PhraseScript};
use crate::dataset::ClipId;
use crate::par::Execution;
use crate::preprocess::{self, PreprocessError};
use crate::seed::{self, tag};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Clip(#[from] PreprocessError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_clients: usize,
    pub n_phrases: usize,
    pub n_emotions: usize,
    pub frames_per_video: usize,
    /// `(height, width)` of rendered frames.
    pub frame_size: (usize, usize),
    pub master_seed: u64,
    pub splits: SplitSizes,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_clients: 20,
            n_phrases: 4,
            n_emotions: 3,
            frames_per_video: 48,
            frame_size: (64, 96),
            master_seed: 42,
            splits: SplitSizes {
                train: 12,
                val: 4,
                test: 4,
            },
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if self.n_emotions < 2 {
            return bad(format!(
                "n_emotions = {} but at least 2 are required: a positive must be another emotional take of the anchor's client and phrase",
                self.n_emotions
            ));
        }
        if self.n_clients == 0 || self.n_phrases == 0 {
            return bad("n_clients and n_phrases must be >= 1".into());
        }
        if self.frames_per_video < 2 {
            return bad("frames_per_video must be >= 2".into());
        }
        let (h, w) = self.frame_size;
        if h < 32 || w < 64 {
            return bad(format!("frame_size {h}x{w} is too small to hold a mouth (need >= 32x64)"));
        }
        let s = self.splits;
        if s.train + s.val + s.test != self.n_clients {
            return bad(format!(
                "splits {}+{}+{} do not add up to n_clients = {}",
                s.train, s.val, s.test, self.n_clients
            ));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            frames_per_video: self.frames_per_video,
            height: self.frame_size.0,
            width: self.frame_size.1,
        }
    }

    pub fn identity(&self, client: u32) -> IdentityParams {
        make_identity(seed::derive(self.master_seed, &[tag::IDENTITY, client as u64]))
    }

    pub fn phrase(&self, phrase: u32) -> PhraseScript {
        make_phrase(phrase, seed::derive(self.master_seed, &[tag::PHRASE, phrase as u64]))
    }

    pub fn emotion(&self, emotion: u32) -> EmotionParams {
        make_emotion(emotion, seed::derive(self.master_seed, &[tag::EMOTION, emotion as u64]))
    }

    pub fn take_seed(&self, id: ClipId) -> u64 {
        seed::derive(
            self.master_seed,
            &[tag::TAKE, id.client as u64, id.phrase as u64, id.emotion as u64],
        )
    }

    /// Every clip id in client, phrase, emotion order.
    pub fn clip_ids(&self) -> Vec<ClipId> {
        let mut ids = Vec::with_capacity(self.n_clients * self.n_phrases * self.n_emotions);
        for c in 0..self.n_clients as u32 {
            for p in 0..self.n_phrases as u32 {
                for e in 0..self.n_emotions as u32 {
                    ids.push(ClipId::new(c, p, e));
                }
            }
        }
        ids
    }

    /// Seeded shuffle of client ids cut into train/val/test, each sorted.
    pub fn assign_splits(&self) -> Splits {
        let mut clients: Vec<u32> = (0..self.n_clients as u32).collect();
        clients.shuffle(&mut seed::rng(self.master_seed, &[tag::SPLIT]));
        let s = self.splits;
        let take = |range: std::ops::Range<usize>| {
            let mut v = clients[range].to_vec();
            v.sort_unstable();
            v
        };
        Splits {
            train: take(0..s.train),
            val: take(s.train..s.train + s.val),
            test: take(s.train + s.val..s.train + s.val + s.test),
        }
    }
}

pub fn render_clip(cfg: &CorpusConfig, id: ClipId) -> Utterance {
    render_utterance(
        &cfg.identity(id.client),
        &cfg.phrase(id.phrase),
        &cfg.emotion(id.emotion),
        cfg.take_seed(id),
        &cfg.render_config(),
    )
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[u32]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let all = [&self.train, &self.val, &self.test];
        all.iter().enumerate().all(|(i, a)| {
            all[i + 1..]
                .iter()
                .all(|b| a.iter().all(|c| !b.contains(c)))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub id: ClipId,
    /// Paths relative to the corpus directory.
    pub clip: String,
    pub landmarks: String,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub config: CorpusConfig,
    pub splits: Splits,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CorpusError::Manifest {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn clip_paths(id: ClipId) -> (String, String) {
    let stem = format!("client_{}/phrase_{}/emotion_{}", id.client, id.phrase, id.emotion);
    (format!("{stem}.clip"), format!("{stem}.landmarks.csv"))
}

fn write_entry(cfg: &CorpusConfig, out_dir: &Path, id: ClipId) -> Result<ManifestEntry, CorpusError> {
    let utt = render_clip(cfg, id);
    let (clip, landmarks) = clip_paths(id);
    let clip_path = out_dir.join(&clip);
    let parent: PathBuf = clip_path.parent().expect("clip path has a parent").to_path_buf();
    std::fs::create_dir_all(&parent).map_err(|source| CorpusError::Io {
        path: parent.display().to_string(),
        source,
    })?;
    let (h, w) = cfg.frame_size;
    let mut data = Vec::with_capacity(utt.frames.len() * h * w * 3);
    for f in &utt.frames {
        data.extend_from_slice(&f.data);
    }
    let tensor = Tensor::new(vec![utt.frames.len(), h, w, 3], data).expect("rendered frames have frame_size");
    preprocess::write_clip_file(&clip_path, &tensor)?;
    preprocess::write_landmarks_file(&out_dir.join(&landmarks), &utt.landmarks)?;
    Ok(ManifestEntry {
        id,
        clip,
        landmarks,
        frames: utt.frames.len(),
    })
}

/// Renders every (client, phrase, emotion) take into `out_dir` and writes
/// `manifest.json` last, so a manifest only exists for a complete corpus.
pub fn gen_corpus(cfg: &CorpusConfig, out_dir: &Path, exec: Execution) -> Result<Manifest, CorpusError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| CorpusError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let entries = exec.try_map(&cfg.clip_ids(), |&id| write_entry(cfg, out_dir, id))?;
    let manifest = Manifest {
        master_seed: cfg.master_seed,
        config: cfg.clone(),
        splits: cfg.assign_splits(),
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    crate::fsutil::write_atomic(&path, manifest.to_json().as_bytes()).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}
