//! Clip identifiers and in-memory banks of preprocessed clips.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::par::Execution;
use crate::preprocess::{self, PreprocessConfig};
use crate::synth::{self, CorpusConfig, CorpusError, Manifest};
use crate::tensor::Tensor;

/// One take: a client uttering a phrase in an emotional state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClipId {
    pub client: u32,
    pub phrase: u32,
    pub emotion: u32,
}

impl ClipId {
    pub const fn new(client: u32, phrase: u32, emotion: u32) -> Self {
        Self {
            client,
            phrase,
            emotion,
        }
    }
}

impl fmt::Display for ClipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}/p{}/e{}", self.client, self.phrase, self.emotion)
    }
}

/// Preprocessed `[T, H, W, C]` clips keyed by id, plus the corpus shape
/// needed to enumerate triplets over them.
#[derive(Clone, Debug, Default)]
pub struct ClipBank {
    clips: BTreeMap<ClipId, Tensor<f32>>,
    pub n_phrases: usize,
    pub n_emotions: usize,
}

impl ClipBank {
    pub fn new(n_phrases: usize, n_emotions: usize) -> Self {
        Self {
            clips: BTreeMap::new(),
            n_phrases,
            n_emotions,
        }
    }

    pub fn insert(&mut self, id: ClipId, clip: Tensor<f32>) {
        self.clips.insert(id, clip);
    }

    pub fn get(&self, id: ClipId) -> Option<&Tensor<f32>> {
        self.clips.get(&id)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ClipId> + '_ {
        self.clips.keys().copied()
    }

    /// Distinct clients present, ascending.
    pub fn clients(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.clips.keys().map(|id| id.client).collect();
        c.dedup();
        c
    }

    /// Renders and preprocesses the takes of `clients` straight from the
    /// generator, without touching disk.
    pub fn render(
        corpus: &CorpusConfig,
        clients: &[u32],
        pre: &PreprocessConfig,
        exec: Execution,
    ) -> Result<Self, CorpusError> {
        corpus.validate()?;
        let ids: Vec<ClipId> = corpus
            .clip_ids()
            .into_iter()
            .filter(|id| clients.contains(&id.client))
            .collect();
        let clips = exec.try_map(&ids, |&id| {
            let utt = synth::render_clip(corpus, id);
            preprocess::preprocess_clip(&utt.frames, &utt.landmarks, pre, id).map(|c| c.frames)
        })?;
        let mut bank = Self::new(corpus.n_phrases, corpus.n_emotions);
        for (id, clip) in ids.into_iter().zip(clips) {
            bank.insert(id, clip);
        }
        Ok(bank)
    }

    /// Loads and preprocesses the takes of `clients` from a corpus directory.
    pub fn load(
        dir: &Path,
        manifest: &Manifest,
        clients: &[u32],
        pre: &PreprocessConfig,
        exec: Execution,
    ) -> Result<Self, CorpusError> {
        let entries: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| clients.contains(&e.id.client))
            .collect();
        let clips = exec.try_map(&entries, |e| -> Result<Tensor<f32>, CorpusError> {
            let raw = preprocess::read_clip_file(&dir.join(&e.clip))?;
            let landmarks = preprocess::read_landmarks_file(&dir.join(&e.landmarks))?;
            let frames = split_frames(&raw)?;
            Ok(preprocess::preprocess_clip(&frames, &landmarks, pre, e.id)?.frames)
        })?;
        let mut bank = Self::new(manifest.config.n_phrases, manifest.config.n_emotions);
        for (e, clip) in entries.into_iter().zip(clips) {
            bank.insert(e.id, clip);
        }
        Ok(bank)
    }
}

/// Splits a raw `[N, H, W, C]` video into per-frame images.
pub fn split_frames(video: &Tensor<f32>) -> Result<Vec<preprocess::Image>, preprocess::PreprocessError> {
    let s = video.shape();
    if s.len() != 4 {
        return Err(preprocess::PreprocessError::Format(format!(
            "video must be [N,H,W,C], got {s:?}"
        )));
    }
    let per = s[1] * s[2] * s[3];
    video
        .data()
        .chunks(per.max(1))
        .map(|c| preprocess::Image::new(s[1], s[2], s[3], c.to_vec()))
        .collect()
}
