//! Pass-phrase enrollment and authentication.
//!
//! A record binds one embedding to a `(client, phrase)` key and to the
//! fingerprint of the model that produced it. Authentication re-embeds a
//! fresh clip and accepts iff its cosine similarity to the stored embedding
//! is at least the threshold.
//!
//! Store file layout (little-endian): magic `LFS1`, `u64` record count, then
//! per record: `u32` length + UTF-8 client id, `u32` length + UTF-8 phrase
//! id, `i64` enrollment time, 32-byte model fingerprint, `u32` embedding
//! dimension, and the embedding as `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slowfast::{ModelError, SlowFastModel};
use crate::tensor::Tensor;
use crate::triplet;

pub const STORE_MAGIC: &[u8; 4] = b"LFS1";

/// Stored embeddings must have unit norm to this tolerance.
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("({client}, {phrase}) is already enrolled")]
    Conflict { client: String, phrase: String },
    #[error("({client}, {phrase}) is not enrolled")]
    NotEnrolled { client: String, phrase: String },
    #[error("model fingerprint {got} does not match the store's {expected}")]
    ModelMismatch { expected: String, got: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("malformed store file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = AuthError> = std::result::Result<T, E>;

pub type Fingerprint = [u8; 32];

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnrollmentRecord {
    pub client_id: String,
    pub phrase_id: String,
    pub embedding: Vec<f32>,
    /// Seconds since the Unix epoch.
    pub enrolled_at: i64,
    pub model_fingerprint: Fingerprint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub accepted: bool,
    pub similarity: f64,
    pub threshold: f64,
}

impl AuthDecision {
    pub fn decide(similarity: f64, threshold: f64) -> Self {
        Self {
            accepted: similarity >= threshold,
            similarity,
            threshold,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnrollmentStore {
    records: BTreeMap<(String, String), EnrollmentRecord>,
}

fn key(client: &str, phrase: &str) -> (String, String) {
    (client.to_owned(), phrase.to_owned())
}

impl EnrollmentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, client: &str, phrase: &str) -> Option<&EnrollmentRecord> {
        self.records.get(&key(client, phrase))
    }

    pub fn records(&self) -> impl Iterator<Item = &EnrollmentRecord> {
        self.records.values()
    }

    /// Fingerprint shared by every record, if any are stored.
    pub fn fingerprint(&self) -> Option<Fingerprint> {
        self.records.values().next().map(|r| r.model_fingerprint)
    }

    fn check_model(&self, fp: &Fingerprint, expected: &Fingerprint) -> Result<()> {
        if fp != expected {
            return Err(AuthError::ModelMismatch {
                expected: fingerprint_hex(expected),
                got: fingerprint_hex(fp),
            });
        }
        Ok(())
    }

    /// Stores a precomputed embedding under `(client, phrase)`.
    pub fn enroll_embedding(
        &mut self,
        client: &str,
        phrase: &str,
        embedding: Vec<f32>,
        fingerprint: Fingerprint,
        enrolled_at: i64,
    ) -> Result<&EnrollmentRecord> {
        if let Some(expected) = self.fingerprint() {
            self.check_model(&fingerprint, &expected)?;
        }
        let k = key(client, phrase);
        if self.records.contains_key(&k) {
            return Err(AuthError::Conflict {
                client: k.0,
                phrase: k.1,
            });
        }
        let norm = embedding.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(AuthError::Usage(format!("embedding norm {norm} is not 1")));
        }
        let record = EnrollmentRecord {
            client_id: k.0.clone(),
            phrase_id: k.1.clone(),
            embedding,
            enrolled_at,
            model_fingerprint: fingerprint,
        };
        Ok(self.records.entry(k).or_insert(record))
    }

    pub fn enroll(
        &mut self,
        client: &str,
        phrase: &str,
        clip: &Tensor<f32>,
        model: &SlowFastModel,
        enrolled_at: i64,
    ) -> Result<&EnrollmentRecord> {
        let fp = model.fingerprint();
        if let Some(expected) = self.fingerprint() {
            self.check_model(&fp, &expected)?;
        }
        if self.get(client, phrase).is_some() {
            return Err(AuthError::Conflict {
                client: client.into(),
                phrase: phrase.into(),
            });
        }
        let embedding = model.embed(clip)?;
        self.enroll_embedding(client, phrase, embedding, fp, enrolled_at)
    }

    /// Compares a fresh embedding against the stored one.
    pub fn authenticate_embedding(
        &self,
        client: &str,
        phrase: &str,
        embedding: &[f32],
        fingerprint: &Fingerprint,
        threshold: f64,
    ) -> Result<AuthDecision> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(AuthError::Usage(format!("threshold {threshold} outside [-1, 1]")));
        }
        let record = self.get(client, phrase).ok_or_else(|| AuthError::NotEnrolled {
            client: client.into(),
            phrase: phrase.into(),
        })?;
        self.check_model(fingerprint, &record.model_fingerprint)?;
        let similarity = triplet::cosine_similarity(&record.embedding, embedding)
            .map_err(|e| AuthError::Usage(e.to_string()))?;
        Ok(AuthDecision::decide(similarity, threshold))
    }

    pub fn authenticate(
        &self,
        client: &str,
        phrase: &str,
        clip: &Tensor<f32>,
        model: &SlowFastModel,
        threshold: f64,
    ) -> Result<AuthDecision> {
        let fp = model.fingerprint();
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(AuthError::Usage(format!("threshold {threshold} outside [-1, 1]")));
        }
        let record = self.get(client, phrase).ok_or_else(|| AuthError::NotEnrolled {
            client: client.into(),
            phrase: phrase.into(),
        })?;
        self.check_model(&fp, &record.model_fingerprint)?;
        let embedding = model.embed(clip)?;
        self.authenticate_embedding(client, phrase, &embedding, &fp, threshold)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in self.records.values() {
            for s in [&r.client_id, &r.phrase_id] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            out.extend_from_slice(&r.enrolled_at.to_le_bytes());
            out.extend_from_slice(&r.model_fingerprint);
            out.extend_from_slice(&(r.embedding.len() as u32).to_le_bytes());
            for v in &r.embedding {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != STORE_MAGIC {
            return Err(AuthError::Format("bad magic".into()));
        }
        let count = r.u64()?;
        let mut store = Self::new();
        for i in 0..count {
            let client_id = r.string()?;
            let phrase_id = r.string()?;
            let enrolled_at = i64::from_le_bytes(r.array()?);
            let model_fingerprint: Fingerprint = r.array()?;
            let dim = r.u32()? as usize;
            let raw = r.take(dim.checked_mul(4).ok_or_else(|| AuthError::Format("dimension overflow".into()))?)?;
            let embedding = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let k = key(&client_id, &phrase_id);
            if store.records.contains_key(&k) {
                return Err(AuthError::Format(format!("record {i} duplicates ({client_id}, {phrase_id})")));
            }
            store.records.insert(
                k,
                EnrollmentRecord {
                    client_id,
                    phrase_id,
                    embedding,
                    enrolled_at,
                    model_fingerprint,
                },
            );
        }
        if r.pos != bytes.len() {
            return Err(AuthError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes()).map_err(|source| AuthError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| AuthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Loads `path`, or returns an empty store if it does not exist.
    pub fn open(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| AuthError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| AuthError::Format(e.to_string()))
    }
}
