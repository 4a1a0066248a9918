//! Verification metrics: genuine/imposter scoring, FAR/FRR, threshold
//! sweeps, EER and ROC export.
//!
//! A request is accepted iff its cosine similarity is `>=` the threshold.
//! FRR is the fraction of genuine scores rejected and FAR the fraction of
//! imposter scores accepted, each over its own class count.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClipBank, ClipId};
use crate::par::Execution;
use crate::seed::{self, tag};
use crate::slowfast::{ModelError, SlowFastModel};
use crate::triplet::{self, NegativeFilter, TripletError, TripletSpec, TripletUniverse};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("open-set protocol violation: evaluation clients {overlap:?} were used for training")]
    Protocol { overlap: Vec<u32> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Triplet(#[from] TripletError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed ROC file: {0}")]
    Format(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, imposter: Vec<f64>) -> Result<Self> {
        let s = Self { genuine, imposter };
        if let Some(v) = s
            .genuine
            .iter()
            .chain(&s.imposter)
            .find(|v| !(-1.0..=1.0).contains(*v))
        {
            return Err(EvalError::Usage(format!("score {v} outside [-1, 1]")));
        }
        Ok(s)
    }

    pub fn is_empty(&self) -> bool {
        self.genuine.is_empty() && self.imposter.is_empty()
    }

    fn require_both(&self) -> Result<()> {
        if self.genuine.is_empty() || self.imposter.is_empty() {
            return Err(EvalError::Usage(format!(
                "need genuine and imposter scores, have {} and {}",
                self.genuine.len(),
                self.imposter.len()
            )));
        }
        Ok(())
    }
}

/// Rates at one threshold over pre-sorted score lists.
struct SortedScores {
    genuine: Vec<f64>,
    imposter: Vec<f64>,
}

impl SortedScores {
    fn new(s: &ScoreSet) -> Result<Self> {
        s.require_both()?;
        let sort = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        Ok(Self {
            genuine: sort(&s.genuine),
            imposter: sort(&s.imposter),
        })
    }

    fn rates(&self, t: f64) -> (f64, f64) {
        let below = |v: &[f64]| v.partition_point(|x| *x < t);
        let far = (self.imposter.len() - below(&self.imposter)) as f64 / self.imposter.len() as f64;
        let frr = below(&self.genuine) as f64 / self.genuine.len() as f64;
        (far, frr)
    }
}

/// `(FAR, FRR)` at `threshold`.
pub fn far_frr(scores: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    Ok(SortedScores::new(scores)?.rates(threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Grid thresholds `0, step, 2·step, …` up to 1, snapped to 1e-9 so that
/// decimal steps print and parse exactly.
pub fn thresholds(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(EvalError::Usage(format!("sweep step {step} must be positive")));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

pub fn sweep(scores: &ScoreSet, step: f64) -> Result<Vec<CurvePoint>> {
    let sorted = SortedScores::new(scores)?;
    Ok(thresholds(step)?
        .into_iter()
        .map(|t| {
            let (far, frr) = sorted.rates(t);
            CurvePoint { threshold: t, far, frr }
        })
        .collect())
}

/// Grid point minimizing `|FAR − FRR|` (first one on ties, i.e. the lowest
/// threshold for an ascending curve); returns `((FAR + FRR) / 2, threshold)`.
pub fn eer(curve: &[CurvePoint]) -> Result<(f64, f64)> {
    let mut best: Option<&CurvePoint> = None;
    for p in curve {
        if best.is_none_or(|b| (p.far - p.frr).abs() < (b.far - b.frr).abs()) {
            best = Some(p);
        }
    }
    let p = best.ok_or_else(|| EvalError::Usage("EER of an empty curve".into()))?;
    Ok(((p.far + p.frr) / 2.0, p.threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactEer {
    pub eer: f64,
    pub threshold: f64,
}

/// EER from the sorted scores, linearly interpolated between the last
/// observed threshold where FAR > FRR and the first where FAR <= FRR.
pub fn exact_eer(scores: &ScoreSet) -> Result<ExactEer> {
    let sorted = SortedScores::new(scores)?;
    let mut cands: Vec<f64> = sorted.genuine.iter().chain(&sorted.imposter).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands.push(cands.last().expect("nonempty") + 1.0);
    let (mut prev_t, mut prev) = (cands[0], sorted.rates(cands[0]));
    for &t in &cands[1..] {
        let cur = sorted.rates(t);
        if cur.1 >= cur.0 {
            let d0 = prev.0 - prev.1;
            let d1 = cur.0 - cur.1;
            let w = if d0 - d1 > 0.0 { d0 / (d0 - d1) } else { 0.0 };
            let far = prev.0 + w * (cur.0 - prev.0);
            let frr = prev.1 + w * (cur.1 - prev.1);
            return Ok(ExactEer {
                eer: (far + frr) / 2.0,
                threshold: prev_t + w * (t - prev_t),
            });
        }
        (prev_t, prev) = (t, cur);
    }
    unreachable!("the sentinel threshold rejects every score")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub curve: Vec<CurvePoint>,
    pub eer: f64,
    pub eer_threshold: f64,
    pub sweep_step: f64,
    pub exact_eer: f64,
    pub exact_eer_threshold: f64,
    pub n_genuine: usize,
    pub n_imposter: usize,
}

impl VerificationReport {
    pub fn from_scores(scores: &ScoreSet, step: f64) -> Result<Self> {
        let curve = sweep(scores, step)?;
        let (eer_value, eer_threshold) = eer(&curve)?;
        let exact = exact_eer(scores)?;
        Ok(Self {
            curve,
            eer: eer_value,
            eer_threshold,
            sweep_step: step,
            exact_eer: exact.eer,
            exact_eer_threshold: exact.threshold,
            n_genuine: scores.genuine.len(),
            n_imposter: scores.imposter.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().expect("formatted float parses")
}

const ROC_DIGITS: usize = 6;

pub fn roc_to_csv(report: &VerificationReport) -> String {
    let r = |x: f64| round_sig(x, ROC_DIGITS);
    let mut out = String::from("threshold,far,frr\n");
    for p in &report.curve {
        out.push_str(&format!("{},{},{}\n", r(p.threshold), r(p.far), r(p.frr)));
    }
    out.push_str(&format!("# eer,{}\n", r(report.eer)));
    out.push_str(&format!("# eer_threshold,{}\n", r(report.eer_threshold)));
    out
}

pub fn roc_export(report: &VerificationReport, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, roc_to_csv(report).as_bytes()).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocFile {
    pub curve: Vec<CurvePoint>,
    pub eer: f64,
    pub eer_threshold: f64,
}

pub fn parse_roc(text: &str) -> Result<RocFile> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| EvalError::Format(format!("bad number {s:?}: {e}")))
    };
    let mut lines = text.lines();
    if lines.next() != Some("threshold,far,frr") {
        return Err(EvalError::Format("missing header threshold,far,frr".into()));
    }
    let (mut curve, mut eer_value, mut eer_threshold) = (Vec::new(), None, None);
    for line in lines {
        if let Some(comment) = line.strip_prefix("# ") {
            match comment.split_once(',') {
                Some(("eer", v)) => eer_value = Some(num(v)?),
                Some(("eer_threshold", v)) => eer_threshold = Some(num(v)?),
                _ => return Err(EvalError::Format(format!("unknown comment {line:?}"))),
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(EvalError::Format(format!("expected 3 fields in {line:?}")));
        }
        curve.push(CurvePoint {
            threshold: num(f[0])?,
            far: num(f[1])?,
            frr: num(f[2])?,
        });
    }
    match (eer_value, eer_threshold) {
        (Some(eer), Some(eer_threshold)) => Ok(RocFile {
            curve,
            eer,
            eer_threshold,
        }),
        _ => Err(EvalError::Format("missing eer/eer_threshold comment rows".into())),
    }
}

/// Refuses evaluation on clients that took part in training.
pub fn check_open_set(eval_clients: &[u32], train_clients: &[u32]) -> Result<()> {
    let overlap: Vec<u32> = eval_clients
        .iter()
        .copied()
        .filter(|c| train_clients.contains(c))
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Protocol { overlap })
    }
}

/// Triplets scored by [`score_pairs`] for a given budget and seed.
pub fn eval_triplets(
    clients: &[u32],
    n_phrases: usize,
    n_emotions: usize,
    budget: usize,
    seed_value: u64,
) -> Result<Vec<TripletSpec>> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    let u = TripletUniverse::new(clients, n_phrases, n_emotions, NegativeFilter::All)?;
    let n = budget.min(usize::try_from(u.size()).unwrap_or(usize::MAX));
    Ok(u.sample_batch(n, &mut seed::rng(seed_value, &[tag::EVAL]))?)
}

/// Embeds every clip the triplets touch, once.
pub fn embed_clips(
    model: &SlowFastModel,
    bank: &ClipBank,
    triplets: &[TripletSpec],
    exec: Execution,
) -> Result<Vec<(ClipId, Vec<f32>)>> {
    let mut ids: Vec<ClipId> = triplets
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let clips = ids
        .iter()
        .map(|&id| {
            bank.get(id)
                .ok_or_else(|| EvalError::Usage(format!("clip {id} missing from the bank")))
        })
        .collect::<Result<Vec<_>>>()?;
    let emb = model.embed_batch(&clips, exec)?;
    Ok(ids.into_iter().zip(emb).collect())
}

/// Genuine `cos(A, P)` and imposter `cos(A, N)` for each triplet.
pub fn score_triplets(embeddings: &[(ClipId, Vec<f32>)], triplets: &[TripletSpec]) -> Result<ScoreSet> {
    let get = |id: ClipId| -> Result<&[f32]> {
        embeddings
            .binary_search_by_key(&id, |(i, _)| *i)
            .map(|i| embeddings[i].1.as_slice())
            .map_err(|_| EvalError::Usage(format!("no embedding for {id}")))
    };
    let mut s = ScoreSet::default();
    for t in triplets {
        s.genuine.push(triplet::cosine_similarity(get(t.anchor)?, get(t.positive)?)?);
        s.imposter.push(triplet::cosine_similarity(get(t.anchor)?, get(t.negative)?)?);
    }
    Ok(s)
}

/// Scores up to `budget` triplets drawn from `eval_clients`' universe,
/// after checking that none of them were training clients.
#[allow(clippy::too_many_arguments)]
pub fn score_pairs(
    model: &SlowFastModel,
    bank: &ClipBank,
    eval_clients: &[u32],
    train_clients: &[u32],
    budget: usize,
    seed_value: u64,
    exec: Execution,
) -> Result<ScoreSet> {
    check_open_set(eval_clients, train_clients)?;
    let triplets = eval_triplets(eval_clients, bank.n_phrases, bank.n_emotions, budget, seed_value)?;
    let emb = embed_clips(model, bank, &triplets, exec)?;
    score_triplets(&emb, &triplets)
}
