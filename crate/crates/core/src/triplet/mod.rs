//! Triplet algebra, the anchor/positive/negative universe, and training.
//!
//! A positive is another emotional take of the anchor's client and phrase.
//! A negative is any take of another client, or a take of the anchor's
//! client uttering a different phrase.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClipId;

pub use train::{
    mean_separation, train, IterationReport, TrainConfig, TrainError, TrainHistory, Trainer,
};

#[derive(Debug, Error, PartialEq)]
pub enum TripletError {
    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T, E = TripletError> = std::result::Result<T, E>;

fn norm_sq(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64).powi(2)).sum()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TripletError::Usage(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm_sq(a), norm_sq(b));
    if na == 0.0 || nb == 0.0 {
        return Err(TripletError::Usage("cosine of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    // sqrt(x * x) == x exactly, so identical vectors give exactly 1.
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

pub fn triplet_loss(dap: f64, dan: f64, margin: f64) -> f64 {
    (dap - dan + margin).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchCost {
    pub sum: f64,
    pub mean: f64,
}

pub fn batch_cost(losses: &[f64]) -> Result<BatchCost> {
    if losses.is_empty() {
        return Err(TripletError::Usage("batch cost of an empty batch".into()));
    }
    let sum: f64 = losses.iter().sum();
    Ok(BatchCost {
        sum,
        mean: sum / losses.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hardness {
    Easy,
    SemiHard,
    Hard,
}

pub fn classify_triplet(dap: f64, dan: f64, margin: f64) -> Hardness {
    if dan <= dap {
        Hardness::Hard
    } else if dan <= dap + margin {
        Hardness::SemiHard
    } else {
        Hardness::Easy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletSpec {
    pub anchor: ClipId,
    pub positive: ClipId,
    pub negative: ClipId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardness: Option<Hardness>,
}

impl TripletSpec {
    pub fn is_valid(&self) -> bool {
        let (a, p, n) = (self.anchor, self.positive, self.negative);
        let positive_ok = a.client == p.client && a.phrase == p.phrase && a != p;
        let negative_ok = n.client != a.client || n.phrase != a.phrase;
        positive_ok && negative_ok
    }
}

/// Closed-form count of valid triplets: each of `P·R·E` anchors pairs with
/// `E − 1` positives and `(P−1)·R·E + (R−1)·E` negatives.
pub fn triplet_universe_size(p: usize, r: usize, e: usize) -> Result<u64> {
    if p < 2 || r < 2 || e < 2 {
        return Err(TripletError::Usage(format!(
            "triplet universe needs P, R, E >= 2, got ({p}, {r}, {e})"
        )));
    }
    let (p, r, e) = (p as u64, r as u64, e as u64);
    Ok(p * r * e * (e - 1) * ((p - 1) * r * e + (r - 1) * e))
}

/// Which negatives a universe admits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeFilter {
    #[default]
    All,
    /// Same client, different phrase: separable only by motion.
    SameClientOtherPhrase,
    /// Same phrase, different client: separable mainly by appearance.
    SamePhraseOtherClient,
}

/// The set of valid triplets over a list of clients, addressable by index
/// so it can be sampled without being materialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletUniverse {
    clients: Vec<u32>,
    n_phrases: usize,
    n_emotions: usize,
    filter: NegativeFilter,
}

impl TripletUniverse {
    pub fn new(clients: &[u32], n_phrases: usize, n_emotions: usize, filter: NegativeFilter) -> Result<Self> {
        let mut sorted = clients.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != clients.len() {
            return Err(TripletError::Usage("duplicate client ids".into()));
        }
        if n_emotions < 2 {
            return Err(TripletError::Usage("at least 2 emotions are needed for a positive".into()));
        }
        let u = Self {
            clients: sorted,
            n_phrases,
            n_emotions,
            filter,
        };
        if u.negatives_per_anchor() == 0 || u.clients.is_empty() || n_phrases == 0 {
            return Err(TripletError::Usage(format!(
                "no valid negatives for {} clients × {} phrases under {:?}",
                u.clients.len(),
                n_phrases,
                filter
            )));
        }
        Ok(u)
    }

    pub fn clients(&self) -> &[u32] {
        &self.clients
    }

    pub fn filter(&self) -> NegativeFilter {
        self.filter
    }

    fn anchors(&self) -> u64 {
        (self.clients.len() * self.n_phrases * self.n_emotions) as u64
    }

    fn other_client_negatives(&self) -> u64 {
        let (p, r, e) = (self.clients.len() as u64, self.n_phrases as u64, self.n_emotions as u64);
        match self.filter {
            NegativeFilter::All => (p - 1) * r * e,
            NegativeFilter::SamePhraseOtherClient => (p - 1) * e,
            NegativeFilter::SameClientOtherPhrase => 0,
        }
    }

    fn same_client_negatives(&self) -> u64 {
        let (r, e) = (self.n_phrases as u64, self.n_emotions as u64);
        match self.filter {
            NegativeFilter::SamePhraseOtherClient => 0,
            _ => (r - 1) * e,
        }
    }

    fn negatives_per_anchor(&self) -> u64 {
        self.other_client_negatives() + self.same_client_negatives()
    }

    pub fn size(&self) -> u64 {
        self.anchors() * (self.n_emotions as u64 - 1) * self.negatives_per_anchor()
    }

    fn clip(&self, client_pos: u64, phrase: u64, emotion: u64) -> ClipId {
        ClipId::new(self.clients[client_pos as usize], phrase as u32, emotion as u32)
    }

    /// The `index`-th triplet in anchor-major order.
    pub fn get(&self, index: u64) -> Option<TripletSpec> {
        if index >= self.size() {
            return None;
        }
        let (r, e) = (self.n_phrases as u64, self.n_emotions as u64);
        let negs = self.negatives_per_anchor();
        let neg = index % negs;
        let rest = index / negs;
        let pos = rest % (e - 1);
        let anchor = rest / (e - 1);
        let (ac, ap, ae) = (anchor / (r * e), anchor / e % r, anchor % e);
        let pe = if pos >= ae { pos + 1 } else { pos };
        let other = self.other_client_negatives();
        let negative = if neg < other {
            let (block, within) = match self.filter {
                NegativeFilter::SamePhraseOtherClient => (neg / e, ap * e + neg % e),
                _ => (neg / (r * e), neg % (r * e)),
            };
            let nc = if block >= ac { block + 1 } else { block };
            self.clip(nc, within / e, within % e)
        } else {
            let k = neg - other;
            let np = k / e;
            let np = if np >= ap { np + 1 } else { np };
            self.clip(ac, np, k % e)
        };
        Some(TripletSpec {
            anchor: self.clip(ac, ap, ae),
            positive: self.clip(ac, ap, pe),
            negative,
            hardness: None,
        })
    }

    /// `batch_size` distinct triplets drawn uniformly.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<TripletSpec>> {
        let size = self.size();
        if (batch_size as u64) > size {
            return Err(TripletError::Usage(format!(
                "batch of {batch_size} exceeds universe of {size} triplets"
            )));
        }
        if batch_size == 0 {
            return Err(TripletError::Usage("batch_size must be >= 1".into()));
        }
        let size = usize::try_from(size).map_err(|_| TripletError::Usage("universe too large".into()))?;
        Ok(rand::seq::index::sample(rng, size, batch_size)
            .into_iter()
            .map(|i| self.get(i as u64).expect("index in range"))
            .collect())
    }
}

/// Every valid triplet over clients `0..p`, for oracle use on small shapes.
pub fn enumerate_triplets(p: usize, r: usize, e: usize) -> Result<impl Iterator<Item = TripletSpec>> {
    const LIMIT: u64 = 1_000_000;
    let n = triplet_universe_size(p, r, e)?;
    if n > LIMIT {
        return Err(TripletError::Usage(format!(
            "enumerating {n} triplets exceeds the limit of {LIMIT}"
        )));
    }
    let ids: Vec<ClipId> = (0..p as u32)
        .flat_map(|c| (0..r as u32).flat_map(move |ph| (0..e as u32).map(move |em| ClipId::new(c, ph, em))))
        .collect();
    let triples = ids.clone().into_iter().flat_map(move |a| {
        let ids = ids.clone();
        ids.clone().into_iter().flat_map(move |pos| {
            ids.clone().into_iter().map(move |neg| TripletSpec {
                anchor: a,
                positive: pos,
                negative: neg,
                hardness: None,
            })
        })
    });
    Ok(triples.filter(TripletSpec::is_valid))
}
