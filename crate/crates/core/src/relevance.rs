//! Attention-aware sentence relevance.
//!
//! Each sentence is embedded by mean-pooling its final-layer token vectors.
//! A target's relevance is the sum of its cosine similarities to nearby
//! sentences, each weighted by how far the neighbour sits from the target
//! (1/2 for adjacent sentences, 1/3 for the one before that).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{fetch_hidden_states, Backend, BackendError};
use crate::corpus::Discourse;

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("no neighbours in window")]
    NoNeighbors,
    #[error("sentence {sentence}: {source}")]
    Backend {
        sentence: usize,
        #[source]
        source: BackendError,
    },
    #[error("sentence {sentence}: {source}")]
    Sentence {
        sentence: usize,
        #[source]
        source: Box<RelevanceError>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding {
    vector: Vec<f64>,
    norm: f64,
}

impl SentenceEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self, RelevanceError> {
        if vector.is_empty() {
            return Err(RelevanceError::DegenerateEmbedding("empty vector".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(RelevanceError::DegenerateEmbedding("non-finite entry".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RelevanceError::DegenerateEmbedding("zero norm".into()));
        }
        Ok(SentenceEmbedding { vector, norm })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// Column-wise mean of the token rows.
pub fn mean_pool(rows: &[Vec<f64>]) -> Result<SentenceEmbedding, RelevanceError> {
    let first = rows
        .first()
        .ok_or_else(|| RelevanceError::DegenerateEmbedding("no token vectors".into()))?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for row in rows {
        if row.len() != dim {
            return Err(RelevanceError::Domain(format!("token vector of width {} but expected {dim}", row.len())));
        }
        for (acc, v) in sum.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let n = rows.len() as f64;
    SentenceEmbedding::new(sum.into_iter().map(|s| s / n).collect())
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &SentenceEmbedding, b: &SentenceEmbedding) -> Result<f64, RelevanceError> {
    if a.dim() != b.dim() {
        return Err(RelevanceError::Domain(format!("dimension mismatch {} vs {}", a.dim(), b.dim())));
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Where a context sentence sits relative to the target; distances start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Offset {
    Before(usize),
    After(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborSimilarity {
    pub offset: Offset,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub n_before: usize,
    pub n_after: usize,
    /// Nearest first.
    pub weights_before: Vec<f64>,
    /// Nearest first.
    pub weights_after: Vec<f64>,
    pub renormalize: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            n_before: 2,
            n_after: 1,
            weights_before: vec![1.0 / 2.0, 1.0 / 3.0],
            weights_after: vec![1.0 / 2.0],
            renormalize: false,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), RelevanceError> {
        let sides = [
            ("before", self.n_before, &self.weights_before),
            ("after", self.n_after, &self.weights_after),
        ];
        for (side, n, weights) in sides {
            if weights.len() != n {
                return Err(RelevanceError::InvalidWindow(format!(
                    "{} weights given for {n} sentences {side}",
                    weights.len()
                )));
            }
            if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
                return Err(RelevanceError::InvalidWindow(format!("weight {w} outside (0, 1]")));
            }
            if weights.windows(2).any(|p| p[1] > p[0]) {
                return Err(RelevanceError::InvalidWindow(format!(
                    "weights {side} the target must not increase with distance"
                )));
            }
        }
        if self.n_before + self.n_after == 0 {
            return Err(RelevanceError::InvalidWindow("window has no context sentences".into()));
        }
        Ok(())
    }

    pub fn weight(&self, offset: Offset) -> Option<f64> {
        match offset {
            Offset::Before(d) if d >= 1 => self.weights_before.get(d - 1).copied(),
            Offset::After(d) if d >= 1 => self.weights_after.get(d - 1).copied(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub value: f64,
    pub neighbors_used: usize,
    pub renormalized: bool,
}

/// Weighted sum of target-to-neighbour similarities.
pub fn attention_aware_relevance(
    similarities: &[NeighborSimilarity],
    spec: &WindowSpec,
) -> Result<RelevanceScore, RelevanceError> {
    if similarities.is_empty() {
        return Err(RelevanceError::NoNeighbors);
    }
    let mut value = 0.0;
    let mut weight_sum = 0.0;
    for n in similarities {
        let w = spec
            .weight(n.offset)
            .ok_or_else(|| RelevanceError::Domain(format!("{:?} lies outside the window", n.offset)))?;
        value += n.similarity * w;
        weight_sum += w;
    }
    if spec.renormalize {
        value /= weight_sum;
    }
    Ok(RelevanceScore {
        value,
        neighbors_used: similarities.len(),
        renormalized: spec.renormalize,
    })
}

/// One score per sentence; `None` where the sentence has no neighbours.
/// Each sentence is embedded once.
pub fn score_discourse_relevance(
    discourse: &Discourse,
    backend: &dyn Backend,
    spec: &WindowSpec,
) -> Result<Vec<Option<RelevanceScore>>, RelevanceError> {
    spec.validate()?;
    if discourse.is_empty() {
        return Err(RelevanceError::Domain(format!("discourse {} has no sentences", discourse.text_id)));
    }
    let n = discourse.len();
    if n == 1 {
        return Ok(vec![None]);
    }
    let mut cache: Vec<Option<SentenceEmbedding>> = vec![None; n];
    let embed = |i: usize, cache: &mut Vec<Option<SentenceEmbedding>>| -> Result<(), RelevanceError> {
        if cache[i].is_none() {
            let resp = fetch_hidden_states(backend, &discourse.sentences[i].text)
                .map_err(|source| RelevanceError::Backend { sentence: i, source })?;
            let e = mean_pool(&resp.matrix)
                .map_err(|e| RelevanceError::Sentence { sentence: i, source: Box::new(e) })?;
            cache[i] = Some(e);
        }
        Ok(())
    };

    let mut out = Vec::with_capacity(n);
    for target in 0..n {
        let neighbors = window_neighbors(target, n, spec);
        if neighbors.is_empty() {
            out.push(None);
            continue;
        }
        embed(target, &mut cache)?;
        let mut sims = Vec::with_capacity(neighbors.len());
        for (offset, j) in neighbors {
            embed(j, &mut cache)?;
            let (t, c) = (cache[target].as_ref().unwrap(), cache[j].as_ref().unwrap());
            sims.push(NeighborSimilarity { offset, similarity: cosine(t, c)? });
        }
        out.push(Some(attention_aware_relevance(&sims, spec)?));
    }
    Ok(out)
}

/// Neighbours of `target` that exist in a discourse of `n` sentences.
pub fn window_neighbors(target: usize, n: usize, spec: &WindowSpec) -> Vec<(Offset, usize)> {
    let before = (1..=spec.n_before).filter_map(|d| target.checked_sub(d).map(|j| (Offset::Before(d), j)));
    let after = (1..=spec.n_after).map(|d| (Offset::After(d), target + d)).filter(|&(_, j)| j < n);
    before.chain(after).collect()
}
