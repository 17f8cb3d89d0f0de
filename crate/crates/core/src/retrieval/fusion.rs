//! Min-max normalization over a top-candidate window and convex fusion of a
//! passage ranking with a document ranking.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{RankedList, RetrievalError, ScoredCandidate};
use crate::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Weight on the document-side score.
    pub doc_weight: f64,
    /// Number of top passages that are normalized and fused.
    pub passage_cutoff: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            doc_weight: 0.1,
            passage_cutoff: 100,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.doc_weight) {
            return Err(RetrievalError::InvalidParams(format!(
                "doc_weight must lie in [0, 1], got {}",
                self.doc_weight
            )));
        }
        if self.passage_cutoff == 0 {
            return Err(RetrievalError::InvalidParams("passage_cutoff must be >= 1".into()));
        }
        Ok(())
    }
}

/// Keeps the top `window` candidates and maps their raw scores onto [0, 1]
/// with `(s - min) / (max - min)`, min and max taken over the window. A window
/// whose scores are all equal maps every candidate to 1.0.
pub fn normalize(ranked: &RankedList, window: usize) -> Result<RankedList, RetrievalError> {
    if window == 0 {
        return Err(RetrievalError::InvalidParams("normalization window must be >= 1".into()));
    }
    if ranked.is_empty() {
        return Err(RetrievalError::EmptyRanking);
    }
    let top = &ranked.candidates()[..window.min(ranked.len())];
    let (lo, hi) = top.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        (lo.min(c.raw_score), hi.max(c.raw_score))
    });
    let span = hi - lo;
    let normalized = top
        .iter()
        .map(|c| {
            let s = if span > 0.0 {
                ((c.raw_score - lo) / span).clamp(0.0, 1.0)
            } else {
                1.0
            };
            ScoredCandidate {
                id: c.id.clone(),
                raw_score: c.raw_score,
                normalized_score: Some(s),
            }
        })
        .collect();
    RankedList::new(ranked.query_id(), normalized)
}

/// Fuses each passage in the top `passage_cutoff` of `passages` with the score
/// of its containing document:
///
/// ```text
/// fused(p) = (1 - doc_weight) * s_passage(p) + doc_weight * s_document(doc(p))
/// ```
///
/// A document missing from `documents` contributes 0. When `corpus` is given,
/// every containing document must exist in it.
pub fn fuse(
    passages: &RankedList,
    documents: &RankedList,
    config: &FusionConfig,
    corpus: Option<&Corpus>,
) -> Result<RankedList, RetrievalError> {
    config.validate()?;
    for list in [passages, documents] {
        if !list.is_normalized() {
            return Err(RetrievalError::NotNormalized(list.query_id().to_string()));
        }
    }
    let doc_scores: HashMap<i64, f64> = documents
        .candidates()
        .iter()
        .filter(|c| c.id.passage_id.is_none())
        .map(|c| (c.id.document_id, c.score()))
        .collect();

    let w = config.doc_weight;
    let mut fused = Vec::with_capacity(passages.len().min(config.passage_cutoff));
    for c in passages.candidates().iter().take(config.passage_cutoff) {
        if c.id.passage_id.is_none() {
            return Err(RetrievalError::MissingContainingDocument(c.id.clone()));
        }
        if let Some(corpus) = corpus {
            if corpus.document(c.id.document_id).is_none() {
                return Err(RetrievalError::UnknownDocument(c.id.clone()));
            }
        }
        let doc = doc_scores.get(&c.id.document_id).copied().unwrap_or(0.0);
        let score = (1.0 - w) * c.score() + w * doc;
        fused.push(ScoredCandidate {
            id: c.id.clone(),
            raw_score: score,
            normalized_score: Some(score),
        });
    }
    RankedList::new(passages.query_id(), fused)
}
