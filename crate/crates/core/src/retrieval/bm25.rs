//! Okapi BM25 over passages or whole documents.
//!
//! Scoring, for each distinct query term `t` with query frequency `qtf`:
//!
//! ```text
//! idf(t)   = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
//! score   += qtf * idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ranking_order, CandidateId, RankedList, RetrievalError, ScoredCandidate};
use crate::corpus::{document_text, Corpus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Queries and passages are cut to this many tokens.
    pub token_limit: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 0.9,
            b: 0.4,
            token_limit: 512,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::InvalidParams(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidParams(format!("b must lie in [0, 1], got {}", self.b)));
        }
        if self.token_limit == 0 {
            return Err(RetrievalError::InvalidParams("token_limit must be >= 1".into()));
        }
        Ok(())
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Posting {
    unit: u32,
    tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    units: Vec<CandidateId>,
    lengths: Vec<u32>,
    average_length: f64,
    postings: HashMap<String, Vec<Posting>>,
    unit_lookup: HashMap<CandidateId, u32>,
}

impl Bm25Index {
    /// Indexes `(id, text)` units. When `truncate` is set each unit keeps only
    /// its first `token_limit` tokens.
    pub fn build<'a>(
        units: impl IntoIterator<Item = (CandidateId, &'a str)>,
        params: Bm25Params,
        truncate: bool,
    ) -> Result<Self, RetrievalError> {
        params.validate()?;
        let mut ids = Vec::new();
        let mut lengths = Vec::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (unit, (id, text)) in units.into_iter().enumerate() {
            let mut tokens = tokenize(text);
            if truncate {
                tokens.truncate(params.token_limit);
            }
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens.iter() {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    unit: unit as u32,
                    tf: count,
                });
            }
            lengths.push(tokens.len() as u32);
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let total: u64 = lengths.iter().map(|&l| u64::from(l)).sum();
        let average_length = total as f64 / ids.len() as f64;
        let unit_lookup = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Self {
            params,
            units: ids,
            lengths,
            average_length,
            postings,
            unit_lookup,
        })
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn average_length(&self) -> f64 {
        self.average_length
    }

    /// Indexed token count of a unit (after truncation).
    pub fn unit_length(&self, id: &CandidateId) -> Option<usize> {
        self.unit_lookup.get(id).map(|&u| self.lengths[u as usize] as usize)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, term: &str, id: &CandidateId) -> usize {
        let Some(&unit) = self.unit_lookup.get(id) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|ps| ps.iter().find(|p| p.unit == unit))
            .map_or(0, |p| p.tf as usize)
    }

    pub fn unit_ids(&self) -> &[CandidateId] {
        &self.units
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.units.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` units by BM25 score. Units sharing no term with the query are
    /// never returned; an empty or term-less query yields an empty list.
    pub fn search(&self, query: &str, k: usize) -> RankedList {
        let mut tokens = tokenize(query);
        tokens.truncate(self.params.token_limit);
        let mut query_tf: Vec<(String, u32)> = Vec::new();
        for t in tokens {
            match query_tf.iter_mut().find(|(term, _)| *term == t) {
                Some((_, n)) => *n += 1,
                None => query_tf.push((t, 1)),
            }
        }

        let Bm25Params { k1, b, .. } = self.params;
        let mut scores: Vec<f64> = vec![0.0; self.units.len()];
        let mut seen = vec![false; self.units.len()];
        let mut touched: Vec<u32> = Vec::new();
        for (term, qtf) in &query_tf {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for p in postings {
                let u = p.unit as usize;
                let tf = f64::from(p.tf);
                let dl = f64::from(self.lengths[u]);
                let norm = k1 * (1.0 - b + b * dl / self.average_length);
                if !seen[u] {
                    seen[u] = true;
                    touched.push(p.unit);
                }
                scores[u] += f64::from(*qtf) * idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }

        let mut hits: Vec<ScoredCandidate> = touched
            .into_iter()
            .map(|u| ScoredCandidate::new(self.units[u as usize].clone(), scores[u as usize]))
            .collect();
        hits.sort_by(ranking_order);
        hits.truncate(k);
        RankedList::new(String::new(), hits).expect("index ids are unique and scores finite")
    }
}

/// Passage-level index; passages are truncated to `params.token_limit` tokens.
pub fn build_passage_index(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    Bm25Index::build(
        corpus
            .passages()
            .map(|p| (CandidateId::passage(p.document_id, p.passage_id.clone()), p.text.as_str())),
        params,
        true,
    )
}

/// Document-level index over newline-joined passage texts, without truncation.
pub fn build_document_index(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    let texts: Vec<(CandidateId, String)> = corpus
        .documents()
        .iter()
        .map(|d| (CandidateId::document(d.document_id), document_text(d)))
        .collect();
    Bm25Index::build(
        texts.iter().map(|(id, t)| (id.clone(), t.as_str())),
        params,
        false,
    )
}
