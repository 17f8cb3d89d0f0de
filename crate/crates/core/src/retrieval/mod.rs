//! Lexical retrieval, run files, score normalization and rank fusion.

mod bm25;
mod fusion;
mod runfile;

pub use bm25::{build_document_index, build_passage_index, tokenize, Bm25Index, Bm25Params};
pub use fusion::{fuse, normalize, FusionConfig};
pub use runfile::{ingest_run_file, parse_run, Run, RunWarning};

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("query {query_id}: duplicate candidate {candidate}")]
    DuplicateCandidate {
        query_id: String,
        candidate: CandidateId,
    },
    #[error("query {query_id}: candidate {candidate} has a non-finite score")]
    NonFiniteScore {
        query_id: String,
        candidate: CandidateId,
    },
    #[error("query {0}: ranking is not normalized")]
    NotNormalized(String),
    #[error("candidate {0} has no containing document")]
    MissingContainingDocument(CandidateId),
    #[error("candidate {0} refers to a document that is not in the corpus")]
    UnknownDocument(CandidateId),
    #[error("invalid candidate id {0:?}")]
    BadCandidateId(String),
    #[error("run file line {line}: {message}")]
    RunFile { line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Identifies a document (`passage_id == None`) or one of its passages.
///
/// The textual form is `docID` or `docID#passageID`; whitespace and `%` in the
/// passage id are percent-encoded so the form never contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateId {
    pub document_id: i64,
    pub passage_id: Option<String>,
}

impl CandidateId {
    pub fn document(document_id: i64) -> Self {
        Self {
            document_id,
            passage_id: None,
        }
    }

    pub fn passage(document_id: i64, passage_id: impl Into<String>) -> Self {
        Self {
            document_id,
            passage_id: Some(passage_id.into()),
        }
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.document_id)?;
        if let Some(pid) = &self.passage_id {
            f.write_str("#")?;
            for c in pid.chars() {
                if c == '%' || c.is_whitespace() {
                    let mut buf = [0u8; 4];
                    for b in c.encode_utf8(&mut buf).bytes() {
                        write!(f, "%{b:02X}")?;
                    }
                } else {
                    write!(f, "{c}")?;
                }
            }
        }
        Ok(())
    }
}

impl FromStr for CandidateId {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RetrievalError::BadCandidateId(s.to_string());
        let (doc, pid) = match s.split_once('#') {
            Some((d, p)) => (d, Some(p)),
            None => (s, None),
        };
        let document_id = doc.parse().map_err(|_| bad())?;
        let passage_id = match pid {
            None => None,
            Some(p) => {
                let decoded = percent_decode(p).ok_or_else(bad)?;
                if decoded.is_empty() {
                    return Err(bad());
                }
                Some(decoded)
            }
        };
        Ok(Self {
            document_id,
            passage_id,
        })
    }
}

fn percent_decode(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

impl Serialize for CandidateId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CandidateId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: CandidateId,
    pub raw_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_score: Option<f64>,
}

impl ScoredCandidate {
    pub fn new(id: CandidateId, raw_score: f64) -> Self {
        Self {
            id,
            raw_score,
            normalized_score: None,
        }
    }

    /// The ranking score: normalized when available, raw otherwise.
    pub fn score(&self) -> f64 {
        self.normalized_score.unwrap_or(self.raw_score)
    }
}

/// Score descending, then candidate id ascending.
pub fn ranking_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.id.cmp(&b.id))
}

/// Per-query candidates in strict (score desc, id asc) order without duplicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    query_id: String,
    candidates: Vec<ScoredCandidate>,
}

impl RankedList {
    /// Sorts `candidates` into ranking order, rejecting duplicates and
    /// non-finite scores.
    pub fn new(
        query_id: impl Into<String>,
        mut candidates: Vec<ScoredCandidate>,
    ) -> Result<Self, RetrievalError> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(candidates.len());
        for c in &candidates {
            let finite = c.raw_score.is_finite() && c.normalized_score.is_none_or(f64::is_finite);
            if !finite {
                return Err(RetrievalError::NonFiniteScore {
                    query_id,
                    candidate: c.id.clone(),
                });
            }
            if !seen.insert(&c.id) {
                return Err(RetrievalError::DuplicateCandidate {
                    query_id,
                    candidate: c.id.clone(),
                });
            }
        }
        candidates.sort_by(ranking_order);
        Ok(Self {
            query_id,
            candidates,
        })
    }

    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            candidates: Vec::new(),
        }
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn with_query_id(mut self, query_id: impl Into<String>) -> Self {
        self.query_id = query_id.into();
        self
    }

    pub fn candidates(&self) -> &[ScoredCandidate] {
        &self.candidates
    }

    pub fn into_candidates(self) -> Vec<ScoredCandidate> {
        self.candidates
    }

    pub fn ids(&self) -> impl Iterator<Item = &CandidateId> + '_ {
        self.candidates.iter().map(|c| &c.id)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.candidates.truncate(k);
    }

    pub fn is_normalized(&self) -> bool {
        self.candidates.iter().all(|c| c.normalized_score.is_some())
    }
}
