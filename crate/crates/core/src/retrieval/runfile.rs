//! Whitespace-separated run files: `query_id candidate_id rank score tag`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::{ranking_order, CandidateId, RankedList, RetrievalError, ScoredCandidate};

/// Rankings for many queries, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub tag: String,
    rankings: IndexMap<String, RankedList>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunWarning {
    /// Lines for this query were not in ranking order and have been re-sorted.
    Resorted { query_id: String },
    /// A line carried a different tag than the first line.
    MixedTags { line: usize, tag: String },
}

impl std::fmt::Display for RunWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunWarning::Resorted { query_id } => {
                write!(f, "query {query_id}: lines were not in score order; re-sorted")
            }
            RunWarning::MixedTags { line, tag } => {
                write!(f, "line {line}: tag {tag:?} differs from the run tag")
            }
        }
    }
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rankings: IndexMap::new(),
        }
    }

    /// Adds or replaces the ranking for its query id.
    pub fn insert(&mut self, ranking: RankedList) {
        self.rankings.insert(ranking.query_id().to_string(), ranking);
    }

    pub fn get(&self, query_id: &str) -> Option<&RankedList> {
        self.rankings.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RankedList)> + '_ {
        self.rankings.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.rankings.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Writes every ranking with 1-based ranks and raw scores.
    pub fn to_run_string(&self) -> String {
        let tag = if self.tag.is_empty() { "rirag" } else { self.tag.as_str() };
        let mut out = String::new();
        for (qid, list) in &self.rankings {
            for (i, c) in list.candidates().iter().enumerate() {
                out.push_str(&format!("{qid} {} {} {} {tag}\n", c.id, i + 1, c.raw_score));
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_run_string())
    }
}

pub fn parse_run(text: &str) -> Result<(Run, Vec<RunWarning>), RetrievalError> {
    let mut tag: Option<String> = None;
    let mut warnings = Vec::new();
    let mut grouped: IndexMap<String, Vec<ScoredCandidate>> = IndexMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| RetrievalError::RunFile {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, cid, rank, score, line_tag] = fields[..] else {
            return Err(malformed(format!("expected 5 fields, found {}", fields.len())));
        };
        let id: CandidateId = cid
            .parse()
            .map_err(|_| malformed(format!("invalid candidate id {cid:?}")))?;
        rank.parse::<u64>()
            .map_err(|_| malformed(format!("invalid rank {rank:?}")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| malformed(format!("invalid score {score:?}")))?;
        if !score.is_finite() {
            return Err(malformed(format!("non-finite score {score}")));
        }
        match &tag {
            None => tag = Some(line_tag.to_string()),
            Some(t) if t != line_tag => warnings.push(RunWarning::MixedTags {
                line: line_no,
                tag: line_tag.to_string(),
            }),
            Some(_) => {}
        }
        let entries = grouped.entry(qid.to_string()).or_default();
        if entries.iter().any(|c| c.id == id) {
            return Err(malformed(format!("duplicate candidate {cid} for query {qid}")));
        }
        entries.push(ScoredCandidate::new(id, score));
    }

    let mut run = Run::new(tag.unwrap_or_default());
    for (qid, entries) in grouped {
        let in_order = entries
            .windows(2)
            .all(|w| ranking_order(&w[0], &w[1]).is_lt());
        if !in_order {
            log::warn!("run query {qid}: lines out of score order, re-sorting");
            warnings.push(RunWarning::Resorted {
                query_id: qid.clone(),
            });
        }
        run.insert(RankedList::new(qid, entries)?);
    }
    Ok((run, warnings))
}

/// Reads a run file, grouping lines per query and re-sorting where needed.
pub fn ingest_run_file(path: impl AsRef<Path>) -> Result<(Run, Vec<RunWarning>), RetrievalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_run(&text)
}
