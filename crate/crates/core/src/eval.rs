//! Recall@k and MAP@k against gold question-passage assignments.
//!
//! Average precision divides by the full gold-set size, so a query with more
//! gold passages than `k` can never reach 1.0. Queries present in the qrels
//! but absent from the run score 0 on both metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::corpus::QaRecord;
use crate::retrieval::{CandidateId, RankedList, Run};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("k must be positive")]
    ZeroCutoff,
    #[error("run contains query {0} which has no gold assignment")]
    UnknownQuery(String),
    #[error("query {0} has an empty gold set")]
    EmptyGold(String),
}

/// Gold candidate sets per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    gold: BTreeMap<String, BTreeSet<CandidateId>>,
}

impl Qrels {
    pub fn new(gold: BTreeMap<String, BTreeSet<CandidateId>>) -> Result<Self, EvalError> {
        if let Some((q, _)) = gold.iter().find(|(_, g)| g.is_empty()) {
            return Err(EvalError::EmptyGold(q.clone()));
        }
        Ok(Self { gold })
    }

    /// Gold passages of each question become its relevant candidates.
    pub fn from_qa(records: &[QaRecord]) -> Result<Self, EvalError> {
        let gold = records
            .iter()
            .map(|r| {
                let set = r
                    .gold
                    .iter()
                    .map(|g| CandidateId::passage(g.document_id, g.passage_id.clone()))
                    .collect();
                (r.question_id.clone(), set)
            })
            .collect();
        Self::new(gold)
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<CandidateId>> {
        self.gold.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<CandidateId>)> + '_ {
        self.gold.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

/// One metric over all qrels queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

fn check(run: &Run, qrels: &Qrels, k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    if let Some(q) = run.query_ids().find(|q| qrels.get(q).is_none()) {
        return Err(EvalError::UnknownQuery(q.to_string()));
    }
    Ok(())
}

fn summarize(
    run: &Run,
    qrels: &Qrels,
    k: usize,
    per_query: impl Fn(&RankedList, &BTreeSet<CandidateId>, usize) -> f64,
) -> MetricSummary {
    let values: BTreeMap<String, f64> = qrels
        .iter()
        .map(|(q, gold)| {
            let v = run.get(q).map_or(0.0, |list| per_query(list, gold, k));
            (q.to_string(), v)
        })
        .collect();
    let mean = if values.is_empty() {
        0.0
    } else {
        values.values().sum::<f64>() / values.len() as f64
    };
    MetricSummary {
        per_query: values,
        mean,
    }
}

pub fn query_recall(list: &RankedList, gold: &BTreeSet<CandidateId>, k: usize) -> f64 {
    let hits = list.ids().take(k).filter(|id| gold.contains(*id)).count();
    hits as f64 / gold.len() as f64
}

pub fn query_average_precision(list: &RankedList, gold: &BTreeSet<CandidateId>, k: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, id) in list.ids().take(k).enumerate() {
        if gold.contains(id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / gold.len() as f64
}

/// Fraction of each query's gold set found in its top `k`.
pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<MetricSummary, EvalError> {
    check(run, qrels, k)?;
    Ok(summarize(run, qrels, k, query_recall))
}

/// Mean over queries of average precision within the top `k`.
pub fn map_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<MetricSummary, EvalError> {
    check(run, qrels, k)?;
    Ok(summarize(run, qrels, k, query_average_precision))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub recall: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub recall: f64,
    pub map: f64,
    pub per_query: BTreeMap<String, QueryMetrics>,
}

pub fn evaluate(run: &Run, qrels: &Qrels, k: usize) -> Result<RetrievalReport, EvalError> {
    let recall = recall_at_k(run, qrels, k)?;
    let map = map_at_k(run, qrels, k)?;
    let per_query = recall
        .per_query
        .iter()
        .map(|(q, &r)| {
            (
                q.clone(),
                QueryMetrics {
                    recall: r,
                    ap: map.per_query[q],
                },
            )
        })
        .collect();
    Ok(RetrievalReport {
        k,
        recall: recall.mean,
        map: map.mean,
        per_query,
    })
}

impl fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_query
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        let rk = format!("R@{}", self.k);
        let mk = format!("M@{}", self.k);
        writeln!(f, "{:<width$}  {rk:>8}  {mk:>8}", "query")?;
        for (q, m) in &self.per_query {
            writeln!(f, "{q:<width$}  {:>8.4}  {:>8.4}", m.recall, m.ap)?;
        }
        write!(f, "{:<width$}  {:>8.4}  {:>8.4}", "mean", self.recall, self.map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredCandidate;

    fn id(s: &str) -> CandidateId {
        CandidateId::passage(1, s)
    }

    fn ranking(q: &str, ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::new(
            q,
            ids.iter()
                .enumerate()
                .map(|(i, s)| ScoredCandidate::new(id(s), (n - i) as f64))
                .collect(),
        )
        .unwrap()
    }

    fn qrels(entries: &[(&str, &[&str])]) -> Qrels {
        Qrels::new(
            entries
                .iter()
                .map(|(q, g)| (q.to_string(), g.iter().map(|s| id(s)).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn run(lists: Vec<RankedList>) -> Run {
        let mut r = Run::new("t");
        for l in lists {
            r.insert(l);
        }
        r
    }

    #[test]
    fn half_recall() {
        let r = run(vec![ranking("q", &["a", "x", "y"])]);
        let rec = recall_at_k(&r, &qrels(&[("q", &["a", "b"])]), 10).unwrap();
        assert_eq!(rec.mean, 0.5);
    }

    #[test]
    fn full_recall() {
        let r = run(vec![ranking("q", &["x", "b", "a"])]);
        assert_eq!(recall_at_k(&r, &qrels(&[("q", &["a", "b"])]), 10).unwrap().mean, 1.0);
    }

    #[test]
    fn average_precision_cases() {
        let q = qrels(&[("q", &["g"])]);
        let third = map_at_k(&run(vec![ranking("q", &["x", "y", "g"])]), &q, 10).unwrap();
        assert!((third.mean - 1.0 / 3.0).abs() < 1e-15);
        let first = map_at_k(&run(vec![ranking("q", &["g", "y"])]), &q, 10).unwrap();
        assert_eq!(first.mean, 1.0);
        let two = map_at_k(&run(vec![ranking("q", &["a", "b", "z"])]), &qrels(&[("q", &["a", "b"])]), 10).unwrap();
        assert_eq!(two.mean, 1.0);
    }

    #[test]
    fn missing_queries_score_zero() {
        let r = run(vec![ranking("q1", &["a"])]);
        let q = qrels(&[("q1", &["a"]), ("q2", &["b"])]);
        let report = evaluate(&r, &q, 10).unwrap();
        assert_eq!(report.per_query["q2"], QueryMetrics { recall: 0.0, ap: 0.0 });
        assert_eq!(report.recall, 0.5);
        assert_eq!(report.map, 0.5);
    }

    #[test]
    fn cutoff_applies() {
        let r = run(vec![ranking("q", &["x", "a"])]);
        let q = qrels(&[("q", &["a"])]);
        assert_eq!(recall_at_k(&r, &q, 1).unwrap().mean, 0.0);
        assert_eq!(recall_at_k(&r, &q, 2).unwrap().mean, 1.0);
    }

    #[test]
    fn errors() {
        let r = run(vec![ranking("q", &["a"])]);
        assert_eq!(recall_at_k(&r, &qrels(&[("q", &["a"])]), 0), Err(EvalError::ZeroCutoff));
        assert_eq!(map_at_k(&r, &qrels(&[("other", &["a"])]), 10), Err(EvalError::UnknownQuery("q".into())));
        assert!(Qrels::new([("q".to_string(), BTreeSet::new())].into()).is_err());
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let r = run(vec![ranking("q", &["a"])]);
        let report = evaluate(&r, &qrels(&[("q", &["a"])]), 10).unwrap();
        let v = serde_json::to_value(&report).unwrap();
        for key in ["k", "recall", "map", "per_query"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(report.to_string().contains("R@10"));
    }
}
