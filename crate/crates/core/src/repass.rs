//! Reference-free answer scoring against the retrieved passages.
//!
//! Passages and answer are split into sentences. With `p_j` the pooled passage
//! sentences, `a_i` the `N` answer sentences and `o_k` the `M` passage
//! sentences classified as obligations:
//!
//! ```text
//! E_s   = 1/N * sum_i max_j P_entail(p_j, a_i)
//! C_s   = 1/N * sum_i max_j P_contradict(p_j, a_i)
//! OC_s  = 1/M * #{ k : max_l P_entail(o_k, a_l) > 0.7 }
//! score = (E_s - C_s + OC_s + 1) / 3
//! ```
//!
//! A passage set without obligations has nothing left to cover, so `OC_s` is
//! 1 and the report sets `no_obligations`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answerflow::AnswerRecord;
use crate::corpus::{segment_sentences, Corpus};
use crate::nli::{Gateway, GatewayError, NliPair, NliRole};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum RepassError {
    #[error("no passage sentences to score against")]
    EmptyEvidence,
    #[error("answer has no sentences")]
    EmptyAnswer,
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("retrieved id {0} is not in the corpus")]
    UnresolvedId(String),
    #[error("{0}")]
    Record(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Passage sentences pooled across every source passage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceSet {
    sentences: Vec<String>,
    origin: Vec<usize>,
    sources: Vec<String>,
}

impl EvidenceSet {
    /// `passages` holds `(source label, passage text)` pairs.
    pub fn from_passages<S: AsRef<str>, T: AsRef<str>>(passages: &[(S, T)]) -> Self {
        let mut set = Self::default();
        for (label, text) in passages {
            let idx = set.sources.len();
            set.sources.push(label.as_ref().to_string());
            for s in segment_sentences(text.as_ref()).sentences {
                set.sentences.push(s.text);
                set.origin.push(idx);
            }
        }
        set
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// Label of the passage sentence `j` came from.
    pub fn source_of(&self, j: usize) -> &str {
        &self.sources[self.origin[j]]
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerSentences {
    sentences: Vec<String>,
}

impl AnswerSentences {
    pub fn from_text(answer: &str) -> Self {
        Self {
            sentences: segment_sentences(answer).texts(),
        }
    }

    pub fn from_sentences(sentences: Vec<String>) -> Self {
        Self { sentences }
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Which side of the coverage pair holds the obligation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageDirection {
    /// Obligation is the premise, answer sentence the hypothesis.
    #[default]
    ObligationPremise,
    AnswerPremise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepassConfig {
    pub coverage_threshold: f64,
    pub coverage_direction: CoverageDirection,
}

impl Default for RepassConfig {
    fn default() -> Self {
        Self {
            coverage_threshold: 0.7,
            coverage_direction: CoverageDirection::ObligationPremise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSentenceScore {
    pub sentence: String,
    /// Index into the evidence sentences of the most entailing premise.
    pub best_premise: usize,
    pub best_source: String,
    pub max_entailment: f64,
    pub max_contradiction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObligationScore {
    pub sentence: String,
    pub covered: bool,
    pub best_entailment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntailmentScores {
    pub entailment: f64,
    pub contradiction: f64,
    pub per_sentence: Vec<AnswerSentenceScore>,
}

pub fn entailment_contradiction(
    evidence: &EvidenceSet,
    answer: &AnswerSentences,
    gateway: &Gateway,
) -> Result<EntailmentScores, RepassError> {
    if evidence.is_empty() {
        return Err(RepassError::EmptyEvidence);
    }
    if answer.is_empty() {
        return Err(RepassError::EmptyAnswer);
    }
    let np = evidence.len();
    let pairs: Vec<NliPair> = answer
        .sentences()
        .iter()
        .flat_map(|a| evidence.sentences().iter().map(move |p| NliPair::new(p.clone(), a.clone())))
        .collect();
    let probs = gateway.score_nli(&pairs, NliRole::Matrix)?;

    let mut per_sentence = Vec::with_capacity(answer.len());
    for (i, a) in answer.sentences().iter().enumerate() {
        let row = &probs[i * np..(i + 1) * np];
        let mut best = 0;
        for (j, p) in row.iter().enumerate() {
            if p.entailment > row[best].entailment {
                best = j;
            }
        }
        let max_contradiction = row.iter().map(|p| p.contradiction).fold(0.0, f64::max);
        per_sentence.push(AnswerSentenceScore {
            sentence: a.clone(),
            best_premise: best,
            best_source: evidence.source_of(best).to_string(),
            max_entailment: row[best].entailment,
            max_contradiction,
        });
    }
    let n = per_sentence.len() as f64;
    Ok(EntailmentScores {
        entailment: per_sentence.iter().map(|s| s.max_entailment).sum::<f64>() / n,
        contradiction: per_sentence.iter().map(|s| s.max_contradiction).sum::<f64>() / n,
        per_sentence,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageScores {
    pub coverage: f64,
    pub obligations: Vec<ObligationScore>,
    pub no_obligations: bool,
}

pub fn obligation_coverage(
    evidence: &EvidenceSet,
    answer: &AnswerSentences,
    gateway: &Gateway,
    config: &RepassConfig,
) -> Result<CoverageScores, RepassError> {
    if evidence.is_empty() {
        return Err(RepassError::EmptyEvidence);
    }
    let labels = gateway.classify_obligations(evidence.sentences())?;
    let obligations: Vec<&String> = evidence
        .sentences()
        .iter()
        .zip(&labels)
        .filter(|(_, l)| l.is_obligation)
        .map(|(s, _)| s)
        .collect();
    if obligations.is_empty() {
        return Ok(CoverageScores {
            coverage: 1.0,
            obligations: Vec::new(),
            no_obligations: true,
        });
    }
    if answer.is_empty() {
        return Err(RepassError::EmptyAnswer);
    }
    let na = answer.len();
    let pairs: Vec<NliPair> = obligations
        .iter()
        .flat_map(|o| {
            answer.sentences().iter().map(move |a| match config.coverage_direction {
                CoverageDirection::ObligationPremise => NliPair::new(o.as_str(), a.clone()),
                CoverageDirection::AnswerPremise => NliPair::new(a.clone(), o.as_str()),
            })
        })
        .collect();
    let probs = gateway.score_nli(&pairs, NliRole::Coverage)?;
    let scores: Vec<ObligationScore> = obligations
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let best = probs[k * na..(k + 1) * na]
                .iter()
                .map(|p| p.entailment)
                .fold(0.0, f64::max);
            ObligationScore {
                sentence: (*o).clone(),
                covered: best > config.coverage_threshold,
                best_entailment: best,
            }
        })
        .collect();
    let covered = scores.iter().filter(|s| s.covered).count();
    Ok(CoverageScores {
        coverage: covered as f64 / scores.len() as f64,
        obligations: scores,
        no_obligations: false,
    })
}

pub fn composite(entailment: f64, contradiction: f64, coverage: f64) -> Result<f64, RepassError> {
    for (name, value) in [("E_s", entailment), ("C_s", contradiction), ("OC_s", coverage)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(RepassError::OutOfRange { name, value });
        }
    }
    Ok((entailment - contradiction + coverage + 1.0) / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RePassReport {
    #[serde(rename = "QuestionID", default, skip_serializing_if = "String::is_empty")]
    pub question_id: String,
    #[serde(rename = "E_s")]
    pub entailment: f64,
    #[serde(rename = "C_s")]
    pub contradiction: f64,
    #[serde(rename = "OC_s")]
    pub coverage: f64,
    #[serde(rename = "RePASs")]
    pub repass: f64,
    #[serde(rename = "M")]
    pub obligation_count: usize,
    pub no_obligations: bool,
    pub sentences: Vec<AnswerSentenceScore>,
    pub obligations: Vec<ObligationScore>,
    pub backend: String,
}

pub fn score(
    evidence: &EvidenceSet,
    answer: &AnswerSentences,
    gateway: &Gateway,
    config: &RepassConfig,
) -> Result<RePassReport, RepassError> {
    let ec = entailment_contradiction(evidence, answer, gateway)?;
    let oc = obligation_coverage(evidence, answer, gateway, config)?;
    Ok(RePassReport {
        question_id: String::new(),
        entailment: ec.entailment,
        contradiction: ec.contradiction,
        coverage: oc.coverage,
        repass: composite(ec.entailment, ec.contradiction, oc.coverage)?,
        obligation_count: oc.obligations.len(),
        no_obligations: oc.no_obligations,
        sentences: ec.per_sentence,
        obligations: oc.obligations,
        backend: gateway.watermark(),
    })
}

/// Builds the evidence for one answer record: passage texts when present,
/// otherwise the retrieved ids resolved against `corpus`.
pub fn record_evidence(record: &AnswerRecord, corpus: Option<&Corpus>) -> Result<EvidenceSet, RepassError> {
    record.check_alignment().map_err(RepassError::Record)?;
    let passages: Vec<(String, String)> = if !record.retrieved_passages.is_empty() {
        record
            .retrieved_passages
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let label = record.retrieved_ids.get(i).cloned().unwrap_or_else(|| format!("passage[{i}]"));
                (label, text.clone())
            })
            .collect()
    } else {
        let corpus = corpus.ok_or_else(|| {
            RepassError::Record(format!("{}: no passage texts and no corpus to resolve ids", record.question_id))
        })?;
        record
            .retrieved_ids
            .iter()
            .map(|id| {
                corpus
                    .passage_by_record_id(id)
                    .map(|p| (id.clone(), p.text.clone()))
                    .ok_or_else(|| RepassError::UnresolvedId(id.clone()))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(EvidenceSet::from_passages(&passages))
}

pub fn score_record(
    record: &AnswerRecord,
    corpus: Option<&Corpus>,
    gateway: &Gateway,
    config: &RepassConfig,
) -> Result<RePassReport, RepassError> {
    let evidence = record_evidence(record, corpus)?;
    let answer = AnswerSentences::from_text(&record.answer);
    let mut report = score(&evidence, &answer, gateway, config)?;
    report.question_id = record.question_id.clone();
    Ok(report)
}

/// Outcome for one record of an answer file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordResult {
    Scored(RePassReport),
    Failed {
        #[serde(rename = "QuestionID")]
        question_id: String,
        error: String,
    },
}

/// Scores every record in parallel; failures are reported per record.
pub fn score_answer_file(
    records: &[AnswerRecord],
    corpus: Option<&Corpus>,
    gateway: &Gateway,
    config: &RepassConfig,
) -> Vec<RecordResult> {
    records
        .par_iter()
        .map(|r| match score_record(r, corpus, gateway, config) {
            Ok(report) => RecordResult::Scored(report),
            Err(e) => {
                log::warn!("{}: {e}", r.question_id);
                RecordResult::Failed {
                    question_id: r.question_id.clone(),
                    error: e.to_string(),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepassSummary {
    #[serde(rename = "E_s")]
    pub entailment: f64,
    #[serde(rename = "C_s")]
    pub contradiction: f64,
    #[serde(rename = "OC_s")]
    pub coverage: f64,
    #[serde(rename = "RePASs")]
    pub repass: f64,
    pub n_records: usize,
    pub n_failed: usize,
    pub backend: String,
}

/// Means over the scored records; `None` when nothing was scored.
pub fn summarize(results: &[RecordResult], backend: &str) -> Option<RepassSummary> {
    let scored: Vec<&RePassReport> = results
        .iter()
        .filter_map(|r| match r {
            RecordResult::Scored(s) => Some(s),
            RecordResult::Failed { .. } => None,
        })
        .collect();
    if scored.is_empty() {
        return None;
    }
    let n = scored.len() as f64;
    let mean = |f: fn(&RePassReport) -> f64| scored.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(RepassSummary {
        entailment: mean(|r| r.entailment),
        contradiction: mean(|r| r.contradiction),
        coverage: mean(|r| r.coverage),
        repass: mean(|r| r.repass),
        n_records: scored.len(),
        n_failed: results.len() - scored.len(),
        backend: backend.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::{FixtureBackend, FixtureStore, NliProbs, ObligationLabel};
    use std::sync::Arc;

    struct Fx(FixtureStore);

    impl Fx {
        fn new() -> Self {
            Self(FixtureStore::default())
        }
        fn nli(mut self, role: NliRole, p: &str, h: &str, e: f64, c: f64) -> Self {
            let n = 1.0 - e - c;
            self.0.insert_nli(role, p, h, NliProbs::new(e, c, n).unwrap());
            self
        }
        fn obligation(mut self, s: &str, yes: bool) -> Self {
            self.0.insert_obligation(s, ObligationLabel { is_obligation: yes, confidence: 1.0 });
            self
        }
        fn gateway(self) -> Gateway {
            Gateway::uniform(Arc::new(FixtureBackend::new(self.0)))
        }
    }

    fn ev(sentences: &[&str]) -> EvidenceSet {
        EvidenceSet::from_passages(&[("p", sentences.join(" "))])
    }

    fn ans(sentences: &[&str]) -> AnswerSentences {
        AnswerSentences::from_sentences(sentences.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn single_cell() {
        let gw = Fx::new().nli(NliRole::Matrix, "P.", "A.", 1.0, 0.0).gateway();
        let s = entailment_contradiction(&ev(&["P."]), &ans(&["A."]), &gw).unwrap();
        assert_eq!((s.entailment, s.contradiction), (1.0, 0.0));
    }

    #[test]
    fn row_maxima_are_averaged() {
        let gw = Fx::new()
            .nli(NliRole::Matrix, "P one.", "A one.", 0.8, 0.1)
            .nli(NliRole::Matrix, "P two.", "A one.", 0.05, 0.9)
            .nli(NliRole::Matrix, "P one.", "A two.", 0.6, 0.1)
            .nli(NliRole::Matrix, "P two.", "A two.", 0.05, 0.9)
            .gateway();
        let s = entailment_contradiction(&ev(&["P one.", "P two."]), &ans(&["A one.", "A two."]), &gw).unwrap();
        assert!((s.entailment - 0.7).abs() < 1e-12);
        assert!((s.contradiction - 0.9).abs() < 1e-12);
        assert_eq!(s.per_sentence[0].best_premise, 0);
    }

    #[test]
    fn coverage_threshold_is_strict() {
        let gw = Fx::new()
            .obligation("Firms must act.", true)
            .obligation("Firms shall report.", true)
            .obligation("Context here.", false)
            .nli(NliRole::Coverage, "Firms must act.", "A.", 0.9, 0.0)
            .nli(NliRole::Coverage, "Firms shall report.", "A.", 0.7, 0.0)
            .gateway();
        let e = ev(&["Firms must act.", "Firms shall report.", "Context here."]);
        let c = obligation_coverage(&e, &ans(&["A."]), &gw, &RepassConfig::default()).unwrap();
        assert_eq!(c.coverage, 0.5);
        assert!(!c.obligations[1].covered);
    }

    #[test]
    fn no_obligations_is_full_coverage_with_flag() {
        let gw = Fx::new().obligation("Context.", false).gateway();
        let c = obligation_coverage(&ev(&["Context."]), &ans(&["A."]), &gw, &RepassConfig::default()).unwrap();
        assert_eq!(c.coverage, 1.0);
        assert!(c.no_obligations);
    }

    #[test]
    fn composite_points() {
        assert_eq!(composite(1.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(composite(0.0, 1.0, 0.0).unwrap(), 0.0);
        assert!((composite(0.7639, 0.3336, 1.0).unwrap() - 0.8101).abs() < 5e-4);
        assert!(matches!(composite(1.2, 0.0, 0.0), Err(RepassError::OutOfRange { name: "E_s", .. })));
    }

    #[test]
    fn empty_inputs_are_errors() {
        let gw = Gateway::heuristic();
        assert_eq!(
            entailment_contradiction(&EvidenceSet::default(), &ans(&["A."]), &gw).unwrap_err(),
            RepassError::EmptyEvidence
        );
        assert_eq!(
            entailment_contradiction(&ev(&["P."]), &AnswerSentences::from_text("  "), &gw).unwrap_err(),
            RepassError::EmptyAnswer
        );
    }

    fn record(qid: &str, answer: &str, ids: &[&str], passages: &[&str]) -> AnswerRecord {
        AnswerRecord {
            question_id: qid.into(),
            question: "Q?".into(),
            retrieved_passages: passages.iter().map(|s| s.to_string()).collect(),
            answer: answer.into(),
            retrieved_ids: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn file_scoring_keeps_going_past_bad_records() {
        let gw = Gateway::heuristic();
        let records = vec![
            record("ok", "Firms must keep records.", &["x"], &["Firms must keep records."]),
            record("empty", "", &["x"], &["Firms must keep records."]),
            record("dangling", "Something.", &["missing"], &[]),
            record("ok", "Firms must keep records.", &["x"], &["Firms must keep records."]),
        ];
        let corpus = Corpus::default();
        let results = score_answer_file(&records, Some(&corpus), &gw, &RepassConfig::default());
        assert!(matches!(results[1], RecordResult::Failed { .. }));
        assert!(matches!(results[2], RecordResult::Failed { .. }));
        assert_eq!(results[0], results[3]);
        let summary = summarize(&results, &gw.watermark()).unwrap();
        assert_eq!((summary.n_records, summary.n_failed), (2, 2));
        assert!(summary.backend.contains("HEURISTIC"));
        let v = serde_json::to_value(&summary).unwrap();
        for k in ["E_s", "C_s", "OC_s", "RePASs", "n_records", "backend"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
