//! From ranked passages to generated answers.
//!
//! [`filter_passages`] trims a normalized ranking, [`generate_answer`] asks the
//! LLM for an answer grounded in what is left, and [`run_pipeline`] runs both
//! for a batch of questions.

mod record;

pub use record::{answer_records_to_json, load_answer_records, parse_answer_records, AnswerRecord};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaRecord};
use crate::llm::{complete_logged, ChatRequest, LlmClient, LlmError, LlmSettings, Transcript};
use crate::prompts::ANSWER_SYSTEM;
use crate::retrieval::{
    fuse, normalize, Bm25Index, FusionConfig, RankedList, RetrievalError, Run, ScoredCandidate,
};

/// Slack for comparisons against thresholds, so a gap of exactly 0.2 computed
/// as 0.9 - 0.7 does not count as exceeding 0.2.
pub const SCORE_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum AnswerError {
    #[error("nothing to filter: the ranking is empty")]
    EmptyRanking,
    #[error("ranking for {0} must carry normalized scores")]
    NotNormalized(String),
    #[error("invalid filter policy: {0}")]
    Policy(String),
    #[error("question {question_id}: {source}")]
    Llm { question_id: String, source: LlmError },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("candidate {0} has no passage in the corpus")]
    UnknownPassage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    /// A drop between neighbours larger than this ends the kept prefix.
    pub drop_threshold: f64,
    /// Passages scoring below this are removed.
    pub min_score: f64,
    pub max_passages: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            drop_threshold: 0.2,
            min_score: 0.7,
            max_passages: 10,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), AnswerError> {
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(AnswerError::Policy(format!("min_score {} outside [0, 1]", self.min_score)));
        }
        if self.drop_threshold.is_nan() || self.drop_threshold < 0.0 {
            return Err(AnswerError::Policy(format!("drop_threshold {} is negative", self.drop_threshold)));
        }
        if self.max_passages == 0 {
            return Err(AnswerError::Policy("max_passages must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPassages {
    pub kept: Vec<ScoredCandidate>,
    /// Set when every passage fell below `min_score` and only the top one was kept.
    pub fallback: bool,
}

/// Keeps the top `max_passages`, cuts the list after the first drop larger
/// than `drop_threshold`, removes passages under `min_score`, and falls back to
/// the single best passage when nothing survives.
pub fn filter_passages(ranked: &RankedList, policy: &FilterPolicy) -> Result<FilteredPassages, AnswerError> {
    policy.validate()?;
    if ranked.is_empty() {
        return Err(AnswerError::EmptyRanking);
    }
    if !ranked.is_normalized() {
        return Err(AnswerError::NotNormalized(ranked.query_id().to_string()));
    }
    let top = &ranked.candidates()[..policy.max_passages.min(ranked.len())];
    let cut = top
        .windows(2)
        .position(|w| w[0].score() - w[1].score() > policy.drop_threshold + SCORE_EPSILON)
        .map_or(top.len(), |i| i + 1);
    let kept: Vec<ScoredCandidate> = top[..cut]
        .iter()
        .filter(|c| c.score() >= policy.min_score - SCORE_EPSILON)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Ok(FilteredPassages {
            kept: vec![top[0].clone()],
            fallback: true,
        });
    }
    Ok(FilteredPassages { kept, fallback: false })
}

/// User message: the question followed by the numbered passages.
pub fn answer_prompt(question: &str, passages: &[String]) -> String {
    let mut out = format!("Question: {question}\n\nPassages:\n");
    for (i, p) in passages.iter().enumerate() {
        out.push_str(&format!("\n[{}] {}\n", i + 1, p.trim()));
    }
    out
}

pub fn generate_answer(
    question_id: &str,
    question: &str,
    passages: &[String],
    client: &dyn LlmClient,
    settings: &LlmSettings,
) -> Result<(String, Transcript), AnswerError> {
    let request = ChatRequest::new(settings, ANSWER_SYSTEM, answer_prompt(question, passages));
    complete_logged(client, &request).map_err(|source| AnswerError::Llm {
        question_id: question_id.to_string(),
        source,
    })
}

/// A passage handed to the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedPassage {
    pub record_id: String,
    pub text: String,
    pub candidate: ScoredCandidate,
}

/// Produces a normalized ranking for a question.
pub trait Retriever: Sync {
    fn retrieve(&self, query_id: &str, question: &str) -> Result<RankedList, AnswerError>;
    fn corpus(&self) -> &Corpus;
}

/// BM25 over passages, optionally fused with BM25 over whole documents.
pub struct Bm25Retriever<'a> {
    pub corpus: &'a Corpus,
    pub passages: &'a Bm25Index,
    pub documents: Option<&'a Bm25Index>,
    pub fusion: FusionConfig,
}

impl Retriever for Bm25Retriever<'_> {
    fn retrieve(&self, query_id: &str, question: &str) -> Result<RankedList, AnswerError> {
        let window = self.fusion.passage_cutoff;
        let p = self.passages.search(question, window).with_query_id(query_id);
        if p.is_empty() {
            return Err(AnswerError::EmptyRanking);
        }
        let p = normalize(&p, window)?;
        let Some(docs) = self.documents else {
            return Ok(p);
        };
        let d = docs.search(question, window).with_query_id(query_id);
        let d = if d.is_empty() { d } else { normalize(&d, window)? };
        Ok(fuse(&p, &d, &self.fusion, Some(self.corpus))?)
    }

    fn corpus(&self) -> &Corpus {
        self.corpus
    }
}

/// Rankings read from a run file.
pub struct RunRetriever<'a> {
    pub corpus: &'a Corpus,
    pub run: &'a Run,
    /// Min-max window applied when a ranking has scores outside [0, 1].
    pub window: usize,
}

impl Retriever for RunRetriever<'_> {
    fn retrieve(&self, query_id: &str, _question: &str) -> Result<RankedList, AnswerError> {
        let list = self
            .run
            .get(query_id)
            .filter(|l| !l.is_empty())
            .ok_or(AnswerError::EmptyRanking)?;
        let in_unit = list.candidates().iter().all(|c| (0.0..=1.0).contains(&c.raw_score));
        if in_unit {
            let scored = list
                .candidates()
                .iter()
                .map(|c| ScoredCandidate {
                    normalized_score: Some(c.raw_score),
                    ..c.clone()
                })
                .collect();
            Ok(RankedList::new(query_id, scored)?)
        } else {
            Ok(normalize(list, self.window)?)
        }
    }

    fn corpus(&self) -> &Corpus {
        self.corpus
    }
}

pub fn resolve_passages(corpus: &Corpus, kept: &[ScoredCandidate]) -> Result<Vec<RetrievedPassage>, AnswerError> {
    kept.iter()
        .map(|c| {
            let pid = c.id.passage_id.as_deref().ok_or_else(|| AnswerError::UnknownPassage(c.id.to_string()))?;
            let p = corpus
                .passage(c.id.document_id, pid)
                .ok_or_else(|| AnswerError::UnknownPassage(c.id.to_string()))?;
            Ok(RetrievedPassage {
                record_id: p.record_id.clone(),
                text: p.text.clone(),
                candidate: c.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFailure {
    #[serde(rename = "QuestionID")]
    pub question_id: String,
    pub error: String,
    /// The LLM endpoint could not be reached.
    #[serde(default)]
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutput {
    /// Answers in input order; failed questions are absent.
    pub records: Vec<AnswerRecord>,
    pub failures: Vec<QuestionFailure>,
    pub transcripts: Vec<Transcript>,
    /// Questions answered from the single best passage after every passage
    /// fell below the score floor.
    pub fallbacks: Vec<String>,
}

#[derive(Default)]
pub struct PipelineConfig {
    pub policy: FilterPolicy,
    pub llm: LlmSettings,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}


struct Answered {
    record: AnswerRecord,
    transcript: Transcript,
    fallback: bool,
}

fn answer_one(
    q: &QaRecord,
    retriever: &dyn Retriever,
    client: &dyn LlmClient,
    config: &PipelineConfig,
) -> Result<Answered, AnswerError> {
    let ranked = retriever.retrieve(&q.question_id, &q.question)?;
    let filtered = filter_passages(&ranked, &config.policy)?;
    let passages = resolve_passages(retriever.corpus(), &filtered.kept)?;
    let texts: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
    let (answer, transcript) = generate_answer(&q.question_id, &q.question, &texts, client, &config.llm)?;
    Ok(Answered {
        record: AnswerRecord {
            question_id: q.question_id.clone(),
            question: q.question.clone(),
            retrieved_passages: texts,
            answer,
            retrieved_ids: passages.into_iter().map(|p| p.record_id).collect(),
        },
        transcript,
        fallback: filtered.fallback,
    })
}

/// Retrieves, filters and answers every question. Output keeps input order
/// regardless of how the work is scheduled.
pub fn run_pipeline(
    questions: &[QaRecord],
    retriever: &dyn Retriever,
    client: &dyn LlmClient,
    config: &PipelineConfig,
) -> PipelineOutput {
    let work = || -> Vec<Result<Answered, AnswerError>> {
        questions
            .par_iter()
            .map(|q| answer_one(q, retriever, client, config))
            .collect()
    };
    let results = if config.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work())
    };
    let mut out = PipelineOutput::default();
    for (q, r) in questions.iter().zip(results) {
        match r {
            Ok(a) => {
                if a.fallback {
                    out.fallbacks.push(q.question_id.clone());
                }
                out.records.push(a.record);
                out.transcripts.push(a.transcript);
            }
            Err(e) => {
                log::warn!("{}: {e}", q.question_id);
                out.failures.push(QuestionFailure {
                    question_id: q.question_id.clone(),
                    error: e.to_string(),
                    transport: matches!(e, AnswerError::Llm { source: LlmError::Transport { .. }, .. }),
                });
            }
        }
    }
    out
}
