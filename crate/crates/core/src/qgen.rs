//! Question generation from topic-grouped obligation passages.
//!
//! Passages carrying at least one obligation sentence are grouped by topic
//! keywords, random subgroups of one to six passages are drawn from each
//! group, and an LLM writes a question for every subgroup. A subgroup of one
//! uses the single-passage instruction, larger ones the multi-passage
//! instruction.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{segment_sentences, Corpus, GoldPassage, Passage, QaRecord};
use crate::llm::{complete_logged, ChatRequest, LlmClient, LlmError, LlmSettings, Transcript};
use crate::nli::{Gateway, GatewayError};
use crate::prompts::{QGEN_MULTI, QGEN_SINGLE};

pub const MAX_SUBGROUP: usize = 6;

const SAMPLE_TOPICS: &str = include_str!("../resources/topics_sample.json");

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum QgenError {
    #[error("topic map is empty")]
    EmptyTopics,
    #[error("topic {0:?} has no keywords")]
    EmptyTopic(String),
    #[error("topic map: {0}")]
    TopicFile(String),
    #[error("subgroup size {size} not possible for a group of {available} passages (allowed 1..={MAX_SUBGROUP})")]
    SubgroupSize { size: usize, available: usize },
    #[error("single-passage mode got a subset of {0} passages")]
    SingleMode(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Topic name to lowercase keywords, in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicMap(IndexMap<String, Vec<String>>);

impl TopicMap {
    /// Lowercases every keyword and rejects empty topics.
    pub fn new(topics: IndexMap<String, Vec<String>>) -> Result<Self, QgenError> {
        if topics.is_empty() {
            return Err(QgenError::EmptyTopics);
        }
        let mut out = IndexMap::new();
        for (topic, keywords) in topics {
            let kws: Vec<String> = keywords
                .iter()
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            if kws.is_empty() {
                return Err(QgenError::EmptyTopic(topic));
            }
            out.insert(topic, kws);
        }
        Ok(Self(out))
    }

    pub fn from_json_str(json: &str) -> Result<Self, QgenError> {
        let raw: IndexMap<String, Vec<String>> =
            serde_json::from_str(json).map_err(|e| QgenError::TopicFile(e.to_string()))?;
        Self::new(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, QgenError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| QgenError::TopicFile(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// The six example topics published with the dataset description.
    pub fn sample() -> Self {
        Self::from_json_str(SAMPLE_TOPICS).expect("bundled topic map is valid")
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &[String])> + '_ {
        self.0.iter().map(|(t, k)| (t.as_str(), k.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeywordMatch {
    /// Keyword occurs anywhere in the lowercased text.
    #[default]
    Substring,
    /// Keyword occurs with no letter or digit directly before or after it.
    WholeWord,
}

pub fn keyword_hit(text_lower: &str, keyword: &str, mode: KeywordMatch) -> bool {
    match mode {
        KeywordMatch::Substring => text_lower.contains(keyword),
        KeywordMatch::WholeWord => text_lower.match_indices(keyword).any(|(i, m)| {
            let before = text_lower[..i].chars().next_back();
            let after = text_lower[i + m.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageGroup {
    pub topic: String,
    pub members: Vec<Passage>,
}

/// Passages with at least one sentence labelled as an obligation.
pub fn obligation_passages(corpus: &Corpus, gateway: &Gateway) -> Result<Vec<Passage>, QgenError> {
    let passages: Vec<&Passage> = corpus.passages().collect();
    let sentences: Vec<Vec<String>> = passages.iter().map(|p| segment_sentences(&p.text).texts()).collect();
    let flat: Vec<String> = sentences.iter().flatten().cloned().collect();
    let labels = gateway.classify_obligations(&flat)?;
    let mut out = Vec::new();
    let mut at = 0;
    for (p, s) in passages.iter().zip(&sentences) {
        if labels[at..at + s.len()].iter().any(|l| l.is_obligation) {
            out.push((*p).clone());
        }
        at += s.len();
    }
    Ok(out)
}

/// One group per topic with at least one member, in topic-map order; members
/// keep input order and a passage may belong to several groups.
pub fn group_by_topic(passages: &[Passage], topics: &TopicMap, mode: KeywordMatch) -> Result<Vec<PassageGroup>, QgenError> {
    if topics.is_empty() {
        return Err(QgenError::EmptyTopics);
    }
    let lowered: Vec<String> = passages.iter().map(|p| p.text.to_lowercase()).collect();
    Ok(topics
        .topics()
        .map(|(topic, keywords)| PassageGroup {
            topic: topic.to_string(),
            members: passages
                .iter()
                .zip(&lowered)
                .filter(|(_, text)| keywords.iter().any(|k| keyword_hit(text, k, mode)))
                .map(|(p, _)| p.clone())
                .collect(),
        })
        .filter(|g| !g.members.is_empty())
        .collect())
}

/// Draws `count` subsets of `size` distinct members; each subset lists its
/// members in group order.
pub fn sample_subgroups(
    group: &PassageGroup,
    size: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Passage>>, QgenError> {
    if size == 0 || size > MAX_SUBGROUP || size > group.members.len() {
        return Err(QgenError::SubgroupSize {
            size,
            available: group.members.len(),
        });
    }
    Ok((0..count)
        .map(|_| {
            let mut idx = rand::seq::index::sample(rng, group.members.len(), size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| group.members[i].clone()).collect()
        })
        .collect())
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionMode {
    Single,
    Multi,
}

impl QuestionMode {
    pub fn for_size(n: usize) -> Self {
        if n == 1 {
            QuestionMode::Single
        } else {
            QuestionMode::Multi
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            QuestionMode::Single => QGEN_SINGLE,
            QuestionMode::Multi => QGEN_MULTI,
        }
    }
}

pub fn question_prompt(subset: &[Passage], per_call: usize) -> String {
    let mut out = String::new();
    for (i, p) in subset.iter().enumerate() {
        out.push_str(&format!("Passage {} ({} {}):\n{}\n\n", i + 1, p.document_id, p.passage_id, p.text.trim()));
    }
    if per_call == 1 {
        out.push_str("Write one question. Reply with the question only.");
    } else {
        out.push_str(&format!("Write {per_call} questions, one per line. Reply with the questions only."));
    }
    out
}

/// Non-empty reply lines with list numbering and bullets stripped.
pub fn parse_questions(reply: &str, limit: usize) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let l = l.strip_prefix('.').or_else(|| l.strip_prefix(')')).unwrap_or(l);
            l.trim_start_matches(['-', '*', '•']).trim().trim_matches('"').trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .take(limit)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFailure {
    pub subset: usize,
    pub error: String,
    /// The LLM endpoint could not be reached.
    #[serde(default)]
    pub transport: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub records: Vec<QaRecord>,
    pub failures: Vec<SubsetFailure>,
    pub transcripts: Vec<Transcript>,
}

#[derive(Debug, Clone)]
pub struct QgenConfig {
    pub llm: LlmSettings,
    pub questions_per_call: usize,
    /// Seeds the question ids.
    pub seed: u64,
}

impl Default for QgenConfig {
    fn default() -> Self {
        Self {
            llm: LlmSettings::default(),
            questions_per_call: 1,
            seed: 0,
        }
    }
}

/// Asks for questions on every subset; failures are logged per subset and the
/// batch continues. Ids come from the seeded generator in subset order, so the
/// output does not depend on scheduling.
pub fn generate_questions(
    subsets: &[Vec<Passage>],
    mode: QuestionMode,
    client: &dyn LlmClient,
    config: &QgenConfig,
) -> Result<Generated, QgenError> {
    if mode == QuestionMode::Single {
        if let Some(s) = subsets.iter().find(|s| s.len() != 1) {
            return Err(QgenError::SingleMode(s.len()));
        }
    }
    let per_call = config.questions_per_call.max(1);
    let replies: Vec<_> = subsets
        .par_iter()
        .map(|subset| {
            let request = ChatRequest::new(&config.llm, mode.instruction(), question_prompt(subset, per_call));
            complete_logged(client, &request)
        })
        .collect();

    let mut rng = seeded_rng(config.seed);
    let mut out = Generated::default();
    for (i, (subset, reply)) in subsets.iter().zip(replies).enumerate() {
        match reply {
            Ok((text, transcript)) => {
                out.transcripts.push(transcript);
                let questions = parse_questions(&text, per_call);
                if questions.is_empty() {
                    out.failures.push(SubsetFailure {
                        subset: i,
                        error: "reply held no question".into(),
                        transport: false,
                    });
                }
                for q in questions {
                    let id = uuid::Builder::from_random_bytes(rng.random()).into_uuid();
                    out.records.push(QaRecord {
                        question_id: id.to_string(),
                        question: q,
                        gold: subset
                            .iter()
                            .map(|p| GoldPassage {
                                document_id: p.document_id,
                                passage_id: p.passage_id.clone(),
                                text: p.text.clone(),
                            })
                            .collect(),
                    });
                }
            }
            Err(e) => {
                log::warn!("subset {i}: {e}");
                out.failures.push(SubsetFailure {
                    subset: i,
                    error: e.to_string(),
                    transport: matches!(e, LlmError::Transport { .. }),
                });
            }
        }
    }
    Ok(out)
}
