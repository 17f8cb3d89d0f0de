//! Question-passage validation with NLI.
//!
//! Each gold passage is scored as the premise with its question as the
//! hypothesis. The argmax label picks the rule:
//!
//! | label         | decision                                   |
//! |---------------|--------------------------------------------|
//! | entailment    | retain                                     |
//! | contradiction | eliminate                                  |
//! | neutral       | retain iff `\|n - e\| < \|n - c\|`, else eliminate |
//!
//! Argmax ties resolve in the order entailment, neutral, contradiction.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::QaRecord;
use crate::nli::{Gateway, GatewayError, NliPair, NliProbs, NliRole};

/// Pairs sent to the gateway between two checkpoint flushes.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Retain,
    Eliminate,
}

pub fn argmax_label(p: &NliProbs) -> NliLabel {
    if p.entailment >= p.neutral && p.entailment >= p.contradiction {
        NliLabel::Entailment
    } else if p.neutral >= p.contradiction {
        NliLabel::Neutral
    } else {
        NliLabel::Contradiction
    }
}

pub fn decide(p: &NliProbs) -> (NliLabel, Decision) {
    let label = argmax_label(p);
    let decision = match label {
        NliLabel::Entailment => Decision::Retain,
        NliLabel::Contradiction => Decision::Eliminate,
        NliLabel::Neutral => {
            if (p.neutral - p.entailment).abs() < (p.neutral - p.contradiction).abs() {
                Decision::Retain
            } else {
                Decision::Eliminate
            }
        }
    };
    (label, decision)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: NliLabel,
    pub probs: NliProbs,
    pub decision: Decision,
}

impl From<NliProbs> for Verdict {
    fn from(probs: NliProbs) -> Self {
        let (label, decision) = decide(&probs);
        Self {
            label,
            probs,
            decision,
        }
    }
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageVerdict {
    pub question_id: String,
    pub document_id: i64,
    pub passage_id: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

pub fn validate_pair(question: &str, passage: &str, gateway: &Gateway) -> Result<Verdict, GatewayError> {
    let probs = gateway.score_nli(&[NliPair::new(passage, question)], NliRole::Validation)?;
    Ok(Verdict::from(probs[0]))
}

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error("{source} ({completed} verdicts saved; rerun with the same log to resume)")]
    Gateway {
        source: GatewayError,
        completed: usize,
    },
    #[error("verdict log {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("verdict log {path} line {line}: {message}")]
    Log {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Records with at least one retained gold passage, eliminated passages removed.
    pub kept: Vec<QaRecord>,
    /// Question ids whose every gold passage was eliminated.
    pub dropped: Vec<String>,
    /// Every decision, in record then gold-passage order.
    pub verdicts: Vec<PassageVerdict>,
}

type Key = (String, i64, String);

fn key(r: &QaRecord, g: usize) -> Key {
    let gold = &r.gold[g];
    (r.question_id.clone(), gold.document_id, gold.passage_id.clone())
}

/// Validates every gold passage in memory.
pub fn filter_dataset(records: &[QaRecord], gateway: &Gateway) -> Result<FilterOutcome, ValidationError> {
    run(records, gateway, IndexMap::new(), None)
}

/// Like [`filter_dataset`], appending each verdict to the JSON-lines file at
/// `log` as it is decided. Verdicts already present in `log` are reused, so a
/// run interrupted by a backend failure continues where it stopped.
pub fn filter_dataset_resumable(
    records: &[QaRecord],
    gateway: &Gateway,
    log: impl AsRef<Path>,
) -> Result<FilterOutcome, ValidationError> {
    let path = log.as_ref().to_path_buf();
    let known = read_log(&path)?;
    // rewrite so a line torn by a crash does not linger
    let mut file = BufWriter::new(File::create(&path).map_err(|source| io(&path, source))?);
    for v in known.values() {
        write_line(&mut file, v, &path)?;
    }
    file.flush().map_err(|source| io(&path, source))?;
    drop(file);
    let sink = OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|source| io(&path, source))?;
    run(records, gateway, known, Some((BufWriter::new(sink), path)))
}

fn io(path: &Path, source: std::io::Error) -> ValidationError {
    ValidationError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_line(out: &mut impl Write, v: &PassageVerdict, path: &Path) -> Result<(), ValidationError> {
    let line = serde_json::to_string(v).expect("verdicts serialize");
    writeln!(out, "{line}").map_err(|source| io(path, source))
}

fn read_log(path: &Path) -> Result<IndexMap<Key, PassageVerdict>, ValidationError> {
    let mut known = IndexMap::new();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(known),
        Err(source) => return Err(io(path, source)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PassageVerdict>(line) {
            Ok(v) => {
                known.insert((v.question_id.clone(), v.document_id, v.passage_id.clone()), v);
            }
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: ignoring truncated final line", path.display());
            }
            Err(e) => {
                return Err(ValidationError::Log {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(known)
}

fn run(
    records: &[QaRecord],
    gateway: &Gateway,
    mut known: IndexMap<Key, PassageVerdict>,
    mut sink: Option<(BufWriter<File>, PathBuf)>,
) -> Result<FilterOutcome, ValidationError> {
    let pending: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| (0..rec.gold.len()).map(move |g| (r, g)))
        .filter(|&(r, g)| !known.contains_key(&key(&records[r], g)))
        .collect();

    for chunk in pending.chunks(CHUNK) {
        let pairs: Vec<NliPair> = chunk
            .iter()
            .map(|&(r, g)| NliPair::new(records[r].gold[g].text.clone(), records[r].question.clone()))
            .collect();
        let probs = gateway
            .score_nli(&pairs, NliRole::Validation)
            .map_err(|source| ValidationError::Gateway {
                source,
                completed: known.len(),
            })?;
        for (&(r, g), p) in chunk.iter().zip(probs) {
            let (question_id, document_id, passage_id) = key(&records[r], g);
            let v = PassageVerdict {
                question_id,
                document_id,
                passage_id,
                verdict: Verdict::from(p),
            };
            if let Some((out, path)) = sink.as_mut() {
                write_line(out, &v, path)?;
            }
            known.insert(key(&records[r], g), v);
        }
        if let Some((out, path)) = sink.as_mut() {
            out.flush().map_err(|source| io(path, source))?;
        }
    }

    let mut outcome = FilterOutcome {
        kept: Vec::new(),
        dropped: Vec::new(),
        verdicts: Vec::new(),
    };
    for rec in records {
        let mut kept = rec.clone();
        kept.gold.clear();
        for g in 0..rec.gold.len() {
            let v = known.get(&key(rec, g)).expect("every pair has a verdict").clone();
            if v.verdict.decision == Decision::Retain {
                kept.gold.push(rec.gold[g].clone());
            }
            outcome.verdicts.push(v);
        }
        if kept.gold.is_empty() {
            log::info!("dropping {}: no gold passage retained", rec.question_id);
            outcome.dropped.push(rec.question_id.clone());
        } else {
            outcome.kept.push(kept);
        }
    }
    Ok(outcome)
}
