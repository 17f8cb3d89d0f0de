//! Structured regulatory corpus and ObliQA question records.
//!
//! The corpus file is a JSON array of passage objects:
//!
//! ```json
//! [{"ID": "2230472f-...", "DocumentID": 20, "PassageID": "1.1", "Passage": "This Guidance ..."}]
//! ```
//!
//! Passages are grouped into [`Document`]s in order of first appearance, and
//! passages inside a document keep their file order.

mod segment;

pub use segment::{segment_sentences, Sentence, SentenceList, ABBREVIATIONS};

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Opening and closing markers for tabular and figure regions inside a passage.
pub const REGION_TAGS: [(&str, &str); 2] = [
    ("\\Table Start", "\\Table End"),
    ("\\Figure Start", "\\Figure End"),
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {index}: missing key `{key}`")]
    MissingKey { index: usize, key: &'static str },
    #[error("record {index}: {message}")]
    Invalid { index: usize, message: String },
    #[error("duplicate passage (DocumentID {document_id}, PassageID {passage_id:?}) at record {index}")]
    DuplicatePassage {
        index: usize,
        document_id: i64,
        passage_id: String,
    },
}

impl CorpusError {
    fn from_json(err: serde_json::Error) -> Self {
        CorpusError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// One clause of a regulatory document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    #[serde(rename = "ID")]
    pub record_id: String,
    #[serde(rename = "DocumentID")]
    pub document_id: i64,
    #[serde(rename = "PassageID")]
    pub passage_id: String,
    #[serde(rename = "Passage")]
    pub text: String,
}

impl Passage {
    /// Checks the per-passage invariants: non-blank text, non-empty id and
    /// balanced, properly nested table/figure tags.
    pub fn validate(&self) -> Result<(), String> {
        if self.passage_id.is_empty() {
            return Err("PassageID is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("passage {:?} has blank text", self.passage_id));
        }
        check_region_tags(&self.text)
            .map_err(|e| format!("passage {:?}: {e}", self.passage_id))
    }
}

/// Verifies that region tags are balanced and properly nested.
pub fn check_region_tags(text: &str) -> Result<(), String> {
    let mut stack: Vec<usize> = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('\\') {
        let at = pos + rel;
        let rest = &text[at..];
        let mut advanced = false;
        for (kind, (open, close)) in REGION_TAGS.iter().enumerate() {
            if rest.starts_with(open) {
                stack.push(kind);
                pos = at + open.len();
                advanced = true;
                break;
            }
            if rest.starts_with(close) {
                match stack.pop() {
                    Some(k) if k == kind => {}
                    Some(k) => {
                        return Err(format!(
                            "`{close}` closes an open `{}` region",
                            REGION_TAGS[k].0
                        ))
                    }
                    None => return Err(format!("`{close}` without a matching opening tag")),
                }
                pos = at + close.len();
                advanced = true;
                break;
            }
        }
        if !advanced {
            pos = at + 1;
        }
    }
    match stack.last() {
        Some(&k) => Err(format!("unclosed `{}` region", REGION_TAGS[k].0)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub document_id: i64,
    pub passages: Vec<Passage>,
}

impl Document {
    /// Passage texts joined by newlines, in source order.
    pub fn text(&self) -> String {
        document_text(self)
    }
}

/// Concatenates the passage texts of a document, newline separated.
pub fn document_text(document: &Document) -> String {
    let mut out = String::new();
    for (i, p) in document.passages.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&p.text);
    }
    out
}

/// Position of a passage inside a [`Corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    doc: usize,
    passage: usize,
    record: usize,
}

/// An immutable, loaded corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    doc_index: HashMap<i64, usize>,
    by_key: HashMap<(i64, String), Slot>,
    by_record_id: HashMap<String, Slot>,
    // file order, as (doc, passage) slots
    order: Vec<(usize, usize)>,
}

impl Corpus {
    /// Builds a corpus from passages in file order, enforcing every invariant.
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (index, passage) in passages.into_iter().enumerate() {
            passage
                .validate()
                .map_err(|message| CorpusError::Invalid { index, message })?;
            let key = (passage.document_id, passage.passage_id.clone());
            if corpus.by_key.contains_key(&key) {
                return Err(CorpusError::DuplicatePassage {
                    index,
                    document_id: key.0,
                    passage_id: key.1,
                });
            }
            let doc = *corpus
                .doc_index
                .entry(passage.document_id)
                .or_insert_with(|| {
                    corpus.documents.push(Document {
                        document_id: passage.document_id,
                        passages: Vec::new(),
                    });
                    corpus.documents.len() - 1
                });
            let slot = Slot {
                doc,
                passage: corpus.documents[doc].passages.len(),
                record: index,
            };
            corpus.by_key.insert(key, slot);
            if corpus
                .by_record_id
                .insert(passage.record_id.clone(), slot)
                .is_some()
            {
                log::warn!("record {index}: ID {:?} is not unique", passage.record_id);
            }
            corpus.order.push((slot.doc, slot.passage));
            corpus.documents[doc].passages.push(passage);
        }
        Ok(corpus)
    }

    pub fn from_json_str(json: &str) -> Result<Self, CorpusError> {
        let raw: Vec<RawPassage> = serde_json::from_str(json).map_err(CorpusError::from_json)?;
        let passages = raw
            .into_iter()
            .enumerate()
            .map(|(index, r)| r.into_passage(index))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_passages(passages)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, document_id: i64) -> Option<&Document> {
        self.doc_index.get(&document_id).map(|&i| &self.documents[i])
    }

    pub fn passage(&self, document_id: i64, passage_id: &str) -> Option<&Passage> {
        self.by_key
            .get(&(document_id, passage_id.to_string()))
            .map(|s| &self.documents[s.doc].passages[s.passage])
    }

    pub fn passage_by_record_id(&self, record_id: &str) -> Option<&Passage> {
        self.by_record_id
            .get(record_id)
            .map(|s| &self.documents[s.doc].passages[s.passage])
    }

    /// All passages in source-file order.
    pub fn passages(&self) -> impl Iterator<Item = &Passage> + '_ {
        self.order
            .iter()
            .map(|&(d, p)| &self.documents[d].passages[p])
    }

    pub fn passage_count(&self) -> usize {
        self.order.len()
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Serializes back to the corpus file format, preserving record order.
    pub fn to_json_string(&self) -> String {
        let records: Vec<&Passage> = self.passages().collect();
        serde_json::to_string_pretty(&records).expect("passages always serialize")
    }
}

#[derive(Deserialize)]
struct RawPassage {
    #[serde(rename = "ID")]
    id: Option<String>,
    #[serde(rename = "DocumentID")]
    document_id: Option<i64>,
    #[serde(rename = "PassageID")]
    passage_id: Option<String>,
    #[serde(rename = "Passage")]
    passage: Option<String>,
}

impl RawPassage {
    fn into_passage(self, index: usize) -> Result<Passage, CorpusError> {
        let missing = |key| CorpusError::MissingKey { index, key };
        Ok(Passage {
            record_id: self.id.ok_or_else(|| missing("ID"))?,
            document_id: self.document_id.ok_or_else(|| missing("DocumentID"))?,
            passage_id: self.passage_id.ok_or_else(|| missing("PassageID"))?,
            text: self.passage.ok_or_else(|| missing("Passage"))?,
        })
    }
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_corpus_dir(dir: &Path) -> Result<Corpus, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    files.retain(|p| p.extension().is_some_and(|e| e == "json"));
    files.sort();
    let mut passages = Vec::new();
    for file in files {
        let raw: Vec<RawPassage> = serde_json::from_str(&read_file(&file)?).map_err(CorpusError::from_json)?;
        for r in raw {
            let index = passages.len();
            passages.push(r.into_passage(index)?);
        }
    }
    Corpus::from_passages(passages)
}

/// Loads and validates a corpus file, or every `*.json` file of a directory
/// in file-name order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let corpus = if path.as_ref().is_dir() {
        load_corpus_dir(path.as_ref())?
    } else {
        Corpus::from_json_str(&read_file(path.as_ref())?)?
    };
    log::info!(
        "loaded {} passages in {} documents from {}",
        corpus.passage_count(),
        corpus.document_count(),
        path.as_ref().display()
    );
    Ok(corpus)
}

/// A gold source passage cited by a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPassage {
    #[serde(rename = "DocumentID")]
    pub document_id: i64,
    #[serde(rename = "PassageID")]
    pub passage_id: String,
    #[serde(rename = "Passage")]
    pub text: String,
}

/// A generated question with its gold source passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    #[serde(rename = "QuestionID")]
    pub question_id: String,
    #[serde(rename = "Question")]
    pub question: String,
    #[serde(rename = "Passages")]
    pub gold: Vec<GoldPassage>,
}

impl QaRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err(format!("question {} is empty", self.question_id));
        }
        if self.gold.is_empty() {
            return Err(format!("question {} has no Passages", self.question_id));
        }
        Ok(())
    }
}

/// A gold reference that does not resolve against the attached corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DanglingReference {
    pub question_id: String,
    pub document_id: i64,
    pub passage_id: String,
}

impl fmt::Display for DanglingReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "question {} cites missing passage ({}, {:?})",
            self.question_id, self.document_id, self.passage_id
        )
    }
}

pub fn parse_qa(json: &str) -> Result<Vec<QaRecord>, CorpusError> {
    let records: Vec<QaRecord> = serde_json::from_str(json).map_err(CorpusError::from_json)?;
    for (index, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|message| CorpusError::Invalid { index, message })?;
    }
    Ok(records)
}

/// Loads an ObliQA-schema question file, records in file order.
pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaRecord>, CorpusError> {
    parse_qa(&read_file(path.as_ref())?)
}

/// Lists gold references that do not resolve in `corpus`, logging each as a warning.
pub fn dangling_references(records: &[QaRecord], corpus: &Corpus) -> Vec<DanglingReference> {
    let mut out = Vec::new();
    for r in records {
        for g in &r.gold {
            if corpus.passage(g.document_id, &g.passage_id).is_none() {
                let d = DanglingReference {
                    question_id: r.question_id.clone(),
                    document_id: g.document_id,
                    passage_id: g.passage_id.clone(),
                };
                log::warn!("{d}");
                out.push(d);
            }
        }
    }
    out
}

/// Loads a question file and checks its gold references against `corpus`.
pub fn load_qa_with_corpus(
    path: impl AsRef<Path>,
    corpus: &Corpus,
) -> Result<(Vec<QaRecord>, Vec<DanglingReference>), CorpusError> {
    let records = load_qa(path)?;
    let dangling = dangling_references(&records, corpus);
    Ok((records, dangling))
}

pub fn qa_to_json_string(records: &[QaRecord]) -> String {
    serde_json::to_string_pretty(records).expect("QA records always serialize")
}
