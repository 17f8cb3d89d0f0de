use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// A generated answer together with the passages it was grounded on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(rename = "QuestionID")]
    pub question_id: String,
    #[serde(rename = "Question")]
    pub question: String,
    #[serde(rename = "RetrievedPassages", default)]
    pub retrieved_passages: Vec<String>,
    #[serde(rename = "Answer")]
    pub answer: String,
    #[serde(rename = "RetrievedIDs", default)]
    pub retrieved_ids: Vec<String>,
}

impl AnswerRecord {
    /// Ids and passage texts must line up whenever both are present.
    pub fn check_alignment(&self) -> Result<(), String> {
        if !self.retrieved_passages.is_empty()
            && !self.retrieved_ids.is_empty()
            && self.retrieved_passages.len() != self.retrieved_ids.len()
        {
            return Err(format!(
                "{}: {} retrieved passages but {} retrieved ids",
                self.question_id,
                self.retrieved_passages.len(),
                self.retrieved_ids.len()
            ));
        }
        Ok(())
    }
}

/// Accepts either a JSON array of records or a single record object.
pub fn parse_answer_records(json: &str) -> Result<Vec<AnswerRecord>, serde_json::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<AnswerRecord>),
        One(AnswerRecord),
    }
    Ok(match serde_json::from_str(json)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(r) => vec![r],
    })
}

pub fn load_answer_records(path: impl AsRef<Path>) -> Result<Vec<AnswerRecord>, String> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_answer_records(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn answer_records_to_json(records: &[AnswerRecord]) -> String {
    serde_json::to_string_pretty(records).expect("answer records serialize")
}
