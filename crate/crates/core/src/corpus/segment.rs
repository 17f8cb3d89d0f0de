//! Rule-based sentence segmentation for regulatory text.
//!
//! Input is first normalized to NFC; all offsets are byte offsets into the
//! normalized string. Prose is split after `.`, `!`, `?` or `;` when the
//! punctuation is followed by whitespace and then an uppercase letter, an
//! opening parenthesis or the end of the text. A line that starts with a list
//! marker (`(a)`, `1.`, `•`) always starts a new sentence. Abbreviations from
//! [`ABBREVIATIONS`] never end a sentence.
//!
//! A line whose content begins with `\Table Start` or `\Figure Start` opens a
//! tagged region; every non-blank line up to and including the line holding
//! the matching end tag is one sentence.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::REGION_TAGS;

/// Tokens ending in a period that never terminate a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "E.g.", "i.e.", "I.e.", "etc.", "cf.", "Cf.", "viz.", "vs.", "v.", "No.", "no.",
    "Nos.", "Art.", "art.", "Arts.", "Reg.", "Regs.", "Sec.", "Sect.", "Para.", "para.",
    "Paras.", "paras.", "Ch.", "Chap.", "Vol.", "p.", "pp.", "Fig.", "fig.", "Mr.", "Mrs.",
    "Ms.", "Dr.", "Prof.", "St.", "Inc.", "Ltd.", "Co.", "Corp.", "approx.", "Jan.", "Feb.",
    "Mar.", "Apr.", "Jun.", "Jul.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SentenceList {
    /// The NFC-normalized source the offsets refer to.
    pub source: String,
    pub sentences: Vec<Sentence>,
}

impl SentenceList {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.text.clone()).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sentence> {
        self.sentences.iter()
    }
}

pub fn segment_sentences(text: &str) -> SentenceList {
    let source: String = text.nfc().collect();
    let mut spans: Vec<(usize, usize)> = Vec::new();

    let mut prose_start: Option<usize> = None;
    let mut open_region: Option<usize> = None;
    let mut line_start = 0;
    for line in source.split('\n') {
        let line_end = line_start + line.len();
        match open_region {
            Some(kind) => {
                push_trimmed(&source, line_start, line_end, &mut spans);
                if line.contains(REGION_TAGS[kind].1) {
                    open_region = None;
                }
            }
            None => {
                let content = line.trim_start();
                if let Some(kind) = REGION_TAGS.iter().position(|(open, _)| content.starts_with(open)) {
                    if let Some(start) = prose_start.take() {
                        split_prose(&source, start, line_start, &mut spans);
                    }
                    push_trimmed(&source, line_start, line_end, &mut spans);
                    let after_open = &content[REGION_TAGS[kind].0.len()..];
                    if !after_open.contains(REGION_TAGS[kind].1) {
                        open_region = Some(kind);
                    }
                } else if prose_start.is_none() {
                    prose_start = Some(line_start);
                }
            }
        }
        line_start = line_end + 1;
    }
    if let Some(start) = prose_start {
        split_prose(&source, start, source.len(), &mut spans);
    }

    let sentences = spans
        .into_iter()
        .map(|(start, end)| Sentence {
            start,
            end,
            text: source[start..end].to_string(),
        })
        .collect();
    SentenceList { source, sentences }
}

fn push_trimmed(source: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &source[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

fn split_prose(source: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let block = &source[start..end];
    let mut cuts = vec![0];
    for (i, c) in block.char_indices() {
        match c {
            '.' | '!' | '?' | ';' => {
                let after = i + c.len_utf8();
                let next = skip_whitespace(block, after);
                if next == after || next >= block.len() {
                    continue;
                }
                let head = block[next..].chars().next().unwrap_or(' ');
                if !(head.is_uppercase() || head == '(') {
                    continue;
                }
                if c == '.' && is_abbreviation(&block[..after]) {
                    continue;
                }
                cuts.push(next);
            }
            '\n' => {
                let next = skip_whitespace(block, i + 1);
                if next < block.len() && starts_with_list_marker(&block[next..]) {
                    cuts.push(next);
                }
            }
            _ => {}
        }
    }
    cuts.push(block.len());
    cuts.dedup();
    for w in cuts.windows(2) {
        push_trimmed(source, start + w[0], start + w[1], spans);
    }
}

fn skip_whitespace(text: &str, from: usize) -> usize {
    text[from..]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map_or(text.len(), |(i, _)| from + i)
}

/// `prefix` ends with the period under consideration.
fn is_abbreviation(prefix: &str) -> bool {
    let token_start = prefix
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(0, |(i, c)| i + c.len_utf8());
    let token = prefix[token_start..].trim_start_matches(['(', '"', '\'', '“', '‘', '[']);
    ABBREVIATIONS.contains(&token)
}

fn starts_with_list_marker(text: &str) -> bool {
    let followed_by_break = |rest: &str| rest.chars().next().is_none_or(char::is_whitespace);
    if text.starts_with('•') {
        return true;
    }
    if let Some(rest) = text.strip_prefix('(') {
        if let Some(close) = rest.find(')') {
            let label = &rest[..close];
            let n = label.chars().count();
            return (1..=4).contains(&n)
                && label.chars().all(char::is_alphanumeric)
                && followed_by_break(&rest[close + 1..]);
        }
        return false;
    }
    let digits = text.chars().take_while(char::is_ascii_digit).count();
    if (1..=3).contains(&digits) {
        if let Some(rest) = text[digits..].strip_prefix('.') {
            return followed_by_break(rest);
        }
    }
    false
}
