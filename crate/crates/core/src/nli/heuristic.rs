//! Lexical stand-in for the NLI models and the obligation classifier.
//!
//! NLI: with `cov` the fraction of hypothesis tokens found in the premise,
//! identical (case- and whitespace-insensitive) strings get entailment 0.95;
//! otherwise entailment is `0.9 * cov`. When exactly one side carries a
//! negation cue, the overlap is read as contradiction instead.
//!
//! Obligations: a sentence is an obligation iff it contains one of
//! [`DEONTIC_MARKERS`] as whole words outside double quotes.

use std::collections::HashSet;

use super::{BackendKind, GatewayError, NliBackend, NliPair, NliProbs, NliRole, ObligationBackend, ObligationLabel};
use crate::retrieval::tokenize;

pub const DEONTIC_MARKERS: &[&str] = &[
    "must",
    "shall",
    "is required to",
    "are required to",
    "is obliged to",
    "may not",
    "must not",
];

const NEGATIONS: &[&str] = &["not", "no", "never", "nor", "without", "cannot", "neither"];

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicBackend;

impl HeuristicBackend {
    pub fn nli(premise: &str, hypothesis: &str) -> NliProbs {
        let p = tokenize(premise);
        let h = tokenize(hypothesis);
        if p == h {
            return NliProbs {
                entailment: 0.95,
                contradiction: 0.01,
                neutral: 0.04,
            };
        }
        let vocab: HashSet<&str> = p.iter().map(String::as_str).collect();
        let cov = if h.is_empty() {
            0.0
        } else {
            h.iter().filter(|t| vocab.contains(t.as_str())).count() as f64 / h.len() as f64
        };
        let negated = |toks: &[String]| toks.iter().any(|t| NEGATIONS.contains(&t.as_str()));
        let (entailment, contradiction) = if negated(&p) != negated(&h) {
            (0.05 * cov, 0.8 * cov)
        } else {
            (0.9 * cov, 0.02)
        };
        NliProbs {
            entailment,
            contradiction,
            neutral: 1.0 - entailment - contradiction,
        }
    }

    pub fn is_obligation(sentence: &str) -> bool {
        let unquoted = strip_quoted(sentence);
        let words = tokenize(&unquoted);
        DEONTIC_MARKERS.iter().any(|marker| {
            let m: Vec<&str> = marker.split(' ').collect();
            words
                .windows(m.len())
                .any(|w| w.iter().zip(&m).all(|(a, b)| a == b))
        })
    }
}

/// Removes text between straight or curly double quotes.
fn strip_quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut inside = false;
    for c in s.chars() {
        match c {
            '"' => inside = !inside,
            '“' => inside = true,
            '”' => inside = false,
            _ if !inside => out.push(c),
            _ => {}
        }
    }
    out
}

impl NliBackend for HeuristicBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Heuristic
    }

    fn score(&self, _role: NliRole, pairs: &[NliPair]) -> Result<Vec<NliProbs>, GatewayError> {
        Ok(pairs.iter().map(|p| Self::nli(&p.premise, &p.hypothesis)).collect())
    }
}

impl ObligationBackend for HeuristicBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Heuristic
    }

    fn classify(&self, sentences: &[String]) -> Result<Vec<ObligationLabel>, GatewayError> {
        Ok(sentences
            .iter()
            .map(|s| {
                let is_obligation = Self::is_obligation(s);
                ObligationLabel {
                    is_obligation,
                    confidence: if is_obligation { 0.8 } else { 0.6 },
                }
            })
            .collect())
    }
}
