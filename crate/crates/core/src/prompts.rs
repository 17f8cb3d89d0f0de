//! Prompt templates, stored verbatim under `resources/prompts`.

/// System prompt for answering a question from retrieved passages.
pub const ANSWER_SYSTEM: &str = include_str!("../resources/prompts/answer_system.txt");

/// Instruction for questions grounded in one passage.
pub const QGEN_SINGLE: &str = include_str!("../resources/prompts/qgen_single.txt");

/// Instruction for questions spanning a group of related passages.
pub const QGEN_MULTI: &str = include_str!("../resources/prompts/qgen_multi.txt");
