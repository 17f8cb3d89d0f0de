pub mod answerflow;
pub mod corpus;
pub mod eval;
pub mod llm;
pub mod nli;
pub mod prompts;
pub mod qgen;
pub mod repass;
pub mod retrieval;
pub mod validation;
