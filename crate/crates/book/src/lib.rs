//! mdbook cannot run listings that depend on workspace crates, so every
//! chapter is pulled in here as module docs and `cargo test --doc` runs them.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/retrieval.md")]
pub mod retrieval {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/nli-gateway.md")]
pub mod nli_gateway {}
#[doc = include_str!("../../../book/src/validation.md")]
pub mod validation {}
#[doc = include_str!("../../../book/src/repass.md")]
pub mod repass {}
#[doc = include_str!("../../../book/src/answering.md")]
pub mod answering {}
#[doc = include_str!("../../../book/src/question-generation.md")]
pub mod question_generation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
