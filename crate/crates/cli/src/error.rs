use std::fmt;

use rirag::answerflow::AnswerError;
use rirag::corpus::CorpusError;
use rirag::eval::EvalError;
use rirag::llm::LlmError;
use rirag::nli::GatewayError;
use rirag::qgen::QgenError;
use rirag::retrieval::RetrievalError;
use rirag::validation::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Usage = 2,
    Input = 3,
    Backend = 4,
    Internal = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: ExitCode,
    /// Short kebab-case tag reported in the JSON summary.
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(exit: ExitCode, category: &'static str, message: impl Into<String>) -> Self {
        Self {
            exit,
            category,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitCode::Usage, "usage", message)
    }

    pub fn input(category: &'static str, message: impl Into<String>) -> Self {
        Self::new(ExitCode::Input, category, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ExitCode::Internal, "internal", message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::input("io", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let category = match e {
            CorpusError::Io { .. } => "io",
            CorpusError::Parse { .. } => "malformed-json",
            _ => "invalid-corpus",
        };
        Self::input(category, e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        let category = match e {
            RetrievalError::Io { .. } => "io",
            RetrievalError::RunFile { .. } | RetrievalError::BadCandidateId(_) => "malformed-run",
            RetrievalError::InvalidParams(_) => "invalid-config",
            _ => "invalid-input",
        };
        Self::input(category, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::input("invalid-qrels", e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Transport { .. } | GatewayError::NotReady(_) => {
                Self::new(ExitCode::Backend, "backend-unavailable", e.to_string())
            }
            GatewayError::InvalidResponse { .. } => Self::new(ExitCode::Backend, "backend-response", e.to_string()),
            GatewayError::FixtureMiss { .. } => Self::input("fixture-miss", e.to_string()),
            GatewayError::Fixture(_) => Self::input("invalid-fixture", e.to_string()),
            GatewayError::Config(_) => Self::input("invalid-config", e.to_string()),
            GatewayError::EmptyInput { .. } => Self::input("empty-input", e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Config(_) => Self::input("invalid-config", e.to_string()),
            _ => Self::new(ExitCode::Backend, "llm-unavailable", e.to_string()),
        }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Gateway { ref source, .. } => {
                let mut err = CliError::from(source.clone());
                err.message = e.to_string();
                err
            }
            ValidationError::Io { .. } => Self::input("io", e.to_string()),
            ValidationError::Log { .. } => Self::input("malformed-log", e.to_string()),
        }
    }
}

impl From<AnswerError> for CliError {
    fn from(e: AnswerError) -> Self {
        match e {
            AnswerError::Llm { source, .. } => source.into(),
            AnswerError::Retrieval(r) => r.into(),
            AnswerError::Policy(_) => Self::input("invalid-config", e.to_string()),
            _ => Self::input("invalid-input", e.to_string()),
        }
    }
}

impl From<QgenError> for CliError {
    fn from(e: QgenError) -> Self {
        match e {
            QgenError::Gateway(g) => g.into(),
            QgenError::TopicFile(_) | QgenError::EmptyTopics | QgenError::EmptyTopic(_) => {
                Self::input("invalid-topics", e.to_string())
            }
            _ => Self::input("invalid-config", e.to_string()),
        }
    }
}
