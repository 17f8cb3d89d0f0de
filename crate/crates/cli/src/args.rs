use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "rirag",
    version,
    about = "Retrieve regulatory passages, answer questions over them and score the answers",
    after_help = "Every command ends its output with a one-line JSON summary.\n\
                  Exit codes: 0 success, 2 usage error, 3 invalid input, 4 backend unavailable, 5 internal error."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags take precedence over its values
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that receives every output file [default: rirag-out]
    #[arg(long, global = true, help_heading = "Global options", value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Upper bound on worker threads
    #[arg(long, global = true, help_heading = "Global options", value_name = "N")]
    pub jobs: Option<usize>,
    /// Seed for sampling and generated ids
    #[arg(long, global = true, help_heading = "Global options", value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check a corpus and, optionally, a QA dataset against it
    Ingest(IngestArgs),
    /// Build the passage and document BM25 indexes and report their statistics
    Index(IndexArgs),
    /// Rank passages for one query or for every question of a QA file
    Search(SearchArgs),
    /// Fuse a passage run with a document run
    Fuse(FuseArgs),
    /// Score a run against the gold passages of a QA file
    Eval(EvalArgs),
    /// Keep only question-passage pairs the NLI model does not reject
    Validate(ValidateArgs),
    /// Score generated answers with RePASs
    Repass(RepassArgs),
    /// Retrieve, filter and answer every question of a QA file
    Answer(AnswerArgs),
    /// Generate questions from topic-grouped obligation passages
    Qgen(QgenArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Index(_) => "index",
            Command::Search(_) => "search",
            Command::Fuse(_) => "fuse",
            Command::Eval(_) => "eval",
            Command::Validate(_) => "validate",
            Command::Repass(_) => "repass",
            Command::Answer(_) => "answer",
            Command::Qgen(_) => "qgen",
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus JSON file, or a directory of them
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// QA dataset whose gold passages must all exist in the corpus
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Corpus JSON file, or a directory of them
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    /// Weight of the document score in the fused score
    #[arg(long, value_name = "W")]
    pub fusion_weight: Option<f64>,
    /// Rank passages alone, without document scores
    #[arg(long)]
    pub no_fusion: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Corpus JSON file, or a directory of them
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// A single query; results go to stdout and search.txt
    #[arg(long, conflicts_with = "qa")]
    pub query: Option<String>,
    /// Search every question of this QA file and write run.txt
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    /// Number of passages kept per query
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Run file of passage candidates
    #[arg(long, value_name = "FILE")]
    pub passage_run: PathBuf,
    /// Run file of document candidates
    #[arg(long, value_name = "FILE")]
    pub document_run: PathBuf,
    /// Corpus used to check that every containing document exists
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Weight of the document score in the fused score
    #[arg(long, value_name = "W")]
    pub fusion_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run file to score
    #[arg(long, value_name = "FILE")]
    pub run: PathBuf,
    /// QA file holding the gold passages
    #[arg(long, value_name = "FILE")]
    pub qrels: PathBuf,
    /// Rank cutoff for recall and MAP
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Heuristic,
    Fixture,
    Remote,
}

#[derive(Debug, Args)]
pub struct NliArgs {
    /// NLI backend; defaults to the config, then RIRAG_NLI_URL, then the heuristic
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Fixture file for the fixture backend
    #[arg(long, value_name = "FILE")]
    pub fixtures: Option<PathBuf>,
    /// Inference service URL for the remote backend [env: RIRAG_NLI_URL]
    #[arg(long, value_name = "URL")]
    pub nli_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// QA dataset to filter
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    #[command(flatten)]
    pub nli: NliArgs,
}

#[derive(Debug, Args)]
pub struct RepassArgs {
    /// Answer file to score
    #[arg(long, value_name = "FILE")]
    pub answers: PathBuf,
    /// Corpus used to resolve RetrievedIDs when passages are not inline
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub nli: NliArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmChoice {
    /// OpenAI-style endpoint from the config or RIRAG_LLM_URL
    Http,
    /// Replies with its own prompt; for dry runs
    Echo,
}

#[derive(Debug, Args)]
pub struct AnswerArgs {
    /// Questions to answer
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    /// Corpus JSON file, or a directory of them
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Take rankings from this run file instead of searching
    #[arg(long, value_name = "FILE")]
    pub run: Option<PathBuf>,
    /// Most passages handed to the model
    #[arg(long)]
    pub k: Option<usize>,
    /// Score drop between neighbours that ends the kept passages
    #[arg(long, value_name = "D")]
    pub drop_threshold: Option<f64>,
    /// Lowest normalized score a kept passage may have
    #[arg(long, value_name = "S")]
    pub min_score: Option<f64>,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Model client
    #[arg(long, value_enum, default_value_t = LlmChoice::Http)]
    pub llm: LlmChoice,
}

#[derive(Debug, Args)]
pub struct QgenArgs {
    /// Corpus JSON file, or a directory of them
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Topic-to-keywords JSON; the bundled sample topics when absent
    #[arg(long, value_name = "FILE")]
    pub topics: Option<PathBuf>,
    /// Passages per generated question, 1 to 6
    #[arg(long, default_value_t = 1)]
    pub size: usize,
    /// Subsets sampled per topic
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Match keywords as whole words instead of substrings
    #[arg(long)]
    pub whole_word: bool,
    #[command(flatten)]
    pub nli: NliArgs,
    /// Model client
    #[arg(long, value_enum, default_value_t = LlmChoice::Http)]
    pub llm: LlmChoice,
}
