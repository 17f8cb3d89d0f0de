use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rirag::answerflow::FilterPolicy;
use rirag::llm::LlmSettings;
use rirag::nli::GatewayConfig;
use rirag::qgen::KeywordMatch;
use rirag::repass::RepassConfig;
use rirag::retrieval::{Bm25Params, FusionConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Chat-completions URL; `RIRAG_LLM_URL` when absent.
    pub endpoint: Option<String>,
    #[serde(flatten)]
    pub settings: LlmSettings,
    pub timeout_secs: u64,
    pub requests_per_minute: Option<u32>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            settings: LlmSettings::default(),
            timeout_secs: 120,
            requests_per_minute: None,
        }
    }
}

/// Settings shared by every subcommand. Loaded from `--config`, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// NLI and obligation backends; `RIRAG_NLI_URL` or the heuristic when absent.
    pub nli: Option<GatewayConfig>,
    pub llm: LlmConfig,
    pub bm25: Bm25Params,
    pub fusion: FusionConfig,
    pub use_fusion: bool,
    pub filter: FilterPolicy,
    pub repass: RepassConfig,
    pub keyword_match: KeywordMatch,
    pub questions_per_call: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            qa: None,
            topics: None,
            output_dir: PathBuf::from("rirag-out"),
            nli: None,
            llm: LlmConfig::default(),
            bm25: Bm25Params::default(),
            fusion: FusionConfig::default(),
            use_fusion: true,
            filter: FilterPolicy::default(),
            repass: RepassConfig::default(),
            keyword_match: KeywordMatch::default(),
            questions_per_call: 1,
            seed: 0,
            jobs: 0,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::input("invalid-config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus, &mut cfg.qa, &mut cfg.topics].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(nli) = &mut cfg.nli {
            let backends = std::iter::once(&mut nli.nli)
                .chain(nli.role_overrides.values_mut())
                .chain(nli.obligation.as_mut());
            for b in backends {
                if let Some(p) = &mut b.fixture_path {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    /// Checks numeric invariants and that every referenced input exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.bm25.validate()?;
        self.fusion.validate()?;
        self.filter.validate()?;
        if !(0.0..=1.0).contains(&self.repass.coverage_threshold) {
            return Err(CliError::input(
                "invalid-config",
                format!("coverage_threshold {} outside [0, 1]", self.repass.coverage_threshold),
            ));
        }
        let fixtures = self.nli.iter().flat_map(|n| {
            std::iter::once(&n.nli)
                .chain(n.role_overrides.values())
                .chain(n.obligation.as_ref())
                .filter_map(|b| b.fixture_path.as_ref())
        });
        for p in [&self.corpus, &self.qa, &self.topics].into_iter().flatten().chain(fixtures) {
            require_exists(p)?;
        }
        Ok(())
    }
}

pub fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input("missing-file", format!("{} does not exist", path.display())))
    }
}
