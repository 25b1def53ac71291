//! Error surface of the CLI: every error class maps to a distinct exit code
//! (documented in the README) and carries file/line context where it has any.

use std::fmt;
use std::path::PathBuf;

use nabu_core::checkpoint::CheckpointError;
use nabu_core::config::ConfigError;
use nabu_core::graph::GraphError;
use nabu_core::metrics::MetricsError;
use nabu_core::tensor::TensorError;
use nabu_core::tokenizer::TokenizerError;
use nabu_core::training::TrainError;
use nabu_core::LanguageTag;

#[derive(Debug)]
pub enum CliError {
    /// Triple/corpus record problems, with the offending file.
    Corpus { path: PathBuf, detail: String },
    Graph(GraphError),
    Config(String),
    Tokenizer(TokenizerError),
    CheckpointCorrupt(String),
    CheckpointMismatch,
    Metrics(MetricsError),
    MissingLanguageData(LanguageTag),
    Diverged,
    /// Generation was asked for a language outside the model's set.
    GenerationRefused {
        requested: LanguageTag,
        available: Vec<LanguageTag>,
    },
    Io { path: PathBuf, source: std::io::Error },
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Corpus { .. } => 10,
            CliError::Graph(_) => 11,
            CliError::Config(_) => 12,
            CliError::Tokenizer(_) => 13,
            CliError::CheckpointCorrupt(_) => 14,
            CliError::CheckpointMismatch => 15,
            CliError::Metrics(_) => 16,
            CliError::MissingLanguageData(_) => 17,
            CliError::Diverged => 18,
            CliError::GenerationRefused { .. } => 19,
            CliError::Io { .. } => 20,
            CliError::Internal(_) => 21,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Corpus { path, detail } => {
                write!(f, "{}: {detail}", path.display())
            }
            CliError::Graph(e) => write!(f, "{e}"),
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Tokenizer(e) => write!(f, "{e}"),
            CliError::CheckpointCorrupt(e) => write!(f, "{e}"),
            CliError::CheckpointMismatch => {
                f.write_str("checkpoint was written under a different configuration")
            }
            CliError::Metrics(e) => write!(f, "{e}"),
            CliError::MissingLanguageData(lang) => {
                write!(f, "no data for configured language {lang}")
            }
            CliError::Diverged => {
                f.write_str("training diverged (non-finite gradient); last good checkpoint kept")
            }
            CliError::GenerationRefused {
                requested,
                available,
            } => {
                let codes: Vec<&str> = available.iter().map(|l| l.code()).collect();
                write!(
                    f,
                    "generation refused: {requested} is not in the model's language set ({})",
                    codes.join(",")
                )
            }
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Internal(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Graph(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        CliError::Tokenizer(e)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::ConfigHashMismatch => CliError::CheckpointMismatch,
            other => CliError::CheckpointCorrupt(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Metrics(e)
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFiniteGradient => CliError::Diverged,
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Tensor(TensorError::NonFiniteGradient) => CliError::Diverged,
            TrainError::Tensor(other) => CliError::Internal(other.to_string()),
            TrainError::MissingLanguageData(lang) => CliError::MissingLanguageData(lang),
            TrainError::EmptyCorpus => CliError::Internal("empty training corpus".to_string()),
        }
    }
}
