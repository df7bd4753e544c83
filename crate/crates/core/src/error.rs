use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::provider::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage named in provider failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Properties,
    Diversify,
    Expand,
    Score,
    Select,
    Realize,
    History,
    Compose,
    Image,
    Organize,
    Adaptive,
    Recommend,
    Diversity,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("provider failure in stage {stage}: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
    #[error("embedding failure in stage {stage}: {source}")]
    Embedding {
        stage: Stage,
        #[source]
        source: EmbeddingError,
    },
    #[error("candidate expansion failed for directions {failed:?}")]
    Pool { failed: Vec<String> },
    #[error("candidate pool for block {0} is exhausted; re-craft the block")]
    PoolExhausted(String),
    #[error("not enough data: {0}")]
    NotEnoughData(String),
}

impl Error {
    pub fn provider(stage: Stage) -> impl FnOnce(ProviderError) -> Error {
        move |source| Error::Provider { stage, source }
    }

    pub fn embedding(stage: Stage) -> impl FnOnce(EmbeddingError) -> Error {
        move |source| Error::Embedding { stage, source }
    }

    /// Stage for provider/embedding failures, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Provider { stage, .. } | Error::Embedding { stage, .. } => Some(*stage),
            Error::Pool { .. } => Some(Stage::Expand),
            _ => None,
        }
    }
}
