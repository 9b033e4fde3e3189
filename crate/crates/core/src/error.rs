use crate::gateway::GatewayError;
use crate::prompts::PromptError;

/// Failure of one model-facing step.
#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A step failure attributed to the query being processed.
#[derive(Debug, thiserror::Error)]
#[error("query {query_id}: {source}")]
pub struct QueryError {
    pub query_id: String,
    #[source]
    pub source: StepError,
}

impl QueryError {
    pub fn new(query_id: &str, source: impl Into<StepError>) -> Self {
        Self {
            query_id: query_id.to_owned(),
            source: source.into(),
        }
    }

    pub fn is_capability(&self) -> bool {
        matches!(
            self.source,
            StepError::Gateway(GatewayError::Unsupported { .. } | GatewayError::UnknownBackend(_))
        )
    }
}

/// Attach a query id to a step result.
pub(crate) trait ForQuery<T> {
    fn for_query(self, query_id: &str) -> Result<T, QueryError>;
}

impl<T, E: Into<StepError>> ForQuery<T> for Result<T, E> {
    fn for_query(self, query_id: &str) -> Result<T, QueryError> {
        self.map_err(|e| QueryError::new(query_id, e))
    }
}
