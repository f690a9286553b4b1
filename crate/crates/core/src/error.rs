use thiserror::Error;

use crate::embedding::EmbedError;

/// Errors raised while building, loading or querying either graph.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph file does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("path has no edges")]
    EmptyPath,
    #[error("query yields no typed operations")]
    EmptyOpSequence,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}
