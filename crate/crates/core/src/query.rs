//! Query definition shared by both channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::OpSequence;
use crate::units::normalize_answer_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answer {
    pub id: String,
    pub display: String,
}

impl Answer {
    pub fn new(id: impl Into<String>, display: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            display: display.into(),
        }
    }

    pub fn normalized(&self) -> String {
        normalize_answer_text(&self.display)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub question_id: String,
    pub text: String,
    pub answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op_override: Option<OpSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_terms: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("a query needs at least two answers, got {0}")]
    TooFewAnswers(usize),
    #[error("duplicate answer id `{0}`")]
    DuplicateAnswer(String),
    #[error("invalid query file: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Query {
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.answers.len() < 2 {
            return Err(QueryError::TooFewAnswers(self.answers.len()));
        }
        let mut ids: Vec<&str> = self.answers.iter().map(|a| a.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(QueryError::DuplicateAnswer(w[0].to_string()));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, QueryError> {
        let q: Query = serde_json::from_slice(bytes)?;
        q.validate()?;
        Ok(q)
    }

    /// Text encoded as f(q) for seed ranking and drift: the seed terms when
    /// given, otherwise the question text.
    pub fn ranking_text(&self) -> String {
        match &self.seed_terms {
            Some(terms) if !terms.is_empty() => terms.join(" "),
            _ => self.text.clone(),
        }
    }

    /// Indices of answers that a node with this label and annotation supports.
    pub fn supported_by(&self, label: &str, annotations: &[String]) -> Vec<usize> {
        self.answers
            .iter()
            .enumerate()
            .filter(|(_, a)| {
                let norm = a.normalized();
                (!label.is_empty() && label == norm)
                    || annotations
                        .iter()
                        .any(|s| *s == a.id || normalize_answer_text(s) == norm)
            })
            .map(|(i, _)| i)
            .collect()
    }
}
