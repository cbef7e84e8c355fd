//! Score acquisition: provider calls, answer parsing, caching and bounded
//! parallel batches.

mod batch;
mod cache;
mod parse;
mod provider;

pub use batch::{batch_score, BatchError, RetryPolicy, ScoreEntry, ScoreOutcome, ScorePanel, ScoreStats, Scorer};
pub use cache::{CacheEntry, CacheError, ScoreCache};
pub use parse::{parse_answer, AnswerError};
pub use provider::{CompletionProvider, HttpProvider, ProviderConfig, ProviderError, ScoreKey, ScoreRequest};

use serde::{Deserialize, Serialize};
use std::fmt;

/// A validated model score: finite and within [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScoreValue(f64);

impl ScoreValue {
    pub fn new(value: f64) -> Result<Self, AnswerError> {
        if !value.is_finite() {
            return Err(AnswerError::NonFinite);
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(AnswerError::OutOfRange(value));
        }
        Ok(ScoreValue(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ScoreValue {
    type Error = AnswerError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        ScoreValue::new(v)
    }
}

impl From<ScoreValue> for f64 {
    fn from(v: ScoreValue) -> f64 {
        v.0
    }
}

impl fmt::Display for ScoreValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
