//! Paired goal-blind / goal-aware prompt rendering.
//!
//! Each (task, regime) pair has one template with `{ticker}`, `{date}` and
//! `{transcript}` placeholders. The shipped defaults live under `templates/`
//! and are compiled in; [`TemplateSet::from_dir`] swaps in an auditor's own
//! set. The aware template must equal the blind one plus a single inserted
//! disclosure sentence; [`single_insertion`] checks that at the byte level.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SentimentReturn,
    CompetitionEarnings,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::SentimentReturn, TaskKind::CompetitionEarnings];

    /// Both tasks ask for a score on the closed interval [-1, 1].
    pub const fn score_range(self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SentimentReturn => "sentiment_return",
            TaskKind::CompetitionEarnings => "competition_earnings",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    GoalBlind,
    GoalAware,
}

impl Regime {
    pub const BOTH: [Regime; 2] = [Regime::GoalBlind, Regime::GoalAware];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::GoalBlind => "goal_blind",
            Regime::GoalAware => "goal_aware",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::GoalBlind => "Goal-blind",
            Regime::GoalAware => "Goal-aware",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub task: TaskKind,
    pub regime: Regime,
    pub ticker: String,
    pub date_string: String,
    pub body: String,
    /// Lower-case hex SHA-256 of `body`.
    pub content_hash: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("transcript text is empty")]
    EmptyTranscript,
    #[error("template {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name} is missing placeholder {placeholder}")]
    MissingPlaceholder { name: String, placeholder: &'static str },
}

const PLACEHOLDERS: [&str; 3] = ["{ticker}", "{date}", "{transcript}"];

/// One template per (task, regime).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    sentiment_blind: String,
    sentiment_aware: String,
    competition_blind: String,
    competition_aware: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            sentiment_blind: include_str!("../templates/sentiment_return.goal_blind.txt").into(),
            sentiment_aware: include_str!("../templates/sentiment_return.goal_aware.txt").into(),
            competition_blind: include_str!("../templates/competition_earnings.goal_blind.txt").into(),
            competition_aware: include_str!("../templates/competition_earnings.goal_aware.txt").into(),
        }
    }
}

pub fn template_file_name(task: TaskKind, regime: Regime) -> String {
    format!("{task}.{regime}.txt")
}

impl TemplateSet {
    /// Load `<task>.<regime>.txt` from `dir`. Files that are absent fall back
    /// to the shipped default. A single trailing newline is stripped.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = TemplateSet::default();
        for task in TaskKind::ALL {
            for regime in Regime::BOTH {
                let name = template_file_name(task, regime);
                let path = dir.join(&name);
                if !path.exists() {
                    continue;
                }
                let mut text = std::fs::read_to_string(&path)
                    .map_err(|source| PromptError::Io { name: name.clone(), source })?;
                if text.ends_with('\n') {
                    text.pop();
                    if text.ends_with('\r') {
                        text.pop();
                    }
                }
                for placeholder in PLACEHOLDERS {
                    if !text.contains(placeholder) {
                        return Err(PromptError::MissingPlaceholder { name, placeholder });
                    }
                }
                *set.slot_mut(task, regime) = text;
            }
        }
        Ok(set)
    }

    pub fn get(&self, task: TaskKind, regime: Regime) -> &str {
        match (task, regime) {
            (TaskKind::SentimentReturn, Regime::GoalBlind) => &self.sentiment_blind,
            (TaskKind::SentimentReturn, Regime::GoalAware) => &self.sentiment_aware,
            (TaskKind::CompetitionEarnings, Regime::GoalBlind) => &self.competition_blind,
            (TaskKind::CompetitionEarnings, Regime::GoalAware) => &self.competition_aware,
        }
    }

    fn slot_mut(&mut self, task: TaskKind, regime: Regime) -> &mut String {
        match (task, regime) {
            (TaskKind::SentimentReturn, Regime::GoalBlind) => &mut self.sentiment_blind,
            (TaskKind::SentimentReturn, Regime::GoalAware) => &mut self.sentiment_aware,
            (TaskKind::CompetitionEarnings, Regime::GoalBlind) => &mut self.competition_blind,
            (TaskKind::CompetitionEarnings, Regime::GoalAware) => &mut self.competition_aware,
        }
    }

    /// SHA-256 of a template, for report provenance.
    pub fn digest(&self, task: TaskKind, regime: Regime) -> String {
        sha256_hex(self.get(task, regime).as_bytes())
    }

    pub fn render(
        &self,
        task: TaskKind,
        regime: Regime,
        ticker: &str,
        period_end: NaiveDate,
        transcript: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        if transcript.trim().is_empty() {
            return Err(PromptError::EmptyTranscript);
        }
        let date_string = format_date(period_end);
        let body = substitute(self.get(task, regime), ticker, &date_string, transcript);
        let content_hash = sha256_hex(body.as_bytes());
        Ok(RenderedPrompt {
            task,
            regime,
            ticker: ticker.to_string(),
            date_string,
            body,
            content_hash,
        })
    }
}

/// Render with the shipped templates.
pub fn render_prompt(
    task: TaskKind,
    regime: Regime,
    ticker: &str,
    period_end: NaiveDate,
    transcript: &str,
) -> Result<RenderedPrompt, PromptError> {
    TemplateSet::default().render(task, regime, ticker, period_end, transcript)
}

/// `MM/DD/YYYY`, zero padded.
pub fn format_date(date: NaiveDate) -> String {
    date.format("%m/%d/%Y").to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// Single left-to-right pass so placeholder-like text inside the substituted
// values (a transcript quoting "{date}") is never expanded.
fn substitute(template: &str, ticker: &str, date: &str, transcript: &str) -> String {
    let mut out = String::with_capacity(template.len() + transcript.len() + 32);
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let (value, len) = if tail.starts_with("{ticker}") {
            (ticker, "{ticker}".len())
        } else if tail.starts_with("{date}") {
            (date, "{date}".len())
        } else if tail.starts_with("{transcript}") {
            (transcript, "{transcript}".len())
        } else {
            ("{", 1)
        };
        out.push_str(value);
        rest = &tail[len..];
    }
    out.push_str(rest);
    out
}

/// If `longer` equals `shorter` with exactly one contiguous run of bytes
/// inserted, return that run's byte range within `longer`.
///
/// Where the insertion point is ambiguous (the inserted text shares a prefix
/// or suffix with its surroundings) the rightmost placement is returned, which
/// for the shipped templates is exactly the disclosure sentence with its
/// leading space.
pub fn single_insertion(shorter: &str, longer: &str) -> Option<std::ops::Range<usize>> {
    let (s, l) = (shorter.as_bytes(), longer.as_bytes());
    if l.len() <= s.len() {
        return None;
    }
    let prefix = s.iter().zip(l).take_while(|(a, b)| a == b).count();
    let suffix = s
        .iter()
        .rev()
        .zip(l.iter().rev())
        .take_while(|(a, b)| a == b)
        .count();
    if prefix + suffix < s.len() {
        return None;
    }
    let inserted = l.len() - s.len();
    let start = prefix.min(s.len());
    Some(start..start + inserted)
}
