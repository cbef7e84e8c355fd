//! The audit report and its text, CSV and JSON renderings.

mod plots;
mod tables;

pub use plots::emit_plotdata;
pub use tables::{emit_tables, render_table, TableFormat, TableKind};

use crate::diag::Diagnostic;
use crate::forecast::{OosPoint, AWARE_X_POST};
use crate::portfolio::{CurvePoint, SpreadTestReport};
use crate::prompting::{Regime, TaskKind};
use crate::regression::{FixedEffects, FmbResult, PanelFeResult, DIFF};
use crate::scoring::ScoreStats;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to tell whether two reports came from the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_digest: String,
    /// Keyed by template file name.
    pub template_digests: BTreeMap<String, String>,
    /// Keyed by input role (`transcripts`, `returns`, `earnings`).
    pub input_digests: BTreeMap<String, String>,
    pub model_name: String,
    pub cache: ScoreStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCurve {
    pub regime: Regime,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortsReport {
    pub tests: SpreadTestReport,
    pub curves: Vec<RegimeCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmbColumn {
    pub controls: Vec<String>,
    pub result: FmbResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosReport {
    /// Mean R²_OOS per period and regime, period-major.
    pub series: Vec<OosPoint>,
    pub n_forecasts_aware: usize,
    pub n_forecasts_blind: usize,
    pub stacked_rows: usize,
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelColumn {
    pub fixed_effects: FixedEffects,
    pub controls: Vec<String>,
    pub result: PanelFeResult,
}

/// Pattern check: a significant pre-cutoff `Diff` slope, a null post-cutoff
/// `Diff` slope and, when the panel ran, a significantly negative aware x
/// post interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageVerdict {
    pub flagged: bool,
    pub diff_pre_significant: Option<bool>,
    pub diff_post_null: Option<bool>,
    pub interaction_negative: Option<bool>,
    pub summary: String,
}

pub const SIGNIFICANCE: f64 = 0.05;

impl LeakageVerdict {
    pub fn assess(fmb: Option<&FmbResult>, panel: Option<&PanelFeResult>) -> Self {
        let pre = fmb.and_then(|f| f.pre(DIFF));
        let post = fmb.and_then(|f| f.post(DIFF));
        let diff_pre_significant = pre.map(|e| e.p_value.is_some_and(|p| p < SIGNIFICANCE));
        let diff_post_null = post.map(|e| e.p_value.is_none_or(|p| p >= SIGNIFICANCE));
        let interaction_negative = panel.and_then(|p| p.coefficient(AWARE_X_POST)).map(|c| {
            c.estimate < 0.0 && c.p_value.is_some_and(|p| p < SIGNIFICANCE)
        });
        let flagged = diff_pre_significant == Some(true)
            && diff_post_null == Some(true)
            && interaction_negative != Some(false);
        let summary = match (flagged, diff_pre_significant) {
            (_, None) => "not assessed: Fama-MacBeth analysis did not run".to_string(),
            (true, _) => format!(
                "leakage flagged: Diff x Pre-Cutoff = {:.3} (p = {:.3}), Diff x Post-Cutoff not significant{}",
                pre.map_or(f64::NAN, |e| e.mean),
                pre.and_then(|e| e.p_value).unwrap_or(f64::NAN),
                if interaction_negative == Some(true) { ", goal-aware R²_OOS falls after the cutoff" } else { "" }
            ),
            (false, _) => "no leakage pattern detected".to_string(),
        };
        Self {
            flagged,
            diff_pre_significant,
            diff_post_null,
            interaction_negative,
            summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub task: TaskKind,
    pub cutoff_date: NaiveDate,
    pub provenance: Provenance,
    pub panel_rows: usize,
    pub score_pairs: usize,
    pub missing_scores: usize,
    pub sorts: Option<SortsReport>,
    pub fmb: Option<Vec<FmbColumn>>,
    pub oos: Option<OosReport>,
    pub panel: Option<Vec<PanelColumn>>,
    pub leakage: LeakageVerdict,
    pub diagnostics: Vec<Diagnostic>,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} analysis was not run (toggled off or failed)")]
    NotRun(&'static str),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn write_file(path: PathBuf, text: &str) -> Result<PathBuf, ReportError> {
    std::fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    Ok(path)
}
