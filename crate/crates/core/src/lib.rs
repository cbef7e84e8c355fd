//! Audits LLM-generated intermediate measures for purpose leakage.
//!
//! The same transcript is scored twice, once with a goal-blind prompt and once
//! with a goal-aware prompt that discloses the downstream regression. The two
//! score series are then pushed through quintile sorts, Fama-MacBeth
//! regressions, expanding-window out-of-sample forecasts and a two-way fixed
//! effects panel, all split around the model's knowledge cutoff. Leakage shows
//! up as an aware-minus-blind advantage that exists before the cutoff and
//! vanishes (or reverses) after it.
//!
//! Module map:
//!
//! * [`corpus`] ingests transcripts, returns and earnings and builds the
//!   firm-period observation panel.
//! * [`prompting`] renders the paired prompts.
//! * [`scoring`] turns prompts into validated scores (HTTP, cache, synthetic).
//! * [`transforms`] computes cohort percentiles, `Diff` and rolling betas.
//! * [`portfolio`] runs quintile sorts and spread tests.
//! * [`regression`] holds OLS, Fama-MacBeth, Welch tests and the FE panel.
//! * [`forecast`] runs expanding-window forecasts and observation-level R2_OOS.
//! * [`synthetic`] generates worlds with a tunable leak for self-validation.
//! * [`pipeline`] and [`report`] orchestrate an audit and render its outputs.

pub mod config;
pub mod corpus;
pub mod diag;
pub mod forecast;
pub mod period;
pub mod pipeline;
pub mod portfolio;
pub mod prompting;
pub mod regression;
pub mod report;
pub mod scoring;
pub mod stats;
pub mod synthetic;
pub mod transforms;

pub use config::AuditConfig;
pub use corpus::{Corpus, ObservationPanel, PanelRow};
pub use diag::Diagnostic;
pub use period::Period;
pub use pipeline::{run_audit, AuditError, Stage};
pub use prompting::{Regime, RenderedPrompt, TaskKind};
pub use report::{AuditReport, TOOL_VERSION};
pub use scoring::ScoreValue;
