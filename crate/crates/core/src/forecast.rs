//! Expanding-window out-of-sample forecasts, observation-level R²_OOS, YoY
//! EPS growth targets and the stacked regime panel.

use crate::corpus::ObservationPanel;
use crate::diag::Diagnostic;
use crate::period::Period;
use crate::prompting::Regime;
use crate::regression::{ols, panel_fe, ClusterDim, Design, FixedEffects, PanelData, PanelError, PanelFeResult, PanelObservation};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

pub const AWARE_X_POST: &str = "goal_aware_x_post";
pub const GOAL_AWARE: &str = "goal_aware";
pub const POST_CUTOFF: &str = "post_cutoff";

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum GrowthError {
    #[error("no EPS for the target quarter")]
    MissingCurrent,
    #[error("no EPS four quarters earlier")]
    MissingLag,
    #[error("EPS four quarters earlier is zero")]
    ZeroLag,
}

/// `EPS_T / EPS_{T-4}`.
pub fn yoy_eps_growth(history: &BTreeMap<Period, f64>, t: Period) -> Result<f64, GrowthError> {
    let current = *history.get(&t).ok_or(GrowthError::MissingCurrent)?;
    let lag = *history.get(&t.offset(-4)).ok_or(GrowthError::MissingLag)?;
    if lag == 0.0 {
        return Err(GrowthError::ZeroLag);
    }
    Ok(current / lag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum R2Form {
    /// `1 - (y - ŷ)² / (ȳ - y)²`.
    #[default]
    Squared,
    /// `1 - (ŷ - y) / (ȳ - y)`, kept for sensitivity analysis.
    Unsquared,
}

/// Observation-level out-of-sample R². `None` when the benchmark equals the
/// realized value.
pub fn oos_r2(y: f64, y_hat: f64, benchmark: f64) -> Option<f64> {
    oos_r2_with(R2Form::Squared, y, y_hat, benchmark)
}

pub fn oos_r2_with(form: R2Form, y: f64, y_hat: f64, benchmark: f64) -> Option<f64> {
    let denom = benchmark - y;
    if denom == 0.0 {
        return None;
    }
    Some(match form {
        R2Form::Squared => 1.0 - (y - y_hat).powi(2) / denom.powi(2),
        R2Form::Unsquared => 1.0 - (y_hat - y) / denom,
    })
}

/// One firm-period available to the forecaster: the outcome realized in
/// `period` and the score measured before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastInput {
    pub firm_id: String,
    pub period: Period,
    pub score: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub firm_id: String,
    pub period: Period,
    pub regime: Regime,
    pub y: f64,
    pub y_hat: f64,
    pub benchmark: f64,
    pub r2_oos: f64,
}

/// What one forecast window was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub forecast_period: Period,
    pub last_train_period: Period,
    pub n_train: usize,
    pub intercept: f64,
    pub slope: f64,
    pub benchmark: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub regime: Regime,
    pub records: Vec<ForecastRecord>,
    pub windows: Vec<WindowFit>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    /// Distinct periods required before the first forecast.
    pub min_train_periods: usize,
    pub form: R2Form,
    /// Lower bound applied to each R²_OOS; `None` leaves values unbounded.
    pub r2_floor: Option<f64>,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            min_train_periods: 6,
            form: R2Form::Squared,
            r2_floor: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ForecastError {
    #[error("no history before {0}")]
    EmptyHistory(Period),
    #[error("{periods} periods cannot supply {min_train} training periods and a forecast")]
    TooShort { periods: usize, min_train: usize },
    #[error("aware and blind forecasts share no firm-period")]
    NoOverlap,
}

/// Mean target over every firm and period strictly before `t`.
pub fn benchmark_mean(inputs: &[ForecastInput], t: Period) -> Result<f64, ForecastError> {
    let (sum, n) = inputs
        .iter()
        .filter(|r| r.period < t)
        .fold((0.0, 0usize), |(s, n), r| (s + r.target, n + 1));
    if n == 0 {
        return Err(ForecastError::EmptyHistory(t));
    }
    Ok(sum / n as f64)
}

/// Expanding-window forecasts: for each period `T` past the burn-in, fit
/// `target ~ 1 + score` on all rows dated before `T` and predict every row
/// dated `T`.
pub fn expanding_forecast(
    inputs: &[ForecastInput],
    regime: Regime,
    opts: ForecastOptions,
) -> Result<ForecastRun, ForecastError> {
    expanding_forecast_observed(inputs, regime, opts, |_, _| {})
}

/// As [`expanding_forecast`], handing each window's forecast period and
/// training rows to `observe` before the fit.
pub fn expanding_forecast_observed<F>(
    inputs: &[ForecastInput],
    regime: Regime,
    opts: ForecastOptions,
    mut observe: F,
) -> Result<ForecastRun, ForecastError>
where
    F: FnMut(Period, &[&ForecastInput]),
{
    let periods: Vec<Period> = inputs.iter().map(|r| r.period).collect::<BTreeSet<_>>().into_iter().collect();
    let min_train = opts.min_train_periods.max(1);
    if periods.len() <= min_train {
        return Err(ForecastError::TooShort {
            periods: periods.len(),
            min_train,
        });
    }
    let mut sorted: Vec<&ForecastInput> = inputs.iter().collect();
    sorted.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.firm_id.cmp(&b.firm_id)));

    let mut records = Vec::new();
    let mut windows = Vec::new();
    let mut diagnostics = Vec::new();
    for &t in &periods[min_train..] {
        let split = sorted.partition_point(|r| r.period < t);
        let train = &sorted[..split];
        let end = sorted.partition_point(|r| r.period <= t);
        let test = &sorted[split..end];
        observe(t, train);

        let x: Vec<f64> = train.iter().map(|r| r.score).collect();
        let y: Vec<f64> = train.iter().map(|r| r.target).collect();
        let fit = match ols(&Design::with_intercept(&[("score", &x)]), &y) {
            Ok(fit) => fit,
            Err(e) => {
                diagnostics.push(Diagnostic::new("expanding_forecast", format!("{t}: window skipped, {e}")));
                continue;
            }
        };
        let (a, b) = (fit.coefficients[0], fit.coefficients[1]);
        let benchmark = y.iter().sum::<f64>() / y.len() as f64;
        windows.push(WindowFit {
            forecast_period: t,
            last_train_period: train[train.len() - 1].period,
            n_train: train.len(),
            intercept: a,
            slope: b,
            benchmark,
        });
        let mut undefined = 0;
        for r in test {
            let y_hat = a + b * r.score;
            match oos_r2_with(opts.form, r.target, y_hat, benchmark) {
                Some(v) => records.push(ForecastRecord {
                    firm_id: r.firm_id.clone(),
                    period: t,
                    regime,
                    y: r.target,
                    y_hat,
                    benchmark,
                    r2_oos: opts.r2_floor.map_or(v, |f| v.max(f)),
                }),
                None => undefined += 1,
            }
        }
        if undefined > 0 {
            diagnostics.push(Diagnostic::new(
                "expanding_forecast",
                format!("{t}: {undefined} rows excluded, outcome equals the benchmark"),
            ));
        }
    }
    Ok(ForecastRun {
        regime,
        records,
        windows,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosPoint {
    pub period: Period,
    pub regime: Regime,
    pub mean_r2_oos: f64,
    pub n: usize,
}

/// Cross-sectional mean R²_OOS per period.
pub fn mean_r2_by_period(run: &ForecastRun) -> Vec<OosPoint> {
    let mut acc: BTreeMap<Period, (f64, usize)> = BTreeMap::new();
    for r in &run.records {
        let e = acc.entry(r.period).or_insert((0.0, 0));
        e.0 += r.r2_oos;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(period, (s, n))| OosPoint {
            period,
            regime: run.regime,
            mean_r2_oos: s / n as f64,
            n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedRow {
    pub firm_id: String,
    pub period: Period,
    pub goal_aware: bool,
    pub post_cutoff: bool,
    pub r2_oos: f64,
    pub controls: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedOOSPanel {
    pub cutoff_date: NaiveDate,
    pub rows: Vec<StackedRow>,
    /// Firm-periods forecast under only one regime.
    pub unmatched: usize,
    pub diagnostics: Vec<Diagnostic>,
}

/// Pairs aware and blind forecasts by firm-period; keys present in only one
/// regime are dropped and counted.
pub fn build_stacked_panel(
    aware: &[ForecastRecord],
    blind: &[ForecastRecord],
    cutoff_date: NaiveDate,
) -> Result<StackedOOSPanel, ForecastError> {
    let index = |rs: &[ForecastRecord]| -> BTreeMap<(String, Period), f64> {
        rs.iter().map(|r| ((r.firm_id.clone(), r.period), r.r2_oos)).collect()
    };
    let (a, b) = (index(aware), index(blind));
    let mut rows = Vec::new();
    for (key, &va) in &a {
        if let Some(&vb) = b.get(key) {
            let post_cutoff = !key.1.is_pre_cutoff(cutoff_date);
            for (goal_aware, r2_oos) in [(true, va), (false, vb)] {
                rows.push(StackedRow {
                    firm_id: key.0.clone(),
                    period: key.1,
                    goal_aware,
                    post_cutoff,
                    r2_oos,
                    controls: BTreeMap::new(),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(ForecastError::NoOverlap);
    }
    let matched = rows.len() / 2;
    let unmatched = (a.len() - matched) + (b.len() - matched);
    let mut diagnostics = Vec::new();
    if unmatched > 0 {
        diagnostics.push(Diagnostic::new(
            "build_stacked_panel",
            format!("{unmatched} firm-periods forecast under one regime only; dropped"),
        ));
    }
    Ok(StackedOOSPanel {
        cutoff_date,
        rows,
        unmatched,
        diagnostics,
    })
}

impl StackedOOSPanel {
    /// Copies the named control columns from the observation panel.
    pub fn attach_controls(&mut self, panel: &ObservationPanel, names: &[String]) {
        let lookup: HashMap<(&str, Period), &BTreeMap<String, f64>> =
            panel.rows.iter().map(|r| ((r.firm_id.as_str(), r.period), &r.controls)).collect();
        for row in &mut self.rows {
            if let Some(c) = lookup.get(&(row.firm_id.as_str(), row.period)) {
                for n in names {
                    if let Some(v) = c.get(n) {
                        row.controls.insert(n.clone(), *v);
                    }
                }
            }
        }
    }
}

/// Regress stacked R²_OOS on aware × post, aware, post and controls. Rows
/// missing a control are dropped; an empty regime × era cell is an error.
pub fn stacked_panel_fe(
    stacked: &StackedOOSPanel,
    controls: &[String],
    fe: FixedEffects,
    cluster: ClusterDim,
) -> Result<PanelFeResult, PanelError> {
    let mut names = vec![AWARE_X_POST.to_string(), GOAL_AWARE.to_string(), POST_CUTOFF.to_string()];
    names.extend(controls.iter().cloned());
    let mut cells = [[0usize; 2]; 2];
    let rows: Vec<PanelObservation> = stacked
        .rows
        .iter()
        .filter_map(|r| {
            let ctl: Option<Vec<f64>> = controls.iter().map(|c| r.controls.get(c).copied()).collect();
            let (a, p) = (r.goal_aware as u8 as f64, r.post_cutoff as u8 as f64);
            let mut regressors = vec![a * p, a, p];
            regressors.extend(ctl?);
            cells[r.goal_aware as usize][r.post_cutoff as usize] += 1;
            Some(PanelObservation {
                firm_id: r.firm_id.clone(),
                period: r.period,
                outcome: r.r2_oos,
                regressors,
            })
        })
        .collect();
    for (aware, row) in cells.iter().enumerate() {
        for (post, &n) in row.iter().enumerate() {
            if n == 0 {
                return Err(PanelError::EmptyCell(format!(
                    "{} / {}",
                    if aware == 1 { "goal-aware" } else { "goal-blind" },
                    if post == 1 { "post-cutoff" } else { "pre-cutoff" }
                )));
            }
        }
    }
    let data = PanelData {
        names,
        rows,
        protected: vec![AWARE_X_POST.to_string()],
    };
    panel_fe(&data, fe, cluster)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(firm: &str, t: i64, score: f64, target: f64) -> ForecastInput {
        ForecastInput {
            firm_id: firm.into(),
            period: Period::month(2023, 1).offset(t),
            score,
            target,
        }
    }

    #[test]
    fn growth() {
        let q = Period::quarter(2023, 1);
        let mut h = BTreeMap::from([(q, 2.0), (q.offset(-4), 1.0)]);
        assert_eq!(yoy_eps_growth(&h, q), Ok(2.0));
        h.insert(q.offset(-4), 2.0);
        assert_eq!(yoy_eps_growth(&h, q), Ok(1.0));
        h.insert(q.offset(-4), 0.0);
        assert_eq!(yoy_eps_growth(&h, q), Err(GrowthError::ZeroLag));
        assert_eq!(yoy_eps_growth(&h, q.offset(-1)), Err(GrowthError::MissingCurrent));
        h.insert(q.offset(1), 1.0);
        assert_eq!(yoy_eps_growth(&h, q.offset(1)), Err(GrowthError::MissingLag));
    }

    #[test]
    fn r2_unit_cases() {
        assert_eq!(oos_r2(2.0, 2.0, 1.0), Some(1.0));
        assert_eq!(oos_r2(2.0, 1.0, 1.0), Some(0.0));
        assert_eq!(oos_r2(2.0, 1.5, 1.0), Some(0.75));
        assert_eq!(oos_r2(1.0, 1.5, 1.0), None);
        assert_eq!(oos_r2_with(R2Form::Unsquared, 2.0, 1.5, 1.0), Some(0.5));
    }

    #[test]
    fn benchmark() {
        let rows = [input("a", 0, 0.0, 1.0), input("b", 1, 0.0, 3.0), input("a", 2, 0.0, 100.0)];
        assert_eq!(benchmark_mean(&rows, Period::month(2023, 3)), Ok(2.0));
        assert_eq!(benchmark_mean(&rows, Period::month(2023, 2)), Ok(1.0));
        assert!(benchmark_mean(&rows, Period::month(2023, 1)).is_err());
    }

    #[test]
    fn outcome_equal_to_score_forecasts_score() {
        let mut rows = Vec::new();
        for t in 0..8 {
            for f in 0..4 {
                let s = (f * 3 + t * 5) as f64 % 7.0;
                rows.push(input(&format!("f{f}"), t, s, s));
            }
        }
        let run = expanding_forecast(&rows, Regime::GoalAware, ForecastOptions::default()).unwrap();
        assert_eq!(run.windows.len(), 2);
        for r in &run.records {
            assert!((r.y_hat - r.y).abs() < 1e-10);
        }
    }

    #[test]
    fn uninformative_score_forecasts_training_mean() {
        let mut rows = Vec::new();
        for t in 0..7 {
            for f in 0..4 {
                // score independent of target by construction: balanced design
                let score = (f % 2) as f64;
                let target = if f < 2 { 1.0 } else { 3.0 } + t as f64;
                rows.push(input(&format!("f{f}"), t, score, target));
            }
        }
        let run = expanding_forecast(&rows, Regime::GoalBlind, ForecastOptions::default()).unwrap();
        let w = &run.windows[0];
        assert!(w.slope.abs() < 1e-12);
        assert!((w.intercept - w.benchmark).abs() < 1e-12);
    }

    #[test]
    fn stacked_counts_and_unmatched() {
        let rec = |f: &str, t: i64, regime| ForecastRecord {
            firm_id: f.into(),
            period: Period::month(2023, 9).offset(t),
            regime,
            y: 0.0,
            y_hat: 0.0,
            benchmark: 1.0,
            r2_oos: 0.0,
        };
        let mut aware = Vec::new();
        let mut blind = Vec::new();
        for f in ["a", "b", "c"] {
            for t in 0..2 {
                aware.push(rec(f, t, Regime::GoalAware));
                blind.push(rec(f, t, Regime::GoalBlind));
            }
        }
        let cutoff = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        let s = build_stacked_panel(&aware, &blind, cutoff).unwrap();
        assert_eq!(s.rows.len(), 12);
        assert_eq!(s.unmatched, 0);
        assert_eq!(s.rows.iter().filter(|r| r.post_cutoff).count(), 6);
        blind.pop();
        let s = build_stacked_panel(&aware, &blind, cutoff).unwrap();
        assert_eq!((s.rows.len(), s.unmatched), (10, 1));
    }
}
