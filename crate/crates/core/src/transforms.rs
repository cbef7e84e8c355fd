//! Cohort percentiles, the aware-minus-blind `Diff`, and rolling betas.

use crate::corpus::{PanelRow, ReturnRecord};
use crate::diag::Diagnostic;
use crate::period::Period;
use crate::regression::{ols, Design};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortKind {
    /// All firms in the same calendar month (return task).
    YearMonth,
    /// Same 4-digit SIC industry within a year (earnings task).
    Sic4ByYear,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CohortKey {
    YearMonth { period: Period },
    Sic4ByYear { sic4: String, year: i32 },
}

impl fmt::Display for CohortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CohortKey::YearMonth { period } => write!(f, "{period}"),
            CohortKey::Sic4ByYear { sic4, year } => write!(f, "sic{sic4}/{year}"),
        }
    }
}

impl CohortKind {
    /// `None` when the row lacks what the cohort needs (a SIC code).
    pub fn key_for(self, row: &PanelRow) -> Option<CohortKey> {
        match self {
            CohortKind::YearMonth => Some(CohortKey::YearMonth { period: row.period }),
            CohortKind::Sic4ByYear => Some(CohortKey::Sic4ByYear {
                sic4: row.sic4.clone()?,
                year: row.period.year(),
            }),
        }
    }
}

/// A raw score for one regime, tagged with its percentile cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScore {
    pub firm_id: String,
    pub period: Period,
    pub cohort: CohortKey,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub firm_id: String,
    pub period: Period,
    pub cohort: CohortKey,
    pub blind_raw: f64,
    pub aware_raw: f64,
    pub blind_pct: f64,
    pub aware_pct: f64,
    /// `aware_pct - blind_pct`.
    pub diff: f64,
    /// Cohort had a single firm; both percentiles are 0.5.
    pub singleton_cohort: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("blind and aware score panels share no scored firm-period")]
    Disjoint,
}

/// Percentile of each value within its cohort: `(average_rank - 0.5) / n`
/// with 1-based ranks and ties sharing their mean rank. Output order follows
/// input order.
pub fn percentile_within_cohort<K: Clone>(values: &[(K, f64)]) -> Vec<(K, f64)> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].1.total_cmp(&values[b].1));
    let mut pct = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]].1 == values[order[i]].1 {
            j += 1;
        }
        // Ranks i+1 ..= j share the average (i + 1 + j) / 2.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let p = (avg_rank - 0.5) / n as f64;
        for &k in &order[i..j] {
            pct[k] = p;
        }
        i = j;
    }
    values
        .iter()
        .zip(pct)
        .map(|((k, _), p)| (k.clone(), p))
        .collect()
}

/// Join the two regimes on `(firm_id, period)`, drop rows missing either
/// score, rank each regime within its cohort and compute `diff`.
///
/// Singleton cohorts yield `diff = 0` rows flagged `singleton_cohort`; they
/// are dropped when `exclude_singletons` is set.
pub fn build_score_pairs(
    blind: &[RawScore],
    aware: &[RawScore],
    exclude_singletons: bool,
) -> Result<(Vec<ScorePair>, Vec<Diagnostic>), TransformError> {
    let aware_by_key: HashMap<(&str, Period), f64> = aware
        .iter()
        .filter_map(|a| a.value.map(|v| ((a.firm_id.as_str(), a.period), v)))
        .collect();
    let mut cohorts: BTreeMap<&CohortKey, Vec<(&str, Period, f64, f64)>> = BTreeMap::new();
    let mut dropped = 0usize;
    for b in blind {
        match (b.value, aware_by_key.get(&(b.firm_id.as_str(), b.period))) {
            (Some(bv), Some(&av)) => cohorts
                .entry(&b.cohort)
                .or_default()
                .push((&b.firm_id, b.period, bv, av)),
            _ => dropped += 1,
        }
    }
    if cohorts.is_empty() {
        return Err(TransformError::Disjoint);
    }
    let mut diagnostics = Vec::new();
    if dropped > 0 {
        diagnostics.push(Diagnostic::new(
            "transforms",
            format!("{dropped} firm-periods dropped for a missing blind or aware score"),
        ));
    }
    let mut pairs = Vec::new();
    let mut singletons = 0usize;
    for (cohort, members) in cohorts {
        let singleton = members.len() == 1;
        if singleton {
            singletons += 1;
            if exclude_singletons {
                continue;
            }
        }
        let blind_vals: Vec<(usize, f64)> = members.iter().enumerate().map(|(i, m)| (i, m.2)).collect();
        let aware_vals: Vec<(usize, f64)> = members.iter().enumerate().map(|(i, m)| (i, m.3)).collect();
        let bp = percentile_within_cohort(&blind_vals);
        let ap = percentile_within_cohort(&aware_vals);
        for (i, &(firm, period, bv, av)) in members.iter().enumerate() {
            let (blind_pct, aware_pct) = (bp[i].1, ap[i].1);
            pairs.push(ScorePair {
                firm_id: firm.to_string(),
                period,
                cohort: cohort.clone(),
                blind_raw: bv,
                aware_raw: av,
                blind_pct,
                aware_pct,
                diff: aware_pct - blind_pct,
                singleton_cohort: singleton,
            });
        }
    }
    if singletons > 0 {
        diagnostics.push(Diagnostic::new(
            "transforms",
            format!(
                "{singletons} single-firm cohorts {}",
                if exclude_singletons { "excluded" } else { "kept with diff = 0" }
            ),
        ));
    }
    pairs.sort_by(|a, b| (&a.firm_id, a.period).cmp(&(&b.firm_id, b.period)));
    Ok((pairs, diagnostics))
}

/// Equal-weighted cross-sectional mean excess return per month, used as the
/// market series when none is supplied.
pub fn market_proxy(returns: &[ReturnRecord]) -> BTreeMap<Period, f64> {
    let mut acc: BTreeMap<Period, (f64, usize)> = BTreeMap::new();
    for r in returns {
        let e = acc.entry(r.period).or_default();
        e.0 += r.excess_return;
        e.1 += 1;
    }
    acc.into_iter().map(|(p, (s, n))| (p, s / n as f64)).collect()
}

/// OLS slope of firm on market excess returns over the `window` months ending
/// at `target - 1`. `None` with fewer than `min_obs` overlapping months or a
/// degenerate market series.
pub fn rolling_beta(
    firm_returns: &BTreeMap<Period, f64>,
    market_returns: &BTreeMap<Period, f64>,
    target: Period,
    window: usize,
    min_obs: usize,
) -> Option<f64> {
    let start = target.offset(-(window as i64));
    let (xs, ys): (Vec<f64>, Vec<f64>) = firm_returns
        .range(start..target)
        .filter_map(|(p, &y)| market_returns.get(p).map(|&x| (x, y)))
        .unzip();
    if xs.len() < min_obs.max(2) {
        return None;
    }
    let design = Design::with_intercept(&[("market", &xs)]);
    let fit = ols(&design, &ys).ok()?;
    Some(fit.coefficient("market").expect("market column"))
}

/// Rolling beta for every firm-month in `returns`.
pub fn rolling_betas(
    returns: &[ReturnRecord],
    market_returns: &BTreeMap<Period, f64>,
    window: usize,
    min_obs: usize,
) -> BTreeMap<(String, Period), f64> {
    let mut by_firm: BTreeMap<&str, BTreeMap<Period, f64>> = BTreeMap::new();
    for r in returns {
        by_firm
            .entry(r.firm_id.as_str())
            .or_default()
            .insert(r.period, r.excess_return);
    }
    let mut out = BTreeMap::new();
    for (firm, series) in &by_firm {
        for &p in series.keys() {
            if let Some(b) = rolling_beta(series, market_returns, p, window, min_obs) {
                out.insert((firm.to_string(), p), b);
            }
        }
    }
    out
}
