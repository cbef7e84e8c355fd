//! Fama-MacBeth estimation with slopes split at the knowledge cutoff.
//!
//! Each period gets its own cross-sectional OLS of the outcome on an
//! intercept, the blind percentile score, `Diff` and any controls. Because the
//! pre/post indicators are constant within a period, the interacted slopes
//! are exactly the era-wise averages of the per-period slopes.

use super::ols::{ols, Design, INTERCEPT};
use super::welch::welch_test;
use crate::corpus::ObservationPanel;
use crate::diag::Diagnostic;
use crate::period::Period;
use crate::stats::{mean, newey_west_variance_of_mean, sample_variance, t_two_sided_p};
use crate::transforms::ScorePair;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const BLIND_SCORE: &str = "blind_score";
pub const DIFF: &str = "diff";

/// One firm-period in the cross-section. `None` regressors are missing and
/// trigger listwise deletion within that period.
#[derive(Debug, Clone, PartialEq)]
pub struct FmbObservation {
    pub period: Period,
    pub pre_cutoff: bool,
    pub outcome: f64,
    pub regressors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FmbOptions {
    /// Newey-West lags for the era standard errors; `None` is the plain
    /// time-series standard error.
    pub newey_west_lags: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCoefficients {
    pub period: Period,
    pub pre_cutoff: bool,
    pub n_obs: usize,
    /// Aligned with [`FmbResult::regressors`].
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraEstimate {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    /// `None` when the standard error is zero.
    pub t: Option<f64>,
    pub p_value: Option<f64>,
    pub n_periods: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualityTest {
    pub name: String,
    /// Two-sided Welch p-value; `None` when both series are constant at
    /// different levels.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmbResult {
    /// Intercept first, then the slopes in design order.
    pub regressors: Vec<String>,
    pub periods: Vec<PeriodCoefficients>,
    pub pre: Vec<EraEstimate>,
    pub post: Vec<EraEstimate>,
    pub equality: Vec<EqualityTest>,
    pub n_obs: usize,
    pub diagnostics: Vec<Diagnostic>,
}

impl FmbResult {
    pub fn pre(&self, name: &str) -> Option<&EraEstimate> {
        self.pre.iter().find(|e| e.name == name)
    }

    pub fn post(&self, name: &str) -> Option<&EraEstimate> {
        self.post.iter().find(|e| e.name == name)
    }

    pub fn equality_p(&self, name: &str) -> Option<f64> {
        self.equality.iter().find(|e| e.name == name)?.p_value
    }

    /// Per-period series of one coefficient for one era.
    pub fn series(&self, name: &str, pre_cutoff: bool) -> Vec<f64> {
        let Some(j) = self.regressors.iter().position(|r| r == name) else {
            return Vec::new();
        };
        self.periods
            .iter()
            .filter(|p| p.pre_cutoff == pre_cutoff)
            .map(|p| p.coefficients[j])
            .collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FmbError {
    #[error("{era} era has {found} estimable periods; at least 2 are required")]
    TooFewPeriods { era: &'static str, found: usize },
    #[error("no observations")]
    Empty,
}

fn era_estimate(name: &str, xs: &[f64], opts: FmbOptions) -> EraEstimate {
    let n = xs.len();
    let m = mean(xs);
    let var_of_mean = match opts.newey_west_lags {
        Some(l) => newey_west_variance_of_mean(xs, l),
        None => sample_variance(xs) / n as f64,
    };
    let se = var_of_mean.max(0.0).sqrt();
    let (t, p) = if se > 0.0 {
        let t = m / se;
        (Some(t), Some(t_two_sided_p(t, n as f64 - 1.0)))
    } else {
        (None, None)
    };
    EraEstimate {
        name: name.to_string(),
        mean: m,
        se,
        t,
        p_value: p,
        n_periods: n,
    }
}

/// Generic Fama-MacBeth over prepared observations. `names` labels the
/// slope regressors (the intercept is added automatically).
pub fn fmb_estimate(
    observations: &[FmbObservation],
    names: &[String],
    opts: FmbOptions,
) -> Result<FmbResult, FmbError> {
    if observations.is_empty() {
        return Err(FmbError::Empty);
    }
    let mut by_period: BTreeMap<Period, Vec<&FmbObservation>> = BTreeMap::new();
    for o in observations {
        by_period.entry(o.period).or_default().push(o);
    }
    let mut regressors = vec![INTERCEPT.to_string()];
    regressors.extend(names.iter().cloned());
    let k = regressors.len();

    let mut diagnostics = Vec::new();
    let mut periods = Vec::new();
    let mut n_obs = 0;
    for (period, rows) in by_period {
        let complete: Vec<(&FmbObservation, Vec<f64>)> = rows
            .iter()
            .filter_map(|o| {
                let xs: Option<Vec<f64>> = o.regressors.iter().copied().collect();
                xs.map(|xs| (*o, xs))
            })
            .collect();
        if complete.len() < k + 2 {
            diagnostics.push(Diagnostic::new(
                "fama_macbeth",
                format!("{period}: skipped, {} complete rows for {k} coefficients", complete.len()),
            ));
            continue;
        }
        let y: Vec<f64> = complete.iter().map(|(o, _)| o.outcome).collect();
        let cols: Vec<Vec<f64>> = (0..names.len())
            .map(|j| complete.iter().map(|(_, xs)| xs[j]).collect())
            .collect();
        let named: Vec<(&str, &[f64])> = names
            .iter()
            .zip(&cols)
            .map(|(n, c)| (n.as_str(), c.as_slice()))
            .collect();
        match ols(&Design::with_intercept(&named), &y) {
            Ok(fit) => {
                n_obs += fit.n_obs;
                periods.push(PeriodCoefficients {
                    period,
                    pre_cutoff: complete[0].0.pre_cutoff,
                    n_obs: fit.n_obs,
                    coefficients: fit.coefficients,
                });
            }
            Err(e) => diagnostics.push(Diagnostic::new("fama_macbeth", format!("{period}: skipped, {e}"))),
        }
    }

    let era = |pre: bool| -> Vec<&PeriodCoefficients> {
        periods.iter().filter(|p| p.pre_cutoff == pre).collect()
    };
    let (pre_p, post_p) = (era(true), era(false));
    if pre_p.len() < 2 {
        return Err(FmbError::TooFewPeriods { era: "pre-cutoff", found: pre_p.len() });
    }
    if post_p.len() < 2 {
        return Err(FmbError::TooFewPeriods { era: "post-cutoff", found: post_p.len() });
    }
    let column = |set: &[&PeriodCoefficients], j: usize| -> Vec<f64> {
        set.iter().map(|p| p.coefficients[j]).collect()
    };
    let mut pre = Vec::with_capacity(k);
    let mut post = Vec::with_capacity(k);
    let mut equality = Vec::with_capacity(k);
    for (j, name) in regressors.iter().enumerate() {
        let (a, b) = (column(&pre_p, j), column(&post_p, j));
        pre.push(era_estimate(name, &a, opts));
        post.push(era_estimate(name, &b, opts));
        equality.push(EqualityTest {
            name: name.clone(),
            p_value: welch_test(&a, &b).ok().map(|w| w.p_value),
        });
    }
    Ok(FmbResult {
        regressors,
        periods,
        pre,
        post,
        equality,
        n_obs,
        diagnostics,
    })
}

/// Fama-MacBeth of the panel outcome on the blind percentile score, `Diff`
/// and the named controls. Rows without a score pair are dropped; rows
/// missing a control are dropped within their period only.
pub fn fama_macbeth(
    panel: &ObservationPanel,
    pairs: &[ScorePair],
    controls: &[String],
    opts: FmbOptions,
) -> Result<FmbResult, FmbError> {
    let by_key: HashMap<(&str, Period), &ScorePair> =
        pairs.iter().map(|p| ((p.firm_id.as_str(), p.period), p)).collect();
    let observations: Vec<FmbObservation> = panel
        .rows
        .iter()
        .filter_map(|row| {
            let pair = by_key.get(&(row.firm_id.as_str(), row.period))?;
            let mut regressors = vec![Some(pair.blind_pct), Some(pair.diff)];
            regressors.extend(controls.iter().map(|c| row.controls.get(c).copied()));
            Some(FmbObservation {
                period: row.period,
                pre_cutoff: row.pre_cutoff,
                outcome: row.outcome,
                regressors,
            })
        })
        .collect();
    let mut names = vec![BLIND_SCORE.to_string(), DIFF.to_string()];
    names.extend(controls.iter().cloned());
    fmb_estimate(&observations, &names, opts)
}
