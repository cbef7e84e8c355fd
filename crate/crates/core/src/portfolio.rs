//! Quintile sorts, equal-weighted long-short spreads, cumulative curves and
//! the spread test battery.

use crate::diag::Diagnostic;
use crate::period::Period;
use crate::prompting::Regime;
use crate::stats::{mean, sample_variance, t_upper_tail};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PortfolioError {
    #[error("{period}: {n} firms cannot fill five quintiles")]
    TooFewFirms { period: Period, n: usize },
    #[error("spread series is empty")]
    EmptySeries,
    #[error("{era} era has {found} common periods; at least 2 are required")]
    TooFewPeriods { era: &'static str, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileAssignment {
    pub period: Period,
    pub regime: Regime,
    /// Quintile 1 (lowest scores) through 5 (highest).
    pub members: BTreeMap<String, u8>,
}

impl QuintileAssignment {
    pub fn quintile(&self, q: u8) -> impl Iterator<Item = &str> {
        self.members.iter().filter(move |(_, &v)| v == q).map(|(k, _)| k.as_str())
    }
}

/// Group sizes bottom to top; the remainder goes to the top groups.
pub fn quintile_sizes(n: usize) -> [usize; 5] {
    let (base, rem) = (n / 5, n % 5);
    std::array::from_fn(|g| base + usize::from(g >= 5 - rem))
}

/// Sorts ascending by `(score, firm_id)` and cuts into five contiguous groups.
pub fn assign_quintiles(
    period: Period,
    regime: Regime,
    scores: &[(String, f64)],
) -> Result<QuintileAssignment, PortfolioError> {
    if scores.len() < 5 {
        return Err(PortfolioError::TooFewFirms { period, n: scores.len() });
    }
    let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut members = BTreeMap::new();
    let mut it = sorted.into_iter();
    for (g, size) in quintile_sizes(scores.len()).into_iter().enumerate() {
        for (firm, _) in it.by_ref().take(size) {
            members.insert(firm.clone(), g as u8 + 1);
        }
    }
    Ok(QuintileAssignment { period, regime, members })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongShortPoint {
    pub period: Period,
    pub high_mean: f64,
    pub low_mean: f64,
    /// `high_mean - low_mean`.
    pub spread: f64,
    pub n_high: usize,
    pub n_low: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongShortSeries {
    pub regime: Regime,
    pub points: Vec<LongShortPoint>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Equal-weighted Q5 minus Q1 per period. Firms without a return are dropped
/// from their leg; a leg left empty excludes the period.
pub fn long_short_returns(
    regime: Regime,
    assignments: &[QuintileAssignment],
    returns: &HashMap<(String, Period), f64>,
) -> LongShortSeries {
    let mut points = Vec::new();
    let mut diagnostics = Vec::new();
    let mut sorted: Vec<&QuintileAssignment> = assignments.iter().collect();
    sorted.sort_by_key(|a| a.period);
    for a in sorted {
        let leg = |q: u8| -> Vec<f64> {
            a.quintile(q)
                .filter_map(|f| returns.get(&(f.to_string(), a.period)).copied())
                .collect()
        };
        let (high, low) = (leg(5), leg(1));
        if high.is_empty() || low.is_empty() {
            diagnostics.push(Diagnostic::new(
                "long_short_returns",
                format!("{}: {} leg has no returns; period excluded", a.period, if high.is_empty() { "high" } else { "low" }),
            ));
            continue;
        }
        let (high_mean, low_mean) = (mean(&high), mean(&low));
        points.push(LongShortPoint {
            period: a.period,
            high_mean,
            low_mean,
            spread: high_mean - low_mean,
            n_high: high.len(),
            n_low: low.len(),
        });
    }
    LongShortSeries {
        regime,
        points,
        diagnostics,
    }
}

/// Sorts each period's scores into quintiles, skipping (with a diagnostic)
/// periods with fewer than five firms.
pub fn sort_all_periods(
    regime: Regime,
    scores: &BTreeMap<Period, Vec<(String, f64)>>,
) -> (Vec<QuintileAssignment>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    for (&period, s) in scores {
        match assign_quintiles(period, regime, s) {
            Ok(a) => out.push(a),
            Err(e) => diags.push(Diagnostic::new("assign_quintiles", format!("{e}; period excluded"))),
        }
    }
    (out, diags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub period: Period,
    pub value: f64,
    pub post_cutoff: bool,
}

/// Compounded growth of `1 + spread`, restarted at the cutoff: post-cutoff
/// values are divided by the last pre-cutoff cumulative value.
pub fn cumulative_curve(series: &LongShortSeries, cutoff: NaiveDate) -> Result<Vec<CurvePoint>, PortfolioError> {
    if series.points.is_empty() {
        return Err(PortfolioError::EmptySeries);
    }
    let mut level = 1.0;
    let mut base = 1.0;
    let mut out = Vec::with_capacity(series.points.len());
    for p in &series.points {
        let post_cutoff = !p.period.is_pre_cutoff(cutoff);
        level *= 1.0 + p.spread;
        if !post_cutoff {
            base = level;
        }
        out.push(CurvePoint {
            period: p.period,
            value: if post_cutoff { level / base } else { level },
            post_cutoff,
        });
    }
    Ok(out)
}

/// One-sided test of a mean against zero, alternative `mean > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedTest {
    pub mean: f64,
    /// `None` when the series has zero variance and a non-zero mean.
    pub t: Option<f64>,
    pub p_value: f64,
    pub n: usize,
    /// Zero-variance series; `p_value` is 0 or 1 by the sign of the mean.
    pub degenerate: bool,
}

pub fn one_sided_t_test(xs: &[f64]) -> OneSidedTest {
    let n = xs.len();
    let m = mean(xs);
    let se = (sample_variance(xs) / n as f64).sqrt();
    if se > 0.0 {
        let t = m / se;
        return OneSidedTest {
            mean: m,
            t: Some(t),
            p_value: t_upper_tail(t, n as f64 - 1.0),
            n,
            degenerate: false,
        };
    }
    let (t, p_value) = if m > 0.0 {
        (None, 0.0)
    } else if m < 0.0 {
        (None, 1.0)
    } else {
        (Some(0.0), 0.5)
    };
    OneSidedTest {
        mean: m,
        t,
        p_value,
        n,
        degenerate: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Era {
    Pre,
    Post,
}

impl Era {
    pub fn label(self) -> &'static str {
        match self {
            Era::Pre => "Pre-Cutoff",
            Era::Post => "Post-Cutoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCell {
    pub regime: Regime,
    pub mean_high: f64,
    pub mean_low: f64,
    pub spread: OneSidedTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraPanel {
    pub era: Era,
    pub aware: RegimeCell,
    pub blind: RegimeCell,
    /// Paired test of aware minus blind spreads.
    pub difference: OneSidedTest,
    pub periods: Vec<Period>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadTestReport {
    pub pre: EraPanel,
    pub post: EraPanel,
    pub diagnostics: Vec<Diagnostic>,
}

/// Table-style spread tests on the periods both series share.
pub fn spread_tests(
    aware: &LongShortSeries,
    blind: &LongShortSeries,
    cutoff: NaiveDate,
) -> Result<SpreadTestReport, PortfolioError> {
    let index = |s: &LongShortSeries| -> BTreeMap<Period, LongShortPoint> {
        s.points.iter().map(|p| (p.period, p.clone())).collect()
    };
    let (a, b) = (index(aware), index(blind));
    let common: BTreeSet<Period> = a.keys().filter(|p| b.contains_key(p)).copied().collect();
    let mut diagnostics = Vec::new();
    let unpaired = a.len() + b.len() - 2 * common.len();
    if unpaired > 0 {
        diagnostics.push(Diagnostic::new(
            "spread_tests",
            format!("{unpaired} periods present in one regime only; excluded"),
        ));
    }
    let panel = |era: Era| -> Result<EraPanel, PortfolioError> {
        let periods: Vec<Period> = common
            .iter()
            .copied()
            .filter(|p| p.is_pre_cutoff(cutoff) == (era == Era::Pre))
            .collect();
        if periods.len() < 2 {
            return Err(PortfolioError::TooFewPeriods {
                era: if era == Era::Pre { "pre-cutoff" } else { "post-cutoff" },
                found: periods.len(),
            });
        }
        let cell = |m: &BTreeMap<Period, LongShortPoint>, regime| {
            let pts: Vec<&LongShortPoint> = periods.iter().map(|p| &m[p]).collect();
            let col = |f: fn(&LongShortPoint) -> f64| pts.iter().map(|p| f(p)).collect::<Vec<_>>();
            RegimeCell {
                regime,
                mean_high: mean(&col(|p| p.high_mean)),
                mean_low: mean(&col(|p| p.low_mean)),
                spread: one_sided_t_test(&col(|p| p.spread)),
            }
        };
        let diffs: Vec<f64> = periods.iter().map(|p| a[p].spread - b[p].spread).collect();
        Ok(EraPanel {
            era,
            aware: cell(&a, Regime::GoalAware),
            blind: cell(&b, Regime::GoalBlind),
            difference: one_sided_t_test(&diffs),
            periods,
        })
    };
    let (pre, post) = (panel(Era::Pre)?, panel(Era::Post)?);
    for p in [&pre, &post] {
        for (what, t) in [("goal-aware spread", &p.aware.spread), ("goal-blind spread", &p.blind.spread), ("spread difference", &p.difference)] {
            if t.degenerate && t.mean != 0.0 {
                diagnostics.push(Diagnostic::new(
                    "spread_tests",
                    format!("{} {what} has zero variance; p-value is exact", p.era.label()),
                ));
            }
        }
    }
    Ok(SpreadTestReport { pre, post, diagnostics })
}
