//! Panel regression with firm and/or time fixed effects and clustered
//! standard errors.
//!
//! Fixed effects are swept out by alternating demeaning until the largest
//! change in a sweep falls below the tolerance. Regressors that vanish under
//! the within transformation are absorbed and dropped with a report.

use super::ols::{ols, Design, OlsError};
use crate::diag::Diagnostic;
use crate::period::Period;
use crate::stats::t_two_sided_p;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

const DEMEAN_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100_000;
const ABSORB_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PanelObservation {
    pub firm_id: String,
    pub period: Period,
    pub outcome: f64,
    /// Aligned with [`PanelData::names`].
    pub regressors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelData {
    pub names: Vec<String>,
    pub rows: Vec<PanelObservation>,
    /// Terms whose absorption is an error rather than a dropped column.
    pub protected: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffects {
    pub firm: bool,
    pub time: bool,
}

impl FixedEffects {
    pub const NONE: Self = Self { firm: false, time: false };
    pub const TIME: Self = Self { firm: false, time: true };
    pub const FIRM_TIME: Self = Self { firm: true, time: true };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterDim {
    /// Homoskedastic errors with the fixed-effect dummies counted in the
    /// degrees of freedom.
    None,
    #[default]
    Firm,
    Time,
    /// Two-way clustering: firm + time minus their intersection.
    FirmTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCoefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelFeResult {
    pub fixed_effects: FixedEffects,
    pub cluster: ClusterDim,
    pub coefficients: Vec<PanelCoefficient>,
    /// Terms absorbed by the fixed effects (or collinear after demeaning).
    pub dropped: Vec<String>,
    pub n_obs: usize,
    pub n_firms: usize,
    pub n_periods: usize,
    /// Number of clusters used for the p-value degrees of freedom.
    pub n_clusters: Option<usize>,
    pub within_r_squared: f64,
    pub diagnostics: Vec<Diagnostic>,
}

impl PanelFeResult {
    pub fn coefficient(&self, name: &str) -> Option<&PanelCoefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PanelError {
    #[error("panel has no observations")]
    Empty,
    #[error("term `{0}` is absorbed by the fixed effects")]
    Absorbed(String),
    #[error("empty cell: {0}")]
    EmptyCell(String),
    #[error("no regressor survives the within transformation")]
    NothingIdentified,
    #[error("fixed-effect demeaning did not converge in {0} sweeps")]
    NoConvergence(usize),
    #[error(transparent)]
    Ols(#[from] OlsError),
}

fn group_index<K: Ord + Clone>(keys: impl Iterator<Item = K>) -> (Vec<usize>, usize) {
    let keys: Vec<K> = keys.collect();
    let mut ids: BTreeMap<K, usize> = BTreeMap::new();
    for k in &keys {
        let n = ids.len();
        ids.entry(k.clone()).or_insert(n);
    }
    (keys.iter().map(|k| ids[k]).collect(), ids.len())
}

fn subtract_group_means(v: &mut [f64], groups: &[usize], n_groups: usize) -> f64 {
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (x, &g) in v.iter().zip(groups) {
        sum[g] += x;
        count[g] += 1;
    }
    let mut max_change = 0.0f64;
    for (x, &g) in v.iter_mut().zip(groups) {
        let m = sum[g] / count[g] as f64;
        *x -= m;
        max_change = max_change.max(m.abs());
    }
    max_change
}

/// Within transformation of one column in place.
fn demean(v: &mut [f64], firms: &(Vec<usize>, usize), times: &(Vec<usize>, usize), fe: FixedEffects) -> Result<(), PanelError> {
    let n = v.len();
    match (fe.firm, fe.time) {
        (false, false) => {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
        (true, false) => {
            subtract_group_means(v, &firms.0, firms.1);
        }
        (false, true) => {
            subtract_group_means(v, &times.0, times.1);
        }
        (true, true) => {
            let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
            let mut sweeps = 0;
            loop {
                let a = subtract_group_means(v, &firms.0, firms.1);
                let b = subtract_group_means(v, &times.0, times.1);
                sweeps += 1;
                if a.max(b) <= DEMEAN_TOL * scale {
                    break;
                }
                if sweeps >= MAX_SWEEPS {
                    return Err(PanelError::NoConvergence(sweeps));
                }
            }
        }
    }
    Ok(())
}

/// Number of independent fixed-effect dummies, counting the intercept. Two-way
/// effects lose one dimension per connected component of the firm-period graph.
fn absorbed_rank(firms: &(Vec<usize>, usize), times: &(Vec<usize>, usize), fe: FixedEffects) -> usize {
    match (fe.firm, fe.time) {
        (false, false) => 1,
        (true, false) => firms.1,
        (false, true) => times.1,
        (true, true) => {
            let mut parent: Vec<usize> = (0..firms.1 + times.1).collect();
            fn root(parent: &mut [usize], mut i: usize) -> usize {
                while parent[i] != i {
                    parent[i] = parent[parent[i]];
                    i = parent[i];
                }
                i
            }
            for (&f, &t) in firms.0.iter().zip(&times.0) {
                let (a, b) = (root(&mut parent, f), root(&mut parent, firms.1 + t));
                parent[a] = b;
            }
            let components = (0..parent.len()).filter(|&i| root(&mut parent, i) == i).count();
            firms.1 + times.1 - components
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sandwich `(X'X)^-1 (sum_g X_g' e_g e_g' X_g) (X'X)^-1` with the CR1
/// small-sample factor.
fn cluster_vcov(x: &DMatrix<f64>, e: &[f64], xtx_inv: &DMatrix<f64>, clusters: &[usize], n_clusters: usize) -> DMatrix<f64> {
    let (n, k) = (x.nrows(), x.ncols());
    let mut scores = DMatrix::<f64>::zeros(n_clusters, k);
    for i in 0..n {
        for j in 0..k {
            scores[(clusters[i], j)] += x[(i, j)] * e[i];
        }
    }
    let meat = scores.transpose() * &scores;
    let g = n_clusters as f64;
    let factor = if n_clusters > 1 && n > k {
        g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64)
    } else {
        1.0
    };
    xtx_inv * meat * xtx_inv * factor
}

/// Fixed-effects regression of the outcome on the named regressors.
pub fn panel_fe(data: &PanelData, fe: FixedEffects, cluster: ClusterDim) -> Result<PanelFeResult, PanelError> {
    let n = data.rows.len();
    if n == 0 {
        return Err(PanelError::Empty);
    }
    let firms = group_index(data.rows.iter().map(|r| r.firm_id.clone()));
    let times = group_index(data.rows.iter().map(|r| r.period));

    let mut y: Vec<f64> = data.rows.iter().map(|r| r.outcome).collect();
    demean(&mut y, &firms, &times, fe)?;

    let mut diagnostics = Vec::new();
    let mut dropped = Vec::new();
    let mut kept: Vec<(String, Vec<f64>)> = Vec::new();
    for (j, name) in data.names.iter().enumerate() {
        let raw: Vec<f64> = data.rows.iter().map(|r| r.regressors[j]).collect();
        let raw_norm = norm(&raw);
        let mut col = raw;
        demean(&mut col, &firms, &times, fe)?;
        if raw_norm == 0.0 || norm(&col) <= ABSORB_TOL * raw_norm {
            if data.protected.contains(name) {
                return Err(PanelError::Absorbed(name.clone()));
            }
            diagnostics.push(Diagnostic::new("panel_fe", format!("`{name}` absorbed by fixed effects; dropped")));
            dropped.push(name.clone());
        } else {
            kept.push((name.clone(), col));
        }
    }

    // More slopes than residual dimensions: the surplus columns are exactly
    // collinear, whatever rounding noise the demeaning left behind.
    let absorbed = absorbed_rank(&firms, &times, fe);
    let room = n.saturating_sub(absorbed);
    while kept.len() > room {
        let (victim, _) = kept.pop().expect("non-empty");
        if data.protected.contains(&victim) {
            return Err(PanelError::Absorbed(victim));
        }
        diagnostics.push(Diagnostic::new("panel_fe", format!("`{victim}` not identified with {n} observations; dropped")));
        dropped.push(victim);
    }

    // Collinearity that only appears after demeaning is resolved by dropping
    // the offending columns one at a time.
    let fit = loop {
        if kept.is_empty() {
            return Err(PanelError::NothingIdentified);
        }
        let cols: Vec<(&str, &[f64])> = kept.iter().map(|(n, c)| (n.as_str(), c.as_slice())).collect();
        match ols(&Design::from_columns(&cols), &y) {
            Ok(fit) => break fit,
            Err(OlsError::Singular { dependent }) => {
                let victim = dependent.last().cloned().unwrap_or_default();
                if data.protected.contains(&victim) {
                    return Err(PanelError::Absorbed(victim));
                }
                diagnostics.push(Diagnostic::new("panel_fe", format!("`{victim}` collinear after demeaning; dropped")));
                dropped.push(victim.clone());
                kept.retain(|(n, _)| *n != victim);
            }
            Err(e) => return Err(e.into()),
        }
    };

    let k = kept.len();
    let x = DMatrix::from_fn(n, k, |i, j| kept[j].1[i]);
    let e = &fit.residuals;
    let ssr = fit.ssr();
    let (vcov, n_clusters) = match cluster {
        ClusterDim::None => {
            let dof = n as f64 - (k + absorbed) as f64;
            let s2 = if dof > 0.0 { ssr / dof } else { f64::NAN };
            (&fit.xtx_inv * s2, None)
        }
        ClusterDim::Firm => (cluster_vcov(&x, e, &fit.xtx_inv, &firms.0, firms.1), Some(firms.1)),
        ClusterDim::Time => (cluster_vcov(&x, e, &fit.xtx_inv, &times.0, times.1), Some(times.1)),
        ClusterDim::FirmTime => {
            let both = group_index(data.rows.iter().map(|r| (r.firm_id.clone(), r.period)));
            let vf = cluster_vcov(&x, e, &fit.xtx_inv, &firms.0, firms.1);
            let vt = cluster_vcov(&x, e, &fit.xtx_inv, &times.0, times.1);
            let vft = cluster_vcov(&x, e, &fit.xtx_inv, &both.0, both.1);
            let mut v = &vf + &vt - &vft;
            for j in 0..k {
                if v[(j, j)] < 0.0 {
                    diagnostics.push(Diagnostic::new(
                        "panel_fe",
                        format!("two-way variance for `{}` not positive; using the larger one-way variance", kept[j].0),
                    ));
                    v[(j, j)] = vf[(j, j)].max(vt[(j, j)]);
                }
            }
            (v, Some(firms.1.min(times.1)))
        }
    };

    let df = match n_clusters {
        Some(g) => g as f64 - 1.0,
        None => n as f64 - k as f64,
    };
    let coefficients = kept
        .iter()
        .enumerate()
        .map(|(j, (name, _))| {
            let estimate = fit.coefficients[j];
            let se = vcov[(j, j)].max(0.0).sqrt();
            let (t, p_value) = if se > 0.0 && df > 0.0 {
                let t = estimate / se;
                (Some(t), Some(t_two_sided_p(t, df)))
            } else {
                (None, None)
            };
            PanelCoefficient {
                name: name.clone(),
                estimate,
                se,
                t,
                p_value,
            }
        })
        .collect();

    let sst: f64 = y.iter().map(|v| v * v).sum();
    let within_r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    Ok(PanelFeResult {
        fixed_effects: fe,
        cluster,
        coefficients,
        dropped,
        n_obs: n,
        n_firms: firms.1,
        n_periods: times.1,
        n_clusters,
        within_r_squared,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn dense_least_squares(x: &DMatrix<f64>, y: &[f64]) -> Option<DVector<f64>> {
        let xtx = x.transpose() * x;
        let xty = x.transpose() * DVector::from_column_slice(y);
        xtx.lu().solve(&xty)
    }

    fn row(firm: &str, t: i64, y: f64, xs: &[f64]) -> PanelObservation {
        PanelObservation {
            firm_id: firm.to_string(),
            period: Period::month(2023, 1).offset(t),
            outcome: y,
            regressors: xs.to_vec(),
        }
    }

    #[test]
    fn two_by_two_did_without_fixed_effects() {
        // cells: (aware, post) -> outcomes
        let cells = [
            ((0.0, 0.0), [1.0, 2.0]),
            ((1.0, 0.0), [4.0, 5.0]),
            ((0.0, 1.0), [2.0, 4.0]),
            ((1.0, 1.0), [3.0, 4.0]),
        ];
        let mut rows = Vec::new();
        let mut i = 0;
        for ((a, p), ys) in cells {
            for y in ys {
                rows.push(row(&format!("f{i}"), p as i64, y, &[a * p, a, p]));
                i += 1;
            }
        }
        let data = PanelData {
            names: vec!["aware_x_post".into(), "aware".into(), "post".into()],
            rows,
            protected: vec![],
        };
        let r = panel_fe(&data, FixedEffects::NONE, ClusterDim::None).unwrap();
        // (3.5 - 3) - (4.5 - 1.5) = -2.5
        assert!((r.coefficient("aware_x_post").unwrap().estimate + 2.5).abs() < 1e-12);
    }

    #[test]
    fn time_effects_absorb_post() {
        let mut rows = Vec::new();
        for f in 0..4 {
            for t in 0..4 {
                let aware = (f % 2) as f64;
                let post = (t >= 2) as u8 as f64;
                let y = 0.3 * f as f64 - 0.2 * t as f64 + aware * post + ((f * 7 + t * 3) % 5) as f64 * 0.1;
                rows.push(row(&format!("f{f}"), t, y, &[aware * post, aware, post]));
            }
        }
        let data = PanelData {
            names: vec!["aware_x_post".into(), "aware".into(), "post".into()],
            rows,
            protected: vec!["aware_x_post".into()],
        };
        let r = panel_fe(&data, FixedEffects::TIME, ClusterDim::Firm).unwrap();
        assert_eq!(r.dropped, vec!["post".to_string()]);
        assert!(r.coefficient("post").is_none());
        let r = panel_fe(&data, FixedEffects::FIRM_TIME, ClusterDim::Firm).unwrap();
        assert_eq!(r.dropped, vec!["aware".to_string(), "post".to_string()]);
        assert!(r.coefficient("aware_x_post").is_some());
    }

    #[test]
    fn absorbed_protected_term_is_error() {
        let rows: Vec<_> = (0..6).map(|i| row(&format!("f{}", i % 3), i / 3, i as f64, &[(i % 3) as f64])).collect();
        let data = PanelData {
            names: vec!["x".into()],
            rows,
            protected: vec!["x".into()],
        };
        assert_eq!(
            panel_fe(&data, FixedEffects::FIRM_TIME, ClusterDim::Firm).unwrap_err(),
            PanelError::Absorbed("x".into())
        );
    }

    #[test]
    fn matches_dummy_variable_ols_unbalanced() {
        let mut rows = Vec::new();
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for f in 0..5 {
            for t in 0..5 {
                if (f + 2 * t) % 7 == 3 {
                    continue;
                }
                let x1 = next();
                let x2 = next();
                rows.push(row(&format!("f{f}"), t, x1 - 2.0 * x2 + f as f64 + 0.5 * t as f64 + next(), &[x1, x2]));
            }
        }
        let data = PanelData {
            names: vec!["x1".into(), "x2".into()],
            rows: rows.clone(),
            protected: vec![],
        };
        let r = panel_fe(&data, FixedEffects::FIRM_TIME, ClusterDim::None).unwrap();
        // Dummy design: x1, x2, 5 firm dummies, time dummies for t = 1..4.
        let n = rows.len();
        let x = DMatrix::from_fn(n, 11, |i, j| {
            let r = &rows[i];
            let f: usize = r.firm_id[1..].parse().unwrap();
            let t = (r.period.ordinal() - Period::month(2023, 1).ordinal()) as usize;
            match j {
                0 | 1 => r.regressors[j],
                2..=6 => (f == j - 2) as u8 as f64,
                _ => (t == j - 6) as u8 as f64,
            }
        });
        let y: Vec<f64> = rows.iter().map(|r| r.outcome).collect();
        let b = dense_least_squares(&x, &y).unwrap();
        assert!((r.coefficient("x1").unwrap().estimate - b[0]).abs() < 1e-8);
        assert!((r.coefficient("x2").unwrap().estimate - b[1]).abs() < 1e-8);
    }

    #[test]
    fn outcome_shift_leaves_slopes() {
        let rows: Vec<_> = (0..12)
            .map(|i| row(&format!("f{}", i % 4), i / 4, (i * i % 5) as f64, &[((i * 3) % 7) as f64]))
            .collect();
        let shifted: Vec<_> = rows
            .iter()
            .map(|r| PanelObservation { outcome: r.outcome + 100.0, ..r.clone() })
            .collect();
        for fe in [FixedEffects::NONE, FixedEffects::TIME, FixedEffects::FIRM_TIME] {
            let a = panel_fe(&PanelData { names: vec!["x".into()], rows: rows.clone(), protected: vec![] }, fe, ClusterDim::Firm).unwrap();
            let b = panel_fe(&PanelData { names: vec!["x".into()], rows: shifted.clone(), protected: vec![] }, fe, ClusterDim::Firm).unwrap();
            assert!((a.coefficients[0].estimate - b.coefficients[0].estimate).abs() < 1e-10);
        }
    }

    #[test]
    fn surplus_slopes_dropped_when_effects_leave_no_room() {
        // 6 rows, 3 firms, 3 periods, one connected graph: 5 absorbed
        // dimensions leave room for a single slope.
        let rows = vec![
            row("a", 0, 0.4, &[0.3, -0.2]),
            row("a", 1, 0.1, &[0.9, 0.5]),
            row("a", 2, 0.2, &[-0.4, 0.1]),
            row("b", 0, 0.3, &[0.2, 0.7]),
            row("b", 1, -0.5, &[0.6, -0.3]),
            row("c", 0, 0.6, &[-0.1, 0.2]),
        ];
        let data = PanelData { names: vec!["x1".into(), "x2".into()], rows, protected: vec![] };
        let fit = panel_fe(&data, FixedEffects::FIRM_TIME, ClusterDim::Firm).unwrap();
        assert_eq!(fit.dropped, vec!["x2".to_string()]);
        assert_eq!(fit.coefficients.len(), 1);
        assert_eq!(absorbed_rank(&group_index(["a", "b"].into_iter()), &group_index([0, 1].into_iter()), FixedEffects::FIRM_TIME), 2);
    }
}
