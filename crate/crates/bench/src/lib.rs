//! Seeded fixtures shared by the criterion benches.

use goalaudit_core::config::AuditConfig;
use goalaudit_core::period::Period;
use goalaudit_core::regression::{Design, FmbObservation, PanelData, PanelObservation};
use goalaudit_core::synthetic::SimConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` rows, intercept plus `k` regressors, and an outcome.
pub fn ols_problem(n: usize, k: usize) -> (Design, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cols: Vec<(String, Vec<f64>)> = (0..k).map(|j| (format!("x{j}"), draws(&mut rng, n))).collect();
    let refs: Vec<(&str, &[f64])> = cols.iter().map(|(n, c)| (n.as_str(), c.as_slice())).collect();
    let noise = draws(&mut rng, n);
    let y = (0..n).map(|i| cols.iter().map(|c| c.1[i]).sum::<f64>() + noise[i]).collect();
    (Design::with_intercept(&refs), y)
}

/// A firms x periods cross-section sequence with two regressors.
pub fn fmb_problem(firms: usize, periods: usize, cutoff: usize) -> Vec<FmbObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::with_capacity(firms * periods);
    for t in 0..periods {
        for _ in 0..firms {
            let x = draws(&mut rng, 3);
            out.push(FmbObservation {
                period: Period::month(2021, 10).offset(t as i64),
                pre_cutoff: t < cutoff,
                outcome: 0.3 * x[0] + 0.1 * x[1] + x[2],
                regressors: vec![Some(x[0]), Some(x[1])],
            });
        }
    }
    out
}

/// A balanced panel with firm and period effects and two regressors.
pub fn panel_problem(firms: usize, periods: usize) -> PanelData {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fe_f = draws(&mut rng, firms);
    let fe_t = draws(&mut rng, periods);
    let mut rows = Vec::with_capacity(firms * periods);
    for (f, a) in fe_f.iter().enumerate() {
        for (t, b) in fe_t.iter().enumerate() {
            let x = draws(&mut rng, 3);
            rows.push(PanelObservation {
                firm_id: format!("F{f:04}"),
                period: Period::month(2021, 10).offset(t as i64),
                outcome: 0.5 * x[0] - x[1] + a + b + x[2],
                regressors: vec![x[0], x[1]],
            });
        }
    }
    PanelData {
        names: vec!["x1".into(), "x2".into()],
        rows,
        protected: vec![],
    }
}

/// A synthetic audit configuration of the given size.
pub fn synthetic_config(n_firms: usize, n_periods: usize) -> AuditConfig {
    let mut cfg = AuditConfig {
        synthetic: SimConfig {
            n_firms,
            n_periods,
            cutoff_period: n_periods * 2 / 3,
            ..SimConfig::default()
        },
        ..AuditConfig::default()
    };
    cfg.analysis.r2_floor = Some(-1.0);
    cfg
}
