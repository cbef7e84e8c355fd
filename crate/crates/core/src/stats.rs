//! Small statistics helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with `n - 1` in the denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    dist.sf(t).clamp(0.0, 1.0)
}

pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    (2.0 * t_upper_tail(t.abs(), df)).min(1.0)
}

/// Significance stars: `***` 1%, `**` 5%, `*` 10%.
pub fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.01 => "***",
        Some(p) if p < 0.05 => "**",
        Some(p) if p < 0.10 => "*",
        _ => "",
    }
}

/// Newey-West long-run variance of the mean with Bartlett weights.
pub fn newey_west_variance_of_mean(xs: &[f64], lags: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let gamma = |l: usize| d[l..].iter().zip(&d[..n - l]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut s = gamma(0);
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        s += 2.0 * w * gamma(l);
    }
    // Scaled so that lags = 0 reproduces the plain sample variance / n.
    s * n as f64 / (n as f64 - 1.0) / n as f64
}
