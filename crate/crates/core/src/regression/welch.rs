use crate::stats::{mean, sample_variance, t_two_sided_p};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum EqualityError {
    #[error("each series needs at least 2 observations")]
    TooShort,
    #[error("both series have zero variance and different means")]
    DegenerateVariance,
}

/// Two-sample Welch t-test of equal means, two-sided.
///
/// Two constant series at the same level report `p = 1`.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchTest, EqualityError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EqualityError::TooShort);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    if se2 <= 0.0 {
        return if ma == mb {
            Ok(WelchTest { statistic: 0.0, df: na + nb - 2.0, p_value: 1.0 })
        } else {
            Err(EqualityError::DegenerateVariance)
        };
    }
    let statistic = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(WelchTest {
        statistic,
        df,
        p_value: t_two_sided_p(statistic, df),
    })
}

/// Period-coefficient equality test as reported under each FMB table.
pub fn test_coef_equality(pre: &[f64], post: &[f64]) -> Result<f64, EqualityError> {
    welch_test(pre, post).map(|w| w.p_value)
}
