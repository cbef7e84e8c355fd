//! Least squares, Fama-MacBeth, coefficient equality tests and fixed-effects
//! panel regression.

mod fmb;
mod ols;
mod panel;
mod welch;

pub use fmb::{
    fama_macbeth, fmb_estimate, EqualityTest, EraEstimate, FmbError, FmbObservation, FmbOptions, FmbResult,
    PeriodCoefficients, BLIND_SCORE, DIFF,
};
pub use ols::{ols, Design, OlsError, OlsFit, INTERCEPT};
pub use panel::{
    panel_fe, ClusterDim, FixedEffects, PanelCoefficient, PanelData, PanelError, PanelFeResult, PanelObservation,
};
pub use welch::{test_coef_equality, welch_test, EqualityError, WelchTest};
