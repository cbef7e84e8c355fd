use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const INTERCEPT: &str = "intercept";

/// A named design matrix, one column per regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OlsError {
    #[error("{n_obs} observations cannot identify {n_cols} coefficients")]
    TooFewObservations { n_obs: usize, n_cols: usize },
    #[error("design is rank deficient; linearly dependent columns: {}", dependent.join(", "))]
    Singular { dependent: Vec<String> },
    #[error("non-finite value in design or outcome")]
    NonFinite,
    #[error("outcome has {got} rows, design has {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

impl Design {
    pub fn from_columns(columns: &[(&str, &[f64])]) -> Self {
        let n = columns.first().map_or(0, |c| c.1.len());
        assert!(columns.iter().all(|c| c.1.len() == n), "ragged design columns");
        let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j].1[i]);
        Self {
            names: columns.iter().map(|c| c.0.to_string()).collect(),
            matrix,
        }
    }

    /// Prepends a column of ones named [`INTERCEPT`]. Needs at least one
    /// column to know the row count.
    pub fn with_intercept(columns: &[(&str, &[f64])]) -> Self {
        let n = columns.first().map_or(0, |c| c.1.len());
        let ones = vec![1.0; n];
        let mut all: Vec<(&str, &[f64])> = vec![(INTERCEPT, &ones)];
        all.extend_from_slice(columns);
        Self::from_columns(&all)
    }

    pub fn from_matrix(names: Vec<String>, matrix: DMatrix<f64>) -> Self {
        assert_eq!(names.len(), matrix.ncols());
        Self { names, matrix }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_obs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Homoskedastic standard errors; NaN when there are no residual degrees
    /// of freedom.
    pub standard_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Centered R-squared.
    pub r_squared: f64,
    pub n_obs: usize,
    /// `(X'X)^{-1}`, kept for sandwich covariance estimators.
    pub xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn ssr(&self) -> f64 {
        self.residuals.iter().map(|e| e * e).sum()
    }
}

const RANK_TOL: f64 = 1e-10;

/// Least squares via Householder QR. Rank deficiency is detected from the
/// diagonal of R: a column whose component orthogonal to the preceding
/// columns is negligible relative to its own norm is reported as dependent.
pub fn ols(design: &Design, y: &[f64]) -> Result<OlsFit, OlsError> {
    let (n, k) = (design.n_obs(), design.n_cols());
    if y.len() != n {
        return Err(OlsError::LengthMismatch { expected: n, got: y.len() });
    }
    if n < k || k == 0 {
        return Err(OlsError::TooFewObservations { n_obs: n, n_cols: k });
    }
    let x = &design.matrix;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite);
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..k)
        .filter(|&j| {
            let col_norm = x.column(j).norm();
            col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm
        })
        .map(|j| design.names[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(OlsError::Singular { dependent });
    }

    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, k).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| OlsError::Singular { dependent: design.names.clone() })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| OlsError::Singular { dependent: design.names.clone() })?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let fitted = x * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let dof = n - k;
    let sigma2 = if dof > 0 { ssr / dof as f64 } else { f64::NAN };
    let standard_errors = (0..k).map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt()).collect();

    Ok(OlsFit {
        names: design.names.clone(),
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        residuals,
        r_squared,
        n_obs: n,
        xtx_inv,
    })
}
