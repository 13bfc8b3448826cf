//! Core sample and fit types shared by every solver in the crate.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// A regression sample: response vector `y` and model matrix `x` with one
/// row per sample. An intercept, if wanted, is an explicit all-ones column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    row_ids: Vec<u64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Dataset> {
        let n = y.len();
        let ids = (0..n as u64).collect();
        Dataset::with_row_ids(y, x, ids)
    }

    pub fn with_row_ids(y: DVector<f64>, x: DMatrix<f64>, row_ids: Vec<u64>) -> Result<Dataset> {
        let n = y.len();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("model matrix needs at least one column"));
        }
        if x.nrows() != n {
            return Err(Error::invalid(format!(
                "model matrix has {} rows but y has {} entries",
                x.nrows(),
                n
            )));
        }
        if row_ids.len() != n {
            return Err(Error::invalid("row_ids length must match sample count"));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset entries must be finite"));
        }
        Ok(Dataset { y, x, row_ids })
    }

    /// Convenience constructor from plain slices of rows.
    pub fn from_rows(y: &[f64], rows: &[Vec<f64>]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged model matrix rows"));
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Dataset::new(DVector::from_column_slice(y), x)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    /// Residual vector `y - X beta`.
    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    /// Rows restricted to `subset`, preserving ids.
    pub fn subset(&self, subset: &[usize]) -> Result<Dataset> {
        if subset.is_empty() {
            return Err(Error::invalid("subset must be nonempty"));
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!("subset index {bad} out of range")));
        }
        let y = DVector::from_fn(subset.len(), |i, _| self.y[subset[i]]);
        let x = DMatrix::from_fn(subset.len(), self.p(), |i, j| self.x[(subset[i], j)]);
        let ids = subset.iter().map(|&i| self.row_ids[i]).collect();
        Dataset::with_row_ids(y, x, ids)
    }
}

/// Which estimator produced a [`FitResult`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitKind {
    LeastSquares,
    Lad,
    Chebyshev,
    Lqs,
}

/// Coefficients, residuals and the objective value of one fit.
/// The meaning of `objective` depends on `kind`.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub objective: f64,
    pub kind: FitKind,
    /// Per-iteration objective values for iterative solvers, else empty.
    pub trace: Vec<f64>,
    /// Set when the model matrix was found rank deficient and a
    /// minimum-norm solution was returned instead.
    pub rank_deficient: bool,
}

impl FitResult {
    pub fn new(data: &Dataset, beta: DVector<f64>, objective: f64, kind: FitKind) -> FitResult {
        let residuals = data.residuals(&beta);
        FitResult {
            beta,
            residuals,
            objective,
            kind,
            trace: Vec::new(),
            rank_deficient: false,
        }
    }
}

/// Order-statistic index `q` (one-based) into the sorted absolute residuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantileSpec {
    q: usize,
}

impl QuantileSpec {
    pub fn new(q: usize, n: usize) -> Result<QuantileSpec> {
        if q == 0 || q > n {
            return Err(Error::invalid(format!("q = {q} outside 1..={n}")));
        }
        Ok(QuantileSpec { q })
    }

    /// The choice maximizing the estimator's breakdown point,
    /// `floor(n/2) + floor((p+1)/2)`.
    pub fn max_breakdown(n: usize, p: usize) -> Result<QuantileSpec> {
        QuantileSpec::new(n / 2 + (p + 1) / 2, n)
    }

    pub fn q(&self) -> usize {
        self.q
    }
}
