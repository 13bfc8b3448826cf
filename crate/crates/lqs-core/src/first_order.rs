//! Fixed-step subdifferential descent on the LQS objective `f_q`.
//!
//! The iteration is `beta_{k+1} = beta_k - alpha * g_k` with
//! `g_k = -sgn(r_(q)) x_(q)`, the subdifferential element picked at the
//! sample attaining the q-th ordered absolute residual. The method keeps
//! the best iterate visited, not the last one.

use crate::data::{Dataset, FitKind, FitResult, QuantileSpec};
use crate::error::{Error, Result};
use crate::fits::{index_of_order_stat, lqs_objective};
use nalgebra::DVector;

/// Step-size rule for the descent loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// `1 / max_i ||x_i||_2`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug)]
pub struct FirstOrderConfig {
    pub max_iter: usize,
    pub step_size: StepSize,
    pub record_trace: bool,
}

impl Default for FirstOrderConfig {
    fn default() -> Self {
        FirstOrderConfig {
            max_iter: 500,
            step_size: StepSize::Auto,
            record_trace: false,
        }
    }
}

impl FirstOrderConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid("explicit step size must be positive"));
            }
        }
        Ok(())
    }
}

/// The fixed step `1 / max_i ||x_i||_2`.
pub fn auto_step_size(data: &Dataset) -> f64 {
    let max_norm = (0..data.n())
        .map(|i| data.x().row(i).norm())
        .fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        1.0 / max_norm
    } else {
        1.0
    }
}

/// A subdifferential element of `f_q` at `beta`: `-sgn(r_(q)) x_(q)`, where
/// `(q)` indexes the sample attaining the q-th ordered absolute residual
/// (smallest index on ties) and `sgn(0) = +1`.
pub fn lqs_subdifferential(data: &Dataset, beta: &DVector<f64>, q: QuantileSpec) -> DVector<f64> {
    let residuals = data.residuals(beta);
    let i = index_of_order_stat(&residuals, q);
    let sign = if residuals[i] >= 0.0 { 1.0 } else { -1.0 };
    -sign * data.x().row(i).transpose()
}

/// Run the descent for exactly `max_iter` objective evaluations and return
/// the best iterate seen (earliest on ties).
pub fn subdifferential_descent(
    data: &Dataset,
    q: QuantileSpec,
    beta1: &DVector<f64>,
    cfg: &FirstOrderConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if beta1.len() != data.p() {
        return Err(Error::invalid(format!(
            "initial point has {} coordinates, expected {}",
            beta1.len(),
            data.p()
        )));
    }
    let alpha = match cfg.step_size {
        StepSize::Auto => auto_step_size(data),
        StepSize::Fixed(s) => s,
    };
    let mut beta = beta1.clone();
    let mut best_beta = beta.clone();
    let mut best_obj = f64::INFINITY;
    let mut trace = Vec::new();
    for k in 1..=cfg.max_iter {
        let obj = lqs_objective(data, &beta, q);
        if cfg.record_trace {
            trace.push(obj);
        }
        if obj < best_obj {
            best_obj = obj;
            best_beta = beta.clone();
        }
        if k < cfg.max_iter {
            let g = lqs_subdifferential(data, &beta, q);
            beta -= alpha * g;
        }
    }
    let mut fit = FitResult::new(data, best_beta, best_obj, FitKind::Lqs);
    fit.trace = trace;
    Ok(fit)
}
