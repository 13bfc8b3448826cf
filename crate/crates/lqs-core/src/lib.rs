//! Least quantile of squares (LQS) regression, including the least median
//! of squares special case.
//!
//! The crate bundles four solver families around one estimator, the q-th
//! smallest absolute residual of a linear fit:
//!
//! * [`mio`] — an exact branch-and-bound solver over the mixed-integer
//!   formulation of the problem, with anytime upper/lower bounds,
//! * [`first_order`] — fixed-step subdifferential descent,
//! * [`seq_lo`] — sequential linear optimization on the difference-of-convex
//!   split of the objective, with per-iteration suboptimality certificates,
//! * [`hybrid`] — multi-start drivers chaining the two continuous methods,
//!
//! plus an enumeration [`oracle`] for ground truth on small instances,
//! synthetic instance generation ([`datagen`]), and empirical breakdown
//! probes ([`probes`]). Everything sits on a self-contained dense simplex
//! engine ([`lp`]).

pub mod data;
pub mod datagen;
pub mod error;
pub mod first_order;
pub mod fits;
pub mod hybrid;
pub mod lp;
pub mod mio;
pub mod oracle;
pub mod probes;
pub mod seq_lo;

pub use data::{Dataset, FitKind, FitResult, QuantileSpec};
pub use error::{Error, Result};
pub use fits::{chebyshev_fit, lad_fit, least_squares_fit, lqs_objective, ordered_abs_residual};
