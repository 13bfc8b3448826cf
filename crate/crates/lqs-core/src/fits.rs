//! Classical fits used as building blocks and initializers: least squares,
//! least absolute deviations, Chebyshev (max-norm) fits on subsets, and
//! ordered-residual utilities.
//!
//! Ordered-residual convention used throughout the crate: with absolute
//! residuals sorted ascending, `|r|_(1) <= ... <= |r|_(n)`, the tail sum
//! `H_m = sum_{i=m..n} |r|_(i)` adds the largest `n - m + 1` values, so the
//! q-th ordered absolute residual telescopes exactly as `H_q - H_{q+1}`.

use crate::data::{Dataset, FitKind, FitResult, QuantileSpec};
use crate::error::{Error, Result};
use crate::lp::{self, DenseMatrix, LinearProgram, LpStatus, RowSense};
use nalgebra::DVector;

/// Iteration budget handed to the LP engine for fit-sized programs.
fn lp_budget(rows: usize, cols: usize) -> usize {
    200 * (rows + cols) + 2000
}

/// Least squares via singular value decomposition; rank-deficient systems
/// get the minimum-norm solution and are flagged on the result.
pub fn least_squares_fit(data: &Dataset) -> Result<FitResult> {
    let n = data.n();
    let p = data.p();
    let svd = data.x().clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = max_sv * f64::EPSILON * (n.max(p) as f64);
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let beta = svd
        .solve(data.y(), eps)
        .map_err(|e| Error::Numerical(format!("least squares SVD solve: {e}")))?;
    let residuals = data.residuals(&beta);
    let objective = residuals.iter().map(|r| r * r).sum();
    Ok(FitResult {
        beta,
        residuals,
        objective,
        kind: FitKind::LeastSquares,
        trace: Vec::new(),
        rank_deficient: rank < p,
    })
}

/// Least absolute deviations: minimize `sum |r_i|` through the split
/// `r = r+ - r-` with both parts nonnegative.
pub fn lad_fit(data: &Dataset) -> Result<FitResult> {
    let n = data.n();
    let p = data.p();
    // Variables: beta (free), r+ (n), r- (n).
    let cols = p + 2 * n;
    let mut mat = DenseMatrix::zeros(n, cols);
    let mut objective = vec![0.0; cols];
    for i in 0..n {
        for j in 0..p {
            mat.set(i, j, data.x()[(i, j)]);
        }
        mat.set(i, p + i, 1.0);
        mat.set(i, p + n + i, -1.0);
        objective[p + i] = 1.0;
        objective[p + n + i] = 1.0;
    }
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); p];
    bounds.extend(std::iter::repeat((0.0, f64::INFINITY)).take(2 * n));
    let lp = LinearProgram {
        objective,
        constraints: mat,
        senses: vec![RowSense::Eq; n],
        rhs: data.y().iter().cloned().collect(),
        bounds,
    };
    let sol = lp::solve_lp(&lp, lp_budget(n, cols))?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::LpFailed {
            context: "lad_fit".into(),
            status: format!("{:?}", sol.status),
        });
    }
    let beta = DVector::from_column_slice(&sol.primal[..p]);
    Ok(FitResult::new(data, beta, sol.objective_value, FitKind::Lad))
}

/// Chebyshev (max-norm) fit on a sample subset: minimize
/// `max_{i in subset} |y_i - x_i' beta|`.
pub fn chebyshev_fit(data: &Dataset, subset: &[usize]) -> Result<FitResult> {
    match chebyshev_fit_constrained(data, subset, None, None)? {
        Some(fit) => Ok(fit),
        None => Err(Error::Numerical(
            "unconstrained Chebyshev fit reported infeasible".into(),
        )),
    }
}

/// Chebyshev fit with optional coefficient box and polyhedral rows
/// `A beta <= b`; returns `None` when the side constraints are infeasible.
pub(crate) fn chebyshev_fit_constrained(
    data: &Dataset,
    subset: &[usize],
    beta_box: Option<(&DVector<f64>, f64)>,
    polyhedral: Option<(&nalgebra::DMatrix<f64>, &DVector<f64>)>,
) -> Result<Option<FitResult>> {
    if subset.is_empty() {
        return Err(Error::invalid("chebyshev_fit: subset must be nonempty"));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= data.n()) {
        return Err(Error::invalid(format!(
            "chebyshev_fit: subset index {bad} out of range"
        )));
    }
    let p = data.p();
    let k = subset.len();
    let extra = polyhedral.map_or(0, |(a, _)| a.nrows());
    // Variables: t, beta. Rows: per sample both sides of |r_i| <= t,
    // then any polyhedral rows on beta alone.
    let cols = 1 + p;
    let mut mat = DenseMatrix::zeros(2 * k + extra, cols);
    let mut senses = Vec::with_capacity(2 * k + extra);
    let mut rhs = Vec::with_capacity(2 * k + extra);
    for (r, &i) in subset.iter().enumerate() {
        // x_i' beta + t >= y_i
        mat.set(2 * r, 0, 1.0);
        for j in 0..p {
            mat.set(2 * r, 1 + j, data.x()[(i, j)]);
        }
        senses.push(RowSense::Ge);
        rhs.push(data.y()[i]);
        // x_i' beta - t <= y_i
        mat.set(2 * r + 1, 0, -1.0);
        for j in 0..p {
            mat.set(2 * r + 1, 1 + j, data.x()[(i, j)]);
        }
        senses.push(RowSense::Le);
        rhs.push(data.y()[i]);
    }
    if let Some((a, b)) = polyhedral {
        for r in 0..a.nrows() {
            for j in 0..p {
                mat.set(2 * k + r, 1 + j, a[(r, j)]);
            }
            senses.push(RowSense::Le);
            rhs.push(b[r]);
        }
    }
    let mut objective = vec![0.0; cols];
    objective[0] = 1.0;
    let mut bounds = vec![(0.0, f64::INFINITY)];
    match beta_box {
        Some((center, radius)) => {
            for j in 0..p {
                bounds.push((center[j] - radius, center[j] + radius));
            }
        }
        None => bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(p)),
    }
    let lp = LinearProgram {
        objective,
        constraints: mat,
        senses,
        rhs,
        bounds,
    };
    let sol = lp::solve_lp(&lp, lp_budget(2 * k + extra, cols))?;
    match sol.status {
        LpStatus::Optimal => {
            let beta = DVector::from_column_slice(&sol.primal[1..1 + p]);
            let mut fit = FitResult::new(data, beta, sol.objective_value, FitKind::Chebyshev);
            fit.trace = Vec::new();
            Ok(Some(fit))
        }
        LpStatus::Infeasible => Ok(None),
        other => Err(Error::LpFailed {
            context: "chebyshev_fit".into(),
            status: format!("{other:?}"),
        }),
    }
}

/// The q-th smallest absolute residual.
pub fn ordered_abs_residual(residuals: &DVector<f64>, q: QuantileSpec) -> f64 {
    let n = residuals.len();
    assert!(q.q() <= n, "q = {} exceeds residual count {n}", q.q());
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let (_, v, _) = abs.select_nth_unstable_by(q.q() - 1, f64::total_cmp);
    *v
}

/// LQS objective `f_q(beta)`: the q-th smallest absolute residual at `beta`.
pub fn lqs_objective(data: &Dataset, beta: &DVector<f64>, q: QuantileSpec) -> f64 {
    ordered_abs_residual(&data.residuals(beta), q)
}

/// Tail sum of ordered absolute residuals: `sum_{i=m..n} |r|_(i)` with
/// one-based ranks, the sum of the largest `n - m + 1` values. `m = n + 1`
/// gives zero.
pub fn ordered_tail_sum(residuals: &DVector<f64>, m: usize) -> f64 {
    let n = residuals.len();
    assert!(m >= 1, "tail sum rank must be >= 1");
    if m > n {
        return 0.0;
    }
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let k = n - m + 1;
    abs.select_nth_unstable_by(n - k, f64::total_cmp);
    abs[n - k..].iter().sum()
}

/// Index of the sample attaining the q-th smallest absolute residual;
/// ties go to the smallest sample index.
pub(crate) fn index_of_order_stat(residuals: &DVector<f64>, q: QuantileSpec) -> usize {
    let value = ordered_abs_residual(residuals, q);
    residuals
        .iter()
        .position(|r| r.abs() == value)
        .expect("order statistic value always present")
}

/// Indices of the `k` largest absolute residuals, ties broken toward the
/// smallest sample index.
pub(crate) fn top_abs_indices(residuals: &DVector<f64>, k: usize) -> Vec<usize> {
    let n = residuals.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        residuals[b]
            .abs()
            .total_cmp(&residuals[a].abs())
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: &[f64]) -> Dataset {
        Dataset::from_rows(y, &vec![vec![1.0]; y.len()]).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        Dataset::new(y, x).unwrap()
    }

    #[test]
    fn least_squares_recovers_noiseless_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-2.0..2.0));
        let beta0 = DVector::from_column_slice(&[1.5, -0.5, 2.0]);
        let y = &x * &beta0;
        let data = Dataset::new(y, x).unwrap();
        let fit = least_squares_fit(&data).unwrap();
        assert!((fit.beta - beta0).amax() < 1e-10);
        assert!(fit.objective < 1e-18);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn least_squares_intercept_only_is_the_mean() {
        let fit = least_squares_fit(&intercept_only(&[0.0, 2.0])).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_dataset(&mut rng, 8, 2);
        let fit = least_squares_fit(&data).unwrap();
        // Independent oracle: solve X'X beta = X'y directly.
        let xtx = data.x().transpose() * data.x();
        let xty = data.x().transpose() * data.y();
        let direct = xtx.lu().solve(&xty).unwrap();
        assert!((fit.beta.clone() - direct).amax() < 1e-9);
        // Normal-equation residual of the returned fit.
        let grad = data.x().transpose() * data.residuals(&fit.beta);
        assert!(grad.amax() <= 1e-8 * (1.0 + data.y().amax()));
    }

    #[test]
    fn least_squares_flags_rank_deficiency() {
        // Two identical columns.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = DVector::from_column_slice(&[2.0, 4.0, 6.0, 8.0]);
        let data = Dataset::new(y, x).unwrap();
        let fit = least_squares_fit(&data).unwrap();
        assert!(fit.rank_deficient);
        assert!(fit.objective < 1e-16);
    }

    #[test]
    fn lad_intercept_only_is_the_median() {
        let fit = lad_fit(&intercept_only(&[0.0, 0.0, 10.0])).unwrap();
        assert!(fit.beta[0].abs() < 1e-9);
        assert!((fit.objective - 10.0).abs() < 1e-8);
    }

    #[test]
    fn lad_noiseless_objective_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-2.0..2.0));
        let beta0 = DVector::from_column_slice(&[2.0, -1.0]);
        let y = &x * &beta0;
        let data = Dataset::new(y, x).unwrap();
        let fit = lad_fit(&data).unwrap();
        assert!(fit.objective.abs() < 1e-9);
    }

    #[test]
    fn lad_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_dataset(&mut rng, 7, 2);
        let fit = lad_fit(&data).unwrap();
        // Grid oracle over a box that contains the LP solution.
        let span = 1.0 + fit.beta.amax() * 2.0;
        let res = 160;
        let mut grid_best = f64::INFINITY;
        for a in 0..=res {
            for b in 0..=res {
                let beta = DVector::from_column_slice(&[
                    -span + 2.0 * span * a as f64 / res as f64,
                    -span + 2.0 * span * b as f64 / res as f64,
                ]);
                let obj: f64 = data.residuals(&beta).iter().map(|r| r.abs()).sum();
                grid_best = grid_best.min(obj);
            }
        }
        let h = span / res as f64;
        let lipschitz: f64 = (0..data.n())
            .map(|i| (0..data.p()).map(|j| data.x()[(i, j)].abs()).sum::<f64>())
            .sum();
        assert!(fit.objective <= grid_best + 1e-9);
        assert!(grid_best - fit.objective <= lipschitz * h + 1e-9);
    }

    #[test]
    fn chebyshev_midrange_of_two_points() {
        let fit = chebyshev_fit(&intercept_only(&[0.0, 2.0]), &[0, 1]).unwrap();
        assert!((fit.objective - 1.0).abs() < 1e-9);
        assert!((fit.beta[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chebyshev_interpolation_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-2.0..2.0));
        let beta0 = DVector::from_column_slice(&[1.0, -2.0]);
        let y = &x * &beta0;
        let data = Dataset::new(y, x).unwrap();
        let fit = chebyshev_fit(&data, &[0, 1]).unwrap();
        assert!(fit.objective.abs() < 1e-10);
    }

    #[test]
    fn chebyshev_rejects_empty_subset() {
        assert!(chebyshev_fit(&intercept_only(&[1.0, 2.0]), &[]).is_err());
    }

    #[test]
    fn chebyshev_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = random_dataset(&mut rng, 9, 2);
        let subset = [1, 4, 7];
        let fit = chebyshev_fit(&data, &subset).unwrap();
        let span = 1.0 + fit.beta.amax() * 2.0;
        let res = 220;
        let mut grid_best = f64::INFINITY;
        for a in 0..=res {
            for b in 0..=res {
                let beta = DVector::from_column_slice(&[
                    -span + 2.0 * span * a as f64 / res as f64,
                    -span + 2.0 * span * b as f64 / res as f64,
                ]);
                let r = data.residuals(&beta);
                let obj = subset.iter().map(|&i| r[i].abs()).fold(0.0f64, f64::max);
                grid_best = grid_best.min(obj);
            }
        }
        assert!(fit.objective <= grid_best + 1e-6);
    }

    #[test]
    fn chebyshev_equalizes_enough_residuals() {
        // On generic data the optimal max-norm fit is attained by at least
        // p + 1 residuals of equal magnitude.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let data = random_dataset(&mut rng, 8, 2);
            let subset: Vec<usize> = (0..8).collect();
            let fit = chebyshev_fit(&data, &subset).unwrap();
            let t = fit.objective;
            let count = fit
                .residuals
                .iter()
                .filter(|r| (r.abs() - t).abs() <= 1e-7 * (1.0 + t))
                .count();
            assert!(count >= data.p() + 1, "only {count} residuals at the max");
        }
    }

    #[test]
    fn ordered_residual_examples() {
        let r = DVector::from_column_slice(&[3.0, -1.0, 2.0]);
        let q = |k| QuantileSpec::new(k, 3).unwrap();
        assert_eq!(ordered_abs_residual(&r, q(2)), 2.0);
        assert_eq!(ordered_abs_residual(&r, q(3)), 3.0);
        assert_eq!(ordered_abs_residual(&r, q(1)), 1.0);
    }

    #[test]
    fn ordered_residual_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let vals: Vec<f64> = (0..9).map(|_| rng.random_range(-4.0..4.0)).collect();
        let r = DVector::from_column_slice(&vals);
        let q = QuantileSpec::new(4, 9).unwrap();
        let expected = ordered_abs_residual(&r, q);
        use rand::seq::SliceRandom;
        for _ in 0..5 {
            let mut shuffled = vals.clone();
            shuffled.shuffle(&mut rng);
            let rs = DVector::from_column_slice(&shuffled);
            assert_eq!(ordered_abs_residual(&rs, q), expected);
        }
    }

    #[test]
    fn lqs_objective_hand_example() {
        let data = intercept_only(&[0.0, 1.0, 10.0]);
        let q = QuantileSpec::new(2, 3).unwrap();
        let beta = DVector::from_column_slice(&[0.0]);
        assert_eq!(lqs_objective(&data, &beta, q), 1.0);
    }

    #[test]
    fn telescoping_identity() {
        // |r|_(q) = H_q - H_{q+1} for all q, to 1e-10.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let r = DVector::from_fn(n, |_, _| rng.random_range(-6.0..6.0));
            for q in 1..=n {
                let spec = QuantileSpec::new(q, n).unwrap();
                let direct = ordered_abs_residual(&r, spec);
                let tele = ordered_tail_sum(&r, q) - ordered_tail_sum(&r, q + 1);
                assert!((direct - tele).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tail_sum_matches_lp_dual_form() {
        // H_m computed by sorting equals the value of its dual LP:
        // min theta (n-m+1) + sum nu, theta + nu_i >= |r_i|, nu >= 0.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..8 {
            let n = rng.random_range(3..9);
            let data = random_dataset(&mut rng, n, 2);
            let beta = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let r = data.residuals(&beta);
            for m in 1..=n {
                let cols = 1 + n;
                let mut mat = DenseMatrix::zeros(n, cols);
                let mut objective = vec![0.0; cols];
                objective[0] = (n - m + 1) as f64;
                for i in 0..n {
                    mat.set(i, 0, 1.0);
                    mat.set(i, 1 + i, 1.0);
                    objective[1 + i] = 1.0;
                }
                let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY)];
                bounds.extend(std::iter::repeat((0.0, f64::INFINITY)).take(n));
                let lp = LinearProgram {
                    objective,
                    constraints: mat,
                    senses: vec![RowSense::Ge; n],
                    rhs: r.iter().map(|v| v.abs()).collect(),
                    bounds,
                };
                let sol = lp::solve_lp(&lp, 10_000).unwrap();
                assert_eq!(sol.status, LpStatus::Optimal);
                let direct = ordered_tail_sum(&r, m);
                assert!(
                    (sol.objective_value - direct).abs() <= 1e-8 * (1.0 + direct),
                    "m = {m}: LP {} vs sorted {direct}",
                    sol.objective_value
                );
            }
        }
    }

    #[test]
    fn top_indices_break_ties_low() {
        let r = DVector::from_column_slice(&[2.0, -2.0, 1.0]);
        assert_eq!(top_abs_indices(&r, 2), vec![0, 1]);
        assert_eq!(top_abs_indices(&r, 1), vec![0]);
    }
}
