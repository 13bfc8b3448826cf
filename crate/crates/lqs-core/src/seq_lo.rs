//! Sequential linear optimization for the LQS objective.
//!
//! `f_q(beta) = H_q(beta) - H_{q+1}(beta)` splits the q-th ordered absolute
//! residual into a difference of two convex tail sums. Writing `H_q` through
//! its dual program in `(theta, nu)` and linearizing `H_{q+1}` at the current
//! iterate turns each step into one LP:
//!
//! ```text
//! min  theta (n - q + 1) + sum_i nu_i - <g_k, beta>
//! s.t. theta + nu_i >= |y_i - x_i' beta|,  nu >= 0,
//! ```
//!
//! where `g_k` is a subgradient of `H_{q+1}` at `beta_k`. The surrogate
//! `F(nu, theta, beta) = theta (n - q + 1) + sum nu - H_{q+1}(beta)` is
//! nonincreasing along the iterates, and the step certificate
//! `delta_k = <grad F(state_k), state_{k+1} - state_k> <= 0` measures
//! distance from first-order stationarity.

use crate::data::{Dataset, FitKind, FitResult, QuantileSpec};
use crate::error::{Error, Result};
use crate::fits::{lqs_objective, ordered_abs_residual, ordered_tail_sum, top_abs_indices};
use crate::lp::{self, DenseMatrix, LinearProgram, LpBasis, LpStatus, RowSense};
use nalgebra::DVector;

#[derive(Clone, Debug)]
pub struct SeqLoConfig {
    /// Relative objective-decrease threshold for stopping.
    pub tol: f64,
    /// Safeguard on the number of LP steps.
    pub max_iter: usize,
    /// Keep full per-iteration states (and the objective trace) in the outcome.
    pub record_trace: bool,
}

impl Default for SeqLoConfig {
    fn default() -> Self {
        SeqLoConfig { tol: 1e-4, max_iter: 200, record_trace: false }
    }
}

impl SeqLoConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// One iterate of the surrogate program.
#[derive(Clone, Debug)]
pub struct SeqLoState {
    pub beta: DVector<f64>,
    pub nu: DVector<f64>,
    pub theta: f64,
    /// Surrogate value `F(nu, theta, beta)`.
    pub f_value: f64,
    /// Step certificate toward the next iterate; `None` on the final state.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SeqLoOutcome {
    pub fit: FitResult,
    /// `F_k` per iterate, including the initial one.
    pub f_values: Vec<f64>,
    /// `delta_k` per LP step taken (one fewer than `f_values`).
    pub deltas: Vec<f64>,
    /// Full iterate states; populated when `record_trace` is set.
    pub states: Vec<SeqLoState>,
    /// Whether the bounding-box fallback had to be activated to keep the
    /// step LP bounded.
    pub guard_box_activated: bool,
}

/// A subgradient of the tail sum `H_m`: sum of `-sgn(r_i) x_i` over the
/// `n - m + 1` samples with the largest absolute residuals (ties toward the
/// smallest index, `sgn(0) = +1`). Zero vector when `m > n`.
pub fn h_subgradient(data: &Dataset, beta: &DVector<f64>, m: usize) -> DVector<f64> {
    assert!(m >= 1, "tail sum rank must be >= 1");
    let n = data.n();
    let mut g = DVector::zeros(data.p());
    if m > n {
        return g;
    }
    let residuals = data.residuals(beta);
    for i in top_abs_indices(&residuals, n - m + 1) {
        let sign = if residuals[i] >= 0.0 { 1.0 } else { -1.0 };
        g -= sign * data.x().row(i).transpose();
    }
    g
}

fn build_step_lp(
    data: &Dataset,
    q: QuantileSpec,
    grad: &DVector<f64>,
    beta_box: Option<(&DVector<f64>, f64)>,
) -> LinearProgram {
    let n = data.n();
    let p = data.p();
    let cols = 1 + n + p;
    let mut mat = DenseMatrix::zeros(2 * n, cols);
    let mut senses = Vec::with_capacity(2 * n);
    let mut rhs = Vec::with_capacity(2 * n);
    for i in 0..n {
        // theta + nu_i + x_i' beta >= y_i
        mat.set(2 * i, 0, 1.0);
        mat.set(2 * i, 1 + i, 1.0);
        for j in 0..p {
            mat.set(2 * i, 1 + n + j, data.x()[(i, j)]);
        }
        senses.push(RowSense::Ge);
        rhs.push(data.y()[i]);
        // theta + nu_i - x_i' beta >= -y_i
        mat.set(2 * i + 1, 0, 1.0);
        mat.set(2 * i + 1, 1 + i, 1.0);
        for j in 0..p {
            mat.set(2 * i + 1, 1 + n + j, -data.x()[(i, j)]);
        }
        senses.push(RowSense::Ge);
        rhs.push(-data.y()[i]);
    }
    let mut objective = vec![0.0; cols];
    objective[0] = (n - q.q() + 1) as f64;
    for i in 0..n {
        objective[1 + i] = 1.0;
    }
    for j in 0..p {
        objective[1 + n + j] = -grad[j];
    }
    let mut bounds = vec![(f64::NEG_INFINITY, f64::INFINITY)];
    bounds.extend(std::iter::repeat((0.0, f64::INFINITY)).take(n));
    match beta_box {
        Some((center, radius)) => {
            for j in 0..p {
                bounds.push((center[j] - radius, center[j] + radius));
            }
        }
        None => bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(p)),
    }
    LinearProgram { objective, constraints: mat, senses, rhs, bounds }
}

struct StepSolve {
    state: SeqLoState,
    basis: LpBasis,
    guard_used: bool,
}

fn solve_step(
    data: &Dataset,
    q: QuantileSpec,
    beta_k: &DVector<f64>,
    guard_center: &DVector<f64>,
    warm: Option<&LpBasis>,
) -> Result<StepSolve> {
    let n = data.n();
    let p = data.p();
    let grad = h_subgradient(data, beta_k, q.q() + 1);
    let limit = 400 * (3 * n + p) + 5000;
    let lp = build_step_lp(data, q, &grad, None);
    let sol = match warm {
        Some(basis) => lp::solve_lp_warm(&lp, limit, basis)?,
        None => lp::solve_lp(&lp, limit)?,
    };
    let (sol, guard_used) = match sol.status {
        LpStatus::Optimal => (sol, false),
        LpStatus::Unbounded => {
            // The linear term can dominate only through floating-point noise;
            // retry inside a box around the guard center.
            let m_guard = 10.0 * (1.0 + guard_center.amax());
            let boxed = build_step_lp(data, q, &grad, Some((guard_center, m_guard)));
            let sol = lp::solve_lp(&boxed, limit)?;
            if sol.status != LpStatus::Optimal {
                return Err(Error::LpFailed {
                    context: "sequential step (boxed)".into(),
                    status: format!("{:?}", sol.status),
                });
            }
            (sol, true)
        }
        other => {
            return Err(Error::LpFailed {
                context: "sequential step".into(),
                status: format!("{other:?}"),
            })
        }
    };
    let theta = sol.primal[0];
    let nu = DVector::from_column_slice(&sol.primal[1..1 + n]);
    let beta = DVector::from_column_slice(&sol.primal[1 + n..1 + n + p]);
    let f_value =
        theta * (n - q.q() + 1) as f64 + nu.sum() - ordered_tail_sum(&data.residuals(&beta), q.q() + 1);
    Ok(StepSolve {
        state: SeqLoState { beta, nu, theta, f_value, delta: None },
        basis: sol.basis,
        guard_used,
    })
}

/// One linearized step from `beta_k`: solve the step LP and return the
/// next iterate with its surrogate value.
pub fn linearized_step(data: &Dataset, q: QuantileSpec, beta_k: &DVector<f64>) -> Result<SeqLoState> {
    if beta_k.len() != data.p() {
        return Err(Error::invalid("beta_k length must match the model matrix"));
    }
    Ok(solve_step(data, q, beta_k, beta_k, None)?.state)
}

/// The iterate the algorithm starts from: `theta` at the q-th ordered
/// absolute residual and `nu` taking up the excess, which is exactly the
/// dual-optimal pair for `H_q` at `beta`.
fn initial_state(data: &Dataset, q: QuantileSpec, beta: &DVector<f64>) -> SeqLoState {
    let residuals = data.residuals(beta);
    let theta = ordered_abs_residual(&residuals, q);
    let nu = DVector::from_fn(data.n(), |i, _| (residuals[i].abs() - theta).max(0.0));
    let f_value = theta * (data.n() - q.q() + 1) as f64 + nu.sum()
        - ordered_tail_sum(&residuals, q.q() + 1);
    SeqLoState { beta: beta.clone(), nu, theta, f_value, delta: None }
}

/// Run the sequential method from `beta1` until the relative decrease of the
/// objective falls below `cfg.tol` (or `cfg.max_iter` LP steps).
pub fn sequential_lo(
    data: &Dataset,
    q: QuantileSpec,
    beta1: &DVector<f64>,
    cfg: &SeqLoConfig,
) -> Result<SeqLoOutcome> {
    cfg.validate()?;
    if beta1.len() != data.p() {
        return Err(Error::invalid("beta1 length must match the model matrix"));
    }
    let n = data.n();
    let nq1 = (n - q.q() + 1) as f64;
    let mut current = initial_state(data, q, beta1);
    let mut f_values = vec![current.f_value];
    let mut deltas = Vec::new();
    let mut states: Vec<SeqLoState> = Vec::new();
    let mut objective_trace = vec![lqs_objective(data, beta1, q)];
    let mut guard_box_activated = false;
    let mut basis: Option<LpBasis> = None;

    for _ in 0..cfg.max_iter {
        let grad = h_subgradient(data, &current.beta, q.q() + 1);
        let step = solve_step(data, q, &current.beta, beta1, basis.as_ref())?;
        guard_box_activated |= step.guard_used;
        basis = Some(step.basis);
        let next = step.state;
        let delta = nq1 * (next.theta - current.theta) + (next.nu.sum() - current.nu.sum())
            - grad.dot(&(&next.beta - &current.beta));
        deltas.push(delta);
        f_values.push(next.f_value);
        let f_prev = lqs_objective(data, &current.beta, q);
        let f_next = lqs_objective(data, &next.beta, q);
        objective_trace.push(f_next);
        if cfg.record_trace {
            let mut done = current.clone();
            done.delta = Some(delta);
            states.push(done);
        }
        current = next;
        if f_prev - f_next <= cfg.tol * f_prev {
            break;
        }
    }
    if cfg.record_trace {
        states.push(current.clone());
    }
    let objective = lqs_objective(data, &current.beta, q);
    let mut fit = FitResult::new(data, current.beta.clone(), objective, FitKind::Lqs);
    if cfg.record_trace {
        fit.trace = objective_trace;
    }
    Ok(SeqLoOutcome { fit, f_values, deltas, states, guard_box_activated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Scheme, SyntheticSpec};
    use crate::oracle::enumerate_lqs;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: &[f64]) -> Dataset {
        Dataset::from_rows(y, &vec![vec![1.0]; y.len()]).unwrap()
    }

    #[test]
    fn h_subgradient_largest_residual_case() {
        // m = n selects exactly the largest |r_i|.
        let data = Dataset::from_rows(&[4.0, -9.0], &[vec![1.0, 0.0], vec![0.5, 2.0]]).unwrap();
        let beta = DVector::zeros(2);
        let g = h_subgradient(&data, &beta, 2);
        // Largest |r| is sample 1 with r < 0: contribution +x_1.
        assert_eq!(g, DVector::from_column_slice(&[0.5, 2.0]));
    }

    #[test]
    fn h_subgradient_all_zero_residuals() {
        // sgn(0) = +1, so the top set contributes -sum x_i.
        let data = Dataset::from_rows(&[0.0, 0.0], &[vec![1.0], vec![2.0]]).unwrap();
        let beta = DVector::zeros(1);
        let g = h_subgradient(&data, &beta, 1);
        assert_eq!(g[0], -3.0);
    }

    #[test]
    fn h_subgradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut checked = 0;
        while checked < 25 {
            let n = rng.random_range(4..10);
            let p = rng.random_range(1..4);
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
            let y = DVector::from_fn(n, |_, _| rng.random_range(-4.0..4.0));
            let data = Dataset::new(y, x).unwrap();
            let m = rng.random_range(1..=n);
            let beta = DVector::from_fn(p, |_, _| rng.random_range(-1.5..1.5));
            let r = data.residuals(&beta);
            let mut abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
            abs.sort_by(f64::total_cmp);
            if abs[0] < 1e-3 || abs.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                continue;
            }
            let d = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let h = 1e-6;
            let tail = |b: &DVector<f64>| ordered_tail_sum(&data.residuals(b), m);
            let fd = (tail(&(&beta + h * &d)) - tail(&(&beta - h * &d))) / (2.0 * h);
            let g = h_subgradient(&data, &beta, m);
            assert!((fd - g.dot(&d)).abs() < 1e-4);
            checked += 1;
        }
    }

    #[test]
    fn step_lp_matches_vertex_enumeration_on_tiny_instance() {
        // Intercept-only, y = (0, 1, 10), q = 2, beta_k = 0. The step LP
        // minimizes H_2(beta) + beta whose optimum is 10.5 at beta = 0.5.
        let data = intercept_only(&[0.0, 1.0, 10.0]);
        let q = QuantileSpec::new(2, 3).unwrap();
        let beta_k = DVector::from_column_slice(&[0.0]);
        let grad = h_subgradient(&data, &beta_k, 3);
        assert_eq!(grad[0], -1.0);
        let lp_instance = build_step_lp(&data, q, &grad, None);
        let sol = lp::solve_lp(&lp_instance, 10_000).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // Independent check by brute-force enumeration of active sets.
        let oracle = crate::lp::tests::brute_force_lp(&lp_instance).unwrap();
        assert!((sol.objective_value - oracle).abs() < 1e-8);
        assert!((sol.objective_value - 10.5).abs() < 1e-8);
        let state = linearized_step(&data, q, &beta_k).unwrap();
        assert!((state.beta[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn step_from_noiseless_optimum_reaches_zero_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let x = DMatrix::from_fn(7, 2, |_, _| rng.random_range(-2.0..2.0));
        let beta0 = DVector::from_column_slice(&[2.0, -1.0]);
        let y = &x * &beta0;
        let data = Dataset::new(y, x).unwrap();
        let q = QuantileSpec::new(4, 7).unwrap();
        let state = linearized_step(&data, q, &beta0).unwrap();
        assert!(state.f_value.abs() < 1e-9);
        assert!(state.theta.abs() < 1e-9);
    }

    #[test]
    fn step_never_increases_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..10 {
            let n = rng.random_range(5..12);
            let p = rng.random_range(1..3);
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
            let y = DVector::from_fn(n, |_, _| rng.random_range(-4.0..4.0));
            let data = Dataset::new(y, x).unwrap();
            let q = QuantileSpec::new(rng.random_range(1..=n), n).unwrap();
            let beta_k = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
            let before = initial_state(&data, q, &beta_k);
            let after = linearized_step(&data, q, &beta_k).unwrap();
            assert!(after.f_value <= before.f_value + 1e-9);
        }
    }

    #[test]
    fn fixed_point_stops_fast() {
        let data = intercept_only(&[0.0, 1.0, 10.0]);
        let q = QuantileSpec::new(2, 3).unwrap();
        let oracle = enumerate_lqs(&data, q, 1 << 20).unwrap();
        let out = sequential_lo(&data, q, &oracle.beta, &SeqLoConfig::default()).unwrap();
        assert!(out.f_values.len() <= 3);
        assert!((out.fit.objective - oracle.objective).abs() < 1e-9);
    }

    #[test]
    fn run_respects_oracle_bounds_on_contaminated_data() {
        let spec = SyntheticSpec::new(15, 2, 0.3, Scheme::B, 21).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(9, 15).unwrap();
        let start = DVector::zeros(2);
        let out = sequential_lo(&inst.data, q, &start, &SeqLoConfig::default()).unwrap();
        let oracle = enumerate_lqs(&inst.data, q, 1 << 22).unwrap();
        let at_start = lqs_objective(&inst.data, &start, q);
        assert!(out.fit.objective >= oracle.objective - 1e-9);
        assert!(out.fit.objective <= at_start + 1e-9);
    }

    #[test]
    fn monotone_surrogate_and_certificates() {
        let spec = SyntheticSpec::new(25, 3, 0.4, Scheme::A, 33).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(15, 25).unwrap();
        let start = DVector::zeros(3);
        let cfg = SeqLoConfig { record_trace: true, ..Default::default() };
        let out = sequential_lo(&inst.data, q, &start, &cfg).unwrap();
        for w in out.f_values.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        for &d in &out.deltas {
            assert!(d <= 1e-9);
        }
        // Telescoped rate bound on every prefix of recorded steps.
        for k in 1..=out.deltas.len() {
            let min_neg_delta =
                out.deltas[..k].iter().map(|d| -d).fold(f64::INFINITY, f64::min);
            let avg = (out.f_values[0] - out.f_values[k]) / k as f64;
            assert!(avg >= min_neg_delta - 1e-9);
        }
        // Feasibility of recorded states and surrogate consistency.
        let nq1 = (inst.data.n() - q.q() + 1) as f64;
        for st in &out.states {
            let r = inst.data.residuals(&st.beta);
            for i in 0..inst.data.n() {
                assert!(st.theta + st.nu[i] >= r[i].abs() - 1e-7);
                assert!(st.nu[i] >= -1e-12);
            }
            let f = st.theta * nq1 + st.nu.sum() - ordered_tail_sum(&r, q.q() + 1);
            assert!((f - st.f_value).abs() <= 1e-8 * (1.0 + f.abs()));
        }
    }
}
