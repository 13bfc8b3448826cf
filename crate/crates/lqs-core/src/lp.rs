//! Dense linear programming engine.
//!
//! Bounded-variable primal simplex with Dantzig pricing and an automatic
//! switch to Bland's rule once degeneracy is detected. Every fit and every
//! branch-and-bound node relaxation in this crate goes through [`solve_lp`],
//! so the engine favors predictability over raw speed: dense storage,
//! periodic refactorization, deterministic tie-breaking everywhere.

use thiserror::Error;

/// Absolute feasibility tolerance on constraint violations at optimality.
pub const FEAS_TOL: f64 = 1e-8;
/// Reduced-cost tolerance for declaring optimality.
pub const OPT_TOL: f64 = 1e-9;
/// Entries below this magnitude are never accepted as pivots.
pub const PIVOT_TOL: f64 = 1e-10;
/// Relative primal/dual agreement required of an optimal solution.
pub const DUALITY_GAP_TOL: f64 = 1e-7;

/// Engine tolerances. The defaults are the module constants above.
#[derive(Clone, Debug)]
pub struct LpConfig {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub pivot_tol: f64,
    pub duality_gap_tol: f64,
    /// Rebuild the tableau from the basis every this many pivots.
    pub refactor_every: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            feas_tol: FEAS_TOL,
            opt_tol: OPT_TOL,
            pivot_tol: PIVOT_TOL,
            duality_gap_tol: DUALITY_GAP_TOL,
            refactor_every: 64,
        }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Sense of one constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

/// A dense LP: minimize `objective . x` subject to row constraints and
/// per-variable bounds (`f64::INFINITY` / `f64::NEG_INFINITY` allowed).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: DenseMatrix,
    pub senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Error, Debug)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid bounds for variable {var}: [{lower}, {upper}]")]
    Bounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("warm-start basis does not match this program")]
    BasisMismatch,
}

impl LinearProgram {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let m = self.rhs.len();
        let n = self.objective.len();
        if self.constraints.rows() != m || self.senses.len() != m {
            return Err(LpError::Dimension(format!(
                "{} matrix rows, {} senses, {} rhs entries",
                self.constraints.rows(),
                self.senses.len(),
                m
            )));
        }
        if self.constraints.cols() != n || self.bounds.len() != n {
            return Err(LpError::Dimension(format!(
                "{} matrix cols, {} objective entries, {} bounds",
                self.constraints.cols(),
                n,
                self.bounds.len()
            )));
        }
        for (j, &(l, u)) in self.bounds.iter().enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::Bounds { var: j, lower: l, upper: u });
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective".into()));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("rhs".into()));
        }
        if self.constraints.data.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("constraint matrix".into()));
        }
        Ok(())
    }

    /// Plain-text fixed-column dump for triage.
    pub fn dump<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "minimize")?;
        writeln!(w, "  {:?}", self.objective)?;
        writeln!(w, "subject to")?;
        for i in 0..self.num_rows() {
            let sense = match self.senses[i] {
                RowSense::Le => "<=",
                RowSense::Eq => " =",
                RowSense::Ge => ">=",
            };
            writeln!(w, "  r{i:<4} {:?} {sense} {:>14.6}", self.constraints.row(i), self.rhs[i])?;
        }
        writeln!(w, "bounds")?;
        for (j, &(l, u)) in self.bounds.iter().enumerate() {
            writeln!(w, "  x{j:<4} [{l:>14.6}, {u:>14.6}]")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Final basis, expressed in the engine's standardized column space.
/// Opaque to callers; round-trips through [`solve_lp_warm`].
#[derive(Clone, Debug, PartialEq)]
pub struct LpBasis {
    basic: Vec<usize>,
    at_upper: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per row, in the sign convention where the dual
    /// objective is `y.b + lambda.l - pi.u` (so `<=` rows carry `y <= 0`).
    pub dual: Vec<f64>,
    pub objective_value: f64,
    /// Simplex iterations spent (pivots plus bound flips).
    pub pivots: usize,
    pub basis: LpBasis,
}

/// Solve with default tolerances.
pub fn solve_lp(lp: &LinearProgram, iteration_limit: usize) -> Result<LpSolution, LpError> {
    solve_lp_cfg(lp, iteration_limit, &LpConfig::default(), None)
}

/// Solve starting from a previously returned basis. Falls back to a cold
/// solve when the basis is stale (singular or primal-infeasible here).
pub fn solve_lp_warm(
    lp: &LinearProgram,
    iteration_limit: usize,
    basis: &LpBasis,
) -> Result<LpSolution, LpError> {
    solve_lp_cfg(lp, iteration_limit, &LpConfig::default(), Some(basis))
}

pub fn solve_lp_cfg(
    lp: &LinearProgram,
    iteration_limit: usize,
    cfg: &LpConfig,
    warm: Option<&LpBasis>,
) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let std = Standardized::build(lp);

    // Rows that became empty can only be satisfied or hopeless.
    for i in 0..lp.num_rows() {
        if std.kept_rows.iter().any(|&k| k == i) {
            continue;
        }
        let b = std.dropped_rhs[i];
        let ok = match lp.senses[i] {
            RowSense::Le => b >= -cfg.feas_tol * (1.0 + b.abs()),
            RowSense::Ge => b <= cfg.feas_tol * (1.0 + b.abs()),
            RowSense::Eq => b.abs() <= cfg.feas_tol * (1.0 + b.abs()),
        };
        if !ok {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                primal: std.point_at_bounds(lp),
                dual: vec![0.0; lp.num_rows()],
                objective_value: f64::INFINITY,
                pivots: 0,
                basis: LpBasis { basic: Vec::new(), at_upper: Vec::new() },
            });
        }
    }

    let mut simplex = Simplex::new(&std, cfg);
    let mut warmed = false;
    if let Some(basis) = warm {
        warmed = simplex.try_warm_start(basis);
    }
    if !warmed {
        simplex.artificial_start();
        let phase1 = simplex.run(&std.phase1_cost, iteration_limit, true);
        match phase1 {
            PhaseEnd::IterationLimit | PhaseEnd::Breakdown => {
                return Ok(simplex.finish(lp, &std, LpStatus::IterationLimit));
            }
            PhaseEnd::Unbounded => unreachable!("phase 1 objective is bounded below"),
            PhaseEnd::Optimal => {}
        }
        let infeas = simplex.phase1_objective(&std);
        let scale = 1.0 + std.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeas > cfg.feas_tol * scale {
            return Ok(simplex.finish(lp, &std, LpStatus::Infeasible));
        }
        simplex.drive_out_artificials();
    }
    simplex.fix_artificials();
    let phase2 = simplex.run(&std.cost, iteration_limit, false);
    let status = match phase2 {
        PhaseEnd::Optimal => LpStatus::Optimal,
        PhaseEnd::Unbounded => LpStatus::Unbounded,
        PhaseEnd::IterationLimit | PhaseEnd::Breakdown => LpStatus::IterationLimit,
    };
    Ok(simplex.finish(lp, &std, status))
}

/// Independent check of an Optimal solution: feasibility, bound and
/// reduced-cost consistency, and the primal/dual objective gap.
pub fn verify_optimal(lp: &LinearProgram, sol: &LpSolution, cfg: &LpConfig) -> Result<(), String> {
    if sol.status != LpStatus::Optimal {
        return Err(format!("status {:?} is not Optimal", sol.status));
    }
    let m = lp.num_rows();
    let n = lp.num_vars();
    let scale = 1.0 + lp.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..m {
        let ax: f64 = (0..n).map(|j| lp.constraints.at(i, j) * sol.primal[j]).sum();
        let viol = match lp.senses[i] {
            RowSense::Le => ax - lp.rhs[i],
            RowSense::Ge => lp.rhs[i] - ax,
            RowSense::Eq => (ax - lp.rhs[i]).abs(),
        };
        if viol > cfg.feas_tol * scale {
            return Err(format!("row {i} violated by {viol:.3e}"));
        }
    }
    let mut dual_obj = 0.0;
    for i in 0..m {
        dual_obj += sol.dual[i] * lp.rhs[i];
        let sign_ok = match lp.senses[i] {
            RowSense::Le => sol.dual[i] <= cfg.opt_tol * scale,
            RowSense::Ge => sol.dual[i] >= -cfg.opt_tol * scale,
            RowSense::Eq => true,
        };
        if !sign_ok {
            return Err(format!("row {i} dual {:.3e} has wrong sign", sol.dual[i]));
        }
    }
    let bnd_tol = cfg.feas_tol * 10.0 * scale;
    for j in 0..n {
        let (l, u) = lp.bounds[j];
        let x = sol.primal[j];
        if x < l - bnd_tol || x > u + bnd_tol {
            return Err(format!("variable {j} = {x} outside [{l}, {u}]"));
        }
        let mut d = lp.objective[j];
        for i in 0..m {
            d -= sol.dual[i] * lp.constraints.at(i, j);
        }
        let d_tol = cfg.opt_tol * 100.0 * (1.0 + lp.objective[j].abs()) + 1e-9 * scale;
        let near_l = l.is_finite() && x - l <= bnd_tol;
        let near_u = u.is_finite() && u - x <= bnd_tol;
        if near_l && near_u {
            dual_obj += if d >= 0.0 { d * l } else { d * u };
        } else if near_l {
            if d < -d_tol {
                return Err(format!("variable {j} at lower with reduced cost {d:.3e}"));
            }
            dual_obj += d.max(0.0) * l;
        } else if near_u {
            if d > d_tol {
                return Err(format!("variable {j} at upper with reduced cost {d:.3e}"));
            }
            dual_obj += d.min(0.0) * u;
        } else if d.abs() > d_tol {
            return Err(format!("interior variable {j} with reduced cost {d:.3e}"));
        }
    }
    let gap = (sol.objective_value - dual_obj).abs();
    if gap > cfg.duality_gap_tol * (1.0 + sol.objective_value.abs()) {
        return Err(format!(
            "duality gap {gap:.3e} (primal {:.9e}, dual {dual_obj:.9e})",
            sol.objective_value
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// standardization
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
enum ColKind {
    /// Original variable shifted so its lower bound sits at zero.
    Shifted { var: usize, shift: f64 },
    /// Original variable mirrored around a finite upper bound.
    Negated { var: usize, upper: f64 },
    SplitPos { var: usize },
    SplitNeg { var: usize },
    Slack,
    Artificial,
}

struct Standardized {
    a: DenseMatrix,
    b: Vec<f64>,
    cost: Vec<f64>,
    phase1_cost: Vec<f64>,
    upper: Vec<f64>,
    cols: Vec<ColKind>,
    /// Original row index for each kept standardized row.
    kept_rows: Vec<usize>,
    /// +1/-1 applied to each kept row when normalizing the rhs sign.
    row_sign: Vec<f64>,
    /// Raw rhs of dropped (all-zero) rows, indexed by original row.
    dropped_rhs: Vec<f64>,
    first_artificial: usize,
}

impl Standardized {
    fn build(lp: &LinearProgram) -> Standardized {
        let m_orig = lp.num_rows();

        let mut kept_rows = Vec::with_capacity(m_orig);
        let mut dropped_rhs = vec![0.0; m_orig];
        for i in 0..m_orig {
            let nonzero = lp.constraints.row(i).iter().any(|&v| v != 0.0);
            if nonzero {
                kept_rows.push(i);
            } else {
                dropped_rhs[i] = lp.rhs[i];
            }
        }
        let m = kept_rows.len();

        let mut cols: Vec<ColKind> = Vec::new();
        for (j, &(l, u)) in lp.bounds.iter().enumerate() {
            if l.is_finite() {
                cols.push(ColKind::Shifted { var: j, shift: l });
            } else if u.is_finite() {
                cols.push(ColKind::Negated { var: j, upper: u });
            } else {
                cols.push(ColKind::SplitPos { var: j });
                cols.push(ColKind::SplitNeg { var: j });
            }
        }
        let n_slack = lp.senses.iter().filter(|s| **s != RowSense::Eq).count();
        let n_cols = cols.len() + n_slack + m;

        let mut a = DenseMatrix::zeros(m, n_cols);
        let mut b = vec![0.0; m];
        let mut cost = vec![0.0; n_cols];
        let mut upper = vec![f64::INFINITY; n_cols];

        for (r, &i) in kept_rows.iter().enumerate() {
            b[r] = lp.rhs[i];
        }
        for (jc, kind) in cols.iter().enumerate() {
            match *kind {
                ColKind::Shifted { var, shift } => {
                    for (r, &i) in kept_rows.iter().enumerate() {
                        let v = lp.constraints.at(i, var);
                        a.set(r, jc, v);
                        b[r] -= v * shift;
                    }
                    cost[jc] = lp.objective[var];
                    upper[jc] = lp.bounds[var].1 - shift;
                }
                ColKind::Negated { var, upper: ub } => {
                    for (r, &i) in kept_rows.iter().enumerate() {
                        let v = lp.constraints.at(i, var);
                        a.set(r, jc, -v);
                        b[r] -= v * ub;
                    }
                    cost[jc] = -lp.objective[var];
                }
                ColKind::SplitPos { var } => {
                    for (r, &i) in kept_rows.iter().enumerate() {
                        a.set(r, jc, lp.constraints.at(i, var));
                    }
                    cost[jc] = lp.objective[var];
                }
                ColKind::SplitNeg { var } => {
                    for (r, &i) in kept_rows.iter().enumerate() {
                        a.set(r, jc, -lp.constraints.at(i, var));
                    }
                    cost[jc] = -lp.objective[var];
                }
                ColKind::Slack | ColKind::Artificial => unreachable!(),
            }
        }
        let mut jc = cols.len();
        for (r, &i) in kept_rows.iter().enumerate() {
            match lp.senses[i] {
                RowSense::Le => {
                    a.set(r, jc, 1.0);
                    cols.push(ColKind::Slack);
                    jc += 1;
                }
                RowSense::Ge => {
                    a.set(r, jc, -1.0);
                    cols.push(ColKind::Slack);
                    jc += 1;
                }
                RowSense::Eq => {}
            }
        }
        // Normalize rhs signs so the all-artificial basis is feasible.
        let mut row_sign = vec![1.0; m];
        for r in 0..m {
            if b[r] < 0.0 {
                row_sign[r] = -1.0;
                b[r] = -b[r];
                for v in a.row_mut(r) {
                    *v = -*v;
                }
            }
        }
        let first_artificial = jc;
        let mut phase1_cost = vec![0.0; n_cols];
        for r in 0..m {
            a.set(r, jc, 1.0);
            cols.push(ColKind::Artificial);
            phase1_cost[jc] = 1.0;
            jc += 1;
        }
        debug_assert_eq!(jc, n_cols);

        Standardized {
            a,
            b,
            cost,
            phase1_cost,
            upper,
            cols,
            kept_rows,
            row_sign,
            dropped_rhs,
            first_artificial,
        }
    }

    /// Original-space point with every variable at its nearest bound.
    fn point_at_bounds(&self, lp: &LinearProgram) -> Vec<f64> {
        lp.bounds
            .iter()
            .map(|&(l, u)| {
                if l.is_finite() {
                    l
                } else if u.is_finite() {
                    u
                } else {
                    0.0
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// simplex core
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
    Breakdown,
}

struct Simplex<'a> {
    std: &'a Standardized,
    cfg: &'a LpConfig,
    m: usize,
    n: usize,
    /// Current tableau `B^-1 A`, m x n.
    t: Vec<f64>,
    basic: Vec<usize>,
    state: Vec<VarState>,
    /// Values of the basic variables.
    xb: Vec<f64>,
    pivots: usize,
    degenerate: usize,
    bland: bool,
    artificials_fixed: bool,
}

impl<'a> Simplex<'a> {
    fn new(std: &'a Standardized, cfg: &'a LpConfig) -> Simplex<'a> {
        let m = std.a.rows();
        let n = std.a.cols();
        Simplex {
            std,
            cfg,
            m,
            n,
            t: vec![0.0; m * n],
            basic: Vec::new(),
            state: vec![VarState::AtLower; n],
            xb: Vec::new(),
            pivots: 0,
            degenerate: 0,
            bland: false,
            artificials_fixed: false,
        }
    }

    fn artificial_start(&mut self) {
        self.basic = (self.std.first_artificial..self.n).collect();
        self.state = vec![VarState::AtLower; self.n];
        for (r, &j) in self.basic.iter().enumerate() {
            self.state[j] = VarState::Basic(r);
        }
        self.t.copy_from_slice(&self.std.a.data);
        self.xb = self.std.b.clone();
    }

    /// Adopt a previous basis when it is still nonsingular and primal
    /// feasible for the current bounds; report success.
    fn try_warm_start(&mut self, basis: &LpBasis) -> bool {
        if basis.basic.len() != self.m
            || basis.at_upper.len() != self.n
            || basis.basic.iter().any(|&j| j >= self.n)
        {
            return false;
        }
        self.basic = basis.basic.clone();
        self.state = vec![VarState::AtLower; self.n];
        for (r, &j) in self.basic.iter().enumerate() {
            self.state[j] = VarState::Basic(r);
        }
        for j in 0..self.n {
            if basis.at_upper[j] && self.state[j] == VarState::AtLower {
                if !self.std.upper[j].is_finite() {
                    return false;
                }
                self.state[j] = VarState::AtUpper;
            }
        }
        if !self.refactor() {
            return false;
        }
        let tol = self.cfg.feas_tol * (1.0 + self.std.b.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        for (r, &j) in self.basic.iter().enumerate() {
            if self.xb[r] < -tol || self.xb[r] > self.std.upper[j] + tol {
                return false;
            }
        }
        for r in 0..self.m {
            self.xb[r] = self.xb[r].max(0.0);
        }
        true
    }

    fn fix_artificials(&mut self) {
        self.artificials_fixed = true;
    }

    fn upper_of(&self, j: usize) -> f64 {
        if self.artificials_fixed && j >= self.std.first_artificial {
            0.0
        } else {
            self.std.upper[j]
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtUpper => self.upper_of(j),
            _ => 0.0,
        }
    }

    fn phase1_objective(&self, std: &Standardized) -> f64 {
        let mut v = 0.0;
        for (r, &j) in self.basic.iter().enumerate() {
            if j >= std.first_artificial {
                v += self.xb[r].max(0.0);
            }
        }
        v
    }

    /// Pivot remaining artificials out of the basis where a nonzero entry
    /// exists; rows without one are redundant and keep a zero artificial.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.m {
            if self.basic[r] < self.std.first_artificial {
                continue;
            }
            let mut enter = None;
            for j in 0..self.std.first_artificial {
                if matches!(self.state[j], VarState::Basic(_)) {
                    continue;
                }
                if self.t[r * self.n + j].abs() > self.cfg.pivot_tol {
                    enter = Some(j);
                    break;
                }
            }
            if let Some(j) = enter {
                let entering_value = self.nonbasic_value(j);
                self.pivot(r, j, entering_value, 0.0, 1.0);
            }
        }
    }

    fn run(&mut self, cost: &[f64], iteration_limit: usize, phase1: bool) -> PhaseEnd {
        loop {
            if self.pivots >= iteration_limit {
                return PhaseEnd::IterationLimit;
            }
            let entering = self.choose_entering(cost);
            let Some((j, sigma)) = entering else {
                return PhaseEnd::Optimal;
            };
            match self.step(j, sigma, phase1) {
                StepResult::Moved => {}
                StepResult::Unbounded => return PhaseEnd::Unbounded,
                StepResult::Breakdown => return PhaseEnd::Breakdown,
            }
            if self.pivots % self.cfg.refactor_every == 0 && !self.refactor() {
                return PhaseEnd::Breakdown;
            }
        }
    }

    /// Reduced costs for nonbasic columns, choosing the entering variable by
    /// Dantzig pricing, or Bland's rule after the degeneracy budget is spent.
    fn choose_entering(&self, cost: &[f64]) -> Option<(usize, f64)> {
        let mut d = cost.to_vec();
        for (r, &jb) in self.basic.iter().enumerate() {
            let cb = cost[jb];
            if cb != 0.0 {
                let row = &self.t[r * self.n..(r + 1) * self.n];
                for (dj, &trj) in d.iter_mut().zip(row) {
                    *dj -= cb * trj;
                }
            }
        }
        let tol = self.cfg.opt_tol;
        let mut best: Option<(usize, f64, f64)> = None; // (col, sigma, score)
        for j in 0..self.n {
            let up = self.upper_of(j);
            if up <= 0.0 && !matches!(self.state[j], VarState::Basic(_)) {
                continue; // fixed column
            }
            let (eligible, sigma, score) = match self.state[j] {
                VarState::Basic(_) => (false, 0.0, 0.0),
                VarState::AtLower => (d[j] < -tol, 1.0, -d[j]),
                VarState::AtUpper => (d[j] > tol, -1.0, d[j]),
            };
            if !eligible {
                continue;
            }
            if self.bland {
                return Some((j, sigma));
            }
            match best {
                Some((_, _, s)) if s >= score => {}
                _ => best = Some((j, sigma, score)),
            }
        }
        best.map(|(j, sigma, _)| (j, sigma))
    }

    fn step(&mut self, j: usize, sigma: f64, phase1: bool) -> StepResult {
        let col: Vec<f64> = (0..self.m).map(|r| self.t[r * self.n + j]).collect();
        // Ratio test: hold basics within their bounds, allow a bound flip of
        // the entering variable itself. Ties go to the smallest basic index.
        let mut t_max = self.upper_of(j); // flip distance, may be infinite
        let mut leave: Option<(usize, bool)> = None; // (row, leaves_at_upper)
        for (r, &alpha) in col.iter().enumerate() {
            let a = sigma * alpha;
            if a > self.cfg.pivot_tol {
                let ratio = (self.xb[r].max(0.0)) / a;
                if ratio < t_max - 1e-12 || (ratio < t_max + 1e-12 && self.better_leaver(leave, r))
                {
                    t_max = ratio.max(0.0);
                    leave = Some((r, false));
                }
            } else if a < -self.cfg.pivot_tol {
                let ub = self.upper_of(self.basic[r]);
                if ub.is_finite() {
                    let ratio = (ub - self.xb[r]).max(0.0) / (-a);
                    if ratio < t_max - 1e-12
                        || (ratio < t_max + 1e-12 && self.better_leaver(leave, r))
                    {
                        t_max = ratio.max(0.0);
                        leave = Some((r, true));
                    }
                }
            }
        }
        if t_max.is_infinite() {
            return if phase1 { StepResult::Breakdown } else { StepResult::Unbounded };
        }
        self.pivots += 1;
        if t_max <= 1e-12 {
            self.degenerate += 1;
            if self.degenerate > 3 * (self.m + self.n) {
                self.bland = true;
            }
        }
        match leave {
            None => {
                // Bound flip: entering variable crosses to its other bound.
                for r in 0..self.m {
                    self.xb[r] -= t_max * sigma * col[r];
                }
                self.state[j] = match self.state[j] {
                    VarState::AtLower => VarState::AtUpper,
                    VarState::AtUpper => VarState::AtLower,
                    VarState::Basic(_) => unreachable!(),
                };
                StepResult::Moved
            }
            Some((r, leaves_at_upper)) => {
                let entering_value = self.nonbasic_value(j) + sigma * t_max;
                for i in 0..self.m {
                    self.xb[i] -= t_max * sigma * col[i];
                }
                self.pivot(r, j, entering_value, t_max, sigma);
                let _ = leaves_at_upper;
                StepResult::Moved
            }
        }
    }

    fn better_leaver(&self, current: Option<(usize, bool)>, candidate_row: usize) -> bool {
        match current {
            None => true,
            Some((r, _)) => self.basic[candidate_row] < self.basic[r],
        }
    }

    /// Gauss-Jordan update of the tableau for entering column `j` on row `r`.
    fn pivot(&mut self, r: usize, j: usize, entering_value: f64, _t: f64, _sigma: f64) {
        let n = self.n;
        let piv = self.t[r * n + j];
        debug_assert!(piv.abs() > 0.0);
        let inv = 1.0 / piv;
        for v in &mut self.t[r * n..(r + 1) * n] {
            *v *= inv;
        }
        self.t[r * n + j] = 1.0;
        let pivot_row: Vec<f64> = self.t[r * n..(r + 1) * n].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + j];
            if f != 0.0 {
                let row = &mut self.t[i * n..(i + 1) * n];
                for (v, &p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[j] = 0.0;
            }
        }
        let old = self.basic[r];
        let old_val = self.xb[r];
        let ub_old = self.upper_of(old);
        self.state[old] = if ub_old.is_finite() && (old_val - ub_old).abs() < old_val.abs() {
            VarState::AtUpper
        } else {
            VarState::AtLower
        };
        self.basic[r] = j;
        self.state[j] = VarState::Basic(r);
        self.xb[r] = entering_value;
    }

    /// Rebuild the tableau and basic values from the original data.
    /// Returns false when the basis matrix is numerically singular.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let n = self.n;
        let mut bmat = vec![0.0; m * m];
        for (c, &j) in self.basic.iter().enumerate() {
            for r in 0..m {
                bmat[r * m + c] = self.std.a.at(r, j);
            }
        }
        let Some(lu) = LuFactors::factor(bmat, m) else {
            return false;
        };
        // T = B^-1 A, column block at a time through the factorization.
        let mut rhs = vec![0.0; m];
        for j in 0..n {
            for r in 0..m {
                rhs[r] = self.std.a.at(r, j);
            }
            lu.solve_in_place(&mut rhs);
            for r in 0..m {
                self.t[r * n + j] = rhs[r];
            }
        }
        let mut eff = self.std.b.clone();
        for j in 0..n {
            if matches!(self.state[j], VarState::AtUpper) {
                let u = self.upper_of(j);
                if u != 0.0 {
                    for r in 0..m {
                        eff[r] -= self.std.a.at(r, j) * u;
                    }
                }
            }
        }
        lu.solve_in_place(&mut eff);
        self.xb = eff;
        true
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        // Solve B' y = c_B with a fresh factorization of B'.
        let m = self.m;
        let mut bt = vec![0.0; m * m];
        for (c, &j) in self.basic.iter().enumerate() {
            for r in 0..m {
                bt[c * m + r] = self.std.a.at(r, j);
            }
        }
        let mut y: Vec<f64> = self.basic.iter().map(|&j| cost[j]).collect();
        match LuFactors::factor(bt, m) {
            Some(lu) => {
                lu.solve_in_place(&mut y);
                y
            }
            None => vec![0.0; m],
        }
    }

    fn finish(&mut self, lp: &LinearProgram, std: &Standardized, status: LpStatus) -> LpSolution {
        if status == LpStatus::Optimal || status == LpStatus::IterationLimit {
            self.refactor();
        }
        let mut x_std = vec![0.0; self.n];
        for j in 0..self.n {
            x_std[j] = self.nonbasic_value(j);
        }
        for (r, &j) in self.basic.iter().enumerate() {
            x_std[j] = self.xb[r];
        }
        let mut primal = vec![0.0; lp.num_vars()];
        for (j, kind) in std.cols.iter().enumerate() {
            match *kind {
                ColKind::Shifted { var, shift } => primal[var] = shift + x_std[j],
                ColKind::Negated { var, upper } => primal[var] = upper - x_std[j],
                ColKind::SplitPos { var } => primal[var] += x_std[j],
                ColKind::SplitNeg { var } => primal[var] -= x_std[j],
                ColKind::Slack | ColKind::Artificial => {}
            }
        }
        let objective_value = match status {
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => lp
                .objective
                .iter()
                .zip(&primal)
                .map(|(c, x)| c * x)
                .sum(),
        };
        let y_std = if status == LpStatus::Optimal {
            self.duals(&std.cost)
        } else {
            vec![0.0; self.m]
        };
        let mut dual = vec![0.0; lp.num_rows()];
        for (r, &orig) in std.kept_rows.iter().enumerate() {
            dual[orig] = std.row_sign[r] * y_std[r];
        }
        let at_upper: Vec<bool> =
            (0..self.n).map(|j| matches!(self.state[j], VarState::AtUpper)).collect();
        LpSolution {
            status,
            primal,
            dual,
            objective_value,
            pivots: self.pivots,
            basis: LpBasis { basic: self.basic.clone(), at_upper },
        }
    }
}

enum StepResult {
    Moved,
    Unbounded,
    Breakdown,
}

/// Dense LU with partial pivoting, just enough for basis refactorization.
struct LuFactors {
    lu: Vec<f64>,
    perm: Vec<usize>,
    m: usize,
}

impl LuFactors {
    fn factor(mut a: Vec<f64>, m: usize) -> Option<LuFactors> {
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut p = k;
            let mut best = a[perm[k] * m + k].abs();
            for i in k + 1..m {
                let v = a[perm[i] * m + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-13 {
                return None;
            }
            perm.swap(k, p);
            let pk = perm[k];
            let inv = 1.0 / a[pk * m + k];
            for i in k + 1..m {
                let pi = perm[i];
                let f = a[pi * m + k] * inv;
                a[pi * m + k] = f;
                if f != 0.0 {
                    for j in k + 1..m {
                        a[pi * m + j] -= f * a[pk * m + j];
                    }
                }
            }
        }
        Some(LuFactors { lu: a, perm, m })
    }

    fn solve_in_place(&self, rhs: &mut Vec<f64>) {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut v = rhs[self.perm[i]];
            for j in 0..i {
                v -= self.lu[self.perm[i] * m + j] * y[j];
            }
            y[i] = v;
        }
        for i in (0..m).rev() {
            let mut v = y[i];
            for j in i + 1..m {
                v -= self.lu[self.perm[i] * m + j] * rhs[j];
            }
            rhs[i] = v / self.lu[self.perm[i] * m + i];
        }
    }
}
