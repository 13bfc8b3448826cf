//! Exact mixed-integer solver for the LQS problem.
//!
//! The model tracks the q-th ordered absolute residual with one binary
//! selector per sample (`z_i = 1` exactly when `|r_i| <= gamma`), the
//! residual split `r = r+ - r-`, and slack pairs `(mu, mu_bar)` absorbing
//! the two sides of `|r_i| - gamma = mu_i - mu_bar_i`. Each slack pair, the
//! residual split, and `(z_i, mu_i)` form SOS-1 sets: at most one member
//! nonzero. Branching happens on the `z` variables only; once a node has
//! fixed q of them to one, its optimum is exactly the max-norm fit to those
//! samples, which is how leaves are evaluated. Node lower bounds come from
//! the big-M linear relaxation (informative once a coefficient box supplies
//! finite constants) and from the max-norm fit to the already-selected
//! samples; both are valid, the solver takes the larger.
//!
//! The search is best-bound with most-fractional branching, all ties broken
//! toward the smallest index, which makes single-worker runs deterministic.

use crate::data::{Dataset, QuantileSpec};
use crate::error::{Error, Result};
use crate::fits::{chebyshev_fit_constrained, lqs_objective};
use crate::lp::{self, DenseMatrix, LinearProgram, LpStatus, RowSense};
use nalgebra::{DMatrix, DVector};
use std::collections::BinaryHeap;
use std::io::Write;
use std::time::{Duration, Instant};

/// One SOS-1 pair of the formulation, indexed by sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sos1Pair {
    /// `(mu_bar_i, mu_i)`: the two slack sides cannot both be active.
    SlackPair(usize),
    /// `(r+_i, r-_i)`: the residual split.
    ResidualSplit(usize),
    /// `(z_i, mu_i)`: selecting a sample forces its upper slack to zero.
    Selector(usize),
}

/// Optional coefficient box `|beta_j - center_j| <= radius`.
#[derive(Clone, Debug)]
pub struct BoxConstraint {
    pub center: DVector<f64>,
    pub radius: f64,
}

/// Optional polyhedral rows `A beta <= b`.
#[derive(Clone, Debug)]
pub struct Polyhedral {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Per-sample big-M constants; infinite entries mean "no finite constant
/// available" and drop the corresponding relaxation row.
#[derive(Clone, Copy, Debug)]
pub struct BigM {
    /// Bound on `mu_bar_i` (tightened further by the incumbent at solve time).
    pub upper: f64,
    /// Bound on `mu_i`.
    pub lower: f64,
}

#[derive(Clone, Debug)]
pub struct MioModel {
    pub data: Dataset,
    pub q: QuantileSpec,
    pub sos1_sets: Vec<Sos1Pair>,
    pub box_constraint: Option<BoxConstraint>,
    pub polyhedral: Option<Polyhedral>,
    pub big_m: Vec<BigM>,
}

impl MioModel {
    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    fn beta_box(&self) -> Option<(&DVector<f64>, f64)> {
        self.box_constraint.as_ref().map(|b| (&b.center, b.radius))
    }

    fn polyhedral_rows(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.polyhedral.as_ref().map(|p| (&p.a, &p.b))
    }

    /// Whether the linear relaxation can beat the combinatorial bound:
    /// without finite lower-side constants or extra rows on beta it
    /// provably collapses to the max-norm bound on the fixed samples.
    fn relaxation_is_informative(&self) -> bool {
        self.box_constraint.is_some() || self.polyhedral.is_some()
    }

    pub fn is_feasible_beta(&self, beta: &DVector<f64>) -> bool {
        if beta.len() != self.p() {
            return false;
        }
        if let Some(b) = &self.box_constraint {
            let dev = (beta - &b.center).amax();
            if dev > b.radius + 1e-9 * (1.0 + b.radius) {
                return false;
            }
        }
        if let Some(poly) = &self.polyhedral {
            let lhs = &poly.a * beta;
            for i in 0..poly.b.len() {
                if lhs[i] > poly.b[i] + 1e-9 * (1.0 + poly.b[i].abs()) {
                    return false;
                }
            }
        }
        true
    }

    /// Plain-text summary for triage.
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "samples {}  coefficients {}  q {}", self.n(), self.p(), self.q.q())?;
        writeln!(w, "sos1 pairs {}", self.sos1_sets.len())?;
        match &self.box_constraint {
            Some(b) => writeln!(w, "box radius {} around {:?}", b.radius, b.center.as_slice())?,
            None => writeln!(w, "box none")?,
        }
        match &self.polyhedral {
            Some(p) => writeln!(w, "polyhedral rows {}", p.a.nrows())?,
            None => writeln!(w, "polyhedral none")?,
        }
        for (i, m) in self.big_m.iter().enumerate() {
            writeln!(w, "  M[{i}] upper {} lower {}", m.upper, m.lower)?;
        }
        Ok(())
    }
}

/// Fixed-sample bitset sized to a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSet {
    words: Vec<u64>,
    count: usize,
}

impl SampleSet {
    pub fn empty(n: usize) -> SampleSet {
        SampleSet { words: vec![0; n.div_ceil(64)], count: 0 }
    }

    pub fn insert(&mut self, i: usize) {
        let (w, b) = (i / 64, i % 64);
        if self.words[w] & (1 << b) == 0 {
            self.words[w] |= 1 << b;
            self.count += 1;
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..n).filter(move |&i| self.contains(i))
    }

    fn intersects(&self, other: &SampleSet) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }
}

/// One branch-and-bound node: which selectors are pinned each way.
#[derive(Clone, Debug)]
pub struct BnbNode {
    pub fixed_one: SampleSet,
    pub fixed_zero: SampleSet,
    pub lp_bound: f64,
    pub depth: usize,
}

impl BnbNode {
    pub fn root(n: usize) -> BnbNode {
        BnbNode {
            fixed_one: SampleSet::empty(n),
            fixed_zero: SampleSet::empty(n),
            lp_bound: 0.0,
            depth: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MioStatus {
    ProvedOptimal,
    TimeLimit,
    NodeLimit,
}

/// Timestamped bound improvement, for evolution plots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEvent {
    pub wall_time: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
}

#[derive(Clone, Debug)]
pub struct MioResult {
    pub incumbent_beta: DVector<f64>,
    pub upper_bound: f64,
    pub lower_bound: f64,
    /// `(upper - lower) / max(upper, 1e-10)`.
    pub gap: f64,
    pub status: MioStatus,
    pub nodes_explored: usize,
    /// Nodes where the linear relaxation failed and only the combinatorial
    /// bound was used.
    pub relaxation_fallbacks: usize,
    pub trace: Vec<TraceEvent>,
}

#[derive(Clone, Debug)]
pub struct MioLimits {
    pub time: Option<Duration>,
    pub nodes: Option<usize>,
    /// Relative gap below which optimality is declared.
    pub gap_tol: f64,
}

impl Default for MioLimits {
    fn default() -> Self {
        MioLimits { time: None, nodes: None, gap_tol: 1e-6 }
    }
}

/// Assemble the model: selector/slack structure, optional box and
/// polyhedral rows, and the per-sample big-M constants derived from the box.
pub fn build_model(
    data: Dataset,
    q: QuantileSpec,
    box_constraint: Option<BoxConstraint>,
    polyhedral: Option<Polyhedral>,
) -> Result<MioModel> {
    let n = data.n();
    let p = data.p();
    if q.q() > n {
        return Err(Error::invalid("q exceeds the sample count"));
    }
    if let Some(b) = &box_constraint {
        if b.center.len() != p {
            return Err(Error::invalid("box center length must match the model matrix"));
        }
        if !(b.radius >= 0.0) {
            return Err(Error::invalid("box radius must be nonnegative"));
        }
    }
    if let Some(poly) = &polyhedral {
        if poly.a.ncols() != p {
            return Err(Error::invalid(format!(
                "polyhedral matrix has {} columns, expected {p}",
                poly.a.ncols()
            )));
        }
        if poly.a.nrows() != poly.b.len() {
            return Err(Error::invalid("polyhedral rhs length must match its matrix"));
        }
    }
    let mut sos1_sets = Vec::with_capacity(3 * n);
    for i in 0..n {
        sos1_sets.push(Sos1Pair::SlackPair(i));
        sos1_sets.push(Sos1Pair::ResidualSplit(i));
        sos1_sets.push(Sos1Pair::Selector(i));
    }
    let big_m = match &box_constraint {
        Some(b) => {
            // Residual reach inside the box: |y_i - x_i' c| + radius * ||x_i||_1.
            let reaches: Vec<f64> = (0..n)
                .map(|i| {
                    let pred: f64 = (0..p).map(|j| data.x()[(i, j)] * b.center[j]).sum();
                    let l1: f64 = (0..p).map(|j| data.x()[(i, j)].abs()).sum();
                    (data.y()[i] - pred).abs() + b.radius * l1
                })
                .collect();
            let max_reach = reaches.iter().cloned().fold(0.0f64, f64::max);
            reaches.iter().map(|&r| BigM { upper: max_reach, lower: r }).collect()
        }
        None => vec![BigM { upper: f64::INFINITY, lower: f64::INFINITY }; n],
    };
    Ok(MioModel { data, q, sos1_sets, box_constraint, polyhedral, big_m })
}

/// Max-norm fit to a subset under the model's side constraints;
/// `None` when the side constraints alone are infeasible.
fn leaf_fit(model: &MioModel, subset: &[usize]) -> Result<Option<(f64, DVector<f64>)>> {
    let fit = chebyshev_fit_constrained(
        &model.data,
        subset,
        model.beta_box(),
        model.polyhedral_rows(),
    )?;
    Ok(fit.map(|f| (f.objective, f.beta)))
}

/// The big-M linear relaxation at a node. `incumbent` tightens the
/// upper-side constant when available.
fn relaxation_lp(model: &MioModel, node: &BnbNode, incumbent: Option<f64>) -> LinearProgram {
    let n = model.n();
    let p = model.p();
    let data = &model.data;
    // Variable layout: gamma, beta(p), r+(n), r-(n), mu(n), mu_bar(n), z(n).
    let gamma = 0;
    let beta0 = 1;
    let rp0 = beta0 + p;
    let rm0 = rp0 + n;
    let mu0 = rm0 + n;
    let mb0 = mu0 + n;
    let z0 = mb0 + n;
    let cols = z0 + n;

    let m_upper: Vec<f64> = model
        .big_m
        .iter()
        .map(|m| match incumbent {
            Some(ub) => m.upper.min(ub),
            None => m.upper,
        })
        .collect();
    let poly_rows = model.polyhedral.as_ref().map_or(0, |p| p.a.nrows());
    let mu_rows = m_upper.iter().filter(|v| v.is_finite()).count();
    let ml_rows = model.big_m.iter().filter(|m| m.lower.is_finite()).count();
    let rows = 3 * n + mu_rows + ml_rows + 1 + poly_rows;

    let mut mat = DenseMatrix::zeros(rows, cols);
    let mut senses = Vec::with_capacity(rows);
    let mut rhs = Vec::with_capacity(rows);
    let mut r = 0;
    for i in 0..n {
        // r+_i - r-_i + x_i' beta = y_i
        mat.set(r, rp0 + i, 1.0);
        mat.set(r, rm0 + i, -1.0);
        for j in 0..p {
            mat.set(r, beta0 + j, data.x()[(i, j)]);
        }
        senses.push(RowSense::Eq);
        rhs.push(data.y()[i]);
        r += 1;
        // r+_i + r-_i - mu_i - gamma <= 0
        mat.set(r, rp0 + i, 1.0);
        mat.set(r, rm0 + i, 1.0);
        mat.set(r, mu0 + i, -1.0);
        mat.set(r, gamma, -1.0);
        senses.push(RowSense::Le);
        rhs.push(0.0);
        r += 1;
        // gamma - r+_i - r-_i - mu_bar_i <= 0
        mat.set(r, gamma, 1.0);
        mat.set(r, rp0 + i, -1.0);
        mat.set(r, rm0 + i, -1.0);
        mat.set(r, mb0 + i, -1.0);
        senses.push(RowSense::Le);
        rhs.push(0.0);
        r += 1;
    }
    for i in 0..n {
        if m_upper[i].is_finite() {
            // mu_bar_i <= M_u z_i
            mat.set(r, mb0 + i, 1.0);
            mat.set(r, z0 + i, -m_upper[i]);
            senses.push(RowSense::Le);
            rhs.push(0.0);
            r += 1;
        }
    }
    for i in 0..n {
        if model.big_m[i].lower.is_finite() {
            // mu_i <= M_l (1 - z_i)
            mat.set(r, mu0 + i, 1.0);
            mat.set(r, z0 + i, model.big_m[i].lower);
            senses.push(RowSense::Le);
            rhs.push(model.big_m[i].lower);
            r += 1;
        }
    }
    for i in 0..n {
        mat.set(r, z0 + i, 1.0);
    }
    senses.push(RowSense::Eq);
    rhs.push(model.q.q() as f64);
    r += 1;
    if let Some(poly) = &model.polyhedral {
        for pr in 0..poly.a.nrows() {
            for j in 0..p {
                mat.set(r, beta0 + j, poly.a[(pr, j)]);
            }
            senses.push(RowSense::Le);
            rhs.push(poly.b[pr]);
            r += 1;
        }
    }
    debug_assert_eq!(r, rows);

    let mut bounds = Vec::with_capacity(cols);
    bounds.push((0.0, f64::INFINITY)); // gamma
    match &model.box_constraint {
        Some(b) => {
            for j in 0..p {
                bounds.push((b.center[j] - b.radius, b.center[j] + b.radius));
            }
        }
        None => bounds.extend(std::iter::repeat((f64::NEG_INFINITY, f64::INFINITY)).take(p)),
    }
    bounds.extend(std::iter::repeat((0.0, f64::INFINITY)).take(2 * n)); // r+, r-
    for i in 0..n {
        // Selecting a sample zeroes mu_i; the slack pair SOS-1 is enforced
        // through branching and leaf evaluation.
        if node.fixed_one.contains(i) {
            bounds.push((0.0, 0.0));
        } else {
            bounds.push((0.0, f64::INFINITY));
        }
    }
    for i in 0..n {
        if node.fixed_zero.contains(i) {
            bounds.push((0.0, 0.0));
        } else {
            bounds.push((0.0, f64::INFINITY));
        }
    }
    for i in 0..n {
        if node.fixed_one.contains(i) {
            bounds.push((1.0, 1.0));
        } else if node.fixed_zero.contains(i) {
            bounds.push((0.0, 0.0));
        } else {
            bounds.push((0.0, 1.0));
        }
    }
    let mut objective = vec![0.0; cols];
    objective[gamma] = 1.0;
    LinearProgram { objective, constraints: mat, senses, rhs, bounds }
}

struct NodeBound {
    bound: f64,
    z_rel: Option<Vec<f64>>,
    lp_fell_back: bool,
}

fn node_bound(model: &MioModel, node: &BnbNode, incumbent: Option<f64>) -> Result<NodeBound> {
    let n = model.n();
    let q = model.q.q();
    if node.fixed_one.intersects(&node.fixed_zero) {
        return Err(Error::invalid("node fixes a selector both ways"));
    }
    if node.fixed_one.len() > q || node.fixed_zero.len() > n - q {
        return Ok(NodeBound { bound: f64::INFINITY, z_rel: None, lp_fell_back: false });
    }
    // Leaves are exact: the subset is fully determined.
    if node.fixed_one.len() == q || node.fixed_zero.len() == n - q {
        let subset: Vec<usize> = if node.fixed_one.len() == q {
            node.fixed_one.iter(n).collect()
        } else {
            (0..n).filter(|&i| !node.fixed_zero.contains(i)).collect()
        };
        let bound = match leaf_fit(model, &subset)? {
            Some((value, _)) => value,
            None => f64::INFINITY,
        };
        return Ok(NodeBound { bound, z_rel: None, lp_fell_back: false });
    }
    let combinatorial = if node.fixed_one.is_empty() {
        0.0
    } else {
        let subset: Vec<usize> = node.fixed_one.iter(n).collect();
        match leaf_fit(model, &subset)? {
            Some((value, _)) => value,
            None => {
                return Ok(NodeBound { bound: f64::INFINITY, z_rel: None, lp_fell_back: false })
            }
        }
    };
    if !model.relaxation_is_informative() {
        // Lower-side constants are infinite here, so the linear relaxation's
        // value equals the combinatorial bound; skip the solve.
        return Ok(NodeBound { bound: combinatorial, z_rel: None, lp_fell_back: false });
    }
    let lp_instance = relaxation_lp(model, node, incumbent);
    let limit = 60 * (lp_instance.num_rows() + lp_instance.num_vars()) + 4000;
    match lp::solve_lp(&lp_instance, limit) {
        Ok(sol) => match sol.status {
            LpStatus::Optimal => {
                let z0 = lp_instance.num_vars() - n;
                let z_rel = sol.primal[z0..].to_vec();
                Ok(NodeBound {
                    bound: combinatorial.max(sol.objective_value),
                    z_rel: Some(z_rel),
                    lp_fell_back: false,
                })
            }
            // Infeasible here means the incumbent cutoff (or the side
            // constraints) exclude the whole subtree.
            LpStatus::Infeasible => {
                Ok(NodeBound { bound: f64::INFINITY, z_rel: None, lp_fell_back: false })
            }
            _ => Ok(NodeBound { bound: combinatorial, z_rel: None, lp_fell_back: true }),
        },
        Err(_) => Ok(NodeBound { bound: combinatorial, z_rel: None, lp_fell_back: true }),
    }
}

/// Valid lower bound on the best objective reachable in the node's subtree:
/// the larger of the big-M relaxation value and the max-norm fit to the
/// samples already selected. Exact at leaves.
pub fn node_relaxation(model: &MioModel, node: &BnbNode) -> Result<f64> {
    Ok(node_bound(model, node, None)?.bound)
}

/// Reconstructed variable assignment at an integral leaf, for reporting.
#[derive(Clone, Debug)]
pub struct LeafAssignment {
    pub gamma: f64,
    pub r_plus: DVector<f64>,
    pub r_minus: DVector<f64>,
    pub mu: DVector<f64>,
    pub mu_bar: DVector<f64>,
    pub z: Vec<u8>,
}

pub fn leaf_assignment(model: &MioModel, subset: &[usize], beta: &DVector<f64>) -> LeafAssignment {
    let n = model.n();
    let res = model.data.residuals(beta);
    let gamma = subset.iter().map(|&i| res[i].abs()).fold(0.0f64, f64::max);
    let r_plus = DVector::from_fn(n, |i, _| res[i].max(0.0));
    let r_minus = DVector::from_fn(n, |i, _| (-res[i]).max(0.0));
    let mu = DVector::from_fn(n, |i, _| (res[i].abs() - gamma).max(0.0));
    let mu_bar = DVector::from_fn(n, |i, _| (gamma - res[i].abs()).max(0.0));
    let mut z = vec![0u8; n];
    for &i in subset {
        z[i] = 1;
    }
    LeafAssignment { gamma, r_plus, r_minus, mu, mu_bar, z }
}

struct HeapNode {
    node: BnbNode,
    seq: u64,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.node.lp_bound == other.node.lp_bound && self.seq == other.seq
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; invert for best-bound-first.
        other
            .node
            .lp_bound
            .total_cmp(&self.node.lp_bound)
            .then(other.seq.cmp(&self.seq))
    }
}

struct SearchState<'a> {
    start: Instant,
    upper: f64,
    lower: f64,
    incumbent: Option<DVector<f64>>,
    trace: Vec<TraceEvent>,
    sink: Option<&'a mut dyn Write>,
}

impl<'a> SearchState<'a> {
    fn emit(&mut self) -> Result<()> {
        let event = TraceEvent {
            wall_time: self.start.elapsed().as_secs_f64(),
            upper_bound: self.upper,
            lower_bound: self.lower,
        };
        if self.trace.last().map(|e| (e.upper_bound, e.lower_bound))
            != Some((event.upper_bound, event.lower_bound))
        {
            if let Some(sink) = self.sink.as_deref_mut() {
                writeln!(sink, "{},{},{}", event.wall_time, event.upper_bound, event.lower_bound)?;
            }
            self.trace.push(event);
        }
        Ok(())
    }

    fn offer_incumbent(&mut self, value: f64, beta: DVector<f64>) -> Result<()> {
        if value < self.upper {
            self.upper = value;
            self.incumbent = Some(beta);
            self.emit()?;
        }
        Ok(())
    }

    fn raise_lower(&mut self, bound: f64) -> Result<()> {
        let bound = bound.min(self.upper);
        if bound > self.lower {
            self.lower = bound;
            self.emit()?;
        }
        Ok(())
    }

    fn gap(&self) -> f64 {
        if self.upper.is_infinite() {
            if self.lower.is_infinite() {
                return 0.0; // proven infeasible
            }
            // (upper - lower)/upper tends to 1 as the incumbent recedes.
            return 1.0;
        }
        (self.upper - self.lower).max(0.0) / self.upper.abs().max(1e-10)
    }
}

/// Branch index: most fractional relaxation selector among the free ones,
/// smallest index on ties; smallest free index when no relaxation is
/// available or every selector came back integral.
fn branch_index(n: usize, node: &BnbNode, z_rel: &Option<Vec<f64>>) -> Option<usize> {
    let free = |i: usize| !node.fixed_one.contains(i) && !node.fixed_zero.contains(i);
    if let Some(z) = z_rel {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| free(i)) {
            let frac = z[i].min(1.0 - z[i]);
            if frac > 1e-9 {
                match best {
                    Some((_, f)) if f >= frac => {}
                    _ => best = Some((i, frac)),
                }
            }
        }
        if let Some((i, _)) = best {
            return Some(i);
        }
    }
    (0..n).find(|&i| free(i))
}

pub fn solve(model: &MioModel, warm_start: Option<&DVector<f64>>, limits: &MioLimits) -> Result<MioResult> {
    solve_inner(model, warm_start, limits, None)
}

/// Like [`solve`], additionally streaming every bound improvement as a CSV
/// row `wall_time_s,upper_bound,lower_bound` to `sink`.
pub fn solve_with_evolution<W: Write>(
    model: &MioModel,
    warm_start: Option<&DVector<f64>>,
    limits: &MioLimits,
    sink: &mut W,
) -> Result<MioResult> {
    writeln!(sink, "wall_time_s,upper_bound,lower_bound")?;
    solve_inner(model, warm_start, limits, Some(sink))
}

/// Write a recorded trace in the same CSV layout.
pub fn write_trace_csv<W: Write>(trace: &[TraceEvent], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "wall_time_s,upper_bound,lower_bound")?;
    for e in trace {
        writeln!(w, "{},{},{}", e.wall_time, e.upper_bound, e.lower_bound)?;
    }
    Ok(())
}

fn solve_inner(
    model: &MioModel,
    warm_start: Option<&DVector<f64>>,
    limits: &MioLimits,
    sink: Option<&mut dyn Write>,
) -> Result<MioResult> {
    let n = model.n();
    let q = model.q.q();
    let mut state = SearchState {
        start: Instant::now(),
        upper: f64::INFINITY,
        lower: 0.0,
        incumbent: None,
        trace: Vec::new(),
        sink,
    };
    let mut nodes_explored = 0usize;
    let mut relaxation_fallbacks = 0usize;

    if let Some(w) = warm_start {
        if w.len() != model.p() {
            return Err(Error::invalid(format!(
                "warm start has {} coordinates, expected {}",
                w.len(),
                model.p()
            )));
        }
        if model.is_feasible_beta(w) {
            let value = lqs_objective(&model.data, w, model.q);
            state.offer_incumbent(value, w.clone())?;
        }
    }

    let mut frontier: BinaryHeap<HeapNode> = BinaryHeap::new();
    let mut seq = 0u64;
    let root = BnbNode::root(n);
    if q == n {
        // Single subset: the root is already a leaf.
        nodes_explored += 1;
        let subset: Vec<usize> = (0..n).collect();
        if let Some((value, beta)) = leaf_fit(model, &subset)? {
            state.offer_incumbent(value, beta)?;
        }
        state.raise_lower(state.upper)?;
    } else {
        let rb = node_bound(model, &root, Some(state.upper).filter(|u| u.is_finite()))?;
        relaxation_fallbacks += usize::from(rb.lp_fell_back);
        let mut root = root;
        root.lp_bound = rb.bound;
        if root.lp_bound < state.upper {
            frontier.push(HeapNode { node: root, seq });
            seq += 1;
        }
    }

    let mut status = MioStatus::ProvedOptimal;
    let mut hit_time = false;
    let mut hit_nodes = false;
    loop {
        if let Some(t) = limits.time {
            if state.start.elapsed() > t {
                hit_time = true;
                break;
            }
        }
        if let Some(max_nodes) = limits.nodes {
            if nodes_explored >= max_nodes {
                hit_nodes = true;
                break;
            }
        }
        let Some(HeapNode { node, .. }) = frontier.pop() else {
            // Exhausted: the incumbent is optimal (or the model infeasible).
            state.raise_lower(state.upper)?;
            break;
        };
        state.raise_lower(node.lp_bound)?;
        if state.gap() <= limits.gap_tol {
            break;
        }
        if node.lp_bound >= state.upper {
            continue;
        }
        nodes_explored += 1;
        // Re-run the relaxation to pick the branching variable (and profit
        // from the tighter incumbent cutoff) only when it is informative;
        // otherwise the stored bound is already exact for this node.
        let z_rel = if model.relaxation_is_informative() {
            let nb = node_bound(model, &node, Some(state.upper).filter(|u| u.is_finite()))?;
            relaxation_fallbacks += usize::from(nb.lp_fell_back);
            if nb.bound >= state.upper {
                continue;
            }
            nb.z_rel
        } else {
            None
        };
        let Some(branch) = branch_index(n, &node, &z_rel) else {
            continue;
        };
        for fix_to_one in [true, false] {
            let mut child = BnbNode {
                fixed_one: node.fixed_one.clone(),
                fixed_zero: node.fixed_zero.clone(),
                lp_bound: node.lp_bound,
                depth: node.depth + 1,
            };
            if fix_to_one {
                child.fixed_one.insert(branch);
            } else {
                child.fixed_zero.insert(branch);
            }
            if child.fixed_one.len() > q || child.fixed_zero.len() > n - q {
                continue; // structurally empty
            }
            if child.fixed_one.len() == q || child.fixed_zero.len() == n - q {
                nodes_explored += 1;
                let subset: Vec<usize> = if child.fixed_one.len() == q {
                    child.fixed_one.iter(n).collect()
                } else {
                    (0..n).filter(|&i| !child.fixed_zero.contains(i)).collect()
                };
                if let Some((value, beta)) = leaf_fit(model, &subset)? {
                    state.offer_incumbent(value, beta)?;
                }
                continue;
            }
            let cb = node_bound(model, &child, Some(state.upper).filter(|u| u.is_finite()))?;
            relaxation_fallbacks += usize::from(cb.lp_fell_back);
            child.lp_bound = child.lp_bound.max(cb.bound);
            if child.lp_bound < state.upper {
                frontier.push(HeapNode { node: child, seq });
                seq += 1;
            }
        }
    }

    if hit_time {
        status = MioStatus::TimeLimit;
    } else if hit_nodes {
        status = MioStatus::NodeLimit;
    }
    // Remaining frontier still caps the certified lower bound.
    if status != MioStatus::ProvedOptimal {
        if let Some(top) = frontier.peek() {
            state.raise_lower(top.node.lp_bound.min(state.upper))?;
        }
    } else if frontier.is_empty() {
        state.raise_lower(state.upper)?;
    }
    if state.gap() <= limits.gap_tol {
        status = MioStatus::ProvedOptimal;
    }
    state.emit()?;

    let incumbent_beta = state
        .incumbent
        .clone()
        .unwrap_or_else(|| DVector::zeros(model.p()));
    Ok(MioResult {
        incumbent_beta,
        upper_bound: state.upper,
        lower_bound: state.lower,
        gap: state.gap(),
        status,
        nodes_explored,
        relaxation_fallbacks,
        trace: state.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Scheme, SyntheticSpec};
    use crate::fits::chebyshev_fit;
    use crate::oracle::enumerate_lqs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: &[f64]) -> Dataset {
        Dataset::from_rows(y, &vec![vec![1.0]; y.len()]).unwrap()
    }

    fn generous() -> MioLimits {
        MioLimits { time: Some(Duration::from_secs(60)), nodes: Some(2_000_000), gap_tol: 1e-9 }
    }

    #[test]
    fn model_structure_counts() {
        let data = intercept_only(&[1.0, 2.0, 3.0]);
        let q = QuantileSpec::new(2, 3).unwrap();
        let model = build_model(data, q, None, None).unwrap();
        assert_eq!(model.n(), 3);
        assert_eq!(model.sos1_sets.len(), 9);
        assert!(model.big_m.iter().all(|m| m.upper.is_infinite() && m.lower.is_infinite()));
    }

    #[test]
    fn zero_radius_box_pins_the_coefficients() {
        let data = intercept_only(&[0.0, 1.0, 10.0]);
        let q = QuantileSpec::new(2, 3).unwrap();
        let center = DVector::from_column_slice(&[0.0]);
        let model = build_model(
            data.clone(),
            q,
            Some(BoxConstraint { center: center.clone(), radius: 0.0 }),
            None,
        )
        .unwrap();
        let result = solve(&model, None, &generous()).unwrap();
        assert_eq!(result.status, MioStatus::ProvedOptimal);
        let expected = lqs_objective(&data, &center, q);
        assert!((result.upper_bound - expected).abs() < 1e-9);
    }

    #[test]
    fn box_big_m_values_are_the_residual_reaches() {
        let data = Dataset::from_rows(&[3.0, -1.0], &[vec![1.0, 2.0], vec![-2.0, 0.5]]).unwrap();
        let q = QuantileSpec::new(1, 2).unwrap();
        let center = DVector::from_column_slice(&[0.5, -0.5]);
        let radius = 2.0;
        let model =
            build_model(data, q, Some(BoxConstraint { center, radius }), None).unwrap();
        // Hand arithmetic: |y - x'c| + r * ||x||_1.
        let r0 = (3.0f64 - (0.5 - 1.0)).abs() + 2.0 * 3.0;
        let r1 = (-1.0f64 - (-1.0 - 0.25)).abs() + 2.0 * 2.5;
        assert!((model.big_m[0].lower - r0).abs() < 1e-12);
        assert!((model.big_m[1].lower - r1).abs() < 1e-12);
        let max_r = r0.max(r1);
        assert!((model.big_m[0].upper - max_r).abs() < 1e-12);
    }

    #[test]
    fn leaf_relaxation_equals_chebyshev_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..20 {
            let n = rng.random_range(5..10);
            let p = rng.random_range(1..3);
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| (0..p).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let data = Dataset::from_rows(&y, &rows).unwrap();
            let q_val = rng.random_range(p + 1..=n);
            let q = QuantileSpec::new(q_val, n).unwrap();
            let model = build_model(data.clone(), q, None, None).unwrap();
            let mut node = BnbNode::root(n);
            let subset = rand::seq::index::sample(&mut rng, n, q_val).into_vec();
            for &i in &subset {
                node.fixed_one.insert(i);
            }
            let bound = node_relaxation(&model, &node).unwrap();
            let mut sorted = subset.clone();
            sorted.sort_unstable();
            let cheb = chebyshev_fit(&data, &sorted).unwrap();
            assert!(
                (bound - cheb.objective).abs() <= 1e-9,
                "leaf bound {bound} vs chebyshev {}",
                cheb.objective
            );
        }
    }

    #[test]
    fn root_bound_without_box_is_zero() {
        let data = intercept_only(&[1.0, 5.0, 9.0, 2.0]);
        let q = QuantileSpec::new(3, 4).unwrap();
        let model = build_model(data, q, None, None).unwrap();
        let bound = node_relaxation(&model, &BnbNode::root(4)).unwrap();
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn root_bound_never_exceeds_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let spec = SyntheticSpec::new(10, 2, 0.3, Scheme::B, 19).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(6, 10).unwrap();
        let oracle = enumerate_lqs(&inst.data, q, 1 << 20).unwrap();
        let center = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let model = build_model(
            inst.data.clone(),
            q,
            Some(BoxConstraint { center, radius: 50.0 }),
            None,
        )
        .unwrap();
        let bound = node_relaxation(&model, &BnbNode::root(10)).unwrap();
        assert!(bound <= oracle.objective + 1e-9);
    }

    #[test]
    fn solves_the_hand_instance_to_the_enumerated_optimum() {
        // Best 5-subset of (0,1,2,3,4,100,200,300) is the first five values,
        // midrange fit 2 with max deviation 2.
        let data = intercept_only(&[0.0, 1.0, 2.0, 3.0, 4.0, 100.0, 200.0, 300.0]);
        let q = QuantileSpec::new(5, 8).unwrap();
        let oracle = enumerate_lqs(&data, q, 100).unwrap();
        assert!((oracle.objective - 2.0).abs() < 1e-12);
        let model = build_model(data, q, None, None).unwrap();
        let result = solve(&model, None, &generous()).unwrap();
        assert_eq!(result.status, MioStatus::ProvedOptimal);
        assert!((result.upper_bound - 2.0).abs() < 1e-9);
        assert!((result.incumbent_beta[0] - 2.0).abs() < 1e-9);
        assert!(result.lower_bound <= result.upper_bound + 1e-9);
    }

    #[test]
    fn warm_start_seeds_the_upper_bound() {
        let spec = SyntheticSpec::new(12, 2, 0.25, Scheme::A, 23).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(7, 12).unwrap();
        let oracle = enumerate_lqs(&inst.data, q, 1 << 20).unwrap();
        let model = build_model(inst.data.clone(), q, None, None).unwrap();
        let result = solve(&model, Some(&oracle.beta), &generous()).unwrap();
        // First trace row carries the warm-start value; bounds never worsen.
        assert!((result.trace[0].upper_bound - oracle.objective).abs() < 1e-12);
        for w in result.trace.windows(2) {
            assert!(w[1].upper_bound <= w[0].upper_bound + 1e-12);
            assert!(w[1].lower_bound >= w[0].lower_bound - 1e-12);
        }
        assert!((result.upper_bound - oracle.objective).abs() <= 1e-9);
        // Dominance: the warm start value is never undercut by the result.
        assert!(result.upper_bound <= lqs_objective(&inst.data, &oracle.beta, q) + 1e-12);
    }

    #[test]
    fn infinite_gap_tolerance_returns_at_the_root() {
        let spec = SyntheticSpec::new(14, 2, 0.3, Scheme::B, 29).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(8, 14).unwrap();
        let start = DVector::zeros(2);
        let model = build_model(inst.data.clone(), q, None, None).unwrap();
        let limits = MioLimits { gap_tol: f64::INFINITY, ..generous() };
        let result = solve(&model, Some(&start), &limits).unwrap();
        assert_eq!(result.status, MioStatus::ProvedOptimal);
        assert_eq!(result.nodes_explored, 0);
        assert!((result.upper_bound - lqs_objective(&inst.data, &start, q)).abs() < 1e-12);
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for trial in 0..10 {
            let n = rng.random_range(6..11);
            let p = rng.random_range(1..3);
            let spec = SyntheticSpec::new(n, p, 0.3, Scheme::B, 1000 + trial).unwrap();
            let inst = generate(&spec).unwrap();
            let q_val = rng.random_range(p + 1..=n);
            let q = QuantileSpec::new(q_val, n).unwrap();
            let oracle = enumerate_lqs(&inst.data, q, 1 << 20).unwrap();
            let model = build_model(inst.data.clone(), q, None, None).unwrap();
            let result = solve(&model, None, &generous()).unwrap();
            assert_eq!(result.status, MioStatus::ProvedOptimal);
            assert!(
                (result.upper_bound - oracle.objective).abs()
                    <= 1e-6 * (1.0 + oracle.objective),
                "n={n} p={p} q={q_val}: mio {} vs oracle {}",
                result.upper_bound,
                oracle.objective
            );
        }
    }

    #[test]
    fn tighter_box_gives_tighter_root_bound_and_same_optimum() {
        let spec = SyntheticSpec::new(12, 2, 0.25, Scheme::B, 31).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(7, 12).unwrap();
        let oracle = enumerate_lqs(&inst.data, q, 1 << 20).unwrap();
        let center = oracle.beta.clone();
        let mk = |radius: f64| {
            build_model(
                inst.data.clone(),
                q,
                Some(BoxConstraint { center: center.clone(), radius }),
                None,
            )
            .unwrap()
        };
        let tight = mk(3.0);
        let wide = mk(40.0);
        let rb_tight = node_relaxation(&tight, &BnbNode::root(12)).unwrap();
        let rb_wide = node_relaxation(&wide, &BnbNode::root(12)).unwrap();
        assert!(rb_tight >= rb_wide - 1e-9);
        let st = solve(&tight, None, &generous()).unwrap();
        let sw = solve(&wide, None, &generous()).unwrap();
        assert_eq!(st.status, MioStatus::ProvedOptimal);
        assert_eq!(sw.status, MioStatus::ProvedOptimal);
        assert!((st.upper_bound - sw.upper_bound).abs() <= 1e-7 * (1.0 + sw.upper_bound));
        assert!((st.upper_bound - oracle.objective).abs() <= 1e-7 * (1.0 + oracle.objective));
    }

    #[test]
    fn polyhedral_rows_constrain_the_fit() {
        // Force the single coefficient to be <= 0; best subset fit must obey.
        let data = intercept_only(&[1.0, 2.0, 3.0, 4.0]);
        let q = QuantileSpec::new(3, 4).unwrap();
        let poly = Polyhedral {
            a: DMatrix::from_row_slice(1, 1, &[1.0]),
            b: DVector::from_column_slice(&[0.0]),
        };
        let model = build_model(data, q, None, Some(poly)).unwrap();
        let result = solve(&model, None, &generous()).unwrap();
        assert_eq!(result.status, MioStatus::ProvedOptimal);
        assert!(result.incumbent_beta[0] <= 1e-9);
        // beta = 0 leaves residuals (1,2,3,4); best 3-subset max is 3.
        assert!((result.upper_bound - 3.0).abs() < 1e-9);
    }

    #[test]
    fn leaf_assignment_respects_sos1_products() {
        let spec = SyntheticSpec::new(10, 2, 0.3, Scheme::A, 37).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(6, 10).unwrap();
        let model = build_model(inst.data.clone(), q, None, None).unwrap();
        let result = solve(&model, None, &generous()).unwrap();
        // Recover the optimal subset from the incumbent's residuals.
        let res = inst.data.residuals(&result.incumbent_beta);
        let mut idx: Vec<usize> = (0..10).collect();
        idx.sort_by(|&a, &b| res[a].abs().total_cmp(&res[b].abs()).then(a.cmp(&b)));
        let subset: Vec<usize> = idx[..6].to_vec();
        let leaf = leaf_assignment(&model, &subset, &result.incumbent_beta);
        for i in 0..10 {
            assert!(leaf.mu[i] * leaf.z[i] as f64 <= 1e-8);
            assert!(leaf.mu[i] * leaf.mu_bar[i] <= 1e-8);
            assert!(leaf.r_plus[i] * leaf.r_minus[i] <= 1e-8);
        }
        assert!((leaf.gamma - result.upper_bound).abs() <= 1e-9);
    }

    #[test]
    fn trace_rows_match_final_bounds() {
        let spec = SyntheticSpec::new(10, 1, 0.3, Scheme::B, 41).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(6, 10).unwrap();
        let model = build_model(inst.data.clone(), q, None, None).unwrap();
        let mut buf = Vec::new();
        let result = solve_with_evolution(&model, None, &generous(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("wall_time_s,upper_bound,lower_bound"));
        let last = text.lines().last().unwrap();
        let fields: Vec<&str> = last.split(',').collect();
        assert_eq!(fields.len(), 3);
        assert_eq!(fields[1].parse::<f64>().unwrap(), result.upper_bound);
        assert_eq!(fields[2].parse::<f64>().unwrap(), result.lower_bound);
        assert!(result.gap <= 1e-9);
    }

    #[test]
    fn node_limit_reports_valid_bounds() {
        let spec = SyntheticSpec::new(20, 3, 0.4, Scheme::B, 43).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(12, 20).unwrap();
        let model = build_model(inst.data.clone(), q, None, None).unwrap();
        let limits = MioLimits { time: None, nodes: Some(30), gap_tol: 1e-9 };
        let start = DVector::zeros(3);
        let result = solve(&model, Some(&start), &limits).unwrap();
        assert_eq!(result.status, MioStatus::NodeLimit);
        assert!(result.lower_bound <= result.upper_bound + 1e-9);
        let oracle = enumerate_lqs(&inst.data, q, 1 << 22).unwrap();
        assert!(result.lower_bound <= oracle.objective + 1e-9);
        assert!(result.upper_bound >= oracle.objective - 1e-9);
    }
}
