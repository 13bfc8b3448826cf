//! Multi-start drivers chaining subdifferential descent into sequential
//! linear optimization, with the two initialization strategies used
//! throughout: perturbed LAD solutions and best-of-subsample Chebyshev fits.

use crate::data::{Dataset, FitResult, QuantileSpec};
use crate::error::{Error, Result};
use crate::first_order::{subdifferential_descent, FirstOrderConfig};
use crate::fits::{chebyshev_fit, lad_fit, lqs_objective};
use crate::oracle::binomial;
use crate::seq_lo::{sequential_lo, SeqLoConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// How starting points are produced.
#[derive(Clone, Debug)]
pub enum InitKind {
    /// The LAD solution plus uniform draws from the per-coordinate interval
    /// `[b_i - eta |b_i|, b_i + eta |b_i|]`.
    LadPerturbed,
    /// For each run, the best of `subsamples_per_run` Chebyshev fits to
    /// random (p+1)-subsets.
    ChebSubsample,
    /// Caller-supplied starting points.
    Explicit(Vec<DVector<f64>>),
}

#[derive(Clone, Debug)]
pub struct InitStrategy {
    pub kind: InitKind,
    /// Half-width multiplier of the LAD perturbation interval.
    pub eta: f64,
    pub runs: usize,
    pub subsamples_per_run: usize,
    pub seed: u64,
}

impl InitStrategy {
    pub fn lad(seed: u64) -> InitStrategy {
        InitStrategy {
            kind: InitKind::LadPerturbed,
            eta: 2.0,
            runs: 100,
            subsamples_per_run: 40,
            seed,
        }
    }

    pub fn cheb(seed: u64) -> InitStrategy {
        InitStrategy { kind: InitKind::ChebSubsample, ..InitStrategy::lad(seed) }
    }

    fn validate(&self) -> Result<()> {
        if self.eta < 0.0 {
            return Err(Error::invalid("eta must be nonnegative"));
        }
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        if matches!(self.kind, InitKind::ChebSubsample) && self.subsamples_per_run == 0 {
            return Err(Error::invalid("subsamples_per_run must be at least 1"));
        }
        Ok(())
    }
}

fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `runs` starting points around the LAD solution; the unperturbed LAD
/// solution always comes first.
pub fn lad_perturbed_init(data: &Dataset, strategy: &InitStrategy) -> Result<Vec<DVector<f64>>> {
    strategy.validate()?;
    let lad = lad_fit(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
    let mut starts = Vec::with_capacity(strategy.runs);
    starts.push(lad.beta.clone());
    for _ in 1..strategy.runs {
        let beta = DVector::from_fn(data.p(), |j, _| {
            let half = strategy.eta * lad.beta[j].abs();
            if half > 0.0 {
                rng.random_range(lad.beta[j] - half..=lad.beta[j] + half)
            } else {
                lad.beta[j]
            }
        });
        starts.push(beta);
    }
    Ok(starts)
}

/// Best-of-subsamples Chebyshev start: fit `subsamples_per_run` random
/// (p+1)-subsets and keep the one with the smallest LQS objective. When the
/// budget covers every subset, enumerate instead of sampling.
pub fn cheb_subsample_init(
    data: &Dataset,
    q: QuantileSpec,
    strategy: &InitStrategy,
) -> Result<DVector<f64>> {
    strategy.validate()?;
    let n = data.n();
    let k = data.p() + 1;
    if n < k {
        return Err(Error::invalid(format!("need at least {k} samples, have {n}")));
    }
    let total = binomial(n, k);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let consider = |fit: FitResult, best: &mut Option<(f64, DVector<f64>)>| {
        let obj = lqs_objective(data, &fit.beta, q);
        match best {
            Some((b, _)) if *b <= obj => {}
            _ => *best = Some((obj, fit.beta)),
        }
    };
    if total <= strategy.subsamples_per_run as u64 {
        let mut subset: Vec<usize> = (0..k).collect();
        loop {
            consider(chebyshev_fit(data, &subset)?, &mut best);
            if !advance(&mut subset, n) {
                break;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
        let mut drawn = 0;
        let mut failures = 0;
        while drawn < strategy.subsamples_per_run {
            let subset = rand::seq::index::sample(&mut rng, n, k).into_vec();
            match chebyshev_fit(data, &subset) {
                Ok(fit) => {
                    consider(fit, &mut best);
                    drawn += 1;
                }
                Err(_) if failures < 10 * strategy.subsamples_per_run => failures += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(best.expect("at least one subsample fit").1)
}

fn advance(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - (k - i) {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Starting points for every run of a multi-start driver.
pub fn starting_points(
    data: &Dataset,
    q: QuantileSpec,
    strategy: &InitStrategy,
) -> Result<Vec<DVector<f64>>> {
    strategy.validate()?;
    match &strategy.kind {
        InitKind::LadPerturbed => lad_perturbed_init(data, strategy),
        InitKind::ChebSubsample => (0..strategy.runs)
            .map(|run| {
                let per_run =
                    InitStrategy { seed: run_seed(strategy.seed, run), ..strategy.clone() };
                cheb_subsample_init(data, q, &per_run)
            })
            .collect(),
        InitKind::Explicit(points) => {
            if points.is_empty() {
                return Err(Error::invalid("explicit initialization needs points"));
            }
            if points.iter().any(|b| b.len() != data.p()) {
                return Err(Error::invalid("explicit point length must match the model matrix"));
            }
            Ok(points.clone())
        }
    }
}

/// Outcome of a multi-start driver.
#[derive(Clone, Debug)]
pub struct HybridOutcome {
    pub fit: FitResult,
    /// Index of the winning start.
    pub best_start: usize,
    /// Best objective reached by the descent stage alone.
    pub descent_objective: f64,
    /// How many times the sequential stage ran.
    pub seq_lo_invocations: usize,
}

/// For every start: run subdifferential descent, then the sequential method
/// from the descent result; keep the best final objective (lowest start index
/// on ties).
pub fn hybrid(
    data: &Dataset,
    q: QuantileSpec,
    init: &InitStrategy,
    fo_cfg: &FirstOrderConfig,
    slo_cfg: &SeqLoConfig,
) -> Result<HybridOutcome> {
    let starts = starting_points(data, q, init)?;
    let stages: Vec<(FitResult, FitResult)> = starts
        .par_iter()
        .map(|start| {
            let gd = subdifferential_descent(data, q, start, fo_cfg)?;
            let lo = sequential_lo(data, q, &gd.beta, slo_cfg)?;
            Ok((gd, lo.fit))
        })
        .collect::<Result<_>>()?;
    let seq_lo_invocations = stages.len();
    let mut best_start = 0;
    let mut descent_objective = f64::INFINITY;
    for (i, (gd, _)) in stages.iter().enumerate() {
        if gd.objective < descent_objective {
            descent_objective = gd.objective;
        }
        if stages[i].1.objective < stages[best_start].1.objective {
            best_start = i;
        }
    }
    let fit = stages.into_iter().nth(best_start).expect("nonempty starts").1;
    Ok(HybridOutcome { fit, best_start, descent_objective, seq_lo_invocations })
}

/// Large-scale variant: run the descent stage for every start, then the
/// sequential stage exactly once from the single best descent result.
pub fn hybrid_large_scale(
    data: &Dataset,
    q: QuantileSpec,
    init: &InitStrategy,
    fo_cfg: &FirstOrderConfig,
    slo_cfg: &SeqLoConfig,
) -> Result<HybridOutcome> {
    let starts = starting_points(data, q, init)?;
    let descents: Vec<FitResult> = starts
        .par_iter()
        .map(|start| subdifferential_descent(data, q, start, fo_cfg))
        .collect::<Result<_>>()?;
    let mut best_start = 0;
    for (i, gd) in descents.iter().enumerate() {
        if gd.objective < descents[best_start].objective {
            best_start = i;
        }
    }
    let descent_objective = descents[best_start].objective;
    let lo = sequential_lo(data, q, &descents[best_start].beta, slo_cfg)?;
    Ok(HybridOutcome {
        fit: lo.fit,
        best_start,
        descent_objective,
        seq_lo_invocations: 1,
    })
}
