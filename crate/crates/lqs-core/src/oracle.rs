//! Ground-truth LQS optima on small instances.
//!
//! The global LQS optimum equals the best max-norm fit over all q-sample
//! subsets, for any dataset, so exhaustive enumeration of those subsets is
//! an exact (if exponential) solver. A coarse grid scan over a coefficient
//! box backs it up as a second, independent route for p <= 2.

use crate::data::{Dataset, FitKind, FitResult, QuantileSpec};
use crate::error::{Error, Result};
use crate::fits::{chebyshev_fit, lqs_objective};
use nalgebra::DVector;
use rayon::prelude::*;

/// `C(n, k)` saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// First size-k subset of `0..n` with the given lexicographic rank.
fn unrank_combination(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut subset = Vec::with_capacity(k);
    let mut next = 0usize;
    for remaining in (1..=k).rev() {
        let mut c = next;
        loop {
            let count = binomial(n - 1 - c, remaining - 1);
            if rank < count {
                break;
            }
            rank -= count;
            c += 1;
        }
        subset.push(c);
        next = c + 1;
    }
    subset
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
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

struct ChunkBest {
    objective: f64,
    beta: DVector<f64>,
}

fn scan_range(data: &Dataset, q: usize, from: u64, to: u64) -> Result<Option<ChunkBest>> {
    let n = data.n();
    let mut subset = unrank_combination(n, q, from);
    let mut best: Option<ChunkBest> = None;
    let mut rank = from;
    loop {
        let fit = chebyshev_fit(data, &subset)?;
        let better = match &best {
            None => true,
            Some(b) => fit.objective < b.objective,
        };
        if better {
            best = Some(ChunkBest { objective: fit.objective, beta: fit.beta });
        }
        rank += 1;
        if rank >= to || !next_combination(&mut subset, n) {
            break;
        }
    }
    Ok(best)
}

/// Exact global optimum by lexicographic enumeration of all q-subsets.
/// Refuses when `C(n, q)` exceeds `subset_limit`.
pub fn enumerate_lqs(data: &Dataset, q: QuantileSpec, subset_limit: u64) -> Result<FitResult> {
    let n = data.n();
    let total = binomial(n, q.q());
    if total > subset_limit {
        return Err(Error::TooLarge(format!(
            "C({n}, {}) = {total} subsets exceeds the limit {subset_limit}",
            q.q()
        )));
    }
    let chunk_size = 2048u64;
    let best = if total <= chunk_size {
        scan_range(data, q.q(), 0, total)?
    } else {
        let chunks: Vec<(u64, u64)> = (0..total)
            .step_by(chunk_size as usize)
            .map(|from| (from, (from + chunk_size).min(total)))
            .collect();
        let partials: Vec<Option<ChunkBest>> = chunks
            .par_iter()
            .map(|&(from, to)| scan_range(data, q.q(), from, to))
            .collect::<Result<_>>()?;
        // Sequential fold in chunk order keeps ties lexicographic.
        partials.into_iter().flatten().fold(None, |acc: Option<ChunkBest>, cand| match acc {
            None => Some(cand),
            Some(b) if cand.objective < b.objective => Some(cand),
            some => some,
        })
    };
    let best = best.ok_or_else(|| Error::Numerical("empty enumeration".into()))?;
    Ok(FitResult::new(data, best.beta, best.objective, FitKind::Lqs))
}

/// Number of residuals tying the optimal value within `1e-7 (1 + t*)`.
pub fn residual_multiplicity(fit: &FitResult) -> usize {
    let t = fit.objective;
    let tol = 1e-7 * (1.0 + t.abs());
    fit.residuals.iter().filter(|r| (r.abs() - t).abs() <= tol).count()
}

/// Minimum of the LQS objective over a uniform grid on the box
/// `|beta_j - center_j| <= radius`, with `resolution` subdivisions per axis
/// (so doubling the resolution refines the same grid). Only for p <= 2.
pub fn grid_lqs(
    data: &Dataset,
    q: QuantileSpec,
    center: &DVector<f64>,
    radius: f64,
    resolution: usize,
) -> Result<f64> {
    let p = data.p();
    if p > 2 {
        return Err(Error::invalid("grid scan supports at most two coefficients"));
    }
    if resolution < 10 {
        return Err(Error::invalid("resolution must be at least 10"));
    }
    if center.len() != p {
        return Err(Error::invalid("grid center length must match the model matrix"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("grid radius must be positive"));
    }
    let coord = |c: f64, k: usize| c - radius + 2.0 * radius * k as f64 / resolution as f64;
    let mut best = f64::INFINITY;
    match p {
        1 => {
            for a in 0..=resolution {
                let beta = DVector::from_column_slice(&[coord(center[0], a)]);
                best = best.min(lqs_objective(data, &beta, q));
            }
        }
        2 => {
            for a in 0..=resolution {
                for b in 0..=resolution {
                    let beta =
                        DVector::from_column_slice(&[coord(center[0], a), coord(center[1], b)]);
                    best = best.min(lqs_objective(data, &beta, q));
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(best)
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

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(8, 5), 56);
        assert_eq!(binomial(12, 3), 220);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(201, 100), u64::MAX);
    }

    #[test]
    fn unrank_agrees_with_iteration() {
        let n = 7;
        let k = 3;
        let mut subset: Vec<usize> = (0..k).collect();
        let mut rank = 0u64;
        loop {
            assert_eq!(unrank_combination(n, k, rank), subset);
            rank += 1;
            if !next_combination(&mut subset, n) {
                break;
            }
        }
        assert_eq!(rank, binomial(n, k));
    }

    #[test]
    fn noiseless_data_has_zero_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let x = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-2.0..2.0));
        let beta0 = DVector::from_column_slice(&[1.0, 2.0]);
        let y = &x * &beta0;
        let data = Dataset::new(y, x).unwrap();
        let q = QuantileSpec::new(5, 8).unwrap();
        let fit = enumerate_lqs(&data, q, 1 << 20).unwrap();
        assert!(fit.objective < 1e-10);
    }

    #[test]
    fn full_sample_subset_is_the_chebyshev_fit() {
        let data = intercept_only(&[0.0, 1.0, 3.0, 7.0, 8.0]);
        let q = QuantileSpec::new(5, 5).unwrap();
        let fit = enumerate_lqs(&data, q, 100).unwrap();
        let cheb = chebyshev_fit(&data, &[0, 1, 2, 3, 4]).unwrap();
        assert!((fit.objective - cheb.objective).abs() < 1e-12);
        assert!((fit.objective - 4.0).abs() < 1e-9); // midrange of 0..8
    }

    #[test]
    fn refuses_oversized_enumeration() {
        let data = intercept_only(&[1.0; 30]);
        let q = QuantileSpec::new(15, 30).unwrap();
        let err = enumerate_lqs(&data, q, 1000).unwrap_err();
        assert!(matches!(err, Error::TooLarge(_)));
        assert!(err.to_string().contains("155117520"));
    }

    #[test]
    fn oracle_value_lower_bounds_every_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(10, |_, _| rng.random_range(-5.0..5.0));
        let data = Dataset::new(y, x).unwrap();
        let q = QuantileSpec::new(6, 10).unwrap();
        let fit = enumerate_lqs(&data, q, 1 << 20).unwrap();
        for _ in 0..50 {
            let beta = DVector::from_fn(2, |_, _| rng.random_range(-4.0..4.0));
            assert!(fit.objective <= lqs_objective(&data, &beta, q) + 1e-12);
        }
    }

    #[test]
    fn multiplicity_at_optimum_on_continuous_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut hits = 0;
        let trials = 20;
        for _ in 0..trials {
            let n = 9;
            let p = 2;
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
            let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let data = Dataset::new(y, x).unwrap();
            let q = QuantileSpec::new(6, n).unwrap();
            let fit = enumerate_lqs(&data, q, 1 << 20).unwrap();
            if residual_multiplicity(&fit) >= p + 1 {
                hits += 1;
            }
        }
        assert!(hits >= trials - 1, "only {hits}/{trials} instances tied p+1 residuals");
    }

    #[test]
    fn grid_refinement_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let x = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(8, |_, _| rng.random_range(-5.0..5.0));
        let data = Dataset::new(y, x).unwrap();
        let q = QuantileSpec::new(5, 8).unwrap();
        let center = DVector::from_column_slice(&[0.0]);
        let coarse = grid_lqs(&data, q, &center, 4.0, 20).unwrap();
        let fine = grid_lqs(&data, q, &center, 4.0, 40).unwrap();
        assert!(fine <= coarse + 1e-12);
    }

    #[test]
    fn grid_hits_exact_optimum_when_it_lies_on_the_grid() {
        // Intercept-only data where the optimum is the midrange 2 of the
        // best 3-subset {0,1,2}; the grid below contains 2 exactly.
        let data = intercept_only(&[0.0, 2.0, 4.0, 100.0]);
        let q = QuantileSpec::new(3, 4).unwrap();
        let oracle = enumerate_lqs(&data, q, 100).unwrap();
        let center = DVector::from_column_slice(&[2.0]);
        let grid = grid_lqs(&data, q, &center, 4.0, 16).unwrap();
        assert!((grid - oracle.objective).abs() < 1e-12);
    }

    #[test]
    fn grid_within_lipschitz_band_of_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let x = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(8, |_, _| rng.random_range(-5.0..5.0));
        let data = Dataset::new(y, x).unwrap();
        let q = QuantileSpec::new(5, 8).unwrap();
        let oracle = enumerate_lqs(&data, q, 1 << 20).unwrap();
        let radius = 2.0 * (1.0 + oracle.beta.amax());
        let resolution = 400;
        let grid = grid_lqs(&data, q, &oracle.beta, radius, resolution).unwrap();
        let max_l1 = (0..8).map(|i| data.x()[(i, 0)].abs()).fold(0.0f64, f64::max);
        assert!(grid >= oracle.objective - 1e-12);
        assert!(grid - oracle.objective <= 2.0 * (radius / resolution as f64) * max_l1 + 1e-9);
    }
}
