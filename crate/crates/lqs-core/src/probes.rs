//! Empirical breakdown probes for the optimal LQS objective value.
//!
//! The optimal objective tolerates up to `n - q` arbitrary sample
//! replacements: some q-subset of untouched samples survives, and its
//! max-norm fit bounds the optimum independently of the replacement
//! magnitude. One more replacement and every q-subset contains a corrupted
//! sample, so a large enough response shift drives the optimum to infinity.
//! The probe checks both sides on concrete magnitude ladders; the reported
//! breakdown fraction is `(n - q + 1) / n`.

use crate::data::{Dataset, QuantileSpec};
use crate::error::{Error, Result};
use crate::fits::chebyshev_fit;
use crate::mio::{self, MioLimits, MioStatus};
use crate::oracle::{binomial, enumerate_lqs};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Replace `m` randomly chosen samples with adversarial values: their
/// responses are shifted by `magnitude`, covariates left in place (a large
/// covariate would lower the corrupted row's leverage against the fit
/// instead of raising it).
pub fn perturb(data: &Dataset, m: usize, magnitude: f64, seed: u64) -> Result<Dataset> {
    if m > data.n() {
        return Err(Error::invalid(format!(
            "cannot replace {m} of {} samples",
            data.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, data.n(), m).into_vec();
    let mut y = data.y().clone();
    let x: DMatrix<f64> = data.x().clone();
    for &i in &chosen {
        y[i] += magnitude;
    }
    Dataset::with_row_ids(y, x, data.row_ids().to_vec())
}

/// Indices untouched by [`perturb`] for the same seed.
fn untouched(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, n, m).into_vec();
    let mut mask = vec![true; n];
    for &i in &chosen {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RungReport {
    pub magnitude: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub seed: u64,
    pub rungs: Vec<RungReport>,
    /// Max-norm fit value on a clean q-subset; an upper bound the bounded
    /// case must respect at every rung.
    pub clean_subset_bound: Option<f64>,
    /// `(max - min) / max(min, eps)` of the objectives across rungs.
    pub relative_drift: f64,
    /// Last-rung objective over first-rung objective.
    pub growth_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub replacements: usize,
    pub trials: Vec<TrialReport>,
    pub verdict: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BreakdownReport {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub breakdown_numerator: usize,
    pub breakdown_denominator: usize,
    pub breakdown_fraction: f64,
    /// `m = n - q`: objective stays bounded across the ladder.
    pub bounded: CaseReport,
    /// `m = n - q + 1`: objective grows with the ladder.
    pub diverging: CaseReport,
}

/// Certified global optimum of a perturbed instance: enumeration when the
/// subset count is manageable, otherwise branch-and-bound run to a
/// certificate. Refuses when neither can certify.
fn certified_objective(data: &Dataset, q: QuantileSpec) -> Result<f64> {
    if binomial(data.n(), q.q()) <= 200_000 {
        return Ok(enumerate_lqs(data, q, 200_000)?.objective);
    }
    let model = mio::build_model(data.clone(), q, None, None)?;
    let limits = MioLimits {
        time: Some(std::time::Duration::from_secs(120)),
        nodes: Some(2_000_000),
        gap_tol: 1e-9,
    };
    let result = mio::solve(&model, None, &limits)?;
    if result.status != MioStatus::ProvedOptimal {
        return Err(Error::TooLarge(format!(
            "no certified solver finished on n = {}, q = {}",
            data.n(),
            q.q()
        )));
    }
    Ok(result.upper_bound)
}

fn run_case(
    data: &Dataset,
    q: QuantileSpec,
    m: usize,
    magnitudes: &[f64],
    trials: usize,
    seed: u64,
    check_bound: bool,
) -> Result<CaseReport> {
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let trial_seed = seed.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rungs = Vec::with_capacity(magnitudes.len());
        for &mag in magnitudes {
            let perturbed = perturb(data, m, mag, trial_seed)?;
            rungs.push(RungReport { magnitude: mag, objective: certified_objective(&perturbed, q)? });
        }
        let clean_subset_bound = if check_bound {
            let clean = untouched(data.n(), m, trial_seed);
            // Any q-subset of clean samples works; take the first q.
            let fit = chebyshev_fit(data, &clean[..q.q()])?;
            Some(fit.objective)
        } else {
            None
        };
        let lo = rungs.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
        let hi = rungs.iter().map(|r| r.objective).fold(0.0f64, f64::max);
        let relative_drift = (hi - lo) / lo.max(1e-12);
        let growth_ratio = rungs.last().map_or(1.0, |last| {
            last.objective / rungs.first().map_or(1e-12, |f| f.objective.max(1e-12))
        });
        out.push(TrialReport {
            seed: trial_seed,
            rungs,
            clean_subset_bound,
            relative_drift,
            growth_ratio,
        });
    }
    let verdict = if check_bound {
        out.iter().all(|t| {
            t.relative_drift <= 1e-6
                && t.rungs.iter().all(|r| {
                    r.objective
                        <= t.clean_subset_bound.unwrap() + 1e-9 * (1.0 + t.clean_subset_bound.unwrap())
                })
        })
    } else {
        out.iter().all(|t| t.growth_ratio >= 1e3)
    };
    Ok(CaseReport { replacements: m, trials: out, verdict })
}

/// Probe both sides of the breakdown point of the optimal objective value
/// on an increasing magnitude ladder.
pub fn breakdown_probe(
    data: &Dataset,
    q: QuantileSpec,
    magnitudes: &[f64],
    trials: usize,
    seed: u64,
) -> Result<BreakdownReport> {
    if magnitudes.len() < 2 || magnitudes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("need a strictly increasing magnitude ladder"));
    }
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let n = data.n();
    if q.q() > n {
        return Err(Error::invalid("q exceeds the sample count"));
    }
    let m_bounded = n - q.q();
    let m_diverging = n - q.q() + 1;
    let bounded = run_case(data, q, m_bounded, magnitudes, trials, seed, true)?;
    let diverging = run_case(data, q, m_diverging, magnitudes, trials, seed ^ 0xABCD, false)?;
    Ok(BreakdownReport {
        n,
        p: data.p(),
        q: q.q(),
        breakdown_numerator: n - q.q() + 1,
        breakdown_denominator: n,
        breakdown_fraction: (n - q.q() + 1) as f64 / n as f64,
        bounded,
        diverging,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Scheme, SyntheticSpec};

    fn fixture() -> (Dataset, QuantileSpec) {
        let spec = SyntheticSpec::new(10, 2, 0.0, Scheme::A, 101).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(7, 10).unwrap();
        (inst.data, q)
    }

    #[test]
    fn zero_replacements_change_nothing() {
        let (data, _) = fixture();
        let out = perturb(&data, 0, 1e6, 1).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn full_replacement_touches_every_row() {
        let (data, _) = fixture();
        let out = perturb(&data, 10, 1e6, 1).unwrap();
        for i in 0..10 {
            assert!((out.y()[i] - data.y()[i] - 1e6).abs() < 1e-6);
        }
    }

    #[test]
    fn perturbation_is_seed_deterministic() {
        let (data, _) = fixture();
        let a = perturb(&data, 4, 1e3, 7).unwrap();
        let b = perturb(&data, 4, 1e3, 7).unwrap();
        assert_eq!(a, b);
        let c = perturb(&data, 4, 1e3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn probe_reports_both_sides() {
        let (data, q) = fixture();
        let report = breakdown_probe(&data, q, &[1e3, 1e6, 1e9], 2, 55).unwrap();
        assert_eq!(report.breakdown_numerator, 4);
        assert_eq!(report.breakdown_denominator, 10);
        assert!(report.bounded.verdict, "bounded case failed: {:?}", report.bounded);
        assert!(report.diverging.verdict, "diverging case failed: {:?}", report.diverging);
        for t in &report.bounded.trials {
            assert!(t.relative_drift <= 1e-6);
        }
        for t in &report.diverging.trials {
            assert!(t.growth_ratio >= 1e3);
        }
    }

    #[test]
    fn fraction_for_table_sizes() {
        // n = 201, q = 121 gives 81/201.
        let spec = SyntheticSpec::new(201, 5, 0.0, Scheme::A, 1).unwrap();
        let inst = generate(&spec).unwrap();
        let q = QuantileSpec::new(121, 201).unwrap();
        // Only the fraction matters here; skip the solves by probing the
        // arithmetic directly.
        let n = inst.data.n();
        assert_eq!((n - q.q() + 1, n), (81, 201));
    }
}
