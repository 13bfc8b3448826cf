//! Benchmark harness: run a set of algorithms over repeated random
//! instances of a named example and tabulate relative accuracy
//! `(f_alg - f_*) / f_* * 100` against the per-instance best, plus
//! initializer / solver / combined wall times.

use crate::CliError;
use lqs_core::datagen::{named_example, NamedExample};
use lqs_core::first_order::{subdifferential_descent, FirstOrderConfig};
use lqs_core::fits::{chebyshev_fit, lad_fit, least_squares_fit};
use lqs_core::hybrid::{hybrid, hybrid_large_scale, starting_points, InitStrategy};
use lqs_core::mio::{build_model, solve, MioLimits};
use lqs_core::oracle::enumerate_lqs;
use lqs_core::seq_lo::{sequential_lo, SeqLoConfig};
use lqs_core::{lqs_objective, Dataset, QuantileSpec};
use nalgebra::DVector;
use std::io::Write;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchAlgo {
    Ls,
    Lad,
    Cheb,
    Subgrad,
    SeqLo,
    Hybrid,
    HybridLarge,
    MioCold,
    MioWarm,
    Oracle,
}

impl std::str::FromStr for BenchAlgo {
    type Err = CliError;

    fn from_str(s: &str) -> Result<BenchAlgo, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "ls" => Ok(BenchAlgo::Ls),
            "lad" => Ok(BenchAlgo::Lad),
            "cheb" => Ok(BenchAlgo::Cheb),
            "subgrad" => Ok(BenchAlgo::Subgrad),
            "seqlo" => Ok(BenchAlgo::SeqLo),
            "hybrid" => Ok(BenchAlgo::Hybrid),
            "hybrid-large" => Ok(BenchAlgo::HybridLarge),
            "mio-cold" => Ok(BenchAlgo::MioCold),
            "mio-warm" => Ok(BenchAlgo::MioWarm),
            "oracle" => Ok(BenchAlgo::Oracle),
            other => Err(CliError::validation(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl std::fmt::Display for BenchAlgo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BenchAlgo::Ls => "ls",
            BenchAlgo::Lad => "lad",
            BenchAlgo::Cheb => "cheb",
            BenchAlgo::Subgrad => "subgrad",
            BenchAlgo::SeqLo => "seqlo",
            BenchAlgo::Hybrid => "hybrid",
            BenchAlgo::HybridLarge => "hybrid-large",
            BenchAlgo::MioCold => "mio-cold",
            BenchAlgo::MioWarm => "mio-warm",
            BenchAlgo::Oracle => "oracle",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub example: NamedExample,
    pub scale: Option<u32>,
    pub algos: Vec<BenchAlgo>,
    pub instances: usize,
    pub seed: u64,
    pub init: InitStrategy,
    pub fo_cfg: FirstOrderConfig,
    pub slo_cfg: SeqLoConfig,
    pub mio_limits: MioLimits,
    /// Cap on subset enumeration for the optional oracle column.
    pub oracle_limit: u64,
}

struct Measurement {
    lqs_value: f64,
    init_time: f64,
    solve_time: f64,
}

fn run_algo(
    algo: BenchAlgo,
    data: &Dataset,
    q: QuantileSpec,
    settings: &BenchSettings,
    instance_seed: u64,
) -> Result<Measurement, CliError> {
    let init = InitStrategy { seed: instance_seed, ..settings.init.clone() };
    let value_of = |beta: &DVector<f64>| lqs_objective(data, beta, q);
    match algo {
        BenchAlgo::Ls => {
            let t = Instant::now();
            let fit = least_squares_fit(data)?;
            Ok(Measurement {
                lqs_value: value_of(&fit.beta),
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::Lad => {
            let t = Instant::now();
            let fit = lad_fit(data)?;
            Ok(Measurement {
                lqs_value: value_of(&fit.beta),
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::Cheb => {
            let t = Instant::now();
            let all: Vec<usize> = (0..data.n()).collect();
            let fit = chebyshev_fit(data, &all)?;
            Ok(Measurement {
                lqs_value: value_of(&fit.beta),
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::Subgrad => {
            let t0 = Instant::now();
            let starts = starting_points(data, q, &init)?;
            let init_time = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let mut best = f64::INFINITY;
            for start in &starts {
                let fit = subdifferential_descent(data, q, start, &settings.fo_cfg)?;
                best = best.min(fit.objective);
            }
            Ok(Measurement { lqs_value: best, init_time, solve_time: t1.elapsed().as_secs_f64() })
        }
        BenchAlgo::SeqLo => {
            let t0 = Instant::now();
            let starts = starting_points(data, q, &init)?;
            let init_time = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let mut best = f64::INFINITY;
            for start in &starts {
                let out = sequential_lo(data, q, start, &settings.slo_cfg)?;
                best = best.min(out.fit.objective);
            }
            Ok(Measurement { lqs_value: best, init_time, solve_time: t1.elapsed().as_secs_f64() })
        }
        BenchAlgo::Hybrid => {
            let t = Instant::now();
            let out = hybrid(data, q, &init, &settings.fo_cfg, &settings.slo_cfg)?;
            Ok(Measurement {
                lqs_value: out.fit.objective,
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::HybridLarge => {
            let t = Instant::now();
            let out = hybrid_large_scale(data, q, &init, &settings.fo_cfg, &settings.slo_cfg)?;
            Ok(Measurement {
                lqs_value: out.fit.objective,
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::MioCold => {
            let t = Instant::now();
            let model = build_model(data.clone(), q, None, None)?;
            let result = solve(&model, None, &settings.mio_limits)?;
            Ok(Measurement {
                lqs_value: result.upper_bound,
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::MioWarm => {
            let t0 = Instant::now();
            let warm = hybrid(data, q, &init, &settings.fo_cfg, &settings.slo_cfg)?;
            let init_time = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let model = build_model(data.clone(), q, None, None)?;
            let result = solve(&model, Some(&warm.fit.beta), &settings.mio_limits)?;
            Ok(Measurement {
                lqs_value: result.upper_bound.min(warm.fit.objective),
                init_time,
                solve_time: t1.elapsed().as_secs_f64(),
            })
        }
        BenchAlgo::Oracle => {
            let t = Instant::now();
            let fit = enumerate_lqs(data, q, settings.oracle_limit)?;
            Ok(Measurement {
                lqs_value: fit.objective,
                init_time: 0.0,
                solve_time: t.elapsed().as_secs_f64(),
            })
        }
    }
}

pub struct BenchRow {
    pub algo: BenchAlgo,
    pub mean_rel_accuracy_pct: f64,
    pub stderr_rel_accuracy_pct: f64,
    pub mean_init_time_s: f64,
    pub mean_solve_time_s: f64,
    pub mean_total_time_s: f64,
}

pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    /// Per-instance objective values, in `algos` order.
    #[allow(dead_code)]
    pub values: Vec<Vec<f64>>,
}

pub fn relative_accuracy_pct(f_alg: f64, f_best: f64) -> f64 {
    (f_alg - f_best) / f_best * 100.0
}

pub fn run_bench(settings: &BenchSettings) -> Result<BenchTable, CliError> {
    if settings.instances == 0 {
        return Err(CliError::validation("need at least one instance"));
    }
    if settings.algos.is_empty() {
        return Err(CliError::validation("need at least one algorithm"));
    }
    let a = settings.algos.len();
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(a); settings.instances];
    let mut init_times = vec![0.0f64; a];
    let mut solve_times = vec![0.0f64; a];
    for r in 0..settings.instances {
        let instance_seed = settings.seed.wrapping_add(r as u64);
        let (inst, q, _) = named_example(settings.example, settings.scale, instance_seed)?;
        for (ai, &algo) in settings.algos.iter().enumerate() {
            let m = run_algo(algo, &inst.data, q, settings, instance_seed)?;
            values[r].push(m.lqs_value);
            init_times[ai] += m.init_time;
            solve_times[ai] += m.solve_time;
        }
    }
    let mut rows = Vec::with_capacity(a);
    for (ai, &algo) in settings.algos.iter().enumerate() {
        // Best value across the compared set, per instance.
        let accs: Vec<f64> = (0..settings.instances)
            .map(|r| {
                let best = values[r].iter().cloned().fold(f64::INFINITY, f64::min);
                relative_accuracy_pct(values[r][ai], best)
            })
            .collect();
        let nn = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / nn;
        let stderr = if accs.len() > 1 {
            let var = accs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nn - 1.0);
            (var / nn).sqrt()
        } else {
            0.0
        };
        rows.push(BenchRow {
            algo,
            mean_rel_accuracy_pct: mean,
            stderr_rel_accuracy_pct: stderr,
            mean_init_time_s: init_times[ai] / nn,
            mean_solve_time_s: solve_times[ai] / nn,
            mean_total_time_s: (init_times[ai] + solve_times[ai]) / nn,
        });
    }
    Ok(BenchTable { rows, values })
}

pub fn write_table<W: Write>(table: &BenchTable, w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "algo,mean_rel_accuracy_pct,stderr_rel_accuracy_pct,mean_init_time_s,mean_solve_time_s,mean_total_time_s"
    )?;
    for row in &table.rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            row.algo,
            row.mean_rel_accuracy_pct,
            row.stderr_rel_accuracy_pct,
            row.mean_init_time_s,
            row.mean_solve_time_s,
            row.mean_total_time_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
fn default_mio_limits() -> MioLimits {
    MioLimits {
        time: Some(std::time::Duration::from_secs(30)),
        nodes: Some(20_000),
        gap_tol: 1e-6,
    }
}
