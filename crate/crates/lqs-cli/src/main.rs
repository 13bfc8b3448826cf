//! Command-line front end for the LQS solver suite.

mod bench;
mod formats;

use bench::{run_bench, write_table, BenchAlgo, BenchSettings};
use clap::{Parser, Subcommand, ValueEnum};
use formats::{read_dataset, residual_summary, write_dataset, BoundsOut, ResultDoc, SCHEMA_VERSION};
use lqs_core::datagen::{generate, named_example, NamedExample, Scheme, SyntheticSpec};
use lqs_core::first_order::{subdifferential_descent, FirstOrderConfig};
use lqs_core::fits::{chebyshev_fit, lad_fit, least_squares_fit};
use lqs_core::hybrid::{hybrid, hybrid_large_scale, starting_points, InitKind, InitStrategy};
use lqs_core::mio::{build_model, solve, solve_with_evolution, BoxConstraint, MioLimits, MioStatus};
use lqs_core::oracle::enumerate_lqs;
use lqs_core::probes::breakdown_probe;
use lqs_core::seq_lo::{sequential_lo, SeqLoConfig};
use lqs_core::{Dataset, Error as CoreError, FitResult, QuantileSpec};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn validation(msg: impl Into<String>) -> CliError {
        CliError::Validation(msg.into())
    }

    fn numerical(msg: impl Into<String>) -> CliError {
        CliError::Numerical(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            CoreError::Invalid(_) | CoreError::TooLarge(_) | CoreError::Io(_) => {
                CliError::Validation(e.to_string())
            }
            CoreError::Lp(lp) => CliError::Validation(lp.to_string()),
            CoreError::LpFailed { .. } | CoreError::Numerical(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "lqs", version, about = "Least quantile of squares regression solvers")]
struct Cli {
    /// Worker threads for multi-start and enumeration stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FitAlgo {
    Ls,
    Lad,
    Cheb,
    Subgrad,
    Seqlo,
    Hybrid,
    HybridLarge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InitName {
    Lad,
    Cheb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchemeName {
    A,
    B,
}

#[derive(clap::Args, Clone, Debug)]
struct HeuristicOpts {
    /// Initialization strategy for the multi-start methods.
    #[arg(long, value_enum, default_value_t = InitName::Lad)]
    init: InitName,
    /// Number of multi-start runs.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Half-width multiplier of the perturbation interval around the LAD fit.
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Chebyshev subsamples drawn per run.
    #[arg(long, default_value_t = 40)]
    subsamples: usize,
    /// Iteration budget of the subdifferential stage.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Relative-decrease stopping tolerance of the sequential stage.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Iteration safeguard of the sequential stage.
    #[arg(long, default_value_t = 200)]
    slo_max_iter: usize,
}

impl HeuristicOpts {
    fn strategy(&self, seed: u64) -> InitStrategy {
        InitStrategy {
            kind: match self.init {
                InitName::Lad => InitKind::LadPerturbed,
                InitName::Cheb => InitKind::ChebSubsample,
            },
            eta: self.eta,
            runs: self.runs,
            subsamples_per_run: self.subsamples,
            seed,
        }
    }

    fn fo_cfg(&self) -> FirstOrderConfig {
        FirstOrderConfig { max_iter: self.max_iter, ..Default::default() }
    }

    fn slo_cfg(&self) -> SeqLoConfig {
        SeqLoConfig { tol: self.tol, max_iter: self.slo_max_iter, record_trace: false }
    }

    fn echo(&self, seed: u64) -> serde_json::Value {
        json!({
            "init": match self.init { InitName::Lad => "lad", InitName::Cheb => "cheb" },
            "runs": self.runs,
            "eta": self.eta,
            "subsamples_per_run": self.subsamples,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "slo_max_iter": self.slo_max_iter,
            "seed": seed,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator and write the result document.
    Fit {
        #[arg(long, value_enum)]
        algo: FitAlgo,
        /// Order statistic index (1-based).
        #[arg(long)]
        q: usize,
        #[command(flatten)]
        heuristics: HeuristicOpts,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Solve the exact mixed-integer formulation with branch and bound.
    Mio {
        #[arg(long)]
        q: usize,
        /// Seed the incumbent from a previous result document.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Coefficient box center: `ls` or a result-document path.
        #[arg(long)]
        box_center: Option<String>,
        #[arg(long)]
        box_radius: Option<f64>,
        /// Wall-clock limit in seconds.
        #[arg(long)]
        time_limit: f64,
        #[arg(long)]
        node_limit: Option<usize>,
        /// Relative optimality gap at which the search stops.
        #[arg(long, default_value_t = 1e-6)]
        gap_tol: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Stream bound improvements to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare algorithms over repeated instances of a named example.
    Bench {
        #[arg(long)]
        example: String,
        /// Divide the example sizes by this integer.
        #[arg(long)]
        scale: Option<u32>,
        /// Comma-separated list: ls,lad,cheb,subgrad,seqlo,hybrid,hybrid-large,mio-cold,mio-warm,oracle.
        #[arg(long)]
        algos: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[command(flatten)]
        heuristics: HeuristicOpts,
        /// Per-instance time limit for the exact solver entries (seconds).
        #[arg(long, default_value_t = 30.0)]
        time_limit: f64,
        #[arg(long, default_value_t = 20_000)]
        node_limit: usize,
        #[arg(long, default_value_t = 1e-6)]
        gap_tol: f64,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Generate a synthetic dataset CSV.
    Datagen {
        /// Named example (Ex1..Ex7); alternative to --n/--p/--pi/--scheme.
        #[arg(long)]
        example: Option<String>,
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        pi: Option<f64>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeName>,
        /// Standard deviation of the covariate draw.
        #[arg(long)]
        x_sd: Option<f64>,
        /// Standard deviation of the noise.
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        /// Prepend an all-ones intercept column.
        #[arg(long, default_value_t = false)]
        intercept: bool,
        #[arg(long = "out")]
        output: PathBuf,
        /// Also write instance metadata as JSON.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Exact optimum by subset enumeration; prints the objective.
    Oracle {
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 2_000_000)]
        subset_limit: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
    /// Empirical breakdown probe of the optimal objective value.
    Breakdown {
        #[arg(long)]
        q: usize,
        /// Comma-separated increasing magnitude ladder.
        #[arg(long, default_value = "1e3,1e6,1e9")]
        magnitudes: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn quantile(q: usize, data: &Dataset) -> Result<QuantileSpec, CliError> {
    QuantileSpec::new(q, data.n()).map_err(CliError::from)
}

fn best_fit(fits: Vec<FitResult>) -> FitResult {
    fits.into_iter()
        .reduce(|best, cand| if cand.objective < best.objective { cand } else { best })
        .expect("at least one start")
}

fn run_fit(
    algo: FitAlgo,
    q: usize,
    heuristics: &HeuristicOpts,
    input: &Path,
    output: &Path,
    seed: u64,
) -> Result<(), CliError> {
    let data = read_dataset(input)?;
    let quantile = quantile(q, &data)?;
    let strategy = heuristics.strategy(seed);
    let mut init_time = None;
    let started = Instant::now();
    let fit = match algo {
        FitAlgo::Ls => least_squares_fit(&data)?,
        FitAlgo::Lad => lad_fit(&data)?,
        FitAlgo::Cheb => {
            let all: Vec<usize> = (0..data.n()).collect();
            chebyshev_fit(&data, &all)?
        }
        FitAlgo::Subgrad => {
            let t0 = Instant::now();
            let starts = starting_points(&data, quantile, &strategy)?;
            init_time = Some(t0.elapsed().as_secs_f64());
            let fits = starts
                .iter()
                .map(|s| subdifferential_descent(&data, quantile, s, &heuristics.fo_cfg()))
                .collect::<Result<Vec<_>, _>>()?;
            best_fit(fits)
        }
        FitAlgo::Seqlo => {
            let t0 = Instant::now();
            let starts = starting_points(&data, quantile, &strategy)?;
            init_time = Some(t0.elapsed().as_secs_f64());
            let fits = starts
                .iter()
                .map(|s| sequential_lo(&data, quantile, s, &heuristics.slo_cfg()).map(|o| o.fit))
                .collect::<Result<Vec<_>, _>>()?;
            best_fit(fits)
        }
        FitAlgo::Hybrid => {
            hybrid(&data, quantile, &strategy, &heuristics.fo_cfg(), &heuristics.slo_cfg())?.fit
        }
        FitAlgo::HybridLarge => {
            hybrid_large_scale(
                &data,
                quantile,
                &strategy,
                &heuristics.fo_cfg(),
                &heuristics.slo_cfg(),
            )?
            .fit
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let algo_name = format!("{algo:?}").to_lowercase().replace("hybridlarge", "hybrid-large");
    let mut config = heuristics.echo(seed);
    config["q"] = json!(q);
    let doc = ResultDoc {
        schema_version: SCHEMA_VERSION,
        algo: algo_name,
        config,
        beta: fit.beta.iter().cloned().collect(),
        objective: fit.objective,
        residual_summary: residual_summary(&data, &fit.beta, q),
        bounds: None,
        status: None,
        nodes: None,
        wall_time_s: wall,
        init_time_s: init_time,
        seed,
    };
    doc.write(output)
}

#[allow(clippy::too_many_arguments)]
fn run_mio(
    q: usize,
    warm_start: Option<&Path>,
    box_center: Option<&str>,
    box_radius: Option<f64>,
    time_limit: f64,
    node_limit: Option<usize>,
    gap_tol: f64,
    input: &Path,
    output: &Path,
    trace: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let data = read_dataset(input)?;
    let quantile = quantile(q, &data)?;
    if !(time_limit > 0.0) {
        return Err(CliError::validation("time limit must be positive"));
    }
    let box_constraint = match (box_center, box_radius) {
        (None, None) => None,
        (Some(center), Some(radius)) => {
            if radius < 0.0 {
                return Err(CliError::validation("box radius must be nonnegative"));
            }
            let center = if center == "ls" {
                least_squares_fit(&data)?.beta
            } else {
                ResultDoc::read(Path::new(center))?.beta_vector(data.p())?
            };
            Some(BoxConstraint { center, radius })
        }
        _ => {
            return Err(CliError::validation(
                "--box-center and --box-radius must be given together",
            ))
        }
    };
    let warm = match warm_start {
        Some(path) => Some(ResultDoc::read(path)?.beta_vector(data.p())?),
        None => None,
    };
    let limits = MioLimits {
        time: Some(Duration::from_secs_f64(time_limit)),
        nodes: node_limit,
        gap_tol,
    };
    let model = build_model(data.clone(), quantile, box_constraint, None)?;
    let started = Instant::now();
    let result = match trace {
        Some(trace_path) => {
            let file = std::fs::File::create(trace_path)
                .map_err(|e| CliError::validation(format!("{}: {e}", trace_path.display())))?;
            let mut writer = std::io::BufWriter::new(file);
            solve_with_evolution(&model, warm.as_ref(), &limits, &mut writer)?
        }
        None => solve(&model, warm.as_ref(), &limits)?,
    };
    let wall = started.elapsed().as_secs_f64();
    let status = match result.status {
        MioStatus::ProvedOptimal => "proved_optimal",
        MioStatus::TimeLimit => "time_limit",
        MioStatus::NodeLimit => "node_limit",
    };
    let doc = ResultDoc {
        schema_version: SCHEMA_VERSION,
        algo: "mio".into(),
        config: json!({
            "q": q,
            "time_limit_s": time_limit,
            "node_limit": node_limit,
            "gap_tol": gap_tol,
            "box_radius": box_radius,
            "warm_start": warm_start.map(|p| p.display().to_string()),
            "seed": seed,
        }),
        beta: result.incumbent_beta.iter().cloned().collect(),
        objective: result.upper_bound,
        residual_summary: residual_summary(&data, &result.incumbent_beta, q),
        bounds: Some(BoundsOut {
            upper: result.upper_bound,
            lower: result.lower_bound,
            gap: result.gap,
        }),
        status: Some(status.into()),
        nodes: Some(result.nodes_explored as u64),
        wall_time_s: wall,
        init_time_s: None,
        seed,
    };
    doc.write(output)
}

#[allow(clippy::too_many_arguments)]
fn run_datagen(
    example: Option<&str>,
    scale: Option<u32>,
    n: Option<usize>,
    p: Option<usize>,
    pi: Option<f64>,
    scheme: Option<SchemeName>,
    x_sd: Option<f64>,
    noise_sd: Option<f64>,
    shift: Option<f64>,
    intercept: bool,
    output: &Path,
    meta: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let (instance, meta_value) = match example {
        Some(name) => {
            let name: NamedExample = name.parse()?;
            let (instance, q, m) = named_example(name, scale, seed)?;
            let meta_value = json!({
                "example": m.name,
                "n": m.n,
                "p": m.p,
                "pi": m.pi,
                "scheme": m.scheme.to_string(),
                "q": q.q(),
                "scale": m.scale,
                "seed": seed,
                "contaminated_ids": instance.contaminated_ids,
            });
            (instance, meta_value)
        }
        None => {
            let (Some(n), Some(p), Some(pi), Some(scheme)) = (n, p, pi, scheme) else {
                return Err(CliError::validation(
                    "either --example or all of --n/--p/--pi/--scheme are required",
                ));
            };
            let scheme = match scheme {
                SchemeName::A => Scheme::A,
                SchemeName::B => Scheme::B,
            };
            let mut spec = SyntheticSpec::new(n, p, pi, scheme, seed)?;
            if let Some(v) = x_sd {
                spec.x_sd = v;
            }
            if let Some(v) = noise_sd {
                spec.noise_sd = v;
            }
            if let Some(v) = shift {
                spec.shift = v;
            }
            spec.intercept = intercept;
            let instance = generate(&spec)?;
            let meta_value = json!({
                "n": n,
                "p": p,
                "pi": pi,
                "scheme": scheme.to_string(),
                "seed": seed,
                "x_sd": spec.x_sd,
                "noise_sd": spec.noise_sd,
                "shift": spec.shift,
                "intercept": intercept,
                "contaminated_ids": instance.contaminated_ids,
            });
            (instance, meta_value)
        }
    };
    write_dataset(output, &instance.data)?;
    if let Some(meta_path) = meta {
        let mut text = serde_json::to_string_pretty(&meta_value)
            .map_err(|e| CliError::numerical(e.to_string()))?;
        text.push('\n');
        std::fs::write(meta_path, text)
            .map_err(|e| CliError::validation(format!("{}: {e}", meta_path.display())))?;
    }
    Ok(())
}

fn run_oracle(
    q: usize,
    subset_limit: u64,
    input: &Path,
    output: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let data = read_dataset(input)?;
    let quantile = quantile(q, &data)?;
    let started = Instant::now();
    let fit = enumerate_lqs(&data, quantile, subset_limit)?;
    let wall = started.elapsed().as_secs_f64();
    println!("{}", fit.objective);
    if let Some(path) = output {
        let doc = ResultDoc {
            schema_version: SCHEMA_VERSION,
            algo: "oracle".into(),
            config: json!({ "q": q, "subset_limit": subset_limit, "seed": seed }),
            beta: fit.beta.iter().cloned().collect(),
            objective: fit.objective,
            residual_summary: residual_summary(&data, &fit.beta, q),
            bounds: None,
            status: None,
            nodes: None,
            wall_time_s: wall,
            init_time_s: None,
            seed,
        };
        doc.write(path)?;
    }
    Ok(())
}

fn run_breakdown(
    q: usize,
    magnitudes: &str,
    trials: usize,
    input: &Path,
    output: &Path,
    seed: u64,
) -> Result<(), CliError> {
    let data = read_dataset(input)?;
    let quantile = quantile(q, &data)?;
    let ladder: Vec<f64> = magnitudes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::validation(format!("bad magnitude '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    let report = breakdown_probe(&data, quantile, &ladder, trials, seed)?;
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(output, text)
        .map_err(|e| CliError::validation(format!("{}: {e}", output.display())))
}

#[allow(clippy::too_many_arguments)]
fn run_bench_cmd(
    example: &str,
    scale: Option<u32>,
    algos: &str,
    instances: usize,
    heuristics: &HeuristicOpts,
    time_limit: f64,
    node_limit: usize,
    gap_tol: f64,
    output: &Path,
    seed: u64,
) -> Result<(), CliError> {
    let example: NamedExample = example.parse()?;
    let algos: Vec<BenchAlgo> =
        algos.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
    let settings = BenchSettings {
        example,
        scale,
        algos,
        instances,
        seed,
        init: heuristics.strategy(seed),
        fo_cfg: heuristics.fo_cfg(),
        slo_cfg: heuristics.slo_cfg(),
        mio_limits: MioLimits {
            time: Some(Duration::from_secs_f64(time_limit)),
            nodes: Some(node_limit),
            gap_tol,
        },
        oracle_limit: 2_000_000,
    };
    let table = run_bench(&settings)?;
    let mut out = Vec::new();
    write_table(&table, &mut out).map_err(|e| CliError::numerical(e.to_string()))?;
    std::fs::write(output, out)
        .map_err(|e| CliError::validation(format!("{}: {e}", output.display())))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        // Ignore the error if a pool already exists (tests in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let seed = cli.seed;
    match cli.command {
        Command::Fit { algo, q, heuristics, input, output } => {
            run_fit(algo, q, &heuristics, &input, &output, seed)
        }
        Command::Mio {
            q,
            warm_start,
            box_center,
            box_radius,
            time_limit,
            node_limit,
            gap_tol,
            input,
            output,
            trace,
        } => run_mio(
            q,
            warm_start.as_deref(),
            box_center.as_deref(),
            box_radius,
            time_limit,
            node_limit,
            gap_tol,
            &input,
            &output,
            trace.as_deref(),
            seed,
        ),
        Command::Bench {
            example,
            scale,
            algos,
            instances,
            heuristics,
            time_limit,
            node_limit,
            gap_tol,
            output,
        } => run_bench_cmd(
            &example,
            scale,
            &algos,
            instances,
            &heuristics,
            time_limit,
            node_limit,
            gap_tol,
            &output,
            seed,
        ),
        Command::Datagen {
            example,
            scale,
            n,
            p,
            pi,
            scheme,
            x_sd,
            noise_sd,
            shift,
            intercept,
            output,
            meta,
        } => run_datagen(
            example.as_deref(),
            scale,
            n,
            p,
            pi,
            scheme,
            x_sd,
            noise_sd,
            shift,
            intercept,
            &output,
            meta.as_deref(),
            seed,
        ),
        Command::Oracle { q, subset_limit, input, output } => {
            run_oracle(q, subset_limit, &input, output.as_deref(), seed)
        }
        Command::Breakdown { q, magnitudes, trials, input, output } => {
            run_breakdown(q, &magnitudes, trials, &input, &output, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
