//! `seot`: closed-form Gaussian entropic transport from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spectral_eot::eot::{canonical_path, sweep};
use spectral_eot::gaussian::{kantorovich_coupling, schur_data};
use spectral_eot::io::{
    fmt_f64, read_matrix, sweep_csv, write_json, write_matrix, write_text, EpsGrid, LimitSummary, SolveReport,
};
use spectral_eot::processes::{default_ibm_grid, ibm_bias_fit};
use spectral_eot::rates::{run_experiment, RateExperiment, RateKind};
use spectral_eot::{solve_at, Covariance, EotError, KantorovichVariant, DEFAULT_RANK_TOL};

/// Environment variable that fixes the worker thread count.
const THREADS_ENV: &str = "SEOT_THREADS";

#[derive(Parser)]
#[command(
    name = "seot",
    version,
    about = "Closed-form entropic optimal transport between Gaussians"
)]
struct Cli {
    /// Worker threads; overrides SEOT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at a single regularization strength.
    Solve {
        /// Source covariance (matrix CSV).
        #[arg(long)]
        a: PathBuf,
        /// Target covariance (matrix CSV).
        #[arg(long)]
        b: PathBuf,
        /// Regularization strength, > 0.
        #[arg(long)]
        eps: f64,
        /// Also write the joint covariance.
        #[arg(long)]
        materialize: bool,
        /// Relative rank tolerance.
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        tol: f64,
        /// JSON report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Coupling CSV path (default: next to the report, or coupling.csv).
        #[arg(long)]
        coupling_out: Option<PathBuf>,
    },
    /// Evaluate a grid of regularization strengths from one decomposition.
    Sweep {
        /// Source covariance (matrix CSV).
        #[arg(long)]
        a: PathBuf,
        /// Target covariance (matrix CSV).
        #[arg(long)]
        b: PathBuf,
        /// start:stop:count[:log|:lin]
        #[arg(long)]
        eps_grid: EpsGrid,
        /// Add the coupling_distance_sq column.
        #[arg(long)]
        distances: bool,
        /// Add the bound1 and bound2 columns.
        #[arg(long)]
        bounds: bool,
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the unregularized limit plan.
    Limit {
        /// Source covariance (matrix CSV).
        #[arg(long)]
        a: PathBuf,
        /// Target covariance (matrix CSV).
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::Canonical)]
        variant: Variant,
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        tol: f64,
        /// Coupling CSV; the JSON summary goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Small-epsilon rate experiments.
    Rates {
        /// finite_rank_bias, poly_bias, poly_coupling, ratio_ensemble or identity_ratio.
        #[arg(long)]
        kind: RateKind,
        /// Dimension; 0 picks the tail-budget truncation for the decay kinds.
        #[arg(long, default_value_t = 0)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value = "1e-2:1e-6:5")]
        eps_grid: EpsGrid,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
        tol: f64,
        /// Output prefix for PREFIX.csv and PREFIX.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias exponent of integrated Brownian motion pairs.
    Ibm {
        /// Order of the source process.
        #[arg(long)]
        n: usize,
        /// Order of the target process.
        #[arg(long)]
        m_order: usize,
        /// Grid points on [0, 1].
        #[arg(long, default_value_t = 512)]
        grid: usize,
        /// Defaults to 9 log-spaced values from 1e-3 down to 1e-5.
        #[arg(long)]
        eps_grid: Option<EpsGrid>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-dimension tables of the ensemble ratio.
    Figure {
        #[arg(long, value_enum, default_value_t = Experiment::RatioEnsemble)]
        experiment: Experiment,
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',', required = true)]
        d: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value = "1e-1:1e-6:11")]
        eps_grid: EpsGrid,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Canonical,
    Monge,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    RatioEnsemble,
}

#[derive(Debug)]
enum CliError {
    Eot(EotError),
    Usage(String),
}

impl From<EotError> for CliError {
    fn from(e: EotError) -> Self {
        CliError::Eot(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Eot(EotError::NotReachable { .. }) => 4,
            CliError::Eot(e) if e.is_input_error() => 2,
            CliError::Eot(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Eot(e @ EotError::NotReachable { .. }) => {
                format!("{e}; a plan exists in the other direction, try swapping --a and --b")
            }
            CliError::Eot(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load(path: &Path, tol: f64, name: &str) -> CliResult<Covariance> {
    let m = read_matrix(path).map_err(|e| CliError::Eot(annotate(e, name)))?;
    Covariance::new(m, tol).map_err(|e| CliError::Eot(annotate(e, name)))
}

fn annotate(e: EotError, name: &str) -> EotError {
    match e {
        EotError::Parse(m) => EotError::Parse(format!("--{name}: {m}")),
        EotError::Io(m) => EotError::Io(format!("--{name}: {m}")),
        EotError::NotPsd { value, floor } => {
            EotError::InvalidConfig(format!("--{name} is not PSD: eigenvalue {value:e} below {floor:e}"))
        }
        other => other,
    }
}

fn load_pair(a: &Path, b: &Path, tol: f64) -> CliResult<(Covariance, Covariance)> {
    let a = load(a, tol, "a")?;
    let b = load(b, tol, "b")?;
    if a.dim() != b.dim() {
        return Err(EotError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        }
        .into());
    }
    Ok((a, b))
}

fn with_suffix(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn cmd_solve(
    a: &Path,
    b: &Path,
    eps: f64,
    materialize: bool,
    tol: f64,
    out: Option<&Path>,
    coupling_out: Option<&Path>,
) -> CliResult<()> {
    if eps == 0.0 {
        return Err(CliError::Usage(
            "eps must be positive; use sweep/limit for eps=0".into(),
        ));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EotError::InvalidEpsilon(eps).into());
    }
    let (a, b) = load_pair(a, b, tol)?;
    let path = canonical_path(&a, &b)?;
    let (report, coupling) = solve_at(&path, eps, materialize)?;
    let body = SolveReport::new(&path, &report);
    match out {
        Some(p) => write_json(p, &body)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&body).map_err(|e| CliError::Usage(e.to_string()))?
        ),
    }
    if let Some(c) = coupling {
        let target = match (coupling_out, out) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => with_suffix(p, ".coupling.csv"),
            (None, None) => PathBuf::from("coupling.csv"),
        };
        write_matrix(&target, c.sigma(), true)?;
    }
    Ok(())
}

fn cmd_sweep(a: &Path, b: &Path, grid: &EpsGrid, distances: bool, bounds: bool, tol: f64, out: &Path) -> CliResult<()> {
    let (a, b) = load_pair(a, b, tol)?;
    let eps = grid.values();
    let start = Instant::now();
    let path = canonical_path(&a, &b)?;
    let decomposition = start.elapsed();
    let start = Instant::now();
    let rows = sweep(&path, &eps, distances, bounds)?;
    let evaluation = start.elapsed();
    eprintln!(
        "decomposition: {:.6}s; {} evaluations: {:.6}s ({:.3e}s each)",
        decomposition.as_secs_f64(),
        rows.len(),
        evaluation.as_secs_f64(),
        evaluation.as_secs_f64() / rows.len() as f64
    );
    write_text(out, &sweep_csv(&rows, distances, bounds))?;
    Ok(())
}

fn cmd_limit(a: &Path, b: &Path, variant: Variant, tol: f64, out: &Path) -> CliResult<()> {
    let (a, b) = load_pair(a, b, tol)?;
    let kind = match variant {
        Variant::Canonical => KantorovichVariant::Canonical,
        Variant::Monge => KantorovichVariant::MongeExtremal,
    };
    let coupling = kantorovich_coupling(&a, &b, kind)?;
    let path = canonical_path(&a, &b)?;
    let sd = schur_data(&a, &b)?;
    let summary = LimitSummary {
        variant: match variant {
            Variant::Canonical => "canonical".into(),
            Variant::Monge => "monge".into(),
        },
        dimension: a.dim(),
        rank: path.rank(),
        w2_squared: path.w2_squared(),
        transport_cost: coupling.transport_cost(),
        null_mass: path.null_mass()?,
        schur_vanishes: sd.schur_vanishes(),
        schur_norm: sd.schur_norm(),
    };
    write_matrix(out, coupling.sigma(), true)?;
    write_json(out.with_extension("json"), &summary)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_rates(
    kind: RateKind,
    d: usize,
    trials: usize,
    grid: &EpsGrid,
    seed: u64,
    c: f64,
    alpha: f64,
    tol: f64,
    out: &Path,
) -> CliResult<()> {
    let mut cfg = RateExperiment::new(kind, d, trials, grid.values(), seed);
    cfg.c = c;
    cfg.alpha = alpha;
    cfg.tol = tol;
    let result = run_experiment(&cfg)?;
    write_text(with_suffix(out, ".csv"), &result.to_csv())?;
    write_json(with_suffix(out, ".json"), &result.summary())?;
    Ok(())
}

#[derive(Serialize)]
struct IbmSummary {
    n: usize,
    m_order: usize,
    grid: usize,
    fitted_exponent: f64,
    expected_exponent: f64,
}

fn cmd_ibm(n: usize, m_order: usize, grid: usize, eps_grid: Option<&EpsGrid>, out: &Path) -> CliResult<()> {
    let mut eps = eps_grid.map(|g| g.values()).unwrap_or_else(default_ibm_grid);
    eps.sort_by(|x, y| y.total_cmp(x));
    let fit = ibm_bias_fit(n, m_order, grid, &eps)?;
    let mut csv = String::from("epsilon,bias\n");
    for (e, b) in fit.epsilons.iter().zip(&fit.bias) {
        csv.push_str(&format!("{},{}\n", fmt_f64(*e), fmt_f64(*b)));
    }
    write_text(with_suffix(out, ".csv"), &csv)?;
    write_json(
        with_suffix(out, ".json"),
        &IbmSummary {
            n,
            m_order,
            grid,
            fitted_exponent: fit.fitted_exponent,
            expected_exponent: fit.expected_exponent,
        },
    )?;
    Ok(())
}

fn cmd_figure(dims: &[usize], trials: usize, grid: &EpsGrid, seed: u64, out: &Path) -> CliResult<()> {
    let mut eps = grid.values();
    eps.sort_by(|x, y| y.total_cmp(x));
    for &d in dims {
        let cfg = RateExperiment::new(RateKind::RatioEnsemble, d, trials, eps.clone(), seed);
        let result = run_experiment(&cfg)?;
        let mut csv = String::from("epsilon");
        for t in 0..trials {
            csv.push_str(&format!(",trial_{t}"));
        }
        csv.push_str(",mean\n");
        for row in &result.table {
            csv.push_str(&fmt_f64(row.epsilon));
            for s in &row.statistics {
                csv.push(',');
                csv.push_str(&fmt_f64(*s));
            }
            csv.push(',');
            csv.push_str(&fmt_f64(row.mean));
            csv.push('\n');
        }
        write_text(with_suffix(out, &format!("_d{d}.csv")), &csv)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Solve {
            a,
            b,
            eps,
            materialize,
            tol,
            out,
            coupling_out,
        } => cmd_solve(&a, &b, eps, materialize, tol, out.as_deref(), coupling_out.as_deref()),
        Command::Sweep {
            a,
            b,
            eps_grid,
            distances,
            bounds,
            tol,
            out,
        } => cmd_sweep(&a, &b, &eps_grid, distances, bounds, tol, &out),
        Command::Limit {
            a,
            b,
            variant,
            tol,
            out,
        } => cmd_limit(&a, &b, variant, tol, &out),
        Command::Rates {
            kind,
            d,
            trials,
            eps_grid,
            seed,
            c,
            alpha,
            tol,
            out,
        } => cmd_rates(kind, d, trials, &eps_grid, seed, c, alpha, tol, &out),
        Command::Ibm {
            n,
            m_order,
            grid,
            eps_grid,
            out,
        } => cmd_ibm(n, m_order, grid, eps_grid.as_ref(), &out),
        Command::Figure {
            experiment: Experiment::RatioEnsemble,
            d,
            trials,
            eps_grid,
            seed,
            out,
        } => cmd_figure(&d, trials, &eps_grid, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
