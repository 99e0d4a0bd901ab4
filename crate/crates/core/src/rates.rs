//! Small-`ε` rate experiments and their limiting constants.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eot::{bias_at, canonical_path, coupling_distance_sq, SpectralPath};
use crate::error::{EotError, Result};
use crate::gaussian::Covariance;
use crate::io::fmt_f64;
use crate::quadrature::integrate;
use crate::random::{ensemble_covariance, random_orthogonal, stream_rng};
use crate::spectral::{psi, Regularization, DEFAULT_RANK_TOL};

/// Relative budget for the neglected spectral tail of truncated decay instances.
pub const TAIL_BUDGET: f64 = 1e-3;

/// Upper limit on automatically chosen truncation dimensions.
pub const MAX_TRUNCATION: usize = 50_000_000;

/// Dimension of the shared subspace in the finite-rank experiment.
pub const FINITE_RANK_OVERLAP: usize = 3;

/// Observed plateau of the ensemble ratio, per dimension.
pub const ENSEMBLE_PLATEAU_PER_DIM: f64 = 0.36;

/// Accuracy knobs of the constant quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Absolute error target of each adaptive piece.
    pub abs_tol: f64,
    /// Value of `t^{−α}` below which the series tail takes over.
    pub tail_threshold: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            abs_tol: 1e-11,
            tail_threshold: 1e-3,
        }
    }
}

const MAX_INTERVALS: usize = 20_000;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(EotError::AlphaOutOfRange(alpha))
    }
}

fn check_scale(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(EotError::InvalidConfig(format!(
            "spectral scale c must be positive, got {c}"
        )))
    }
}

/// `∫₀^∞ g₁(t^{−α}) dt`.
///
/// On `(0, 1]` the log part `−α ln t` of `g₁(t^{−α})` integrates to `α` and
/// the bounded remainder is integrated numerically. On `[1, T]` the integral
/// runs in `ln t`; past `T` the series `g₁(x) = 2x − x² + O(x⁴)` is integrated
/// exactly.
pub fn poly_decay_integral(alpha: f64, opts: QuadratureOptions) -> Result<f64> {
    check_alpha(alpha)?;
    // g₁(t^{−α}) + α ln t, written in u = t^α so it stays finite at t = 0
    let remainder = |t: f64| {
        let u = t.powf(alpha);
        let h = 2f64.hypot(u);
        4.0 / (2.0 + h + u) + (0.5 * (u + u * u / (h + 2.0))).ln_1p()
    };
    let head = alpha + integrate(remainder, 0.0, 1.0, opts.abs_tol, MAX_INTERVALS).value;
    let one = Regularization::new(1.0)?;
    let log_t_end = -opts.tail_threshold.ln() / alpha;
    let body = integrate(
        |v: f64| one.bias((-alpha * v).exp()) * v.exp(),
        0.0,
        log_t_end,
        opts.abs_tol,
        MAX_INTERVALS,
    )
    .value;
    let t_end = log_t_end.exp();
    let tail = 2.0 * t_end.powf(1.0 - alpha) / (alpha - 1.0) - t_end.powf(1.0 - 2.0 * alpha) / (2.0 * alpha - 1.0);
    Ok(head + body + tail)
}

/// `c^{1/α} ∫₀^∞ g₁(t^{−α}) dt`: limit of `bias/ε^{1−1/α}` for `λ_k = c k^{−α}`.
pub fn poly_decay_constant(c: f64, alpha: f64) -> Result<f64> {
    poly_decay_constant_with(c, alpha, QuadratureOptions::default())
}

pub fn poly_decay_constant_with(c: f64, alpha: f64, opts: QuadratureOptions) -> Result<f64> {
    check_scale(c)?;
    Ok(c.powf(1.0 / alpha) * poly_decay_integral(alpha, opts)?)
}

/// `t^{−α} δ₁(t^{−α}) = ψ(t^α / 2)`.
pub fn coupling_integrand(t: f64, alpha: f64) -> f64 {
    psi(0.5 * t.powf(alpha))
}

/// `∫₀^∞ t^{−α} δ₁(t^{−α}) dt`, with the series `(2−√2)x − x²/√2` past `T`.
pub fn coupling_rate_integral(alpha: f64, opts: QuadratureOptions) -> Result<f64> {
    check_alpha(alpha)?;
    let head = integrate(|t| coupling_integrand(t, alpha), 0.0, 1.0, opts.abs_tol, MAX_INTERVALS).value;
    // the O(x³) remainder needs a smaller threshold than the bias series
    let threshold = opts.tail_threshold * 0.1;
    let log_t_end = -threshold.ln() / alpha;
    let body = integrate(
        |v: f64| coupling_integrand(v.exp(), alpha) * v.exp(),
        0.0,
        log_t_end,
        opts.abs_tol,
        MAX_INTERVALS,
    )
    .value;
    let t_end = log_t_end.exp();
    let tail = (2.0 - 2f64.sqrt()) * t_end.powf(1.0 - alpha) / (alpha - 1.0)
        - std::f64::consts::FRAC_1_SQRT_2 * t_end.powf(1.0 - 2.0 * alpha) / (2.0 * alpha - 1.0);
    Ok(head + body + tail)
}

/// `2 c^{1/α} ∫₀^∞ t^{−α} δ₁(t^{−α}) dt`: limit of `W²₂(π_ε, π₀)/ε^{1−1/α}` for `A = B`.
pub fn coupling_rate_constant(c: f64, alpha: f64) -> Result<f64> {
    coupling_rate_constant_with(c, alpha, QuadratureOptions::default())
}

pub fn coupling_rate_constant_with(c: f64, alpha: f64, opts: QuadratureOptions) -> Result<f64> {
    check_scale(c)?;
    Ok(2.0 * c.powf(1.0 / alpha) * coupling_rate_integral(alpha, opts)?)
}

/// Smallest `d` with `Σ_{k>d} 2c k^{−α} < 10⁻³ ε^{1−1/α}` (integral bound on the tail).
pub fn poly_truncation_dimension(c: f64, alpha: f64, eps_min: f64) -> Result<usize> {
    check_alpha(alpha)?;
    check_scale(c)?;
    Regularization::new(eps_min)?;
    let budget = TAIL_BUDGET * eps_min.powf(1.0 - 1.0 / alpha);
    let d = (2.0 * c / ((alpha - 1.0) * budget)).powf(1.0 / (alpha - 1.0)).ceil();
    if !(d <= MAX_TRUNCATION as f64) {
        return Err(EotError::InvalidConfig(format!(
            "truncation dimension {d:e} exceeds the limit {MAX_TRUNCATION}"
        )));
    }
    Ok((d as usize).max(1))
}

/// `λ_k = c k^{−α}`, `k = 1..=d`.
pub fn poly_spectrum(c: f64, alpha: f64, d: usize) -> Vec<f64> {
    (1..=d).map(|k| c * (k as f64).powf(-alpha)).collect()
}

/// Path of the commuting pair `A = B = diag(c k^{−α})`.
pub fn poly_path(c: f64, alpha: f64, d: usize) -> Result<SpectralPath> {
    let lambdas = poly_spectrum(c, alpha, d);
    let trace: f64 = lambdas.iter().sum();
    SpectralPath::from_spectrum(lambdas, trace, trace, 0.0)
}

/// `W²₂(π_ε, π₀) = 2 Σ λ_j δ_ε(λ_j)` for a pair with `A = B` commuting.
pub fn identity_coupling_distance(path: &SpectralPath, eps: f64) -> Result<f64> {
    let r = Regularization::new(eps)?;
    Ok(2.0 * path.lambdas().iter().map(|&l| l * r.perturbation(l)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    FiniteRankBias,
    PolyBias,
    PolyCoupling,
    RatioEnsemble,
    IdentityRatio,
}

impl RateKind {
    pub const ALL: [RateKind; 5] = [
        RateKind::FiniteRankBias,
        RateKind::PolyBias,
        RateKind::PolyCoupling,
        RateKind::RatioEnsemble,
        RateKind::IdentityRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RateKind::FiniteRankBias => "finite_rank_bias",
            RateKind::PolyBias => "poly_bias",
            RateKind::PolyCoupling => "poly_coupling",
            RateKind::RatioEnsemble => "ratio_ensemble",
            RateKind::IdentityRatio => "identity_ratio",
        }
    }

    fn is_poly(self) -> bool {
        matches!(self, RateKind::PolyBias | RateKind::PolyCoupling)
    }
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RateKind {
    type Err = EotError;

    fn from_str(s: &str) -> Result<Self> {
        RateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EotError::InvalidConfig(format!("unknown experiment kind '{s}'")))
    }
}

/// Configuration of a rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExperiment {
    pub kind: RateKind,
    /// Matrix dimension; for the decay kinds 0 selects the tail-budget rule.
    pub dimension: usize,
    pub trials: usize,
    /// Strictly decreasing, positive.
    pub epsilon_grid: Vec<f64>,
    pub seed: u64,
    /// Scale `c` of `λ_k = c k^{−α}`.
    pub c: f64,
    pub alpha: f64,
    pub tol: f64,
}

impl RateExperiment {
    pub fn new(kind: RateKind, dimension: usize, trials: usize, epsilon_grid: Vec<f64>, seed: u64) -> Self {
        RateExperiment {
            kind,
            dimension,
            trials,
            epsilon_grid,
            seed,
            c: 1.0,
            alpha: 2.0,
            tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(EotError::InvalidConfig("trials must be at least 1".into()));
        }
        if self.epsilon_grid.is_empty() {
            return Err(EotError::InvalidConfig("epsilon grid is empty".into()));
        }
        for &e in &self.epsilon_grid {
            Regularization::new(e)?;
        }
        if self.epsilon_grid.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(EotError::InvalidConfig(
                "epsilon grid must be strictly decreasing".into(),
            ));
        }
        if self.kind.is_poly() {
            check_alpha(self.alpha)?;
            check_scale(self.c)?;
        } else if self.dimension == 0 {
            return Err(EotError::InvalidConfig("dimension must be at least 1".into()));
        }
        if self.kind == RateKind::FiniteRankBias && self.dimension < FINITE_RANK_OVERLAP {
            return Err(EotError::InvalidConfig(format!(
                "finite_rank_bias needs dimension >= {FINITE_RANK_OVERLAP}"
            )));
        }
        Ok(())
    }
}

/// One grid row: the statistic of every trial, their mean and sample deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub epsilon: f64,
    pub statistics: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub kind: RateKind,
    pub table: Vec<RateRow>,
    /// Mean statistic at the smallest `ε`.
    pub limit_estimate: f64,
    pub reference_constant: f64,
    /// Additional reference reported alongside (the `d/2` identity value for the ensemble).
    pub secondary_reference: Option<f64>,
    /// Whether the last two grid means differ by less than 1%.
    pub converged: bool,
    pub dimension_used: usize,
}

/// JSON summary of a [`RateResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub kind: RateKind,
    pub limit_estimate: f64,
    pub reference_constant: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub secondary_reference: Option<f64>,
    pub converged: bool,
    pub dimension_used: usize,
}

impl RateResult {
    pub fn summary(&self) -> RateSummary {
        RateSummary {
            kind: self.kind,
            limit_estimate: self.limit_estimate,
            reference_constant: self.reference_constant,
            secondary_reference: self.secondary_reference,
            converged: self.converged,
            dimension_used: self.dimension_used,
        }
    }

    /// `epsilon,trial_0,…,trial_{k−1},mean,sd`.
    pub fn to_csv(&self) -> String {
        let trials = self.table.first().map(|r| r.statistics.len()).unwrap_or(0);
        let mut out = String::from("epsilon");
        for t in 0..trials {
            out.push_str(&format!(",trial_{t}"));
        }
        out.push_str(",mean,sd\n");
        for row in &self.table {
            out.push_str(&fmt_f64(row.epsilon));
            for s in &row.statistics {
                out.push(',');
                out.push_str(&fmt_f64(*s));
            }
            out.push(',');
            out.push_str(&fmt_f64(row.mean));
            out.push(',');
            out.push_str(&fmt_f64(row.sd));
            out.push('\n');
        }
        out
    }
}

pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A pair whose cross spectrum has exactly `FINITE_RANK_OVERLAP` nonzero values.
pub fn finite_rank_pair(seed: u64, trial: u64, d: usize, tol: f64) -> Result<(Covariance, Covariance)> {
    let mut rng = stream_rng(seed, trial);
    let a = ensemble_covariance(&mut rng, d);
    let u = random_orthogonal(&mut rng, d)
        .columns(0, FINITE_RANK_OVERLAP)
        .into_owned();
    let w = ensemble_covariance(&mut rng, FINITE_RANK_OVERLAP);
    let b = &u * w * u.transpose();
    Ok((
        Covariance::new(a, tol)?,
        Covariance::new((&b + b.transpose()) * 0.5, tol)?,
    ))
}

/// Independent Wishart pair for one trial of the ratio ensemble.
pub fn ensemble_pair(seed: u64, trial: u64, d: usize, tol: f64) -> Result<(Covariance, Covariance)> {
    let mut rng = stream_rng(seed, trial);
    let a = ensemble_covariance(&mut rng, d);
    let b = ensemble_covariance(&mut rng, d);
    Ok((Covariance::new(a, tol)?, Covariance::new(b, tol)?))
}

/// Per-trial statistics over the grid, plus the trial's reference value.
fn run_trial(cfg: &RateExperiment, trial: u64, dim: usize) -> Result<(Vec<f64>, f64)> {
    let grid = &cfg.epsilon_grid;
    match cfg.kind {
        RateKind::FiniteRankBias => {
            let (a, b) = finite_rank_pair(cfg.seed, trial, dim, cfg.tol)?;
            let path = canonical_path(&a, &b)?;
            let stats = grid
                .iter()
                .map(|&e| Ok(bias_at(&path, e)? / (e * (1.0 / e).ln())))
                .collect::<Result<_>>()?;
            Ok((stats, path.rank() as f64))
        }
        RateKind::IdentityRatio => {
            let mut rng = stream_rng(cfg.seed, trial);
            let a = Covariance::new(ensemble_covariance(&mut rng, dim), cfg.tol)?;
            let path = canonical_path(&a, &a)?;
            let stats = grid
                .iter()
                .map(|&e| Ok(coupling_distance_sq(&path, e)? / e))
                .collect::<Result<_>>()?;
            Ok((stats, a.rank() as f64 / 2.0))
        }
        RateKind::RatioEnsemble => {
            let (a, b) = ensemble_pair(cfg.seed, trial, dim, cfg.tol)?;
            let path = canonical_path(&a, &b)?;
            let stats = grid
                .iter()
                .map(|&e| Ok(coupling_distance_sq(&path, e)? / e))
                .collect::<Result<_>>()?;
            Ok((stats, ENSEMBLE_PLATEAU_PER_DIM * dim as f64))
        }
        RateKind::PolyBias | RateKind::PolyCoupling => {
            let path = poly_path(cfg.c, cfg.alpha, dim)?;
            let power = 1.0 - 1.0 / cfg.alpha;
            let stats = grid
                .iter()
                .map(|&e| {
                    let q = if cfg.kind == RateKind::PolyBias {
                        bias_at(&path, e)?
                    } else {
                        identity_coupling_distance(&path, e)?
                    };
                    Ok(q / e.powf(power))
                })
                .collect::<Result<_>>()?;
            let reference = if cfg.kind == RateKind::PolyBias {
                poly_decay_constant(cfg.c, cfg.alpha)?
            } else {
                coupling_rate_constant(cfg.c, cfg.alpha)?
            };
            Ok((stats, reference))
        }
    }
}

/// Runs all trials (in parallel, merged in trial order) and tabulates them.
pub fn run_experiment(cfg: &RateExperiment) -> Result<RateResult> {
    cfg.validate()?;
    let dim = if cfg.kind.is_poly() && cfg.dimension == 0 {
        let eps_min = *cfg.epsilon_grid.last().expect("validated non-empty");
        poly_truncation_dimension(cfg.c, cfg.alpha, eps_min)?
    } else {
        cfg.dimension
    };
    let trials: Vec<(Vec<f64>, f64)> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, dim))
        .collect::<Result<_>>()?;
    let table: Vec<RateRow> = cfg
        .epsilon_grid
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let statistics: Vec<f64> = trials.iter().map(|(s, _)| s[i]).collect();
            let (mean, sd) = mean_and_sd(&statistics);
            RateRow {
                epsilon: eps,
                statistics,
                mean,
                sd,
            }
        })
        .collect();
    if table.iter().flat_map(|r| r.statistics.iter()).any(|v| !v.is_finite()) {
        return Err(EotError::NonFinite);
    }
    let reference_constant = trials.iter().map(|(_, r)| r).sum::<f64>() / trials.len() as f64;
    let limit_estimate = table.last().map(|r| r.mean).unwrap_or(f64::NAN);
    let converged = match table.len() {
        0 | 1 => false,
        n => (table[n - 1].mean - table[n - 2].mean).abs() <= 0.01 * table[n - 1].mean.abs(),
    };
    let secondary_reference = (cfg.kind == RateKind::RatioEnsemble).then(|| dim as f64 / 2.0);
    Ok(RateResult {
        kind: cfg.kind,
        table,
        limit_estimate,
        reference_constant,
        secondary_reference,
        converged,
        dimension_used: dim,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
