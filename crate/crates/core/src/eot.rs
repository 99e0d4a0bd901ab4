//! Entropic OT along the regularization path of an aligned pair.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::error::{EotError, Result};
use crate::gaussian::{canonical_pair, AlignedPair, Covariance};
use crate::spectral::{eigh, max_abs, reassemble, svd, symmetrize, Regularization};

/// Relative PSD slack of `Q_ε` before it counts as indefinite.
pub const Q_PSD_TOL: f64 = 1e-8;

/// Operator-norm margin below 1 required of an admissible correlation.
pub const CORRELATION_MARGIN: f64 = 1e-12;

/// Absolute (relative to `max(1, ‖R‖)`) residual accepted for the support constraints.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Quantities of the canonical pair reused at every `ε`.
#[derive(Debug, Clone)]
struct CanonicalData {
    gtg: DMatrix<f64>,
    mtm: DMatrix<f64>,
    /// `(G₀ᵀG₀)² + (M₀ᵀM₀)²`.
    q_base: DMatrix<f64>,
    /// `e_jᵀ G₀ᵀG₀ e_j`.
    weights_g: DVector<f64>,
    /// `e_jᵀ M₀ᵀM₀ e_j`.
    weights_m: DVector<f64>,
}

/// The eigensystem of `GᵀM`, from which every per-`ε` quantity follows.
#[derive(Debug, Clone)]
pub struct SpectralPath {
    pair: Option<AlignedPair>,
    lambdas: DVector<f64>,
    basis: Option<DMatrix<f64>>,
    rank: usize,
    trace_a: f64,
    trace_b: f64,
    w2_squared: f64,
    canonical: Option<CanonicalData>,
}

impl SpectralPath {
    /// Path of a commuting instance given only the spectrum of `GᵀM` and the traces.
    ///
    /// No matrices are stored, so cost evaluation stays `O(d)` for very large `d`.
    pub fn from_spectrum(lambdas: Vec<f64>, trace_a: f64, trace_b: f64, tol: f64) -> Result<Self> {
        if lambdas.iter().any(|v| !v.is_finite()) || !trace_a.is_finite() || !trace_b.is_finite() {
            return Err(EotError::NonFinite);
        }
        let mut lambdas = lambdas;
        lambdas.sort_by(|a, b| b.total_cmp(a));
        let top = lambdas.first().copied().unwrap_or(0.0).max(0.0);
        let cutoff = tol * top;
        let rank = lambdas.iter().filter(|&&v| v > cutoff).count();
        let lambdas = DVector::from_fn(lambdas.len(), |j, _| if j < rank { lambdas[j] } else { 0.0 });
        let w2_squared = (trace_a + trace_b - 2.0 * lambdas.sum()).max(0.0);
        Ok(SpectralPath {
            pair: None,
            lambdas,
            basis: None,
            rank,
            trace_a,
            trace_b,
            w2_squared,
            canonical: None,
        })
    }

    pub fn pair(&self) -> Option<&AlignedPair> {
        self.pair.as_ref()
    }

    /// Retained eigenvalues of `GᵀM`, descending, zero beyond the rank.
    pub fn lambdas(&self) -> &DVector<f64> {
        &self.lambdas
    }

    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        self.basis.as_ref()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn trace_a(&self) -> f64 {
        self.trace_a
    }

    pub fn trace_b(&self) -> f64 {
        self.trace_b
    }

    /// Unregularized cost `tr A + tr B − 2 Σ λ_j`.
    pub fn w2_squared(&self) -> f64 {
        self.w2_squared
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical.is_some()
    }

    fn canonical(&self) -> Result<&CanonicalData> {
        self.canonical.as_ref().ok_or(EotError::NotCanonical)
    }

    fn factors(&self) -> Result<(&AlignedPair, &DMatrix<f64>)> {
        match (&self.pair, &self.basis) {
            (Some(p), Some(b)) => Ok((p, b)),
            _ => Err(EotError::InvalidConfig("path carries no Green's factors".into())),
        }
    }

    /// `Σ_j φ(λ_j) e_j e_jᵀ`.
    fn spectral_matrix<F: Fn(f64) -> f64>(&self, phi: F) -> Result<DMatrix<f64>> {
        let (_, basis) = self.factors()?;
        Ok(reassemble(basis, &self.lambdas.map(phi)))
    }

    /// `tr(M₀ Π_{null(P)} M₀ᵀ)`: the variance of `B` that the limit plan leaves uncorrelated.
    pub fn null_mass(&self) -> Result<f64> {
        let c = self.canonical()?;
        Ok(c.weights_m.iter().skip(self.rank).sum())
    }
}

/// Reuses the eigendecomposition held by the pair.
pub fn build_path(pair: AlignedPair) -> Result<SpectralPath> {
    let eig = pair.cross_spectrum();
    let rank = eig.numerical_rank();
    let lambdas = eig.retained().map(|x| x.max(0.0));
    let basis = eig.eigenvectors().clone();
    let trace_a = pair.a().trace();
    let trace_b = pair.b().trace();
    let w2_squared = (trace_a + trace_b - 2.0 * lambdas.sum()).max(0.0);
    let canonical = if pair.is_canonical() {
        let g = pair.g().matrix();
        let m = pair.m().matrix();
        let gtg = symmetrize(&(g.transpose() * g));
        let mtm = symmetrize(&(m.transpose() * m));
        let q_base = symmetrize(&(&gtg * &gtg + &mtm * &mtm));
        let gb = &gtg * &basis;
        let mb = &mtm * &basis;
        let weights_g = DVector::from_fn(basis.ncols(), |j, _| basis.column(j).dot(&gb.column(j)));
        let weights_m = DVector::from_fn(basis.ncols(), |j, _| basis.column(j).dot(&mb.column(j)));
        Some(CanonicalData {
            gtg,
            mtm,
            q_base,
            weights_g,
            weights_m,
        })
    } else {
        None
    };
    Ok(SpectralPath {
        pair: Some(pair),
        lambdas,
        basis: Some(basis),
        rank,
        trace_a,
        trace_b,
        w2_squared,
        canonical,
    })
}

/// Canonical pair followed by [`build_path`].
pub fn canonical_path(a: &Covariance, b: &Covariance) -> Result<SpectralPath> {
    build_path(canonical_pair(a, b)?)
}

/// Per-`ε` results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EotReport {
    pub epsilon: f64,
    /// `s_j = f_ε(λ_j)`.
    pub shrunk: Vec<f64>,
    pub transport_cost: f64,
    pub kl: f64,
    /// `W²₂ + Σ g_ε(λ_j)`.
    pub entropic_cost: f64,
    /// `Σ g_ε(λ_j)`.
    pub bias: f64,
    pub w2_squared: f64,
    /// `Σ s_j`.
    pub r_trace_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coupling_distance_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bound1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bound2: Option<f64>,
}

impl EotReport {
    /// `transport_cost + 2ε·kl`, the second route to the entropic cost.
    pub fn entropic_cost_from_kl(&self) -> f64 {
        self.transport_cost + 2.0 * self.epsilon * self.kl
    }
}

/// Scalar sums over the spectrum at one `ε`.
#[derive(Debug, Clone, Copy)]
struct PathSums {
    bias: f64,
    kl: f64,
    overlap: f64,
    trace_norm: f64,
}

fn path_sums(lambdas: &DVector<f64>, r: Regularization) -> PathSums {
    let mut sums = PathSums {
        bias: 0.0,
        kl: 0.0,
        overlap: 0.0,
        trace_norm: 0.0,
    };
    for &l in lambdas.iter() {
        if l <= 0.0 {
            continue;
        }
        let (s, log) = r.shrink_and_log(l);
        sums.bias += 2.0 * r.value() * s / (1.0 + s) - r.value() * log;
        sums.kl -= 0.5 * log;
        sums.overlap += s * l;
        sums.trace_norm += s;
    }
    sums
}

/// Closed-form solution at one `ε`; optionally assembles `Σ_ε`.
pub fn solve_at(path: &SpectralPath, eps: f64, materialize: bool) -> Result<(EotReport, Option<Coupling>)> {
    let r = Regularization::new(eps)?;
    let sums = path_sums(&path.lambdas, r);
    let shrunk: Vec<f64> = path.lambdas.iter().map(|&l| r.shrink(l)).collect();
    let report = EotReport {
        epsilon: eps,
        transport_cost: path.trace_a + path.trace_b - 2.0 * sums.overlap,
        kl: sums.kl,
        entropic_cost: path.w2_squared + sums.bias,
        bias: sums.bias,
        w2_squared: path.w2_squared,
        r_trace_norm: sums.trace_norm,
        shrunk,
        coupling_distance_sq: None,
        bound1: None,
        bound2: None,
    };
    let coupling = if materialize {
        Some(coupling_at(path, eps)?)
    } else {
        None
    };
    Ok((report, coupling))
}

/// `R_ε = Σ_j f_ε(λ_j) e_j e_jᵀ`.
pub fn correlation_at(path: &SpectralPath, eps: f64) -> Result<DMatrix<f64>> {
    let r = Regularization::new(eps)?;
    path.spectral_matrix(|l| r.shrink(l))
}

/// `Σ_ε` with cross block `C_ε = G R_ε Mᵀ`.
pub fn coupling_at(path: &SpectralPath, eps: f64) -> Result<Coupling> {
    let rm = correlation_at(path, eps)?;
    let (pair, _) = path.factors()?;
    let c = pair.g().matrix() * rm * pair.m().matrix().transpose();
    Coupling::assemble(pair.a().matrix(), pair.b().matrix(), &c)
}

/// `W²₂ + Σ_j g_ε(λ_j)` for each `ε`, evaluated in parallel.
pub fn entropic_cost_curve(path: &SpectralPath, eps_list: &[f64]) -> Result<Vec<f64>> {
    let regs: Vec<Regularization> = eps_list
        .iter()
        .map(|&e| Regularization::new(e))
        .collect::<Result<_>>()?;
    Ok(regs
        .par_iter()
        .map(|&r| path.w2_squared + path.lambdas.iter().map(|&l| r.bias(l)).sum::<f64>())
        .collect())
}

/// `Σ_j g_ε(λ_j)`, the entropic bias.
pub fn bias_at(path: &SpectralPath, eps: f64) -> Result<f64> {
    let r = Regularization::new(eps)?;
    Ok(path.lambdas.iter().map(|&l| r.bias(l)).sum())
}

/// `−½ Σ ln(1 − s_j²)`.
pub fn kl_divergence(s: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &sj in s {
        if !(sj < 1.0 - CORRELATION_MARGIN) || sj.is_nan() {
            return Err(EotError::SingularCoupling(sj));
        }
        let sj = sj.abs();
        let log = if sj < 0.5 {
            (-sj * sj).ln_1p()
        } else {
            ((1.0 - sj) * (1.0 + sj)).ln()
        };
        total -= 0.5 * log;
    }
    Ok(total)
}

/// Limit plan `Σ₀` with `R₀` the projection onto the range of `P^{1/2}`.
pub fn limit_coupling(a: &Covariance, b: &Covariance) -> Result<Coupling> {
    limit_coupling_from_path(&canonical_path(a, b)?)
}

pub fn limit_coupling_from_path(path: &SpectralPath) -> Result<Coupling> {
    path.canonical()?;
    let (pair, _) = path.factors()?;
    let r0 = path.spectral_matrix(|l| if l > 0.0 { 1.0 } else { 0.0 })?;
    let c = pair.g().matrix() * r0 * pair.m().matrix().transpose();
    Coupling::assemble(pair.a().matrix(), pair.b().matrix(), &c)
}

/// `W²₂(π_ε, π₀) = 2 tr[A + B − Q_ε^{1/2}]`.
pub fn coupling_distance_sq(path: &SpectralPath, eps: f64) -> Result<f64> {
    if eps == 0.0 {
        return Ok(0.0);
    }
    let r = Regularization::new(eps)?;
    let c = path.canonical()?;
    let rm = path.spectral_matrix(|l| r.shrink(l))?;
    let cross = &c.gtg * &rm * &c.mtm;
    let q = symmetrize(&(&c.q_base + &cross + cross.transpose()));
    let tol = path
        .pair
        .as_ref()
        .map(|p| p.a().tol())
        .unwrap_or(crate::spectral::DEFAULT_RANK_TOL);
    let eig = eigh(&q, tol)?;
    let max = eig.max_eigenvalue();
    let min = eig.min_eigenvalue();
    if min < -Q_PSD_TOL * max.max(0.0) {
        return Err(EotError::IndefiniteQ { min, max });
    }
    let root_trace: f64 = eig.retained().iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok((2.0 * (path.trace_a + path.trace_b - root_trace)).max(0.0))
}

/// `(tr[(G₀ᵀG₀ + M₀ᵀM₀) δ_ε(P^{1/2})], 2 min(tr[G₀ᵀG₀ η_ε], tr[M₀ᵀM₀ η_ε]))`.
pub fn upper_bounds(path: &SpectralPath, eps: f64) -> Result<(f64, f64)> {
    let r = Regularization::new(eps)?;
    let c = path.canonical()?;
    let mut b1 = 0.0;
    let mut eta_g = 0.0;
    let mut eta_m = 0.0;
    for (j, &l) in path.lambdas.iter().enumerate() {
        if l <= 0.0 {
            continue;
        }
        let delta = r.perturbation(l);
        let eta = r.eta(l);
        b1 += delta * (c.weights_g[j] + c.weights_m[j]);
        eta_g += eta * c.weights_g[j];
        eta_m += eta * c.weights_m[j];
    }
    Ok((b1, 2.0 * eta_g.min(eta_m)))
}

/// One row of a regularization sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub entropic_cost: f64,
    pub bias: f64,
    pub kl: f64,
    pub coupling_distance_sq: Option<f64>,
    pub bound1: Option<f64>,
    pub bound2: Option<f64>,
}

/// Evaluates every `ε` of the grid on a prebuilt path.
pub fn sweep(path: &SpectralPath, eps_list: &[f64], distances: bool, bounds: bool) -> Result<Vec<SweepRow>> {
    eps_list
        .par_iter()
        .map(|&eps| {
            let r = Regularization::new(eps)?;
            let sums = path_sums(&path.lambdas, r);
            let coupling_distance_sq = if distances {
                Some(coupling_distance_sq(path, eps)?)
            } else {
                None
            };
            let (bound1, bound2) = if bounds {
                let (b1, b2) = upper_bounds(path, eps)?;
                (Some(b1), Some(b2))
            } else {
                (None, None)
            };
            Ok(SweepRow {
                epsilon: eps,
                entropic_cost: path.w2_squared + sums.bias,
                bias: sums.bias,
                kl: sums.kl,
                coupling_distance_sq,
                bound1,
                bound2,
            })
        })
        .collect()
}

/// Outcome of the admissibility check for a correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDiagnostics {
    pub admissible: bool,
    pub spectral_norm: f64,
    /// `‖R Π_{null(M)}‖_max`.
    pub null_residual: f64,
    /// `‖Π_{null(G)} R‖_max`.
    pub range_residual: f64,
    pub failures: Vec<String>,
}

/// Projector onto the numerical right null space of `x`.
fn null_projector(x: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let s = svd(x)?;
    let top = s.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let r = s.rank_above(tol * top);
    let n = s.v.columns(r, s.v.ncols() - r);
    Ok(n * n.transpose())
}

/// Whether `R` parametrizes a coupling equivalent to the independent one.
pub fn validate_correlation(rm: &DMatrix<f64>, pair: &AlignedPair) -> Result<CorrelationDiagnostics> {
    let d = pair.dim();
    if rm.nrows() != d || rm.ncols() != d {
        return Err(EotError::DimensionMismatch {
            expected: d,
            found: rm.nrows().max(rm.ncols()),
        });
    }
    let tol = pair.a().tol();
    let norm = crate::spectral::spectral_norm(rm)?;
    let null_m = null_projector(pair.m().matrix(), tol)?;
    let null_g = null_projector(pair.g().matrix(), tol)?;
    let null_residual = max_abs(&(rm * null_m));
    let range_residual = max_abs(&(null_g * rm));
    let slack = SUPPORT_TOL * norm.max(1.0);
    let mut failures = Vec::new();
    if !(norm < 1.0 - CORRELATION_MARGIN) {
        failures.push(format!("operator norm {norm} is not below 1 (singular regime)"));
    }
    if null_residual > slack {
        failures.push(format!("R does not vanish on null(M): residual {null_residual:e}"));
    }
    if range_residual > slack {
        failures.push(format!("range(R) leaves null(G)^⊥: residual {range_residual:e}"));
    }
    Ok(CorrelationDiagnostics {
        admissible: failures.is_empty(),
        spectral_norm: norm,
        null_residual,
        range_residual,
        failures,
    })
}

/// Entropic profit `2 tr(R MᵀG) + ε Σ ln(1 − σ_j(R)²)`.
pub fn profit(rm: &DMatrix<f64>, pair: &AlignedPair, eps: f64) -> Result<f64> {
    let r = Regularization::new(eps)?;
    let sigma = svd(rm)?.singular_values;
    let mut barrier = 0.0;
    for &s in sigma.iter() {
        if s >= 1.0 {
            return Err(EotError::SingularCoupling(s));
        }
        barrier += if s < 0.5 {
            (-s * s).ln_1p()
        } else {
            ((1.0 - s) * (1.0 + s)).ln()
        };
    }
    let linear = (rm * pair.m().matrix().transpose() * pair.g().matrix()).trace();
    Ok(2.0 * linear + r.value() * barrier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{bures_w2_squared, fidelity, kantorovich_coupling, KantorovichVariant};
    use crate::random::{random_psd_of_rank, stream_rng, wishart};
    use crate::spectral::DEFAULT_RANK_TOL;
    use approx::assert_abs_diff_eq;

    fn cov(m: DMatrix<f64>) -> Covariance {
        Covariance::with_default_tol(m).unwrap()
    }

    fn diag(v: &[f64]) -> Covariance {
        Covariance::from_diagonal(v, DEFAULT_RANK_TOL).unwrap()
    }

    fn random_path(seed: u64, d: usize) -> SpectralPath {
        let mut rng = stream_rng(seed, 0);
        let a = cov(wishart(&mut rng, d, d + 1));
        let b = cov(wishart(&mut rng, d, d + 1));
        canonical_path(&a, &b).unwrap()
    }

    #[test]
    fn orthogonal_marginals_are_independent() {
        let path = canonical_path(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])).unwrap();
        assert!(path.lambdas().iter().all(|&l| l == 0.0));
        for eps in [1e-6, 1.0, 1e3] {
            let (rep, c) = solve_at(&path, eps, true).unwrap();
            assert_eq!(rep.kl, 0.0);
            assert_eq!(rep.entropic_cost, 2.0);
            assert_eq!(max_abs(&c.unwrap().c_block().into_owned()), 0.0);
        }
    }

    #[test]
    fn identity_pair_spectrum_is_eigenvalues() {
        let a = cov(wishart(&mut stream_rng(1, 0), 4, 6));
        let path = canonical_path(&a, &a).unwrap();
        for (l, e) in path.lambdas().iter().zip(a.spectrum().eigenvalues().iter()) {
            assert!((l - e).abs() < 1e-12);
        }
    }

    #[test]
    fn path_trace_is_fidelity() {
        let mut rng = stream_rng(2, 0);
        let a = cov(wishart(&mut rng, 6, 6));
        let b = cov(random_psd_of_rank(&mut rng, 6, 4));
        let path = canonical_path(&a, &b).unwrap();
        let fid = fidelity(&a, &b).unwrap();
        assert!((path.lambdas().sum() - fid).abs() <= 1e-8 * fid);
        assert!((path.w2_squared() - bures_w2_squared(&a, &b).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn scalar_unit_instance() {
        let one = diag(&[1.0]);
        let path = canonical_path(&one, &one).unwrap();
        let (rep, _) = solve_at(&path, 1.0, false).unwrap();
        assert_abs_diff_eq!(rep.shrunk[0], 0.6180339887498949, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.kl, -0.5 * rep.shrunk[0].ln(), epsilon = 1e-15);
        assert!((rep.entropic_cost - rep.entropic_cost_from_kl()).abs() < 1e-14);
    }

    #[test]
    fn cost_routes_agree_and_trace_norm_bound() {
        for seed in 0..5 {
            let path = random_path(10 + seed, 5);
            for eps in [1e-6, 1e-3, 0.5, 10.0] {
                let (rep, _) = solve_at(&path, eps, false).unwrap();
                let alt = rep.entropic_cost_from_kl();
                assert!((rep.entropic_cost - alt).abs() <= 1e-8 * rep.entropic_cost.abs().max(1e-300));
                assert!(rep.entropic_cost >= rep.w2_squared);
                assert!(rep.r_trace_norm <= 2.0 / eps * path.lambdas().sum());
            }
        }
    }

    #[test]
    fn materialized_coupling_is_valid() {
        let path = random_path(20, 5);
        let (_, c) = solve_at(&path, 0.5, true).unwrap();
        let c = c.unwrap();
        let pair = path.pair().unwrap();
        assert_eq!(&c.a_block().into_owned(), pair.a().matrix());
        assert_eq!(&c.b_block().into_owned(), pair.b().matrix());
        assert!(c.validated());
        let rm = correlation_at(&path, 0.5).unwrap();
        assert!(validate_correlation(&rm, pair).unwrap().admissible);
    }

    #[test]
    fn curve_is_monotone_and_tends_to_w2() {
        let path = random_path(21, 4);
        let grid: Vec<f64> = (0..=8).map(|k| 10f64.powi(-k)).collect();
        let curve = entropic_cost_curve(&path, &grid).unwrap();
        for w in curve.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(curve[8] - path.w2_squared() < 1e-5);
        assert!(entropic_cost_curve(&path, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rank_one_bias_rate() {
        let path = SpectralPath::from_spectrum(vec![1.0], 1.0, 1.0, DEFAULT_RANK_TOL).unwrap();
        let eps = 1e-12;
        let ratio = bias_at(&path, eps).unwrap() / (eps * (1.0 / eps).ln());
        // ratio = 1 + O(1/ln(1/ε))
        assert!((ratio - 1.0).abs() < 0.05);
    }

    #[test]
    fn kl_divergence_values() {
        assert_eq!(kl_divergence(&[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&[0.6]).unwrap(), -0.5 * 0.64f64.ln(), epsilon = 1e-15);
        assert!(matches!(kl_divergence(&[1.0]), Err(EotError::SingularCoupling(_))));
    }

    #[test]
    fn limit_coupling_matches_block_formula() {
        let mut rng = stream_rng(22, 0);
        for (ra, rb) in [(5, 5), (5, 3), (4, 2)] {
            let a = cov(random_psd_of_rank(&mut rng, 5, ra));
            let b = cov(random_psd_of_rank(&mut rng, 5, rb));
            let lim = limit_coupling(&a, &b).unwrap();
            let kc = kantorovich_coupling(&a, &b, KantorovichVariant::Canonical).unwrap();
            assert!(max_abs(&(lim.sigma() - kc.sigma())) <= 1e-8, "ranks {ra},{rb}");
            let w2 = bures_w2_squared(&a, &b).unwrap();
            assert!((lim.transport_cost() - w2).abs() <= 1e-8 * (1.0 + w2));
        }
    }

    #[test]
    fn limit_of_orthogonal_marginals_is_independent() {
        let c = limit_coupling(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])).unwrap();
        assert_eq!(max_abs(&c.c_block().into_owned()), 0.0);
    }

    #[test]
    fn couplings_converge_to_limit() {
        let path = random_path(23, 4);
        let lim = limit_coupling_from_path(&path).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let c = coupling_at(&path, 10f64.powi(-k)).unwrap();
            let gap = (c.sigma() - lim.sigma()).norm();
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn scalar_coupling_distance() {
        let one = diag(&[1.0]);
        let path = canonical_path(&one, &one).unwrap();
        let s = (5f64.sqrt() - 1.0) / 2.0;
        let expected = 4.0 - 2.0 * (2.0 * (1.0 + s)).sqrt();
        assert_abs_diff_eq!(coupling_distance_sq(&path, 1.0).unwrap(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, 0.4021851201, epsilon = 1e-10);
        assert_eq!(coupling_distance_sq(&path, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn identity_pair_distance_and_sharp_bound() {
        let a = cov(wishart(&mut stream_rng(24, 0), 4, 5));
        let path = canonical_path(&a, &a).unwrap();
        for eps in [1e-3, 0.3, 4.0] {
            let r = Regularization::new(eps).unwrap();
            let expected: f64 = 2.0
                * a.spectrum()
                    .eigenvalues()
                    .iter()
                    .map(|&l| l * r.perturbation(l))
                    .sum::<f64>();
            let dist = coupling_distance_sq(&path, eps).unwrap();
            assert!((dist - expected).abs() <= 1e-8 * expected);
            let (b1, b2) = upper_bounds(&path, eps).unwrap();
            assert!((b1 - expected).abs() <= 1e-8 * expected);
            assert!(b2 >= dist - 1e-9);
        }
    }

    #[test]
    fn distance_vanishes_as_eps_shrinks() {
        let path = random_path(25, 5);
        let d = coupling_distance_sq(&path, 1e-9).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn delta_below_eta_as_forms() {
        let path = random_path(26, 5);
        for eps in [1e-2, 1.0] {
            let r = Regularization::new(eps).unwrap();
            let gap = path.spectral_matrix(|l| r.eta(l) - r.perturbation(l)).unwrap();
            assert!(eigh(&gap, 0.0).unwrap().min_eigenvalue() >= -1e-12);
        }
    }

    #[test]
    fn admissibility_predicate() {
        let path = random_path(27, 3);
        let pair = path.pair().unwrap();
        assert!(validate_correlation(&DMatrix::zeros(3, 3), pair).unwrap().admissible);
        let diag_i = validate_correlation(&DMatrix::identity(3, 3), pair).unwrap();
        assert!(!diag_i.admissible);
        assert!(diag_i.failures[0].contains("operator norm"));
    }

    #[test]
    fn admissibility_detects_support_violation() {
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[1.0, 1.0]);
        let pair = crate::gaussian::canonical_pair(&b, &a).unwrap();
        // null(M) = e₂ here; a correlation acting on e₂ violates the support constraint
        let mut rm = DMatrix::zeros(2, 2);
        rm[(0, 1)] = 0.5;
        let diag_r = validate_correlation(&rm, &pair).unwrap();
        assert!(!diag_r.admissible);
        assert!(diag_r.null_residual > 0.1);
    }

    #[test]
    fn profit_is_locally_maximal_at_closed_form() {
        let path = random_path(28, 5);
        let pair = path.pair().unwrap();
        assert_eq!(profit(&DMatrix::zeros(5, 5), pair, 0.7).unwrap(), 0.0);
        let rm = correlation_at(&path, 0.7).unwrap();
        let best = profit(&rm, pair, 0.7).unwrap();
        assert!(best > profit(&(&rm * 0.9), pair, 0.7).unwrap());
        let norm = crate::spectral::spectral_norm(&rm).unwrap();
        let up = (1.1f64).min((1.0 - 1e-6) / norm);
        assert!(best > profit(&(&rm * up), pair, 0.7).unwrap());
    }

    #[test]
    fn sweep_rows_match_solve_at() {
        let path = random_path(29, 4);
        let rows = sweep(&path, &[1e-3, 1.0], true, true).unwrap();
        for row in rows {
            let (rep, _) = solve_at(&path, row.epsilon, false).unwrap();
            assert_eq!(row.entropic_cost, rep.entropic_cost);
            let (b1, b2) = upper_bounds(&path, row.epsilon).unwrap();
            assert_eq!(row.bound1, Some(b1));
            assert_eq!(row.bound2, Some(b2));
            assert!(row.coupling_distance_sq.unwrap() <= b1.min(b2) + 1e-9);
        }
    }
}
