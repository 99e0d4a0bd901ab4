//! Symmetric eigendecomposition, PSD functional calculus and the scalar
//! functions of the shrinkage calculus.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{EotError, Result};

/// Default relative rank tolerance.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative asymmetry accepted by [`eigh`] before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    numerical_rank: usize,
    rank_tolerance: f64,
    cutoff: f64,
}

impl SymmetricSpectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn numerical_rank(&self) -> usize {
        self.numerical_rank
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    /// Absolute threshold separating retained eigenvalues from numerical zeros.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn max_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            0.0
        } else {
            self.eigenvalues[0]
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            0.0
        } else {
            self.eigenvalues[self.dim() - 1]
        }
    }

    /// Eigenvalues with everything beyond the numerical rank set to zero.
    pub fn retained(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| {
            if j < self.numerical_rank {
                self.eigenvalues[j]
            } else {
                0.0
            }
        })
    }

    /// Floor below which a negative eigenvalue is treated as invalid input.
    pub fn negative_floor(&self) -> f64 {
        -self.cutoff
    }

    /// Fails if the spectrum has an eigenvalue below the negative floor.
    pub fn check_psd(&self) -> Result<()> {
        let floor = self.negative_floor();
        let min = self.min_eigenvalue();
        if min < floor {
            return Err(EotError::NegativeEigenvalue { value: min, floor });
        }
        Ok(())
    }

    /// Orthonormal columns spanning the retained range.
    pub fn range_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.numerical_rank).into_owned()
    }

    /// Orthonormal columns spanning the numerical null space.
    pub fn null_basis(&self) -> DMatrix<f64> {
        let r = self.numerical_rank;
        self.eigenvectors.columns(r, self.dim() - r).into_owned()
    }

    /// `V diag(φ(λ_j)) Vᵀ` with non-retained eigenvalues mapped as zeros.
    pub fn map<F: Fn(f64) -> f64>(&self, phi: F) -> DMatrix<f64> {
        let values = DVector::from_fn(self.dim(), |j, _| {
            let lambda = if j < self.numerical_rank {
                self.eigenvalues[j]
            } else {
                0.0
            };
            phi(lambda)
        });
        reassemble(&self.eigenvectors, &values)
    }

    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        self.check_psd()?;
        Ok(self.map(|x| x.max(0.0).sqrt()))
    }

    pub fn pinv(&self) -> Result<DMatrix<f64>> {
        self.check_psd()?;
        Ok(self.map(|x| if x > 0.0 { 1.0 / x } else { 0.0 }))
    }

    pub fn pinv_sqrt(&self) -> Result<DMatrix<f64>> {
        self.check_psd()?;
        Ok(self.map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 }))
    }
}

/// `V diag(values) Vᵀ`, skipping zero weights.
pub fn reassemble(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let d = vectors.nrows();
    let keep: Vec<usize> = (0..values.len()).filter(|&j| values[j] != 0.0).collect();
    let mut scaled = DMatrix::zeros(d, keep.len());
    let mut basis = DMatrix::zeros(d, keep.len());
    for (k, &j) in keep.iter().enumerate() {
        basis.set_column(k, &vectors.column(j));
        scaled.set_column(k, &(vectors.column(j) * values[j]));
    }
    let out = scaled * basis.transpose();
    symmetrize(&out)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

fn check_square_finite(s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(EotError::NotSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(EotError::NonFinite);
    }
    Ok(())
}

/// Symmetric eigendecomposition with rank decided relative to `λ₁`.
pub fn eigh(s: &DMatrix<f64>, tol: f64) -> Result<SymmetricSpectrum> {
    eigh_scaled(s, tol, 0.0)
}

/// As [`eigh`], but the rank threshold is `tol · max(λ₁, reference)`.
///
/// Products such as `GᵀM` need a threshold tied to the factors' scales;
/// otherwise pure rounding noise would be promoted to rank.
pub fn eigh_scaled(s: &DMatrix<f64>, tol: f64, reference: f64) -> Result<SymmetricSpectrum> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(EotError::InvalidTolerance(tol));
    }
    check_square_finite(s)?;
    let d = s.nrows();
    if d == 0 {
        return Err(EotError::Empty);
    }
    let asym = asymmetry(s);
    let allowed = SYMMETRY_TOL * max_abs(s);
    if asym > allowed {
        return Err(EotError::NonSymmetric {
            asymmetry: asym,
            tolerance: allowed,
        });
    }
    let sym = symmetrize(s);
    let eig = to_faer(&sym)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| EotError::EigenFailure)?;
    // faer sorts ascending
    let values = eig.S().column_vector();
    let vectors = eig.U();
    let eigenvalues = DVector::from_fn(d, |k, _| values[d - 1 - k]);
    let eigenvectors = DMatrix::from_fn(d, d, |i, k| vectors[(i, d - 1 - k)]);
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(EotError::EigenFailure);
    }
    let cutoff = tol * eigenvalues[0].max(reference).max(0.0);
    let numerical_rank = eigenvalues.iter().filter(|&&v| v > cutoff).count();
    Ok(SymmetricSpectrum {
        eigenvalues,
        eigenvectors,
        numerical_rank,
        rank_tolerance: tol,
        cutoff,
    })
}

/// Functional calculus `V diag(φ(λ_j)) Vᵀ`; eigenvalues below the rank cutoff enter `φ` as 0.
pub fn apply_fn<F: Fn(f64) -> f64>(eig: &SymmetricSpectrum, phi: F) -> Result<DMatrix<f64>> {
    eig.check_psd()?;
    Ok(eig.map(phi))
}

/// Functional calculus with one of the tabulated scalar functions.
pub fn apply_scalar(eig: &SymmetricSpectrum, phi: ScalarFn) -> Result<DMatrix<f64>> {
    apply_fn(eig, |x| phi.eval(x))
}

pub fn psd_sqrt(s: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    eigh(s, tol)?.sqrt()
}

pub fn pinv(s: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    eigh(s, tol)?.pinv()
}

pub fn pinv_sqrt(s: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    eigh(s, tol)?.pinv_sqrt()
}

fn to_faer(x: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)])
}

/// Singular value decomposition with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    /// Number of singular values strictly above `cutoff`.
    pub fn rank_above(&self, cutoff: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }
}

/// Full SVD: `u` and `v` are square, so null directions are available.
pub fn svd(x: &DMatrix<f64>) -> Result<SortedSvd> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EotError::NonFinite);
    }
    let k = x.nrows().min(x.ncols());
    let raw = to_faer(x).svd().map_err(|_| EotError::SvdFailure)?;
    let (u, v, s) = (raw.U(), raw.V(), raw.S().column_vector());
    Ok(SortedSvd {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    })
}

fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EotError::NonFinite);
    }
    to_faer(x).singular_values().map_err(|_| EotError::SvdFailure)
}

/// Sum of singular values.
pub fn nuclear_norm(x: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(x)?.iter().sum())
}

pub fn spectral_norm(x: &DMatrix<f64>) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(singular_values(x)?.iter().fold(0.0_f64, |a, &b| a.max(b)))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(EotError::InvalidEpsilon(eps))
    }
}

/// A validated regularization strength with the scalar functions attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization(f64);

impl Regularization {
    pub fn new(eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Regularization(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `f_ε(x) = 2x / (√(4x²+ε²) + ε)`.
    #[inline]
    pub fn shrink(self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        let h = (2.0 * x).hypot(self.0);
        2.0 * x / (h + self.0)
    }

    /// `1 − f_ε(x)` without cancellation; equals 1 at x = 0.
    #[inline]
    pub fn shrink_complement(self, x: f64) -> f64 {
        let e = self.0;
        let x = x.max(0.0);
        let h = (2.0 * x).hypot(e);
        (e + e * (e / (h + 2.0 * x))) / (h + e)
    }

    /// `ln(1 − f_ε(x)²)`, using `1 − f² = ε f / x` away from the origin.
    #[inline]
    pub fn log_one_minus_sq(self, x: f64) -> f64 {
        self.shrink_and_log(x).1
    }

    /// `(f_ε(x), ln(1 − f_ε(x)²))` from a single evaluation of `f`.
    #[inline]
    pub fn shrink_and_log(self, x: f64) -> (f64, f64) {
        if !(x > 0.0) {
            return (0.0, 0.0);
        }
        let f = self.shrink(x);
        let log = if f < 0.5 {
            (-f * f).ln_1p()
        } else {
            (self.0 * f / x).ln()
        };
        (f, log)
    }

    /// Entropic bias `g_ε(x) = 2x(1 − f) − ε ln(1 − f²)`.
    #[inline]
    pub fn bias(self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        let (f, log) = self.shrink_and_log(x);
        // 2x(1 − f) = 2ε f / (1 + f) by the stationarity identity
        2.0 * self.0 * f / (1.0 + f) - self.0 * log
    }

    /// `δ_ε(x) = 2 − √(2(1 + f))`, zero at the origin.
    #[inline]
    pub fn perturbation(self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        let f = self.shrink(x);
        let c = self.shrink_complement(x);
        2.0 * c / (2.0 + (2.0 * (1.0 + f)).sqrt())
    }

    /// `η_ε(x) = 1 − f`, zero at the origin.
    #[inline]
    pub fn eta(self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        self.shrink_complement(x)
    }

    /// Per-mode KL contribution `−½ ln(1 − f²)`.
    #[inline]
    pub fn kl_term(self, x: f64) -> f64 {
        -0.5 * self.log_one_minus_sq(x)
    }
}

/// `ψ(u) = (2 − √(2(1 + √(1+u²) − u))) / (2u)`, with ψ(0) := 0.
pub fn psi(u: f64) -> f64 {
    if !(u > 0.0) {
        return 0.0;
    }
    let r = 1.0_f64.hypot(u);
    let v = 1.0 / (r + u);
    (1.0 + u / (r + 1.0)) / ((r + u) * (2.0 + (2.0 * (1.0 + v)).sqrt()))
}

pub fn shrink_f(x: f64, eps: f64) -> Result<f64> {
    Ok(Regularization::new(eps)?.shrink(x))
}

pub fn bias_g(x: f64, eps: f64) -> Result<f64> {
    Ok(Regularization::new(eps)?.bias(x))
}

pub fn pert_delta(x: f64, eps: f64) -> Result<f64> {
    Ok(Regularization::new(eps)?.perturbation(x))
}

pub fn eta(x: f64, eps: f64) -> Result<f64> {
    Ok(Regularization::new(eps)?.eta(x))
}

/// The tabulated scalar functions usable in the functional calculus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    Shrink(Regularization),
    Bias(Regularization),
    Perturbation(Regularization),
    Eta(Regularization),
    Psi,
    Indicator,
}

impl ScalarFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ScalarFn::Shrink(r) => r.shrink(x),
            ScalarFn::Bias(r) => r.bias(x),
            ScalarFn::Perturbation(r) => r.perturbation(x),
            ScalarFn::Eta(r) => r.eta(x),
            ScalarFn::Psi => psi(x),
            ScalarFn::Indicator => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}
