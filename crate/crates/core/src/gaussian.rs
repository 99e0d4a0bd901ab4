//! Covariance-level geometry: Green's factors, proper alignment, the
//! canonical pair, Schur complements and unregularized couplings.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::coupling::Coupling;
use crate::error::{EotError, Result};
use crate::random::{random_orthogonal, stream_rng};
use crate::spectral::{
    asymmetry, eigh, eigh_scaled, max_abs, nuclear_norm, svd, symmetrize, SymmetricSpectrum, DEFAULT_RANK_TOL,
};

/// Relative reconstruction error accepted for a Green's factor.
pub const GREEN_TOL: f64 = 1e-8;

/// Relative asymmetry of `GᵀM` accepted after alignment.
pub const ALIGN_SYMMETRY_TOL: f64 = 1e-8;

/// Symmetric positive semidefinite matrix with cached spectrum.
#[derive(Debug, Clone)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    spectrum: SymmetricSpectrum,
    trace: f64,
    sqrt: OnceLock<DMatrix<f64>>,
}

impl Covariance {
    pub fn new(matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        let spectrum = eigh(&matrix, tol)?;
        if spectrum.min_eigenvalue() < spectrum.negative_floor() {
            return Err(EotError::NotPsd {
                value: spectrum.min_eigenvalue(),
                floor: spectrum.negative_floor(),
            });
        }
        let matrix = symmetrize(&matrix);
        let trace = matrix.trace();
        Ok(Covariance {
            matrix,
            spectrum,
            trace,
            sqrt: OnceLock::new(),
        })
    }

    pub fn with_default_tol(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, DEFAULT_RANK_TOL)
    }

    pub fn from_diagonal(values: &[f64], tol: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)), tol)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn spectrum(&self) -> &SymmetricSpectrum {
        &self.spectrum
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.spectrum.numerical_rank()
    }

    pub fn tol(&self) -> f64 {
        self.spectrum.rank_tolerance()
    }

    /// Largest eigenvalue, clipped at zero.
    pub fn norm(&self) -> f64 {
        self.spectrum.max_eigenvalue().max(0.0)
    }

    /// Symmetric square root `A^{1/2}`, computed once.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        self.sqrt.get_or_init(|| self.spectrum.map(|x| x.max(0.0).sqrt()))
    }

    pub fn pinv_sqrt(&self) -> DMatrix<f64> {
        self.spectrum.map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 })
    }
}

/// Scale of `GᵀM` for factors of `A` and `B`: `‖G‖₂‖M‖₂`.
pub fn cross_scale(a: &Covariance, b: &Covariance) -> f64 {
    (a.norm() * b.norm()).sqrt()
}

fn check_same_dim(a: &Covariance, b: &Covariance) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(EotError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// A matrix `G` with `GGᵀ = A`.
#[derive(Debug, Clone)]
pub struct GreenFactor {
    matrix: DMatrix<f64>,
    covariance: Covariance,
}

impl GreenFactor {
    /// Wraps `g` after checking `GGᵀ = A` to tolerance.
    pub fn new(g: DMatrix<f64>, covariance: &Covariance) -> Result<Self> {
        let d = covariance.dim();
        if g.nrows() != d || g.ncols() != d {
            return Err(EotError::DimensionMismatch {
                expected: d,
                found: g.nrows().max(g.ncols()),
            });
        }
        let residual = reconstruction_error(&g, covariance);
        let allowed = GREEN_TOL * (1.0 + max_abs(covariance.matrix()));
        if residual > allowed {
            return Err(EotError::AlignmentResidual(format!(
                "factor reconstruction error {residual:e} exceeds {allowed:e}"
            )));
        }
        Ok(GreenFactor {
            matrix: g,
            covariance: covariance.clone(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    /// `G·Q` for an orthogonal `Q`; still a factor of the same covariance.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<Self> {
        GreenFactor::new(&self.matrix * q, &self.covariance)
    }
}

/// `‖GGᵀ − A‖_max`.
pub fn reconstruction_error(g: &DMatrix<f64>, a: &Covariance) -> f64 {
    max_abs(&(g * g.transpose() - a.matrix()))
}

/// Right rotation used by [`GreenMethod::EigenScaled`].
#[derive(Debug, Clone, PartialEq)]
pub enum Rotation {
    Supplied(DMatrix<f64>),
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GreenMethod {
    SymmetricSqrt,
    PivotedCholesky,
    EigenScaled(Rotation),
}

pub fn green_factor(a: &Covariance, method: GreenMethod) -> Result<GreenFactor> {
    let g = match method {
        GreenMethod::SymmetricSqrt => a.sqrt().clone(),
        GreenMethod::PivotedCholesky => pivoted_cholesky(a.matrix(), a.tol()),
        GreenMethod::EigenScaled(rotation) => {
            let q = match rotation {
                Rotation::Supplied(q) => {
                    let d = a.dim();
                    if q.nrows() != d || q.ncols() != d {
                        return Err(EotError::DimensionMismatch {
                            expected: d,
                            found: q.nrows(),
                        });
                    }
                    let defect = max_abs(&(q.transpose() * &q - DMatrix::identity(d, d)));
                    if defect > 1e-10 * d as f64 {
                        return Err(EotError::InvalidConfig(format!(
                            "rotation is not orthogonal (defect {defect:e})"
                        )));
                    }
                    q
                }
                Rotation::Random { seed } => random_orthogonal(&mut stream_rng(seed, 0), a.dim()),
            };
            a.sqrt() * q
        }
    };
    GreenFactor::new(g, a)
}

/// Pivoted outer-product Cholesky; stops once the largest remaining pivot is
/// below `tol` times the largest diagonal entry. Rows stay in input order.
pub fn pivoted_cholesky(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let mut l = DMatrix::zeros(d, d);
    let mut diag: Vec<f64> = (0..d).map(|i| a[(i, i)]).collect();
    let mut perm: Vec<usize> = (0..d).collect();
    let stop = tol * diag.iter().fold(0.0_f64, |m, &v| m.max(v));
    for k in 0..d {
        let (p, &best) = perm[k..]
            .iter()
            .map(|&i| &diag[i])
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty tail");
        if !(best > stop) || best <= 0.0 {
            break;
        }
        perm.swap(k, k + p);
        let piv = perm[k];
        let lkk = best.sqrt();
        l[(piv, k)] = lkk;
        for &row in &perm[k + 1..] {
            let mut v = a[(row, piv)];
            for j in 0..k {
                v -= l[(row, j)] * l[(piv, j)];
            }
            let entry = v / lkk;
            l[(row, k)] = entry;
            diag[row] -= entry * entry;
        }
    }
    l
}

/// Green's factors `(G, M)` with `GᵀM` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    g: GreenFactor,
    m: GreenFactor,
    cross: DMatrix<f64>,
    cross_spectrum: SymmetricSpectrum,
    asymmetry: f64,
    canonical: bool,
}

impl AlignedPair {
    pub fn g(&self) -> &GreenFactor {
        &self.g
    }

    pub fn m(&self) -> &GreenFactor {
        &self.m
    }

    pub fn a(&self) -> &Covariance {
        self.g.covariance()
    }

    pub fn b(&self) -> &Covariance {
        self.m.covariance()
    }

    /// Symmetrized `GᵀM`.
    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn cross_spectrum(&self) -> &SymmetricSpectrum {
        &self.cross_spectrum
    }

    /// `‖GᵀM − (GᵀM)ᵀ‖_max` before symmetrization.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    /// Whether this is `(A^{1/2}, M₀)`.
    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn dim(&self) -> usize {
        self.cross.nrows()
    }

    /// `‖G − M‖²_F`.
    pub fn hilbert_schmidt_sq(&self) -> f64 {
        (self.g.matrix() - self.m.matrix()).norm_squared()
    }

    fn finish(g: GreenFactor, m: GreenFactor, canonical: bool) -> Result<Self> {
        let raw = g.matrix().transpose() * m.matrix();
        let asym = asymmetry(&raw);
        let allowed = ALIGN_SYMMETRY_TOL * (1.0 + max_abs(&raw));
        if asym > allowed {
            return Err(EotError::AlignmentResidual(format!(
                "GᵀM asymmetry {asym:e} exceeds {allowed:e}"
            )));
        }
        let cross = symmetrize(&raw);
        let scale = cross_scale(g.covariance(), m.covariance());
        let tol = g.covariance().tol();
        let cross_spectrum = eigh_scaled(&cross, tol, scale)?;
        if cross_spectrum.min_eigenvalue() < -ALIGN_SYMMETRY_TOL * (1.0 + scale) {
            return Err(EotError::AlignmentResidual(format!(
                "GᵀM has eigenvalue {:e}",
                cross_spectrum.min_eigenvalue()
            )));
        }
        Ok(AlignedPair {
            g,
            m,
            cross,
            cross_spectrum,
            asymmetry: asym,
            canonical,
        })
    }
}

/// Polar part of `K = M (GᵀM)† (GᵀBG)^{1/2}`.
///
/// With `GᵀM = UΣVᵀ` the product collapses to `M V_r U_rᵀ`, which avoids
/// forming `GᵀBG` and inverting small singular values. Also returns the
/// full left singular basis with the retained rank.
fn polar_correction(g: &DMatrix<f64>, m: &DMatrix<f64>, cutoff: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let y = g.transpose() * m;
    let s = svd(&y)?;
    let r = s.rank_above(cutoff);
    let vr = s.v.columns(0, r);
    let ur = s.u.columns(0, r);
    Ok((m * vr * ur.transpose(), s.u, r))
}

/// Spectrum of `B − KKᵀ` with the negativity check of the alignment step.
fn residual_spectrum(b: &Covariance, k: &DMatrix<f64>) -> Result<SymmetricSpectrum> {
    let residual = symmetrize(&(b.matrix() - k * k.transpose()));
    let eig = eigh_scaled(&residual, b.tol(), b.norm())?;
    if eig.min_eigenvalue() < eig.negative_floor() {
        return Err(EotError::AlignmentResidual(format!(
            "B − KKᵀ has eigenvalue {:e} below {:e}",
            eig.min_eigenvalue(),
            eig.negative_floor()
        )));
    }
    Ok(eig)
}

/// Re-factors `B` so that the pair becomes properly aligned.
///
/// The residual factor `L` of `B − KKᵀ` is placed on right-singular
/// directions orthogonal to the row space of `K`, so `KLᵀ = 0` and
/// `M̃M̃ᵀ = KKᵀ + LLᵀ = B` for any (possibly non-symmetric) `G`.
pub fn align(g: &GreenFactor, m_init: &GreenFactor) -> Result<AlignedPair> {
    let a = g.covariance();
    let b = m_init.covariance();
    check_same_dim(a, b)?;
    let d = a.dim();
    let cutoff = a.tol() * cross_scale(a, b);
    let (k, u_full, r) = polar_correction(g.matrix(), m_init.matrix(), cutoff)?;
    let eig = residual_spectrum(b, &k)?;
    let s = eig.numerical_rank();
    if s > d - r {
        return Err(EotError::AlignmentResidual(format!(
            "residual rank {s} exceeds the free dimension {}",
            d - r
        )));
    }
    let mut l = DMatrix::zeros(d, d);
    for j in 0..s {
        let c = eig.eigenvalues()[j].sqrt();
        l += eig.eigenvectors().column(j) * u_full.column(r + j).transpose() * c;
    }
    let m = GreenFactor::new(k + l, b)?;
    AlignedPair::finish(g.clone(), m, false)
}

pub fn reachable(a: &Covariance, b: &Covariance) -> bool {
    a.rank() >= b.rank()
}

fn require_reachable(a: &Covariance, b: &Covariance) -> Result<()> {
    check_same_dim(a, b)?;
    if !reachable(a, b) {
        return Err(EotError::NotReachable {
            rank_a: a.rank(),
            rank_b: b.rank(),
        });
    }
    Ok(())
}

/// `(G₀, M₀) = (A^{1/2}, K₀ + (B − K₀K₀ᵀ)^{1/2})`, `K₀ = M(A^{1/2}M)†P^{1/2}`.
pub fn canonical_pair(a: &Covariance, b: &Covariance) -> Result<AlignedPair> {
    canonical_pair_from(a, &green_factor(b, GreenMethod::SymmetricSqrt)?)
}

/// Canonical pair computed from a caller-supplied factor of `B`.
pub fn canonical_pair_from(a: &Covariance, m: &GreenFactor) -> Result<AlignedPair> {
    let b = m.covariance();
    require_reachable(a, b)?;
    let g0 = a.sqrt();
    let cutoff = a.tol() * cross_scale(a, b);
    let (k0, _, _) = polar_correction(g0, m.matrix(), cutoff)?;
    let eig = residual_spectrum(b, &k0)?;
    let correction = eig.map(|x| x.max(0.0).sqrt());
    let m0 = GreenFactor::new(k0 + correction, b)?;
    let g0 = GreenFactor::new(g0.clone(), a)?;
    AlignedPair::finish(g0, m0, true)
}

/// Block data of `B` in the eigenbasis of `A`.
#[derive(Debug, Clone)]
pub struct SchurData {
    pub basis_h1: DMatrix<f64>,
    pub basis_h2: DMatrix<f64>,
    /// Eigenvalues of `A` on `H₁` (so `A₁₁ = diag(a11)`).
    pub a11: DVector<f64>,
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b22: DMatrix<f64>,
    /// `B/A`, clipped positive semidefinite (`dim H₂` square).
    pub schur: DMatrix<f64>,
    /// `A₁₁^{1/2} B₁₁ A₁₁^{1/2}`.
    pub p11: DMatrix<f64>,
    schur_rank: usize,
    schur_norm: f64,
}

impl SchurData {
    pub fn schur_vanishes(&self) -> bool {
        self.schur_rank == 0
    }

    pub fn schur_rank(&self) -> usize {
        self.schur_rank
    }

    /// Largest eigenvalue of `B/A`.
    pub fn schur_norm(&self) -> f64 {
        self.schur_norm
    }
}

pub fn schur_data(a: &Covariance, b: &Covariance) -> Result<SchurData> {
    check_same_dim(a, b)?;
    let tol = a.tol();
    let h1 = a.spectrum().range_basis();
    let h2 = a.spectrum().null_basis();
    let r = h1.ncols();
    let a11 = DVector::from_fn(r, |j, _| a.spectrum().eigenvalues()[j]);
    let bm = b.matrix();
    let b11 = symmetrize(&(h1.transpose() * bm * &h1));
    let b12 = h1.transpose() * bm * &h2;
    let b22 = symmetrize(&(h2.transpose() * bm * &h2));
    let root_a11 = DMatrix::from_diagonal(&a11.map(f64::sqrt));
    let p11 = symmetrize(&(&root_a11 * &b11 * &root_a11));
    let (schur, schur_rank, schur_norm) = if h2.ncols() == 0 {
        (DMatrix::zeros(0, 0), 0, 0.0)
    } else {
        let x = if r == 0 {
            DMatrix::zeros(0, h2.ncols())
        } else {
            let b11_spec = eigh_scaled(&b11, tol, b.norm())?;
            b11_spec.map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 }) * &b12
        };
        let raw = symmetrize(&(&b22 - x.transpose() * &x));
        let eig = eigh_scaled(&raw, tol, b.norm())?;
        let clipped = eig.map(|x| x.max(0.0));
        let rank = eig.numerical_rank();
        let norm = eig.max_eigenvalue().max(0.0);
        (clipped, rank, norm)
    };
    Ok(SchurData {
        basis_h1: h1,
        basis_h2: h2,
        a11,
        b11,
        b12,
        b22,
        schur,
        p11,
        schur_rank,
        schur_norm,
    })
}

/// `tr A + tr B − 2 tr (A^{1/2} B A^{1/2})^{1/2}`, clipped at zero.
///
/// The trace term equals the nuclear norm of `A^{1/2}B^{1/2}`, which is
/// evaluated directly to avoid squaring small singular values.
pub fn bures_w2_squared(a: &Covariance, b: &Covariance) -> Result<f64> {
    check_same_dim(a, b)?;
    let fidelity = nuclear_norm(&(a.sqrt() * b.sqrt()))?;
    Ok((a.trace() + b.trace() - 2.0 * fidelity).max(0.0))
}

/// `tr (A^{1/2} B A^{1/2})^{1/2}`.
pub fn fidelity(a: &Covariance, b: &Covariance) -> Result<f64> {
    check_same_dim(a, b)?;
    nuclear_norm(&(a.sqrt() * b.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KantorovichVariant {
    Canonical,
    MongeExtremal,
}

/// Square roots of `P₁₁` in `H₁` coordinates, plus its null basis.
struct P11Roots {
    root: DMatrix<f64>,
    pinv_root: DMatrix<f64>,
    null_basis: DMatrix<f64>,
}

fn p11_roots(a: &Covariance, b: &Covariance, sd: &SchurData) -> Result<P11Roots> {
    let r = sd.a11.len();
    if r == 0 {
        return Ok(P11Roots {
            root: DMatrix::zeros(0, 0),
            pinv_root: DMatrix::zeros(0, 0),
            null_basis: DMatrix::zeros(0, 0),
        });
    }
    let b11_root = eigh_scaled(&sd.b11, a.tol(), b.norm())?.map(|x| x.max(0.0).sqrt());
    let root_a11 = DMatrix::from_diagonal(&sd.a11.map(f64::sqrt));
    // P₁₁ = XXᵀ with X = A₁₁^{1/2} B₁₁^{1/2}
    let s = svd(&(&root_a11 * b11_root))?;
    let q = s.rank_above(a.tol() * cross_scale(a, b));
    let uq = s.u.columns(0, q);
    let sig = s.singular_values.rows(0, q);
    let root = uq * DMatrix::from_diagonal(&sig.into_owned()) * uq.transpose();
    let pinv_root = uq * DMatrix::from_diagonal(&sig.map(|x| 1.0 / x)) * uq.transpose();
    let null_basis = s.u.columns(q, r - q).into_owned();
    Ok(P11Roots {
        root: symmetrize(&root),
        pinv_root: symmetrize(&pinv_root),
        null_basis,
    })
}

/// Optimal unregularized coupling in the block form over `H₁ ⊕ H₂`.
pub fn kantorovich_coupling(a: &Covariance, b: &Covariance, variant: KantorovichVariant) -> Result<Coupling> {
    require_reachable(a, b)?;
    let sd = schur_data(a, b)?;
    let roots = p11_roots(a, b, &sd)?;
    let r = sd.a11.len();
    let h = sd.basis_h2.ncols();
    let root_a11 = DMatrix::from_diagonal(&sd.a11.map(f64::sqrt));
    let pinv_root_a11 = DMatrix::from_diagonal(&sd.a11.map(|x| 1.0 / x.sqrt()));
    // (M₂₁)ᵀ = P₁₁^{†/2} A₁₁^{1/2} B₁₂ + N₁₂
    let mut m21_t = &roots.pinv_root * &root_a11 * &sd.b12;
    if variant == KantorovichVariant::MongeExtremal && !sd.schur_vanishes() {
        m21_t += monge_factor(a, b, &sd, &roots.null_basis)?;
    }
    let c11 = &root_a11 * &roots.root * &pinv_root_a11;
    let c12 = &root_a11 * m21_t;
    let mut c = &sd.basis_h1 * c11 * sd.basis_h1.transpose();
    if h > 0 && r > 0 {
        c += &sd.basis_h1 * c12 * sd.basis_h2.transpose();
    }
    Coupling::assemble(a.matrix(), b.matrix(), &c)
}

/// `N₁₂` with `N₁₂ᵀN₁₂ = B/A` and columns in the null space of `P₁₁`.
fn monge_factor(a: &Covariance, b: &Covariance, sd: &SchurData, null_basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = sd.a11.len();
    let h = sd.basis_h2.ncols();
    let eig = eigh_scaled(&sd.schur, a.tol(), b.norm())?;
    let needed = eig.numerical_rank();
    let available = null_basis.ncols();
    if needed > available {
        return Err(EotError::MongeConstructionFailure { available, needed });
    }
    let mut n12 = DMatrix::zeros(r, h);
    for k in 0..needed {
        let mu = eig.eigenvalues()[k].max(0.0).sqrt();
        n12 += null_basis.column(k) * eig.eigenvectors().column(k).transpose() * mu;
    }
    Ok(n12)
}

/// Unique optimal linear map `T` with `T A Tᵀ = B`, defined when `B/A = 0`.
pub fn optimal_map(a: &Covariance, b: &Covariance) -> Result<DMatrix<f64>> {
    require_reachable(a, b)?;
    let sd = schur_data(a, b)?;
    if !sd.schur_vanishes() {
        return Err(EotError::SchurNotZero(sd.schur_norm()));
    }
    let roots = p11_roots(a, b, &sd)?;
    let root_a11 = DMatrix::from_diagonal(&sd.a11.map(f64::sqrt));
    let pinv_root_a11 = DMatrix::from_diagonal(&sd.a11.map(|x| 1.0 / x.sqrt()));
    let t11 = &pinv_root_a11 * &roots.root * &pinv_root_a11;
    let t21 = (&roots.pinv_root * &root_a11 * &sd.b12).transpose() * &pinv_root_a11;
    let mut t = &sd.basis_h1 * t11 * sd.basis_h1.transpose();
    if sd.basis_h2.ncols() > 0 {
        t += &sd.basis_h2 * t21 * sd.basis_h1.transpose();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_psd_of_rank, stream_rng, wishart};
    use approx::assert_abs_diff_eq;

    fn cov(m: DMatrix<f64>) -> Covariance {
        Covariance::with_default_tol(m).unwrap()
    }

    fn diag(v: &[f64]) -> Covariance {
        Covariance::from_diagonal(v, DEFAULT_RANK_TOL).unwrap()
    }

    /// A of rank 4 in 6 dims; B of rank 3 on span{q₂, q₃, q₄} with q₄ ∈ null(A), so B/A has rank 1.
    fn straddling_pair(seed: u64) -> (Covariance, Covariance) {
        let mut rng = stream_rng(seed, 0);
        let q = crate::random::random_orthogonal(&mut rng, 6);
        let qa = q.columns(0, 4).into_owned();
        let wa = wishart(&mut rng, 4, 4);
        let qb = q.columns(2, 3).into_owned();
        let wb = wishart(&mut rng, 3, 3);
        (cov(&qa * wa * qa.transpose()), cov(&qb * wb * qb.transpose()))
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Covariance::with_default_tol(m), Err(EotError::NotPsd { .. })));
    }

    #[test]
    fn identity_sqrt_factor() {
        let g = green_factor(&diag(&[1.0, 1.0, 1.0]), GreenMethod::SymmetricSqrt).unwrap();
        assert_abs_diff_eq!(g.matrix().clone(), DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn pivoted_cholesky_rank_deficient_diag() {
        let g = green_factor(&diag(&[4.0, 0.0]), GreenMethod::PivotedCholesky).unwrap();
        assert_eq!(g.matrix()[(0, 0)], 2.0);
        assert_eq!(g.matrix()[(1, 0)], 0.0);
        assert_eq!(g.matrix().column(1).amax(), 0.0);
    }

    #[test]
    fn all_factor_methods_reconstruct_rank_deficient() {
        let a = cov(random_psd_of_rank(&mut stream_rng(3, 0), 6, 4));
        assert_eq!(a.rank(), 4);
        for method in [
            GreenMethod::SymmetricSqrt,
            GreenMethod::PivotedCholesky,
            GreenMethod::EigenScaled(Rotation::Random { seed: 9 }),
        ] {
            let g = green_factor(&a, method).unwrap();
            assert!(reconstruction_error(g.matrix(), &a) <= 1e-8);
        }
    }

    #[test]
    fn align_identity_transport() {
        let a = cov(wishart(&mut stream_rng(4, 0), 4, 6));
        let g = green_factor(&a, GreenMethod::SymmetricSqrt).unwrap();
        let pair = align(&g, &g).unwrap();
        assert_abs_diff_eq!(pair.m().matrix().clone(), a.sqrt().clone(), epsilon = 1e-10);
        assert_abs_diff_eq!(pair.cross().clone(), a.matrix().clone(), epsilon = 1e-10);
    }

    #[test]
    fn align_orthogonal_ranges() {
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[0.0, 1.0]);
        let g = green_factor(&a, GreenMethod::PivotedCholesky).unwrap();
        let m = green_factor(&b, GreenMethod::EigenScaled(Rotation::Random { seed: 2 })).unwrap();
        let pair = align(&g, &m).unwrap();
        assert_eq!(max_abs(pair.cross()), 0.0);
        assert!(reconstruction_error(pair.m().matrix(), &b) < 1e-14);
    }

    #[test]
    fn align_from_cholesky_matches_fidelity() {
        let mut rng = stream_rng(5, 0);
        let a = cov(wishart(&mut rng, 5, 5));
        let b = cov(wishart(&mut rng, 5, 5));
        let g = green_factor(&a, GreenMethod::SymmetricSqrt).unwrap();
        let m = green_factor(&b, GreenMethod::PivotedCholesky).unwrap();
        let pair = align(&g, &m).unwrap();
        assert!(pair.cross_spectrum().min_eigenvalue() > -1e-12);
        let fid = fidelity(&a, &b).unwrap();
        assert!((pair.cross().trace() - fid).abs() <= 1e-6 * fid);
    }

    #[test]
    fn align_with_nonsymmetric_g_and_rank_deficient_b() {
        let mut rng = stream_rng(6, 0);
        let a = cov(random_psd_of_rank(&mut rng, 6, 4));
        let b = cov(random_psd_of_rank(&mut rng, 6, 3));
        let g = green_factor(&a, GreenMethod::PivotedCholesky).unwrap();
        let m = green_factor(&b, GreenMethod::EigenScaled(Rotation::Random { seed: 1 })).unwrap();
        let pair = align(&g, &m).unwrap();
        assert!(reconstruction_error(pair.m().matrix(), &b) <= 1e-10);
        let fid = fidelity(&a, &b).unwrap();
        assert!((pair.cross().trace() - fid).abs() <= 1e-8 * fid);
    }

    #[test]
    fn canonical_pair_identity_and_orthogonal() {
        let a = cov(wishart(&mut stream_rng(7, 0), 3, 5));
        let pair = canonical_pair(&a, &a).unwrap();
        assert_abs_diff_eq!(pair.m().matrix().clone(), a.sqrt().clone(), epsilon = 1e-10);

        let a = diag(&[1.0, 0.0]);
        let b = diag(&[0.0, 1.0]);
        let pair = canonical_pair(&a, &b).unwrap();
        assert_abs_diff_eq!(pair.m().matrix().clone(), b.matrix().clone(), epsilon = 1e-15);
    }

    #[test]
    fn canonical_pair_independent_of_input_factor() {
        let mut rng = stream_rng(8, 0);
        let a = cov(wishart(&mut rng, 5, 5));
        let b = cov(random_psd_of_rank(&mut rng, 5, 3));
        let p1 = canonical_pair(&a, &b).unwrap();
        let m = green_factor(&b, GreenMethod::PivotedCholesky).unwrap();
        let p2 = canonical_pair_from(&a, &m).unwrap();
        assert!(max_abs(&(p1.m().matrix() - p2.m().matrix())) <= 1e-8);
        // G₀ᵀM₀ = P^{1/2}
        let p = a.sqrt() * b.matrix() * a.sqrt();
        let p_half = eigh(&symmetrize(&p), 1e-12).unwrap().map(|x| x.max(0.0).sqrt());
        assert!(max_abs(&(p1.cross() - p_half)) <= 1e-6);
    }

    #[test]
    fn canonical_pair_requires_reachability() {
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[1.0, 1.0]);
        assert!(matches!(canonical_pair(&a, &b), Err(EotError::NotReachable { .. })));
        assert!(canonical_pair(&b, &a).is_ok());
    }

    #[test]
    fn schur_examples() {
        let a = diag(&[1.0, 0.0]);
        let b = cov(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let sd = schur_data(&a, &b).unwrap();
        assert!(sd.schur_vanishes());
        assert!(sd.schur[(0, 0)].abs() < 1e-14);

        let sd = schur_data(&a, &diag(&[0.0, 1.0])).unwrap();
        assert!(!sd.schur_vanishes());
        assert_abs_diff_eq!(sd.schur[(0, 0)], 1.0, epsilon = 1e-15);

        let sd = schur_data(&diag(&[2.0, 1.0]), &diag(&[0.0, 1.0])).unwrap();
        assert_eq!(sd.schur.nrows(), 0);
        assert!(sd.schur_vanishes());
    }

    #[test]
    fn schur_vanishes_iff_ranges_trivially_intersect() {
        let mut rng = stream_rng(10, 0);
        let x = crate::random::gaussian_matrix(&mut rng, 5, 3);
        let a = cov(&x * x.transpose());
        // B inside range(A): no part of range(B^{1/2}) in null(A)
        let y = &x * crate::random::gaussian_matrix(&mut rng, 3, 2);
        let b_in = cov(&y * y.transpose());
        assert!(schur_data(&a, &b_in).unwrap().schur_vanishes());
        // a generic rank-2 B meets the 2-dim null(A) trivially
        let b_generic = cov(random_psd_of_rank(&mut rng, 5, 2));
        assert!(schur_data(&a, &b_generic).unwrap().schur_vanishes());
        // B carrying a null(A) direction
        let (a, b) = straddling_pair(10);
        let sd = schur_data(&a, &b).unwrap();
        assert_eq!(sd.schur_rank(), 1);
    }

    #[test]
    fn reachability_examples() {
        let r2 = diag(&[1.0, 2.0]);
        let r1 = diag(&[1.0, 0.0]);
        assert!(reachable(&r2, &r1));
        assert!(!reachable(&r1, &r2));
        assert!(reachable(&r1, &r1));
    }

    #[test]
    fn bures_examples() {
        let a = cov(wishart(&mut stream_rng(11, 0), 4, 4));
        assert!(bures_w2_squared(&a, &a).unwrap() < 1e-12);
        assert_abs_diff_eq!(
            bures_w2_squared(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        let v = bures_w2_squared(&diag(&[3.0]), &diag(&[0.5])).unwrap();
        assert_abs_diff_eq!(v, (3f64.sqrt() - 0.5f64.sqrt()).powi(2), epsilon = 1e-14);
    }

    #[test]
    fn kantorovich_orthogonal_marginals() {
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[0.0, 1.0]);
        let canon = kantorovich_coupling(&a, &b, KantorovichVariant::Canonical).unwrap();
        assert_eq!(max_abs(&canon.c_block().into_owned()), 0.0);
        let monge = kantorovich_coupling(&a, &b, KantorovichVariant::MongeExtremal).unwrap();
        assert_abs_diff_eq!(monge.c_block()[(0, 1)].abs(), 1.0, epsilon = 1e-14);
        assert!(monge.validated());
        assert_abs_diff_eq!(monge.transport_cost(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn kantorovich_cost_is_bures() {
        let mut rng = stream_rng(12, 0);
        let a = cov(wishart(&mut rng, 5, 5));
        let b = cov(wishart(&mut rng, 5, 5));
        let w2 = bures_w2_squared(&a, &b).unwrap();
        for v in [KantorovichVariant::Canonical, KantorovichVariant::MongeExtremal] {
            let c = kantorovich_coupling(&a, &b, v).unwrap();
            assert!(c.validated());
            assert!((c.transport_cost() - w2).abs() <= 1e-8 * (1.0 + w2));
        }
    }

    #[test]
    fn kantorovich_variants_coincide_without_schur() {
        let mut rng = stream_rng(13, 0);
        let a = cov(wishart(&mut rng, 4, 4));
        let b = cov(random_psd_of_rank(&mut rng, 4, 2));
        let c1 = kantorovich_coupling(&a, &b, KantorovichVariant::Canonical).unwrap();
        let c2 = kantorovich_coupling(&a, &b, KantorovichVariant::MongeExtremal).unwrap();
        assert_eq!(c1.sigma(), c2.sigma());
    }

    #[test]
    fn monge_variant_with_nonzero_schur() {
        let (a, b) = straddling_pair(14);
        assert!(!schur_data(&a, &b).unwrap().schur_vanishes());
        let w2 = bures_w2_squared(&a, &b).unwrap();
        for v in [KantorovichVariant::Canonical, KantorovichVariant::MongeExtremal] {
            let c = kantorovich_coupling(&a, &b, v).unwrap();
            assert!(c.validated(), "{v:?} min eig {}", c.min_eigenvalue());
            assert!((c.transport_cost() - w2).abs() <= 1e-8 * (1.0 + w2));
        }
    }

    #[test]
    fn optimal_map_examples() {
        let t = optimal_map(&diag(&[4.0, 1.0]), &diag(&[1.0, 4.0])).unwrap();
        assert_abs_diff_eq!(
            t,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0])),
            epsilon = 1e-14
        );

        let a = cov(wishart(&mut stream_rng(15, 0), 3, 3));
        let t = optimal_map(&a, &a).unwrap();
        assert_abs_diff_eq!(t, DMatrix::identity(3, 3), epsilon = 1e-10);

        let mut rng = stream_rng(16, 0);
        let a = cov(wishart(&mut rng, 4, 4));
        let b = cov(wishart(&mut rng, 4, 4));
        let t = optimal_map(&a, &b).unwrap();
        let pushed = &t * a.matrix() * t.transpose();
        assert!(max_abs(&(pushed - b.matrix())) <= 1e-6 * max_abs(b.matrix()));
        let fid = fidelity(&a, &b).unwrap();
        assert!(((&t * a.matrix()).trace() - fid).abs() <= 1e-6 * fid);

        assert!(matches!(
            optimal_map(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])),
            Err(EotError::SchurNotZero(_))
        ));
    }
}
