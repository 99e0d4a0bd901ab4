//! Independent verifiers: direct maximization of the entropic profit,
//! brute-force Gaussian KL and the Bures distance of joint covariances.
//!
//! Nothing here uses the shrinkage closed form.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::error::{EotError, Result};
use crate::gaussian::{AlignedPair, Covariance};
use crate::random::{gaussian_matrix, stream_rng};
use crate::spectral::{eigh, nuclear_norm, psd_sqrt, spectral_norm, svd, symmetrize};

/// Largest admissible spectral norm of an ascent iterate.
pub const NORM_CAP: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub max_iterations: usize,
    /// Initial step of the backtracking line search.
    pub step_size: f64,
    /// Gradient-norm stopping threshold.
    pub tolerance: f64,
    /// Seeds the random admissible starting point.
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_iterations: 200,
            step_size: 1.0,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

/// Golden-section maximizer of `s ↦ 2λs + ε ln(1 − s²)` on `[0, 1 − 10⁻¹²]`.
///
/// Objective values are compared through their difference, written so that
/// it keeps full relative precision near the flat maximum.
pub fn scalar_argmax(lambda: f64, eps: f64) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    // φ(x) − φ(y)
    let diff = |x: f64, y: f64| {
        let ratio = (y - x) * (y + x) / ((1.0 - y) * (1.0 + y));
        2.0 * lambda * (x - y) + eps * ratio.ln_1p()
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0 - 1e-12);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    for _ in 0..400 {
        if hi - lo <= 1e-14 {
            break;
        }
        if diff(x1, x2) > 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

/// `2⟨R, GᵀM⟩ + ε log det(I − RᵀR)`; `None` outside the open unit ball.
fn profit_value(rm: &DMatrix<f64>, x: &DMatrix<f64>, eps: f64) -> Option<f64> {
    let d = rm.nrows();
    let inner = DMatrix::identity(d, d) - rm.transpose() * rm;
    let chol = Cholesky::new(symmetrize(&inner))?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(2.0 * rm.component_mul(x).sum() + eps * logdet)
}

/// Analytic gradient `2 GᵀM − 2ε R (I − RᵀR)⁻¹`.
pub fn profit_gradient(rm: &DMatrix<f64>, pair: &AlignedPair, eps: f64) -> Result<DMatrix<f64>> {
    let x = pair.g().matrix().transpose() * pair.m().matrix();
    let w = inverse_gram_complement(rm)?;
    Ok(gradient(rm, &x, &w, eps))
}

fn gradient(rm: &DMatrix<f64>, x: &DMatrix<f64>, w: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    x * 2.0 - rm * w * (2.0 * eps)
}

fn inverse_gram_complement(rm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = rm.nrows();
    let inner = symmetrize(&(DMatrix::identity(d, d) - rm.transpose() * rm));
    let chol = Cholesky::new(inner).ok_or_else(|| EotError::SingularCoupling(spectral_norm(rm).unwrap_or(1.0)))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Hessian of the profit as a `d² × d²` matrix in column-major `vec` coordinates.
fn hessian(rm: &DMatrix<f64>, w: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let d = rm.nrows();
    let n = d * d;
    let rw = rm * w;
    let mut h = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(d, d);
    for col in 0..n {
        let (i, j) = (col % d, col / d);
        e[(i, j)] = 1.0;
        let inner = e.transpose() * rm + rm.transpose() * &e;
        let action = (&e * w + &rw * inner * w) * (-2.0 * eps);
        e[(i, j)] = 0.0;
        h.set_column(col, &DVector::from_column_slice(action.as_slice()));
    }
    symmetrize(&h)
}

/// Scales singular values above the cap back onto it.
fn project(rm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = svd(rm)?;
    if s.singular_values.iter().all(|&v| v <= NORM_CAP) {
        return Ok(rm.clone());
    }
    let clipped = s.singular_values.map(|v| v.min(NORM_CAP));
    Ok(&s.u * DMatrix::from_diagonal(&clipped) * s.v.transpose())
}

/// Maximizer of the entropic profit over all `d × d` matrices in the unit ball.
///
/// Damped Newton ascent on the full matrix with a backtracking line search and
/// spectral-norm projection; the closed form is never consulted.
pub fn profit_maximizer(pair: &AlignedPair, eps: f64, cfg: &OracleConfig) -> Result<DMatrix<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EotError::InvalidEpsilon(eps));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(EotError::InvalidTolerance(cfg.tolerance));
    }
    let d = pair.dim();
    let x = pair.g().matrix().transpose() * pair.m().matrix();
    let start = gaussian_matrix(&mut stream_rng(cfg.seed, 0), d, d);
    let norm = spectral_norm(&start)?;
    let mut rm = if norm > 0.0 { start * (0.5 / norm) } else { start };
    let mut value = profit_value(&rm, &x, eps).ok_or(EotError::SingularCoupling(0.5))?;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let w = inverse_gram_complement(&rm)?;
        let g = gradient(&rm, &x, &w, eps);
        grad_norm = g.norm();
        if grad_norm < cfg.tolerance {
            return Ok(rm);
        }
        let neg_h = -hessian(&rm, &w, eps);
        let gv = DVector::from_column_slice(g.as_slice());
        let step = match Cholesky::new(neg_h) {
            Some(c) => c.solve(&gv),
            None => gv.clone(),
        };
        let p = DMatrix::from_column_slice(d, d, step.as_slice());
        let slope = gv.dot(&step);
        let mut t = cfg.step_size;
        let mut accepted = false;
        for _ in 0..80 {
            let trial = project(&(&rm + &p * t))?;
            if let Some(v) = profit_value(&trial, &x, eps) {
                let better = v >= value + 1e-4 * t * slope;
                let flatter = inverse_gram_complement(&trial)
                    .map(|w2| gradient(&trial, &x, &w2, eps).norm() < grad_norm)
                    .unwrap_or(false);
                if better || flatter {
                    rm = trial;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let w = inverse_gram_complement(&rm)?;
    grad_norm = grad_norm.min(gradient(&rm, &x, &w, eps).norm());
    if grad_norm < cfg.tolerance {
        return Ok(rm);
    }
    Err(EotError::NoConvergence {
        iterations: cfg.max_iterations,
        gradient_norm: grad_norm,
    })
}

/// Result of the brute-force KL evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBreakdown {
    pub kl: f64,
    /// `tr T` of the relative covariance `T`.
    pub trace: f64,
}

/// `½[tr T − log det(I + T)]` with `T = Σ_⊥^{†/2}(Σ − Σ_⊥)Σ_⊥^{†/2}`.
pub fn kl_bruteforce(sigma: &Coupling, a: &Covariance, b: &Covariance, tol: f64) -> Result<KlBreakdown> {
    let d = sigma.dim();
    let mut root = DMatrix::zeros(2 * d, 2 * d);
    root.view_mut((0, 0), (d, d))
        .copy_from(&eigh(a.matrix(), tol)?.pinv_sqrt()?);
    root.view_mut((d, d), (d, d))
        .copy_from(&eigh(b.matrix(), tol)?.pinv_sqrt()?);
    let independent = Coupling::independent(a.matrix(), b.matrix())?;
    let t = symmetrize(&(&root * (sigma.sigma() - independent.sigma()) * &root));
    let eig = eigh(&t, 0.0)?;
    let mut kl = 0.0;
    for &ti in eig.eigenvalues().iter() {
        if 1.0 + ti <= tol {
            return Err(EotError::SingularRegime(1.0 + ti));
        }
        kl += 0.5 * (ti - ti.ln_1p());
    }
    Ok(KlBreakdown { kl, trace: t.trace() })
}

/// `tr S₁ + tr S₂ − 2 tr (S₁^{1/2} S₂ S₁^{1/2})^{1/2}`, clipped at zero.
///
/// The trace term is the nuclear norm of `S₁^{1/2} S₂^{1/2}`.
pub fn w2_direct(s1: &DMatrix<f64>, s2: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let r1 = psd_sqrt(s1, tol)?;
    let r2 = psd_sqrt(s2, tol)?;
    let fid = nuclear_norm(&(r1 * r2))?;
    Ok((s1.trace() + s2.trace() - 2.0 * fid).max(0.0))
}
