//! Integrated Brownian motion on a uniform midpoint grid of `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eot::{bias_at, SpectralPath};
use crate::error::{EotError, Result};
use crate::gaussian::{Covariance, GreenFactor};
use crate::rates::log_log_slope;
use crate::spectral::{svd, DEFAULT_RANK_TOL};

pub const MAX_ORDER: usize = 6;
pub const MAX_GRID: usize = 4096;

/// `n`-fold integration `f ↦ ∫₀^t (t−s)^{n−1}/(n−1)! f(s) ds`, with the `1/m`
/// cell weight folded into the matrix so it acts like the `L²[0,1]` operator.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraOperator {
    order: usize,
    grid_size: usize,
    matrix: DMatrix<f64>,
}

impl VolterraOperator {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.matrix * f
    }

    /// `A_n = G_n G_nᵀ`.
    pub fn covariance(&self) -> Result<Covariance> {
        let a = &self.matrix * self.matrix.transpose();
        Covariance::new((&a + a.transpose()) * 0.5, DEFAULT_RANK_TOL)
    }

    pub fn green_factor(&self) -> Result<GreenFactor> {
        GreenFactor::new(self.matrix.clone(), &self.covariance()?)
    }
}

fn check_orders(n: usize, m: usize) -> Result<()> {
    if n == 0 || n > MAX_ORDER {
        return Err(EotError::InvalidOrder(format!("order {n} outside 1..={MAX_ORDER}")));
    }
    if !(2..=MAX_GRID).contains(&m) {
        return Err(EotError::InvalidOrder(format!("grid size {m} outside 2..={MAX_GRID}")));
    }
    Ok(())
}

/// Grid node `t_i = (i + ½)/m`.
pub fn node(i: usize, m: usize) -> f64 {
    (i as f64 + 0.5) / m as f64
}

pub fn volterra(n: usize, m: usize) -> Result<VolterraOperator> {
    check_orders(n, m)?;
    let h = 1.0 / m as f64;
    let factorial: f64 = (1..n).map(|k| k as f64).product();
    let matrix = DMatrix::from_fn(m, m, |i, j| {
        if j < i {
            (node(i, m) - node(j, m)).powi(n as i32 - 1) / factorial * h
        } else if i == j && n == 1 {
            0.5 * h
        } else {
            0.0
        }
    });
    Ok(VolterraOperator {
        order: n,
        grid_size: m,
        matrix,
    })
}

pub fn ibm_covariance(n: usize, m: usize) -> Result<Covariance> {
    volterra(n, m)?.covariance()
}

/// Grid inner product with weight `1/m`.
pub fn grid_inner(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    u.dot(v) / u.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    /// `⟨G_n f, G_m f⟩`.
    pub lhs: f64,
    /// `‖G_k f‖²` or `½‖G_k f‖²` depending on the parity of `n + m`.
    pub rhs: f64,
    pub relative_error: f64,
    /// The order `k` used on the right.
    pub rhs_order: usize,
    /// Whether the right side carries the factor `½`.
    pub halved: bool,
}

/// Compares `⟨G_n f, G_m f⟩` with the norm of the middle-order integral of `f`.
pub fn aligned_identity_check(n: usize, m_order: usize, m_grid: usize, f: &DVector<f64>) -> Result<IdentityCheck> {
    check_orders(n, m_grid)?;
    check_orders(m_order, m_grid)?;
    if f.len() != m_grid {
        return Err(EotError::DimensionMismatch {
            expected: m_grid,
            found: f.len(),
        });
    }
    let halved = (n + m_order) % 2 == 1;
    let rhs_order = (n + m_order).div_ceil(2);
    check_orders(rhs_order, m_grid)?;
    let lhs = grid_inner(&volterra(n, m_grid)?.apply(f), &volterra(m_order, m_grid)?.apply(f));
    let gk = volterra(rhs_order, m_grid)?.apply(f);
    let rhs = grid_inner(&gk, &gk) * if halved { 0.5 } else { 1.0 };
    let relative_error = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
    Ok(IdentityCheck {
        lhs,
        rhs,
        relative_error,
        rhs_order,
        halved,
    })
}

/// Singular values of `G_nᵀ G_m`, i.e. the cross spectrum of the IBM pair `(A_n, A_m)`.
///
/// Taken directly from the product so that small values are never squared.
pub fn ibm_spectrum(n: usize, m_order: usize, grid: usize) -> Result<Vec<f64>> {
    let g = volterra(n, grid)?;
    let m = volterra(m_order, grid)?;
    Ok(svd(&(g.matrix.transpose() * &m.matrix))?
        .singular_values
        .iter()
        .copied()
        .collect())
}

/// Path of the IBM pair built from its cross spectrum.
pub fn ibm_path(n: usize, m_order: usize, grid: usize) -> Result<SpectralPath> {
    let lambdas = ibm_spectrum(n, m_order, grid)?;
    let trace = |k| -> Result<f64> {
        let g = volterra(k, grid)?;
        Ok(g.matrix.norm_squared())
    };
    SpectralPath::from_spectrum(lambdas, trace(n)?, trace(m_order)?, DEFAULT_RANK_TOL)
}

/// `1 − 1/(2⌈(n+m)/2⌉)`.
pub fn ibm_expected_exponent(n: usize, m_order: usize) -> f64 {
    1.0 - 1.0 / (2.0 * (n + m_order).div_ceil(2) as f64)
}

/// Default fitting window: 9 log-spaced values in `[10⁻⁵, 10⁻³]`, descending.
pub fn default_ibm_grid() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-3.0 - 0.25 * k as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbmFit {
    pub n: usize,
    pub m_order: usize,
    pub grid: usize,
    pub epsilons: Vec<f64>,
    pub bias: Vec<f64>,
    pub fitted_exponent: f64,
    pub expected_exponent: f64,
}

/// Least-squares log-log slope of the entropic bias of `(A_n, A_m)` over `eps_grid`.
pub fn ibm_bias_fit(n: usize, m_order: usize, grid: usize, eps_grid: &[f64]) -> Result<IbmFit> {
    if eps_grid.len() < 2 {
        return Err(EotError::InvalidConfig("fit needs at least two epsilon values".into()));
    }
    let path = ibm_path(n, m_order, grid)?;
    let bias = eps_grid
        .iter()
        .map(|&e| bias_at(&path, e))
        .collect::<Result<Vec<_>>>()?;
    if bias.iter().any(|b| !(*b > 0.0)) {
        return Err(EotError::NonFinite);
    }
    Ok(IbmFit {
        n,
        m_order,
        grid,
        epsilons: eps_grid.to_vec(),
        fitted_exponent: log_log_slope(eps_grid, &bias),
        bias,
        expected_exponent: ibm_expected_exponent(n, m_order),
    })
}
