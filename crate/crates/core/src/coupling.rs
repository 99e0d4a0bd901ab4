use nalgebra::{DMatrix, DMatrixView};

use crate::error::{EotError, Result};
use crate::spectral::{eigh, symmetrize};

/// Relative PSD slack accepted when validating a joint covariance.
pub const COUPLING_PSD_TOL: f64 = 1e-8;

/// Joint covariance `[[A, C], [Cᵀ, B]]` of a Gaussian coupling.
#[derive(Debug, Clone)]
pub struct Coupling {
    sigma: DMatrix<f64>,
    d: usize,
    validated: bool,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
}

impl Coupling {
    /// Assembles the joint covariance; the marginal blocks are copied verbatim.
    pub fn assemble(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        for m in [a, b, c] {
            if m.nrows() != d || m.ncols() != d {
                return Err(EotError::DimensionMismatch {
                    expected: d,
                    found: m.nrows().max(m.ncols()),
                });
            }
        }
        let mut sigma = DMatrix::zeros(2 * d, 2 * d);
        sigma.view_mut((0, 0), (d, d)).copy_from(a);
        sigma.view_mut((d, d), (d, d)).copy_from(b);
        sigma.view_mut((0, d), (d, d)).copy_from(c);
        sigma.view_mut((d, 0), (d, d)).copy_from(&c.transpose());
        let eig = eigh(&symmetrize(&sigma), 0.0)?;
        let max_eigenvalue = eig.max_eigenvalue();
        let min_eigenvalue = eig.min_eigenvalue();
        let validated = min_eigenvalue >= -COUPLING_PSD_TOL * max_eigenvalue.max(0.0);
        Ok(Coupling {
            sigma,
            d,
            validated,
            min_eigenvalue,
            max_eigenvalue,
        })
    }

    /// Independent coupling `diag(A, B)`.
    pub fn independent(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        Self::assemble(a, b, &DMatrix::zeros(a.nrows(), a.nrows()))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn a_block(&self) -> DMatrixView<'_, f64> {
        self.sigma.view((0, 0), (self.d, self.d))
    }

    pub fn b_block(&self) -> DMatrixView<'_, f64> {
        self.sigma.view((self.d, self.d), (self.d, self.d))
    }

    pub fn c_block(&self) -> DMatrixView<'_, f64> {
        self.sigma.view((0, self.d), (self.d, self.d))
    }

    /// Whether the joint covariance is PSD within the relative tolerance.
    pub fn validated(&self) -> bool {
        self.validated
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    /// `E‖X − Y‖² = tr A + tr B − 2 tr C`.
    pub fn transport_cost(&self) -> f64 {
        self.a_block().trace() + self.b_block().trace() - 2.0 * self.c_block().trace()
    }
}
