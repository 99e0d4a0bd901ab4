//! Seeded random matrix generators.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Ridge added to every ensemble draw.
pub const ENSEMBLE_RIDGE: f64 = 1e-3;

/// Deterministic generator for `(seed, stream)`; streams are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    // fill row-major so the draw order does not depend on storage layout
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// `XXᵀ / dof` with `X` a `d × dof` standard Gaussian matrix.
pub fn wishart<R: Rng + ?Sized>(rng: &mut R, d: usize, dof: usize) -> DMatrix<f64> {
    let x = gaussian_matrix(rng, d, dof);
    let w = &x * x.transpose() / dof as f64;
    (&w + w.transpose()) * 0.5
}

/// Wishart(d, d)/d plus the ensemble ridge.
pub fn ensemble_covariance<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    wishart(rng, d, d) + DMatrix::identity(d, d) * ENSEMBLE_RIDGE
}

/// Haar-distributed orthogonal matrix (QR with sign correction).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d, d).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// PSD matrix of exact rank `rank`: `XXᵀ/rank`, `X` Gaussian `d × rank`.
pub fn random_psd_of_rank<R: Rng + ?Sized>(rng: &mut R, d: usize, rank: usize) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::zeros(d, d);
    }
    wishart(rng, d, rank)
}
