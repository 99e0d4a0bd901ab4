//! Fixtures shared by the benchmarks.

use spectral_eot::random::{ensemble_covariance, random_psd_of_rank, stream_rng};
use spectral_eot::{Covariance, DEFAULT_RANK_TOL};

/// Seeded ensemble pair of dimension `d`; `b` has rank `d - 1` when `deficient`.
pub fn random_pair(d: usize, seed: u64, deficient: bool) -> (Covariance, Covariance) {
    let mut rng = stream_rng(seed, 0);
    let a = ensemble_covariance(&mut rng, d);
    let b = if deficient && d > 1 {
        random_psd_of_rank(&mut rng, d, d - 1)
    } else {
        ensemble_covariance(&mut rng, d)
    };
    (
        Covariance::new(a, DEFAULT_RANK_TOL).expect("ensemble draw is PSD"),
        Covariance::new(b, DEFAULT_RANK_TOL).expect("ensemble draw is PSD"),
    )
}

/// `count` log-spaced regularization levels from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    let (a, b) = (hi.log10(), lo.log10());
    let steps = count.saturating_sub(1).max(1) as f64;
    (0..count).map(|i| 10f64.powf(a + (b - a) * i as f64 / steps)).collect()
}
