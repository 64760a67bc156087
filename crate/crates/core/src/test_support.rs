use rand::Rng;

use crate::linalg::Mat;
use crate::pilots::{estimation_stats, generate_pilots, EstimationStats, PilotBook};
use crate::scenario::{drop_rng, PilotMode};

/// Random statistics with log-uniform beta in [1e-13, 1e-9] and rho-scale pilot SNR.
pub(crate) fn random_instance(seed: u64, m: usize, k: usize, tau: usize) -> EstimationStats<f64> {
    let mut rng = drop_rng(seed, 0);
    let book: PilotBook<f64> = generate_pilots(k, tau, PilotMode::RandomUnitNorm, &mut rng).unwrap();
    let beta = Mat::from_fn(m, k, |_, _| 10f64.powf(rng.random_range(-13.0..-9.0)));
    estimation_stats(&beta, &book, 3e11).unwrap()
}
