//! Per-user receiver filter maximizing `u^T A_k u / u^T B_k u`.
//!
//! `A_k` is rank one (`N^2 q_k Gamma_k Gamma_k^T`), so the maximizer is
//! `u* ∝ B_k^{-1} Gamma_k` and the maximum is `N^2 q_k Gamma_k^T B_k^{-1} Gamma_k`.
//! No general generalized eigensolver is needed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rate_model::{ReceiverWeights, UserRateModel};
use crate::scalar::{dot, norm, positive_finite, Scalar};

#[derive(Clone, Debug)]
pub struct ReceiverSolution<T> {
    /// Unit-norm maximizer, sign chosen so that its entries sum to a non-negative value.
    pub u: Vec<T>,
    pub sinr: T,
    /// Entries that stayed negative after the sign flip (expected to be zero).
    pub negative_entries: usize,
}

/// Optimal receiver of one user. With `q_k = 0` the direction is still
/// `B_k^{-1} Gamma_k` and the returned SINR is zero.
pub fn optimal_receiver<T: Scalar>(model: &UserRateModel<T>) -> Result<ReceiverSolution<T>> {
    let chol = Cholesky::factor(&model.dense_b()).ok_or(Error::SingularDenominator(model.user))?;
    let gamma = model.gamma_k();
    let mut x = chol.solve(gamma);
    let quad = dot(gamma, &x);
    let nx = norm(&x);
    if !positive_finite(nx) {
        return Err(Error::SingularDenominator(model.user));
    }
    let flip = x.iter().copied().sum::<T>() < T::zero();
    for v in x.iter_mut() {
        *v /= nx;
        if flip {
            *v = -*v;
        }
    }
    let negative_entries = x.iter().filter(|v| **v < T::zero()).count();
    if negative_entries > 0 {
        log::debug!(
            "receiver of user {} has {negative_entries} negative entries",
            model.user
        );
    }
    Ok(ReceiverSolution {
        u: x,
        sinr: model.signal_scale() * quad,
        negative_entries,
    })
}

/// Optimal receivers of all users plus the SINRs they achieve at the model powers.
#[derive(Clone, Debug)]
pub struct ReceiverDesign<T> {
    pub weights: ReceiverWeights<T>,
    pub sinr: Vec<T>,
    pub negative_entries: usize,
}

pub fn design_all<T: Scalar>(models: &[UserRateModel<T>]) -> Result<ReceiverDesign<T>> {
    let sols: Vec<ReceiverSolution<T>> = models
        .par_iter()
        .map(optimal_receiver)
        .collect::<Result<_>>()?;
    let negative_entries = sols.iter().map(|s| s.negative_entries).sum();
    let sinr = sols.iter().map(|s| s.sinr).collect();
    let weights = ReceiverWeights::from_columns(sols.into_iter().map(|s| s.u).collect())?;
    Ok(ReceiverDesign {
        weights,
        sinr,
        negative_entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::pilots::{estimation_stats, generate_pilots, PilotBook};
    use crate::rate_model::{build_models, build_user_model, sinr, PowerAllocation};
    use crate::scenario::{drop_rng, PilotMode};
    use crate::test_support::random_instance;
    use rand::Rng;

    /// Gauss-Jordan inverse, independent of the Cholesky path.
    fn inverse(a: &Mat<f64>) -> Mat<f64> {
        let n = a.rows();
        let mut aug = Mat::from_fn(n, 2 * n, |i, j| {
            if j < n {
                a[(i, j)]
            } else if j - n == i {
                1.0
            } else {
                0.0
            }
        });
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| aug[(x, col)].abs().total_cmp(&aug[(y, col)].abs()))
                .unwrap();
            for j in 0..2 * n {
                let t = aug[(col, j)];
                aug[(col, j)] = aug[(piv, j)];
                aug[(piv, j)] = t;
            }
            let d = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= d;
            }
            for i in 0..n {
                if i != col {
                    let f = aug[(i, col)];
                    for j in 0..2 * n {
                        aug[(i, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
        Mat::from_fn(n, n, |i, j| aug[(i, j + n)])
    }

    /// Largest generalized eigenvalue of (A, B) by power iteration on B^{-1} A.
    fn power_iteration_eig(a: &Mat<f64>, b: &Mat<f64>, seed: u64) -> f64 {
        let binv = inverse(b);
        let n = a.rows();
        let c = Mat::from_fn(n, n, |i, j| (0..n).map(|p| binv[(i, p)] * a[(p, j)]).sum());
        let mut rng = drop_rng(seed, 99);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = c.mul_vec(&v);
            let nw = norm(&w);
            v = w.iter().map(|x| x / nw).collect();
            let next = a.quad_form(&v) / b.quad_form(&v);
            if (next - lambda).abs() <= 1e-15 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda
    }

    #[test]
    fn diagonal_denominator_hand_solution() {
        let book: PilotBook<f64> =
            generate_pilots(3, 3, PilotMode::OrthogonalIfPossible, &mut drop_rng(0, 0)).unwrap();
        let beta = Mat::from_fn(4, 3, |m, k| 1e-11 * (1.0 + (3 * m + k) as f64));
        let s = estimation_stats(&beta, &book, 3e11).unwrap();
        let q = PowerAllocation(vec![1.0, 0.4, 0.7]);
        let model = build_user_model(1, &s, &q, 2, 3e11).unwrap();
        let b = model.dense_b();
        let sol = optimal_receiver(&model).unwrap();
        let raw: Vec<f64> = (0..4).map(|m| s.gamma_k(1)[m] / b[(m, m)]).collect();
        let n = norm(&raw);
        for (got, want) in sol.u.iter().zip(&raw) {
            assert!((got - want / n).abs() < 1e-12);
        }
    }

    #[test]
    fn single_ap_is_trivial() {
        let s = random_instance(1, 1, 3, 2);
        let q = PowerAllocation(vec![1.0; 3]);
        for model in build_models(&s, &q, 2, 3e11).unwrap() {
            let sol = optimal_receiver(&model).unwrap();
            assert_eq!(sol.u, vec![1.0]);
        }
    }

    #[test]
    fn closed_form_matches_power_iteration() {
        for seed in 0..10 {
            let s = random_instance(200 + seed, 6, 4, 2);
            let q = PowerAllocation(vec![1.0, 0.5, 0.8, 0.3]);
            for model in build_models(&s, &q, 2, 3e11).unwrap() {
                let sol = optimal_receiver(&model).unwrap();
                let oracle = power_iteration_eig(&model.dense_a(), &model.dense_b(), seed);
                assert!((sol.sinr / oracle - 1.0).abs() < 1e-9, "{} vs {oracle}", sol.sinr);
                assert!((sinr(&sol.u, &model).unwrap() / sol.sinr - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn beats_random_probes() {
        for seed in 0..5 {
            let s = random_instance(300 + seed, 5, 4, 3);
            let q = PowerAllocation(vec![0.2, 1.0, 0.6, 0.9]);
            let models = build_models(&s, &q, 3, 3e11).unwrap();
            let design = design_all(&models).unwrap();
            let mut rng = drop_rng(seed, 7);
            for (k, model) in models.iter().enumerate() {
                let best = sinr(design.weights.column(k), model).unwrap();
                for _ in 0..100 {
                    let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                    assert!(best - sinr(&v, model).unwrap() >= -1e-10 * best);
                }
            }
        }
    }

    #[test]
    fn symmetric_users_share_receiver() {
        let book: PilotBook<f64> =
            generate_pilots(3, 3, PilotMode::OrthogonalIfPossible, &mut drop_rng(0, 0)).unwrap();
        let beta = Mat::from_fn(4, 3, |m, _| 1e-11 * (1.0 + m as f64));
        let s = estimation_stats(&beta, &book, 3e11).unwrap();
        let q = PowerAllocation(vec![0.5; 3]);
        let design = design_all(&build_models(&s, &q, 2, 3e11).unwrap()).unwrap();
        for k in 1..3 {
            for m in 0..4 {
                assert!((design.weights.column(k)[m] - design.weights.column(0)[m]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn receiver_invariant_under_joint_power_and_noise_scaling() {
        // q -> a q with rho -> a rho scales B_k by a and A_k by a, so the argmax is unchanged.
        // q_k alone is not enough: B_k carries the N q_k Upsilon_kk uncertainty term.
        let s = random_instance(12, 5, 3, 2);
        let base = PowerAllocation(vec![0.3, 0.6, 0.9]);
        let scaled = PowerAllocation(base.0.iter().map(|q| q * 0.05).collect());
        let u1 = optimal_receiver(&build_user_model(0, &s, &base, 2, 3e11).unwrap()).unwrap();
        let u2 = optimal_receiver(&build_user_model(0, &s, &scaled, 2, 3e11 / 0.05).unwrap()).unwrap();
        for (a, b) in u1.u.iter().zip(&u2.u) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((u1.sinr / u2.sinr - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_power_is_continuous() {
        let s = random_instance(13, 4, 3, 2);
        let q = PowerAllocation(vec![0.0, 0.6, 0.9]);
        let sol = optimal_receiver(&build_user_model(0, &s, &q, 2, 3e11).unwrap()).unwrap();
        assert_eq!(sol.sinr, 0.0);
        assert!((norm(&sol.u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let s = random_instance(14, 6, 4, 2);
        let q = PowerAllocation(vec![1.0, 0.5, 0.8, 0.3]);
        let m64 = build_user_model(2, &s, &q, 2, 3e11).unwrap();
        let sol64 = optimal_receiver(&m64).unwrap();

        let beta32 = s.beta().map(|x| x as f32);
        let book32: PilotBook<f32> =
            generate_pilots(4, 2, PilotMode::RandomUnitNorm, &mut drop_rng(14, 0)).unwrap();
        let s32 = estimation_stats(&beta32, &book32, 3e11f32).unwrap();
        let q32 = PowerAllocation(vec![1.0f32, 0.5, 0.8, 0.3]);
        let sol32 = optimal_receiver(&build_user_model(2, &s32, &q32, 2, 3e11f32).unwrap()).unwrap();
        assert!((sol32.sinr as f64 / sol64.sinr - 1.0).abs() < 1e-3);
    }
}
