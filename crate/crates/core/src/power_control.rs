//! Power allocation for fixed receivers: maximize the SINR floor `t` of the
//! non-real-time users subject to per-user caps and the RTU targets.
//!
//! For fixed receivers each SINR is a linear-fractional function of `q`,
//!
//! ```text
//! SINR_k(q) = S_k q_k / (sum_k' D_k[k'] q_k' + C_k),
//! ```
//!
//! so for a fixed target vector the constraints `SINR_k >= t_k` are linear in
//! `q` and the interference map is a standard interference function. The
//! componentwise-minimal feasible power vector is reached by the monotone
//! fixed-point iteration from `q = 0`, and the largest feasible floor `t` is
//! found by bisection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pilots::EstimationStats;
use crate::rate_model::{PowerAllocation, ReceiverWeights};
use crate::scalar::{dot, Scalar};
use crate::scenario::SolverTolerances;

/// Coefficients of `SINR_k(q)` for one user at fixed receiver weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SinrLinearForm<T> {
    pub user: usize,
    /// `S_k = N^2 (Gamma_k^T u_k)^2`.
    pub signal: T,
    /// `D_k[k']`, including the self term `k' = k` (beamforming uncertainty).
    pub interference: Vec<T>,
    /// `C_k = (N / rho) sum_m u_mk^2 gamma_mk`.
    pub noise: T,
}

impl<T: Scalar> SinrLinearForm<T> {
    pub fn sinr_at(&self, q: &[T]) -> T {
        let den = dot(&self.interference, q) + self.noise;
        self.signal * q[self.user] / den
    }

    /// SINR of this user transmitting at `p` with every other user silent.
    pub fn solo_sinr(&self, p: T) -> T {
        self.signal * p / (self.interference[self.user] * p + self.noise)
    }
}

/// Coefficients for every user at receiver weights `weights`.
pub fn linearize<T: Scalar>(
    weights: &ReceiverWeights<T>,
    stats: &EstimationStats<T>,
    antennas: usize,
    rho: T,
) -> Result<Vec<SinrLinearForm<T>>> {
    let users = stats.users();
    if weights.users() != users || weights.aps() != stats.aps() {
        return Err(Error::Dimension("receiver weights do not match statistics".into()));
    }
    let n = T::lit(antennas as f64);
    let forms = (0..users)
        .map(|k| {
            let u = weights.column(k);
            let u2: Vec<T> = u.iter().map(|x| *x * *x).collect();
            let g = dot(stats.gamma_k(k), u);
            let interference = (0..users)
                .map(|kp| {
                    let mut d = n * dot(&u2, stats.upsilon(k, kp));
                    if kp != k {
                        let l = dot(stats.lambda(k, kp), u);
                        d += n * n * stats.pilot_overlap(k, kp) * l * l;
                    }
                    d
                })
                .collect();
            SinrLinearForm {
                user: k,
                signal: n * n * g * g,
                interference,
                noise: n / rho * dot(&u2, stats.gamma_k(k)),
            }
        })
        .collect();
    Ok(forms)
}

/// Minimal power vector meeting `SINR_k >= targets[k]` for all k, or `None`
/// if it does not exist within the caps.
///
/// Iterates `q_k <- t_k (sum_{k' != k} D_k[k'] q_k' + C_k) / (S_k - t_k D_k[k])`
/// from zero. Iterates increase monotonically, so exceeding a cap proves
/// infeasibility.
pub fn feasibility_fixed_point<T: Scalar>(
    targets: &[T],
    forms: &[SinrLinearForm<T>],
    p_max: &[T],
    fp_tol: T,
    fp_max_iters: usize,
) -> Option<Vec<T>> {
    let users = forms.len();
    debug_assert_eq!(targets.len(), users);
    debug_assert_eq!(p_max.len(), users);
    let mut denom = Vec::with_capacity(users);
    for (k, f) in forms.iter().enumerate() {
        let t = targets[k];
        let d = f.signal - t * f.interference[k];
        if t > T::zero() && (d <= T::zero() || d.is_nan()) {
            return None;
        }
        denom.push(d);
    }
    let mut q = vec![T::zero(); users];
    let mut next = vec![T::zero(); users];
    for _ in 0..fp_max_iters {
        let mut delta = T::zero();
        for (k, f) in forms.iter().enumerate() {
            let t = targets[k];
            let v = if t > T::zero() {
                let cross = dot(&f.interference, &q) - f.interference[k] * q[k];
                t * (cross + f.noise) / denom[k]
            } else {
                T::zero()
            };
            if v > p_max[k] + fp_tol {
                return None;
            }
            delta = delta.max((v - q[k]).abs());
            next[k] = v;
        }
        std::mem::swap(&mut q, &mut next);
        if delta <= fp_tol {
            for (x, cap) in q.iter_mut().zip(p_max) {
                *x = x.min(*cap);
            }
            return Some(q);
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerStatus {
    Optimal,
    /// The RTU targets cannot be met even with every NRTU silent.
    InfeasibleRtuTargets,
    /// Every user is an RTU: the targets are feasible and `q` is the minimal power vector.
    TargetsOnly,
}

#[derive(Clone, Debug, Serialize)]
pub struct PowerSolveResult<T> {
    pub status: PowerStatus,
    /// Balanced NRTU SINR; `None` unless `status` is `Optimal`.
    pub t_star: Option<T>,
    pub q: PowerAllocation<T>,
    pub per_user_sinr: Vec<T>,
    pub bisection_iters: usize,
    /// Final bisection bracket.
    pub t_low: T,
    pub t_up: T,
}

/// Solves the power subproblem for fixed receivers. Users `0..rtu_targets.len()`
/// are RTUs.
pub fn solve_power<T: Scalar>(
    forms: &[SinrLinearForm<T>],
    rtu_targets: &[T],
    p_max: &[T],
    tol: &SolverTolerances,
) -> PowerSolveResult<T> {
    solve_power_from(forms, rtu_targets, p_max, tol, None)
}

/// Like [`solve_power`], starting the bisection from a floor already known
/// to be feasible (used by the alternating optimizer to keep its trace
/// monotone). A floor that turns out infeasible is ignored.
pub fn solve_power_from<T: Scalar>(
    forms: &[SinrLinearForm<T>],
    rtu_targets: &[T],
    p_max: &[T],
    tol: &SolverTolerances,
    floor: Option<T>,
) -> PowerSolveResult<T> {
    let users = forms.len();
    let k1 = rtu_targets.len();
    assert!(k1 <= users, "more RTU targets than users");
    let fp_tol = T::lit(tol.fp_tol);
    let bisect_tol = T::lit(tol.bisect_tol);
    let targets = |t: T| -> Vec<T> {
        rtu_targets
            .iter()
            .copied()
            .chain(std::iter::repeat_n(t, users - k1))
            .collect()
    };
    let feasible = |t: T| feasibility_fixed_point(&targets(t), forms, p_max, fp_tol, tol.fp_max_iters);
    let sinrs = |q: &[T]| forms.iter().map(|f| f.sinr_at(q)).collect::<Vec<T>>();

    let Some(base) = feasible(T::zero()) else {
        return PowerSolveResult {
            status: PowerStatus::InfeasibleRtuTargets,
            t_star: None,
            q: PowerAllocation(vec![T::zero(); users]),
            per_user_sinr: vec![T::zero(); users],
            bisection_iters: 0,
            t_low: T::zero(),
            t_up: T::zero(),
        };
    };
    if k1 == users {
        let per_user_sinr = sinrs(&base);
        return PowerSolveResult {
            status: PowerStatus::TargetsOnly,
            t_star: None,
            q: PowerAllocation(base),
            per_user_sinr,
            bisection_iters: 0,
            t_low: T::zero(),
            t_up: T::zero(),
        };
    }

    let mut t_up = forms[k1..]
        .iter()
        .map(|f| f.solo_sinr(p_max[f.user]))
        .fold(T::infinity(), T::min);
    let mut t_low = T::zero();
    let mut q_low = base;
    if let Some(f) = floor.filter(|f| *f > T::zero() && *f < t_up) {
        if let Some(q) = feasible(f) {
            t_low = f;
            q_low = q;
        }
    }
    let mut iters = 0;
    while t_up - t_low > bisect_tol * t_low.max(T::one()) {
        let mid = (t_low + t_up) / T::lit(2.0);
        match feasible(mid) {
            Some(q) => {
                t_low = mid;
                q_low = q;
            }
            None => t_up = mid,
        }
        iters += 1;
    }

    // Scale up until some user hits its cap: with the noise term fixed this
    // raises every SINR, and it pins the optimum to the power boundary.
    let alpha = q_low
        .iter()
        .zip(p_max)
        .filter(|(q, _)| **q > T::zero())
        .map(|(q, cap)| *cap / *q)
        .fold(T::infinity(), T::min);
    let q: Vec<T> = if alpha.is_finite() {
        q_low.iter().zip(p_max).map(|(q, cap)| (*q * alpha).min(*cap)).collect()
    } else {
        p_max.to_vec()
    };
    let per_user_sinr = sinrs(&q);
    let t_star = per_user_sinr[k1..].iter().copied().fold(T::infinity(), T::min);
    PowerSolveResult {
        status: PowerStatus::Optimal,
        t_star: Some(t_star),
        q: PowerAllocation(q),
        per_user_sinr,
        bisection_iters: iters,
        t_low,
        t_up,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::pilots::{estimation_stats, generate_pilots, PilotBook};
    use crate::rate_model::{build_user_model, sinr};
    use crate::scenario::{drop_rng, PilotMode};
    use crate::test_support::random_instance;
    use num_complex::Complex;
    use proptest::prelude::*;
    use rand::Rng;

    fn tol() -> SolverTolerances {
        SolverTolerances::default()
    }

    fn random_forms(seed: u64, m: usize, k: usize, antennas: usize) -> Vec<SinrLinearForm<f64>> {
        let s = random_instance(seed, m, k, 2);
        let mut rng = drop_rng(seed, 3);
        let cols = (0..k)
            .map(|_| (0..m).map(|_| rng.random_range(0.05..1.0)).collect())
            .collect();
        let u = ReceiverWeights::from_columns(cols).unwrap();
        linearize(&u, &s, antennas, 3e11).unwrap()
    }

    /// Solves (I - F) q = b by Gaussian elimination with partial pivoting.
    fn linear_solve_oracle(targets: &[f64], forms: &[SinrLinearForm<f64>]) -> Vec<f64> {
        let n = forms.len();
        let mut a = Mat::zeros(n, n + 1);
        for k in 0..n {
            let d = forms[k].signal - targets[k] * forms[k].interference[k];
            for kp in 0..n {
                a[(k, kp)] = if k == kp {
                    1.0
                } else {
                    -targets[k] * forms[k].interference[kp] / d
                };
            }
            a[(k, n)] = targets[k] * forms[k].noise / d;
        }
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| a[(x, c)].abs().total_cmp(&a[(y, c)].abs())).unwrap();
            for j in 0..=n {
                let t = a[(c, j)];
                a[(c, j)] = a[(p, j)];
                a[(p, j)] = t;
            }
            for r in 0..n {
                if r != c {
                    let f = a[(r, c)] / a[(c, c)];
                    for j in 0..=n {
                        a[(r, j)] -= f * a[(c, j)];
                    }
                }
            }
        }
        (0..n).map(|k| a[(k, n)] / a[(k, k)]).collect()
    }

    #[test]
    fn scalar_fixture_coefficients() {
        let book = PilotBook::from_columns(vec![vec![Complex::new(1.0f64, 0.0)]]).unwrap();
        let s = estimation_stats(&Mat::from_vec(1, 1, vec![1.0]), &book, 1.0).unwrap();
        let rho = 2.0f64;
        let forms = linearize(&ReceiverWeights::uniform(1, 1), &s, 1, rho).unwrap();
        let (beta, gamma) = (1.0, 0.5);
        assert!((forms[0].signal - gamma * gamma).abs() < 1e-15);
        assert!((forms[0].interference[0] - beta * gamma).abs() < 1e-15);
        assert!((forms[0].noise - gamma / rho).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pilots_drop_coherent_interference() {
        let book: PilotBook<f64> =
            generate_pilots(3, 3, PilotMode::OrthogonalIfPossible, &mut drop_rng(0, 0)).unwrap();
        let beta = Mat::from_fn(2, 3, |m, k| 1e-11 * (1.0 + (2 * k + m) as f64));
        let s = estimation_stats(&beta, &book, 3e11).unwrap();
        let u = ReceiverWeights::from_columns(vec![vec![0.6, 0.8]; 3]).unwrap();
        let forms = linearize(&u, &s, 2, 3e11).unwrap();
        for (k, f) in forms.iter().enumerate() {
            for kp in 0..3 {
                let want = 2.0 * (0.36 * s.upsilon(k, kp)[0] + 0.64 * s.upsilon(k, kp)[1]);
                assert!((f.interference[kp] / want - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn forms_reproduce_rate_model() {
        for seed in 0..5 {
            let s = random_instance(seed, 5, 4, 2);
            let mut rng = drop_rng(seed, 5);
            let cols = (0..4)
                .map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let u = ReceiverWeights::from_columns(cols).unwrap();
            let forms = linearize(&u, &s, 3, 3e11).unwrap();
            for _ in 0..10 {
                let q: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
                let pa = PowerAllocation(q.clone());
                for (k, form) in forms.iter().enumerate() {
                    let m = build_user_model(k, &s, &pa, 3, 3e11).unwrap();
                    let want = sinr(u.column(k), &m).unwrap();
                    let got = form.sinr_at(&q);
                    assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn single_user_closed_form() {
        let forms = random_forms(1, 3, 1, 2);
        let f = &forms[0];
        let t = 0.5 * f.signal / f.interference[0];
        let want = t * f.noise / (f.signal - t * f.interference[0]);
        let p_max = [want * 2.0];
        let q = feasibility_fixed_point(&[t], &forms, &p_max, 1e-14, 100).unwrap();
        assert!((q[0] / want - 1.0).abs() < 1e-12);
        // cap below the requirement
        assert!(feasibility_fixed_point(&[t], &forms, &[want * 0.5], 1e-14, 100).is_none());
    }

    #[test]
    fn tiny_targets_need_tiny_power() {
        let forms = random_forms(2, 4, 3, 2);
        let q = feasibility_fixed_point(&[1e-9; 3], &forms, &[1.0; 3], 1e-14, 1000).unwrap();
        assert!(q.iter().all(|x| *x < 1e-6));
    }

    #[test]
    fn fixed_point_matches_linear_solve() {
        for seed in 0..10 {
            let forms = random_forms(10 + seed, 4, 3, 2);
            // pick targets at a quarter of what full power reaches
            let q_full = [1.0; 3];
            let targets: Vec<f64> = forms.iter().map(|f| 0.25 * f.sinr_at(&q_full)).collect();
            let q = feasibility_fixed_point(&targets, &forms, &[1.0; 3], 1e-14, 100_000).unwrap();
            let oracle = linear_solve_oracle(&targets, &forms);
            for (a, b) in q.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn impossible_target_detected() {
        let forms = random_forms(3, 4, 3, 2);
        let f = &forms[0];
        let too_high = 1.01 * f.signal / f.interference[0];
        assert!(feasibility_fixed_point(&[too_high, 0.1, 0.1], &forms, &[1.0; 3], 1e-12, 100).is_none());
    }

    #[test]
    fn lone_nrtu_goes_full_power() {
        let forms = random_forms(4, 3, 1, 2);
        let res = solve_power(&forms, &[], &[1.0], &tol());
        assert_eq!(res.status, PowerStatus::Optimal);
        assert_eq!(res.q.0, vec![1.0]);
        let want = forms[0].solo_sinr(1.0);
        assert!((res.t_star.unwrap() / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_nrtus_balance() {
        let f = SinrLinearForm {
            user: 0,
            signal: 2.0f64,
            interference: vec![0.1, 0.3],
            noise: 0.05,
        };
        let g = SinrLinearForm {
            user: 1,
            interference: vec![0.3, 0.1],
            ..f.clone()
        };
        let res = solve_power(&[f, g], &[], &[1.0, 1.0], &tol());
        assert_eq!(res.q.0, vec![1.0, 1.0]);
        assert!((res.per_user_sinr[0] - res.per_user_sinr[1]).abs() < 1e-12);
        assert!((res.t_star.unwrap() - 2.0 / 0.45).abs() < 1e-12);
    }

    #[test]
    fn grid_search_oracle_small() {
        for seed in 0..3 {
            let forms = random_forms(40 + seed, 3, 3, 1);
            let rtu = [0.3 * forms[0].solo_sinr(1.0).min(1.0)];
            let res = solve_power(&forms, &rtu, &[1.0; 3], &tol());
            assert_eq!(res.status, PowerStatus::Optimal);
            let t_star = res.t_star.unwrap();
            let n = 60;
            let grid = |i: usize| i as f64 / (n - 1) as f64;
            let mut best = 0.0f64;
            let mut spread = 0.0f64;
            let obj = |q: &[f64]| -> Option<f64> {
                (forms[0].sinr_at(q) >= rtu[0]).then(|| forms[1].sinr_at(q).min(forms[2].sinr_at(q)))
            };
            let mut arg = [0usize; 3];
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let q = [grid(a), grid(b), grid(c)];
                        if let Some(v) = obj(&q) {
                            if v > best {
                                best = v;
                                arg = [a, b, c];
                            }
                        }
                    }
                }
            }
            for d in 0..3 {
                for step in [-1i64, 1] {
                    let mut idx = arg;
                    let j = idx[d] as i64 + step;
                    if (0..n as i64).contains(&j) {
                        idx[d] = j as usize;
                        let q = [grid(idx[0]), grid(idx[1]), grid(idx[2])];
                        let v = forms[1].sinr_at(&q).min(forms[2].sinr_at(&q));
                        spread = spread.max((v - best).abs());
                    }
                }
            }
            assert!(t_star >= best - 1e-4 * best.max(1.0), "{t_star} < grid {best}");
            assert!(t_star <= best + spread, "{t_star} > grid {best} + {spread}");
        }
    }

    #[test]
    fn unreachable_rtu_target_is_infeasible() {
        let forms = random_forms(5, 4, 3, 2);
        let target = 1.5 * forms[0].solo_sinr(1.0);
        let res = solve_power(&forms, &[target], &[1.0; 3], &tol());
        assert_eq!(res.status, PowerStatus::InfeasibleRtuTargets);
        assert!(res.per_user_sinr.iter().all(|x| *x == 0.0));
        assert!(res.t_star.is_none());
    }

    #[test]
    fn all_rtus_is_targets_only() {
        let forms = random_forms(6, 4, 2, 2);
        let targets = [0.2 * forms[0].solo_sinr(1.0), 0.2 * forms[1].solo_sinr(1.0)];
        let res = solve_power(&forms, &targets, &[1.0; 2], &tol());
        assert_eq!(res.status, PowerStatus::TargetsOnly);
        for (s, t) in res.per_user_sinr.iter().zip(targets) {
            assert!((s / t - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_signal_nrtu_pins_floor_at_zero() {
        let f = SinrLinearForm {
            user: 0,
            signal: 0.0,
            interference: vec![0.1, 0.1],
            noise: 0.01,
        };
        let g = SinrLinearForm {
            user: 1,
            signal: 1.0,
            ..f.clone()
        };
        let res = solve_power(&[f, g], &[], &[1.0, 1.0], &tol());
        assert_eq!(res.status, PowerStatus::Optimal);
        assert_eq!(res.t_star, Some(0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn solve_invariants(seed in 0u64..10_000, k1 in 0usize..3, scale in 0.05f64..0.6) {
            let forms = random_forms(seed, 4, 4, 2);
            let p_max = [1.0; 4];
            let rtu: Vec<f64> = forms[..k1].iter().map(|f| scale * f.solo_sinr(1.0) / 4.0).collect();
            let res = solve_power(&forms, &rtu, &p_max, &tol());
            if res.status == PowerStatus::Optimal {
                let t = res.t_star.unwrap();
                let qmax = res.q.0.iter().copied().fold(0.0, f64::max);
                prop_assert!(qmax >= 1.0 - 1e-6);
                prop_assert!(res.q.0.iter().all(|q| *q >= 0.0 && *q <= 1.0));
                for (s, t) in res.per_user_sinr.iter().zip(&rtu) {
                    prop_assert!(*s >= t * (1.0 - 1e-6));
                }
                for k in k1..4 {
                    prop_assert!(res.per_user_sinr[k] >= t * (1.0 - 1e-9));
                }
                prop_assert!(t >= res.t_low * (1.0 - 1e-8) && t <= res.t_up * (1.0 + 1e-8));
            }
        }

        #[test]
        fn feasibility_is_monotone(seed in 0u64..10_000, frac in 0.1f64..1.5, shrink in 0.0f64..1.0) {
            let forms = random_forms(seed, 3, 3, 2);
            let targets: Vec<f64> = forms.iter().map(|f| frac * f.sinr_at(&[1.0; 3])).collect();
            let smaller: Vec<f64> = targets.iter().map(|t| t * shrink).collect();
            let big = feasibility_fixed_point(&targets, &forms, &[1.0; 3], 1e-12, 100_000);
            let small = feasibility_fixed_point(&smaller, &forms, &[1.0; 3], 1e-12, 100_000);
            if let Some(qb) = big {
                let qs = small.expect("smaller targets must stay feasible");
                for (a, b) in qs.iter().zip(&qb) {
                    prop_assert!(*a <= *b + 1e-12);
                }
            }
        }

        #[test]
        fn fixed_point_is_minimal(seed in 0u64..10_000) {
            let forms = random_forms(seed, 3, 3, 2);
            let mut rng = drop_rng(seed, 11);
            let q_any: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let achieved: Vec<f64> = forms.iter().map(|f| f.sinr_at(&q_any)).collect();
            let q_min = feasibility_fixed_point(&achieved, &forms, &[1.0; 3], 1e-13, 1_000_000).unwrap();
            for (a, b) in q_min.iter().zip(&q_any) {
                prop_assert!(*a <= *b * (1.0 + 1e-6) + 1e-12);
            }
        }
    }
}
