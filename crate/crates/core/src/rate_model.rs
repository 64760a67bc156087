//! Closed-form uplink SINR built from channel statistics only.
//!
//! For user k with receiver weights `u` the SINR is the Rayleigh quotient
//! `u^T A_k u / u^T B_k u` with
//!
//! ```text
//! A_k = N^2 q_k Gamma_k Gamma_k^T
//! B_k = N^2 sum_{k' != k} q_k' |phi_k^H phi_k'|^2 Lambda_kk' Lambda_kk'^T
//!     + N sum_{k'} q_k' Upsilon_kk' + (N / rho) R_k
//! ```

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::pilots::EstimationStats;
use crate::scalar::{all_finite, dot, norm, positive_finite, Scalar};

/// Transmit powers in units of the data power (so `rho` carries the absolute scale).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerAllocation<T>(pub Vec<T>);

impl<T: Scalar> PowerAllocation<T> {
    pub fn full(p_max: &[T]) -> Self {
        PowerAllocation(p_max.to_vec())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// Receiver weights `u_mk`, one unit-norm column per user.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReceiverWeights<T> {
    columns: Vec<Vec<T>>,
}

impl<T: Scalar> ReceiverWeights<T> {
    /// Normalizes every column; zero columns are rejected.
    pub fn from_columns(columns: Vec<Vec<T>>) -> Result<Self> {
        let aps = columns.first().map(Vec::len).unwrap_or(0);
        let mut out = Vec::with_capacity(columns.len());
        for (k, col) in columns.into_iter().enumerate() {
            if col.len() != aps {
                return Err(Error::Dimension(format!("receiver column {k} has wrong length")));
            }
            let n = norm(&col);
            if !positive_finite(n) {
                return Err(Error::ZeroVector(k));
            }
            out.push(col.into_iter().map(|x| x / n).collect());
        }
        Ok(ReceiverWeights { columns: out })
    }

    /// Every `u_mk` equal, i.e. the unweighted combiner.
    pub fn uniform(aps: usize, users: usize) -> Self {
        let v = T::one() / T::lit(aps as f64).sqrt();
        ReceiverWeights {
            columns: vec![vec![v; aps]; users],
        }
    }

    pub fn column(&self, k: usize) -> &[T] {
        &self.columns[k]
    }

    pub fn users(&self) -> usize {
        self.columns.len()
    }

    pub fn aps(&self) -> usize {
        self.columns.first().map(Vec::len).unwrap_or(0)
    }

    /// Dense `M x K` view.
    pub fn to_mat(&self) -> Mat<T> {
        Mat::from_fn(self.aps(), self.users(), |m, k| self.columns[k][m])
    }
}

/// One pilot-contamination term `weight * v v^T` of `B_k`.
#[derive(Clone, Debug)]
pub struct RankOneTerm<T> {
    pub interferer: usize,
    pub weight: T,
    pub vector: Vec<T>,
}

/// Structured `A_k`, `B_k` of one user: `B_k` is a positive diagonal plus a
/// sum of rank-one pilot-contamination terms.
#[derive(Clone, Debug)]
pub struct UserRateModel<T> {
    pub user: usize,
    gamma_k: Vec<T>,
    signal_scale: T,
    diag: Vec<T>,
    rank_one: Vec<RankOneTerm<T>>,
}

impl<T: Scalar> UserRateModel<T> {
    pub fn aps(&self) -> usize {
        self.gamma_k.len()
    }

    /// `Gamma_k`, the direction spanning `A_k`.
    pub fn gamma_k(&self) -> &[T] {
        &self.gamma_k
    }

    /// `N^2 q_k`, so that `A_k = signal_scale * Gamma_k Gamma_k^T`.
    pub fn signal_scale(&self) -> T {
        self.signal_scale
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    pub fn rank_one_terms(&self) -> &[RankOneTerm<T>] {
        &self.rank_one
    }

    pub fn quad_a(&self, u: &[T]) -> T {
        let g = dot(&self.gamma_k, u);
        self.signal_scale * g * g
    }

    pub fn quad_b(&self, u: &[T]) -> T {
        let d: T = self.diag.iter().zip(u).map(|(&d, &x)| d * x * x).sum();
        let r: T = self
            .rank_one
            .iter()
            .map(|t| {
                let p = dot(&t.vector, u);
                t.weight * p * p
            })
            .sum();
        d + r
    }

    pub fn dense_a(&self) -> Mat<T> {
        let g = &self.gamma_k;
        Mat::from_fn(g.len(), g.len(), |i, j| self.signal_scale * g[i] * g[j])
    }

    pub fn dense_b(&self) -> Mat<T> {
        let m = self.aps();
        let mut b = Mat::zeros(m, m);
        for i in 0..m {
            b[(i, i)] = self.diag[i];
        }
        for t in &self.rank_one {
            for i in 0..m {
                let wi = t.weight * t.vector[i];
                for j in 0..m {
                    b[(i, j)] += wi * t.vector[j];
                }
            }
        }
        b
    }
}

/// Assembles `A_k`, `B_k` for user `k` at powers `q`.
pub fn build_user_model<T: Scalar>(
    k: usize,
    stats: &EstimationStats<T>,
    q: &PowerAllocation<T>,
    antennas: usize,
    rho: T,
) -> Result<UserRateModel<T>> {
    let users = stats.users();
    if q.0.len() != users {
        return Err(Error::Dimension(format!(
            "power vector has {} entries, expected {users}",
            q.0.len()
        )));
    }
    if k >= users {
        return Err(Error::Dimension(format!("user {k} out of range")));
    }
    if !all_finite(&q.0) || !positive_finite(rho) {
        return Err(Error::NonFiniteInput("powers and rho must be finite, rho > 0".into()));
    }
    let gamma_k = stats.gamma_k(k);
    if !all_finite(gamma_k) || !all_finite(stats.beta().as_slice()) {
        return Err(Error::NonFiniteInput(format!("statistics of user {k}")));
    }
    let n = T::lit(antennas as f64);
    let m_aps = stats.aps();

    let mut diag: Vec<T> = gamma_k.iter().map(|&g| n / rho * g).collect();
    for (kp, &qp) in q.0.iter().enumerate() {
        for (d, &ups) in diag.iter_mut().zip(stats.upsilon(k, kp)) {
            *d += n * qp * ups;
        }
    }
    let rank_one = (0..users)
        .filter(|&kp| kp != k)
        .filter_map(|kp| {
            let weight = n * n * q.0[kp] * stats.pilot_overlap(k, kp);
            (weight > T::zero()).then(|| RankOneTerm {
                interferer: kp,
                weight,
                vector: stats.lambda(k, kp).to_vec(),
            })
        })
        .collect();
    debug_assert_eq!(diag.len(), m_aps);

    Ok(UserRateModel {
        user: k,
        gamma_k: gamma_k.to_vec(),
        signal_scale: n * n * q.0[k],
        diag,
        rank_one,
    })
}

/// All users' models, built in parallel.
pub fn build_models<T: Scalar>(
    stats: &EstimationStats<T>,
    q: &PowerAllocation<T>,
    antennas: usize,
    rho: T,
) -> Result<Vec<UserRateModel<T>>> {
    (0..stats.users())
        .into_par_iter()
        .map(|k| build_user_model(k, stats, q, antennas, rho))
        .collect()
}

/// `u^T A_k u / u^T B_k u`.
pub fn sinr<T: Scalar>(u: &[T], model: &UserRateModel<T>) -> Result<T> {
    if u.len() != model.aps() {
        return Err(Error::Dimension("receiver length differs from AP count".into()));
    }
    if u.iter().all(|x| *x == T::zero()) {
        return Err(Error::ZeroVector(model.user));
    }
    Ok(model.quad_a(u) / model.quad_b(u))
}

/// Spectral efficiency in bit/s/Hz for a linear SINR.
pub fn rate_from_sinr<T: Scalar>(sinr: T) -> T {
    (T::one() + sinr).log2()
}

pub fn rate<T: Scalar>(u: &[T], model: &UserRateModel<T>) -> Result<T> {
    sinr(u, model).map(rate_from_sinr)
}
