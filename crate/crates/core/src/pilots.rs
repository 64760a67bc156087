//! Pilot books and the MMSE channel-estimation statistics `c_mk`, `gamma_mk`.

use std::io::Write;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{positive_finite, Scalar};
use crate::scenario::PilotMode;

/// `tau x K` pilot matrix stored column by column, plus `|phi_k^H phi_k'|^2`.
#[derive(Clone, Debug)]
pub struct PilotBook<T> {
    tau: usize,
    columns: Vec<Vec<Complex<T>>>,
    gram_abs2: Mat<T>,
}

impl<T: Scalar> PilotBook<T> {
    /// Builds a pilot book from arbitrary nonzero columns, normalizing each to unit norm.
    pub fn from_columns(columns: Vec<Vec<Complex<T>>>) -> Result<Self> {
        let tau = columns.first().map(Vec::len).unwrap_or(0);
        if tau == 0 {
            return Err(Error::Dimension("pilot book needs tau >= 1 and K >= 1".into()));
        }
        let mut normalized = Vec::with_capacity(columns.len());
        for (k, col) in columns.into_iter().enumerate() {
            if col.len() != tau {
                return Err(Error::Dimension(format!(
                    "pilot {k} has length {}, expected {tau}",
                    col.len()
                )));
            }
            let n = col.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
            if !positive_finite(n) {
                return Err(Error::NonFiniteInput(format!("pilot {k} has zero or non-finite norm")));
            }
            normalized.push(col.into_iter().map(|z| z / n).collect::<Vec<_>>());
        }
        let k = normalized.len();
        let mut gram_abs2 = Mat::zeros(k, k);
        for i in 0..k {
            gram_abs2[(i, i)] = T::one();
            for j in 0..i {
                let g = inner(&normalized[i], &normalized[j]).norm_sqr().min(T::one());
                gram_abs2[(i, j)] = g;
                gram_abs2[(j, i)] = g;
            }
        }
        Ok(PilotBook {
            tau,
            columns: normalized,
            gram_abs2,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn users(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &[Complex<T>] {
        &self.columns[k]
    }

    /// `phi_i^H phi_k`.
    pub fn inner(&self, i: usize, k: usize) -> Complex<T> {
        inner(&self.columns[i], &self.columns[k])
    }

    /// Matrix of `|phi_k^H phi_k'|^2`.
    pub fn gram_abs2(&self) -> &Mat<T> {
        &self.gram_abs2
    }

    /// Debug dump: one row per (user, symbol) with real and imaginary parts.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user,symbol,re,im")?;
        for (k, col) in self.columns.iter().enumerate() {
            for (s, z) in col.iter().enumerate() {
                writeln!(w, "{k},{s},{},{}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

fn inner<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter()
        .zip(b)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

/// Draws a pilot book of `users` sequences of length `tau`.
pub fn generate_pilots<T: Scalar, R: Rng + ?Sized>(
    users: usize,
    tau: usize,
    mode: PilotMode,
    rng: &mut R,
) -> Result<PilotBook<T>> {
    if tau == 0 || users == 0 {
        return Err(Error::Dimension("pilot book needs tau >= 1 and K >= 1".into()));
    }
    let columns = match mode {
        PilotMode::OrthogonalIfPossible => {
            if tau < users {
                return Err(Error::OrthogonalImpossible { tau, users });
            }
            (0..users)
                .map(|k| {
                    (0..tau)
                        .map(|s| {
                            let v = if s == k { T::one() } else { T::zero() };
                            Complex::new(v, T::zero())
                        })
                        .collect()
                })
                .collect()
        }
        PilotMode::RandomUnitNorm => (0..users)
            .map(|_| {
                (0..tau)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(T::lit(re), T::lit(im))
                    })
                    .collect()
            })
            .collect(),
    };
    PilotBook::from_columns(columns)
}

/// Channel-estimation statistics of one drop and the per-user vectors that
/// the closed-form rate is built from.
///
/// Vectors indexed by AP are laid out contiguously per user (or per user
/// pair), so `gamma_k(k)`, `lambda(k, k')` and `upsilon(k, k')` are slices of
/// length M.
#[derive(Clone, Debug)]
pub struct EstimationStats<T> {
    aps: usize,
    users: usize,
    tau: usize,
    p_p: T,
    beta: Mat<T>,
    c: Mat<T>,
    gamma: Mat<T>,
    gram_abs2: Mat<T>,
    gamma_by_user: Vec<T>,
    lambda: Vec<T>,
    upsilon: Vec<T>,
}

/// MMSE estimation statistics:
/// `c_mk = sqrt(tau p_p) beta_mk / (tau p_p sum_k' beta_mk' |phi_k'^H phi_k|^2 + 1)` and
/// `gamma_mk = sqrt(tau p_p) beta_mk c_mk`.
pub fn estimation_stats<T: Scalar>(
    beta: &Mat<T>,
    pilots: &PilotBook<T>,
    p_p: T,
) -> Result<EstimationStats<T>> {
    let (m_aps, k_users) = (beta.rows(), beta.cols());
    if pilots.users() != k_users {
        return Err(Error::Dimension(format!(
            "beta has {k_users} users, pilot book has {}",
            pilots.users()
        )));
    }
    if !positive_finite(p_p) {
        return Err(Error::NonFiniteInput(format!("pilot SNR {p_p} must be positive")));
    }
    if beta.as_slice().iter().any(|b| !positive_finite(*b)) {
        return Err(Error::NonFiniteInput("beta must be positive and finite".into()));
    }
    let tau = pilots.tau();
    let tau_pp = T::lit(tau as f64) * p_p;
    let sqrt_tau_pp = tau_pp.sqrt();
    let gram = pilots.gram_abs2();

    let c = Mat::from_fn(m_aps, k_users, |m, k| {
        let contamination: T = (0..k_users).map(|kp| beta[(m, kp)] * gram[(kp, k)]).sum();
        sqrt_tau_pp * beta[(m, k)] / (tau_pp * contamination + T::one())
    });
    let gamma = Mat::from_fn(m_aps, k_users, |m, k| sqrt_tau_pp * beta[(m, k)] * c[(m, k)]);

    let gamma_by_user: Vec<T> = (0..k_users)
        .flat_map(|k| (0..m_aps).map(move |m| (m, k)))
        .map(|(m, k)| gamma[(m, k)])
        .collect();
    let mut lambda = Vec::with_capacity(k_users * k_users * m_aps);
    let mut upsilon = Vec::with_capacity(k_users * k_users * m_aps);
    for k in 0..k_users {
        for kp in 0..k_users {
            for m in 0..m_aps {
                lambda.push(if kp == k {
                    gamma[(m, k)]
                } else {
                    gamma[(m, k)] * beta[(m, kp)] / beta[(m, k)]
                });
                upsilon.push(beta[(m, kp)] * gamma[(m, k)]);
            }
        }
    }

    Ok(EstimationStats {
        aps: m_aps,
        users: k_users,
        tau,
        p_p,
        beta: beta.clone(),
        c,
        gamma,
        gram_abs2: gram.clone(),
        gamma_by_user,
        lambda,
        upsilon,
    })
}

impl<T: Scalar> EstimationStats<T> {
    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn pilot_snr(&self) -> T {
        self.p_p
    }

    pub fn beta(&self) -> &Mat<T> {
        &self.beta
    }

    pub fn c(&self) -> &Mat<T> {
        &self.c
    }

    pub fn gamma(&self) -> &Mat<T> {
        &self.gamma
    }

    /// `|phi_k^H phi_k'|^2`.
    pub fn pilot_overlap(&self, k: usize, kp: usize) -> T {
        self.gram_abs2[(k, kp)]
    }

    /// `Gamma_k = [gamma_1k, ..., gamma_Mk]`; also the diagonal of `R_k`.
    pub fn gamma_k(&self, k: usize) -> &[T] {
        &self.gamma_by_user[k * self.aps..(k + 1) * self.aps]
    }

    /// `Lambda_kk'` with entries `gamma_mk beta_mk' / beta_mk`.
    pub fn lambda(&self, k: usize, kp: usize) -> &[T] {
        let off = (k * self.users + kp) * self.aps;
        &self.lambda[off..off + self.aps]
    }

    /// Diagonal of `Upsilon_kk'`: entries `beta_mk' gamma_mk`.
    pub fn upsilon(&self, k: usize, kp: usize) -> &[T] {
        let off = (k * self.users + kp) * self.aps;
        &self.upsilon[off..off + self.aps]
    }
}
