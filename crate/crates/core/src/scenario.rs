//! Network drops: geometry, large-scale fading and link-budget constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{positive_finite, Scalar};

/// Boltzmann constant (J/K), at the precision used for the link budget.
pub const BOLTZMANN: f64 = 1.381e-23;

/// Distance-dependent path loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathLossModel {
    /// Three-slope model: 35 dB/decade beyond `d1_km`, 20 dB/decade between
    /// `d0_km` and `d1_km`, flat below `d0_km`, with a COST-231 Hata intercept.
    ThreeSlope {
        carrier_mhz: f64,
        ap_height_m: f64,
        user_height_m: f64,
        d0_km: f64,
        d1_km: f64,
    },
    /// `PL(d) = 10^(-ref_loss_db/10) * d_km^(-exponent)`.
    SimpleExponent { exponent: f64, ref_loss_db: f64 },
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel::ThreeSlope {
            carrier_mhz: 1900.0,
            ap_height_m: 15.0,
            user_height_m: 1.65,
            d0_km: 0.01,
            d1_km: 0.05,
        }
    }
}

impl PathLossModel {
    /// Path loss in dB (positive number) at distance `d_km`.
    pub fn loss_db(&self, d_km: f64) -> f64 {
        match *self {
            PathLossModel::ThreeSlope {
                carrier_mhz,
                ap_height_m,
                user_height_m,
                d0_km,
                d1_km,
            } => {
                let lf = carrier_mhz.log10();
                let intercept = 46.3 + 33.9 * lf - 13.82 * ap_height_m.log10()
                    - (1.1 * lf - 0.7) * user_height_m
                    + (1.56 * lf - 0.8);
                if d_km > d1_km {
                    intercept + 35.0 * d_km.log10()
                } else if d_km > d0_km {
                    intercept + 15.0 * d1_km.log10() + 20.0 * d_km.log10()
                } else {
                    intercept + 15.0 * d1_km.log10() + 20.0 * d0_km.log10()
                }
            }
            PathLossModel::SimpleExponent {
                exponent,
                ref_loss_db,
            } => ref_loss_db + 10.0 * exponent * d_km.log10(),
        }
    }

    /// Linear power gain `PL(d)`.
    pub fn gain(&self, d_km: f64) -> f64 {
        10f64.powf(-self.loss_db(d_km) / 10.0)
    }
}

/// How pilot sequences are drawn for each drop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotMode {
    /// i.i.d. complex Gaussian columns normalized to unit norm.
    #[default]
    RandomUnitNorm,
    /// Orthonormal columns; requires `tau >= K`.
    OrthogonalIfPossible,
}

/// Stopping rules of the power solver and the alternating optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverTolerances {
    /// Relative bisection tolerance on the balanced SINR.
    pub bisect_tol: f64,
    /// Absolute fixed-point tolerance on normalized powers.
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    /// Relative tolerance on successive balanced SINRs.
    pub conv_tol: f64,
    pub max_outer_iters: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances {
            bisect_tol: 1e-4,
            fp_tol: 1e-10,
            fp_max_iters: 10_000,
            conv_tol: 1e-3,
            max_outer_iters: 50,
        }
    }
}

/// Every scalar that defines one simulation setup.
///
/// Users `0..rtus` are real-time users with fixed SINR targets, the remaining
/// users share a max-min SINR objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub aps: usize,
    pub antennas: usize,
    pub users: usize,
    pub rtus: usize,
    pub tau: usize,
    pub side_km: f64,
    pub shadow_std_db: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub noise_temp_k: f64,
    pub pilot_power_mw: f64,
    pub data_power_mw: f64,
    /// Per-user power cap; defaults to `data_power_mw`.
    pub p_max_mw: Option<f64>,
    /// Linear SINR targets, one per real-time user.
    pub sinr_targets: Vec<f64>,
    pub pathloss: PathLossModel,
    pub wraparound: bool,
    pub min_distance_km: f64,
    pub pilot_mode: PilotMode,
    pub seed: u64,
    pub solver: SolverTolerances,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            aps: 15,
            antennas: 3,
            users: 6,
            rtus: 2,
            tau: 5,
            side_km: 1.0,
            shadow_std_db: 8.0,
            bandwidth_hz: 20e6,
            noise_figure_db: 9.0,
            noise_temp_k: 290.0,
            pilot_power_mw: 200.0,
            data_power_mw: 200.0,
            p_max_mw: None,
            sinr_targets: vec![2.3, 2.3],
            pathloss: PathLossModel::default(),
            wraparound: true,
            min_distance_km: 0.01,
            pilot_mode: PilotMode::RandomUnitNorm,
            seed: 1,
            solver: SolverTolerances::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.aps == 0 || self.antennas == 0 || self.users == 0 {
            return bad("aps, antennas and users must all be >= 1".into());
        }
        if self.tau == 0 {
            return bad("tau must be >= 1".into());
        }
        if self.rtus > self.users {
            return bad(format!("rtus = {} exceeds users = {}", self.rtus, self.users));
        }
        if self.sinr_targets.len() != self.rtus {
            return bad(format!(
                "expected {} sinr_targets, got {}",
                self.rtus,
                self.sinr_targets.len()
            ));
        }
        if let Some(t) = self.sinr_targets.iter().find(|t| !positive_finite(**t)) {
            return bad(format!("sinr target {t} must be positive and finite"));
        }
        let positive = [
            ("side_km", self.side_km),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_temp_k", self.noise_temp_k),
            ("pilot_power_mw", self.pilot_power_mw),
            ("data_power_mw", self.data_power_mw),
            ("p_max_mw", self.p_max_mw()),
            ("min_distance_km", self.min_distance_km),
        ];
        for (name, v) in positive {
            if !positive_finite(v) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.shadow_std_db.is_nan() || self.shadow_std_db < 0.0 {
            return bad("shadow_std_db must be >= 0".into());
        }
        if self.pilot_mode == PilotMode::OrthogonalIfPossible && self.tau < self.users {
            return bad(format!(
                "orthogonal pilots need tau >= users ({} < {})",
                self.tau, self.users
            ));
        }
        let s = &self.solver;
        if ![s.bisect_tol, s.fp_tol, s.conv_tol].into_iter().all(positive_finite) {
            return bad("solver tolerances must be positive".into());
        }
        if s.fp_max_iters == 0 || s.max_outer_iters == 0 {
            return bad("solver iteration caps must be >= 1".into());
        }
        Ok(())
    }

    pub fn p_max_mw(&self) -> f64 {
        self.p_max_mw.unwrap_or(self.data_power_mw)
    }

    /// Per-user power cap in units of the data power, which is how powers
    /// enter the SINR expressions.
    pub fn p_max_normalized(&self) -> f64 {
        self.p_max_mw() / self.data_power_mw
    }

    pub fn nrtus(&self) -> usize {
        self.users - self.rtus
    }
}

/// Thermal noise power in watts: `BW * k_B * T0 * 10^(NF/10)`.
pub fn noise_power(config: &ScenarioConfig) -> f64 {
    config.bandwidth_hz * BOLTZMANN * config.noise_temp_k * 10f64.powf(config.noise_figure_db / 10.0)
}

/// Pilot and data SNRs `(p_p, rho)`, i.e. transmit powers divided by the noise power.
pub fn normalized_snrs(config: &ScenarioConfig) -> (f64, f64) {
    let pn = noise_power(config);
    (config.pilot_power_mw * 1e-3 / pn, config.data_power_mw * 1e-3 / pn)
}

/// AP and user positions in km.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkGeometry {
    pub side_km: f64,
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
}

impl NetworkGeometry {
    /// Euclidean distance, or the torus distance when `wraparound` is set.
    pub fn distance(&self, ap: usize, user: usize, wraparound: bool) -> f64 {
        let a = self.ap_positions[ap];
        let u = self.user_positions[user];
        let mut d2 = 0.0;
        for axis in 0..2 {
            let mut d = (a[axis] - u[axis]).abs();
            if wraparound {
                d = d.min(self.side_km - d);
            }
            d2 += d * d;
        }
        d2.sqrt()
    }
}

/// Large-scale fading coefficients `beta[m, k]` of one drop.
#[derive(Clone, Debug)]
pub struct LargeScaleModel<T> {
    pub beta: Mat<T>,
    pub geometry: NetworkGeometry,
}

/// Generator for drop `drop_index`: an independent ChaCha stream per drop.
pub fn drop_rng(seed: u64, drop_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(drop_index);
    rng
}

/// Uniform i.i.d. placement of APs then users over the square.
pub fn generate_geometry<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> NetworkGeometry {
    let d = config.side_km;
    let point = |rng: &mut R| [rng.random::<f64>() * d, rng.random::<f64>() * d];
    let ap_positions = (0..config.aps).map(|_| point(rng)).collect();
    let user_positions = (0..config.users).map(|_| point(rng)).collect();
    NetworkGeometry {
        side_km: d,
        ap_positions,
        user_positions,
    }
}

/// `beta_mk = PL(d_mk) * 10^(sigma_sh z_mk / 10)` with `z_mk ~ N(0, 1)`.
///
/// Distances below `min_distance_km` are clamped.
pub fn large_scale_fading<T: Scalar, R: Rng + ?Sized>(
    geometry: NetworkGeometry,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<LargeScaleModel<T>> {
    let (m, k) = (geometry.ap_positions.len(), geometry.user_positions.len());
    if m != config.aps || k != config.users {
        return Err(Error::Dimension(format!(
            "geometry has {m} APs / {k} users, config expects {} / {}",
            config.aps, config.users
        )));
    }
    let beta = Mat::from_fn(m, k, |ap, user| {
        let d = geometry
            .distance(ap, user, config.wraparound)
            .max(config.min_distance_km);
        let z: f64 = rng.sample(StandardNormal);
        let b = config.pathloss.gain(d) * 10f64.powf(config.shadow_std_db * z / 10.0);
        T::lit(b)
    });
    if beta.as_slice().iter().any(|b| !positive_finite(*b)) {
        return Err(Error::NonFiniteInput(
            "large-scale coefficient underflowed or overflowed".into(),
        ));
    }
    Ok(LargeScaleModel { beta, geometry })
}
