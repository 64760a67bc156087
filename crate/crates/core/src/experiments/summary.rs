//! Ensemble statistics over drop records.

use serde::{Deserialize, Serialize};

use super::DropRecord;
use crate::error::{Error, Result};
use crate::power_control::PowerStatus;

pub const PERCENTILE_CONVENTION: &str =
    "linear interpolation between order statistics: x[floor(h)] + (h - floor(h)) (x[ceil(h)] - x[floor(h)]), h = (n - 1) p";

/// Percentile `p` in `[0, 1]` of ascending `sorted` data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p5: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Percentiles {
            p5: percentile(&v, 0.05),
            p10: percentile(&v, 0.10),
            p50: percentile(&v, 0.50),
            p90: percentile(&v, 0.90),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_drops: usize,
    pub infeasible_fraction: f64,
    pub mean_iterations: f64,
    pub mean_wall_time_s: f64,
    /// Per-drop minimum NRTU rate (bit/s/Hz). The 10th percentile is the
    /// rate reached on 90% of drops.
    pub min_nrtu_rate: Percentiles,
    pub all_user_rate: Percentiles,
    /// Balanced SINR over drops that reached it.
    pub t_star: Option<Percentiles>,
    pub percentile_convention: String,
}

pub fn summarize(records: &[DropRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = records.len() as f64;
    let min_rates: Vec<f64> = records.iter().map(|r| r.min_nrtu_rate).collect();
    let all_rates: Vec<f64> = records.iter().flat_map(|r| r.per_user_rate.iter().copied()).collect();
    let t: Vec<f64> = records.iter().filter_map(|r| r.t_star).collect();
    Ok(Summary {
        n_drops: records.len(),
        infeasible_fraction: records
            .iter()
            .filter(|r| r.status == PowerStatus::InfeasibleRtuTargets)
            .count() as f64
            / n,
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        mean_wall_time_s: records.iter().map(|r| r.wall_time_s).sum::<f64>() / n,
        min_nrtu_rate: Percentiles::of(&min_rates),
        all_user_rate: Percentiles::of(&all_rates),
        t_star: (!t.is_empty()).then(|| Percentiles::of(&t)),
        percentile_convention: PERCENTILE_CONVENTION.to_string(),
    })
}
