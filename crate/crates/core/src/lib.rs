//! Uplink cell-free massive MIMO with mixed quality of service.
//!
//! Real-time users (RTUs) must meet fixed SINR targets while the minimum SINR
//! of the remaining users is maximized under per-user power caps. The
//! optimizer alternates a closed-form receiver design (a rank-one generalized
//! eigenproblem) with a power allocation solved by bisection over the
//! balanced SINR and a monotone fixed-point feasibility check.
//!
//! The solver layer is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment driver uses. The
//! Monte Carlo oracle in [`mc_validation`] works in `f64` only.

pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mc_validation;
pub mod optimizer;
pub mod pilots;
pub mod power_control;
pub mod rate_model;
pub mod receiver_design;
pub mod scalar;
pub mod scenario;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = linalg::Mat<f64>;
pub type PilotBook64 = pilots::PilotBook<f64>;
pub type EstimationStats64 = pilots::EstimationStats<f64>;
pub type LargeScaleModel64 = scenario::LargeScaleModel<f64>;
pub type UserRateModel64 = rate_model::UserRateModel<f64>;
pub type PowerAllocation64 = rate_model::PowerAllocation<f64>;
pub type ReceiverWeights64 = rate_model::ReceiverWeights<f64>;
pub type SinrLinearForm64 = power_control::SinrLinearForm<f64>;
pub type PowerSolveResult64 = power_control::PowerSolveResult<f64>;
pub type Problem64 = optimizer::Problem<f64>;
pub type Solution64 = optimizer::Solution<f64>;

pub type EstimationStats32 = pilots::EstimationStats<f32>;
pub type Problem32 = optimizer::Problem<f32>;
pub type Solution32 = optimizer::Solution<f32>;
