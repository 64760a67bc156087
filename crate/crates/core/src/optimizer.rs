//! Alternating receiver design / power allocation for the mixed-QoS problem.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pilots::EstimationStats;
use crate::power_control::{linearize, solve_power, solve_power_from, PowerSolveResult, PowerStatus};
use crate::rate_model::{build_models, rate_from_sinr, PowerAllocation, ReceiverWeights};
use crate::receiver_design::design_all;
use crate::scalar::Scalar;
use crate::scenario::{normalized_snrs, ScenarioConfig, SolverTolerances};

/// Everything the optimizer needs besides the estimation statistics.
#[derive(Clone, Debug)]
pub struct Problem<T> {
    pub antennas: usize,
    /// Data SNR.
    pub rho: T,
    /// Targets of users `0..rtu_targets.len()`.
    pub rtu_targets: Vec<T>,
    /// Power caps in units of the data power.
    pub p_max: Vec<T>,
    pub tol: SolverTolerances,
}

impl<T: Scalar> Problem<T> {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (_, rho) = normalized_snrs(config);
        Ok(Problem {
            antennas: config.antennas,
            rho: T::lit(rho),
            rtu_targets: config.sinr_targets.iter().map(|t| T::lit(*t)).collect(),
            p_max: vec![T::lit(config.p_max_normalized()); config.users],
            tol: config.solver,
        })
    }

    fn check(&self, stats: &EstimationStats<T>) -> Result<()> {
        if self.p_max.len() != stats.users() || self.rtu_targets.len() > stats.users() {
            return Err(Error::Dimension(format!(
                "problem has {} caps / {} targets for {} users",
                self.p_max.len(),
                self.rtu_targets.len(),
                stats.users()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Solution<T> {
    pub status: PowerStatus,
    pub weights: ReceiverWeights<T>,
    pub q: PowerAllocation<T>,
    pub t_star: Option<T>,
    /// All zeros when infeasible.
    pub per_user_sinr: Vec<T>,
    pub per_user_rate: Vec<T>,
    /// Balanced SINR after each outer iteration.
    pub trace: Vec<T>,
    pub iterations: usize,
    pub hit_iteration_cap: bool,
    /// The first power solve was infeasible with the optimal receivers and
    /// the uniform receivers were used to start instead.
    pub uniform_restart: bool,
}

impl<T: Scalar> Solution<T> {
    fn from_power(
        weights: ReceiverWeights<T>,
        res: PowerSolveResult<T>,
        trace: Vec<T>,
        iterations: usize,
    ) -> Self {
        let infeasible = res.status == PowerStatus::InfeasibleRtuTargets;
        let users = res.per_user_sinr.len();
        let per_user_sinr = if infeasible {
            vec![T::zero(); users]
        } else {
            res.per_user_sinr
        };
        Solution {
            status: res.status,
            weights,
            q: res.q,
            t_star: res.t_star,
            per_user_rate: per_user_sinr.iter().map(|s| rate_from_sinr(*s)).collect(),
            per_user_sinr,
            trace,
            iterations,
            hit_iteration_cap: false,
            uniform_restart: false,
        }
    }

    /// Smallest rate among non-real-time users (all users if there are none).
    pub fn min_nrtu_rate(&self, rtus: usize) -> T {
        let rates = if rtus < self.per_user_rate.len() {
            &self.per_user_rate[rtus..]
        } else {
            &self.per_user_rate[..]
        };
        rates.iter().copied().fold(T::infinity(), T::min)
    }
}

/// Alternates optimal receivers at the current powers with the power
/// subproblem at those receivers, starting from full power, until the
/// balanced SINR settles.
pub fn run<T: Scalar>(stats: &EstimationStats<T>, problem: &Problem<T>) -> Result<Solution<T>> {
    problem.check(stats)?;
    let k1 = problem.rtu_targets.len();
    let tol = &problem.tol;
    let conv_tol = T::lit(tol.conv_tol);
    let p_scale = problem.p_max.iter().copied().fold(T::zero(), T::max);

    let mut q = PowerAllocation::full(&problem.p_max);
    let mut trace = Vec::new();
    let mut uniform_restart = false;
    let mut current: Option<(ReceiverWeights<T>, PowerSolveResult<T>)> = None;
    let mut hit_cap = true;
    let mut iterations = 0;

    for iter in 1..=tol.max_outer_iters {
        iterations = iter;
        let models = build_models(stats, &q, problem.antennas, problem.rho)?;
        let mut weights = design_all(&models)?.weights;
        let mut forms = linearize(&weights, stats, problem.antennas, problem.rho)?;
        // The previous powers stay feasible under the new receivers, with
        // every SINR at least as large, so their NRTU floor is a valid start.
        let floor = (iter > 1 && k1 < stats.users()).then(|| {
            forms[k1..]
                .iter()
                .map(|f| f.sinr_at(&q.0))
                .fold(T::infinity(), T::min)
        });
        let mut res = solve_power_from(&forms, &problem.rtu_targets, &problem.p_max, tol, floor);

        if res.status == PowerStatus::InfeasibleRtuTargets {
            if iter == 1 {
                let uniform = ReceiverWeights::uniform(stats.aps(), stats.users());
                let uforms = linearize(&uniform, stats, problem.antennas, problem.rho)?;
                let ures = solve_power(&uforms, &problem.rtu_targets, &problem.p_max, tol);
                if ures.status != PowerStatus::InfeasibleRtuTargets {
                    weights = uniform;
                    forms = uforms;
                    res = ures;
                    uniform_restart = true;
                }
            }
            if res.status == PowerStatus::InfeasibleRtuTargets {
                let mut sol = Solution::from_power(weights, res, trace, iter);
                sol.uniform_restart = uniform_restart;
                return Ok(sol);
            }
        }
        drop(forms);

        let dq = res
            .q
            .0
            .iter()
            .zip(&q.0)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max);
        let mut converged = match res.t_star {
            Some(t) => {
                let settled = trace
                    .last()
                    .is_some_and(|prev: &T| (t - *prev).abs() <= conv_tol * t.abs());
                trace.push(t);
                settled || dq <= T::lit(1e-12) * p_scale
            }
            None => dq <= conv_tol * p_scale,
        };
        if uniform_restart && iter == 1 {
            converged = false;
        }
        q = res.q.clone();
        current = Some((weights, res));
        if converged {
            hit_cap = false;
            break;
        }
    }

    let (weights, res) = current.expect("at least one outer iteration");
    if hit_cap {
        log::warn!("alternating optimization hit the {} iteration cap", tol.max_outer_iters);
    }
    let mut sol = Solution::from_power(weights, res, trace, iterations);
    sol.hit_iteration_cap = hit_cap;
    sol.uniform_restart = uniform_restart;
    Ok(sol)
}

/// Unweighted combining (`u_mk` all equal) followed by a single power solve.
pub fn run_benchmark_u1<T: Scalar>(stats: &EstimationStats<T>, problem: &Problem<T>) -> Result<Solution<T>> {
    problem.check(stats)?;
    let weights = ReceiverWeights::uniform(stats.aps(), stats.users());
    let forms = linearize(&weights, stats, problem.antennas, problem.rho)?;
    let res = solve_power(&forms, &problem.rtu_targets, &problem.p_max, &problem.tol);
    let trace = res.t_star.into_iter().collect();
    Ok(Solution::from_power(weights, res, trace, 1))
}
