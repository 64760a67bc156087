//! Drop ensembles: per-drop optimization, the all-ones receiver benchmark and
//! plot-ready artifacts (CSV, JSON lines, CDFs, convergence traces).
//!
//! Drops run in parallel but every file is written by one collector in
//! drop order, so identical specs give byte-identical CSV output. Wall time
//! only appears in the JSON-lines records and the summary.

mod config;
mod summary;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{apply_override, ExperimentError, ExperimentSpec, OutputSelection};
pub use summary::{percentile, summarize, Percentiles, Summary, PERCENTILE_CONVENTION};

use crate::error::{Error, Result};
use crate::mc_validation::{validate_theorem1, McSettings, ValidationInstance, ValidationReport, ValidationTolerances};
use crate::optimizer::{run, run_benchmark_u1, Problem, Solution};
use crate::pilots::{estimation_stats, generate_pilots, EstimationStats, PilotBook};
use crate::power_control::PowerStatus;
use crate::rate_model::{PowerAllocation, ReceiverWeights};
use crate::scenario::{
    drop_rng, generate_geometry, large_scale_fading, noise_power, normalized_snrs, LargeScaleModel, ScenarioConfig,
};

/// Bumped whenever a CSV or record layout changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Everything random about one drop.
#[derive(Clone, Debug)]
pub struct DropInstance {
    pub index: usize,
    pub large_scale: LargeScaleModel<f64>,
    pub pilots: PilotBook<f64>,
    pub stats: EstimationStats<f64>,
}

/// Geometry, shadowing and pilots of drop `index`, drawn in that order from
/// the drop's own stream.
pub fn generate_drop(config: &ScenarioConfig, index: usize) -> Result<DropInstance> {
    let mut rng = drop_rng(config.seed, index as u64);
    let geometry = generate_geometry(config, &mut rng);
    let large_scale = large_scale_fading(geometry, config, &mut rng)?;
    let pilots = generate_pilots(config.users, config.tau, config.pilot_mode, &mut rng)?;
    let (p_p, _) = normalized_snrs(config);
    let stats = estimation_stats(&large_scale.beta, &pilots, p_p)?;
    Ok(DropInstance {
        index,
        large_scale,
        pilots,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub drop_index: usize,
    pub status: PowerStatus,
    pub t_star: Option<f64>,
    /// Zero for every user of an infeasible drop.
    pub per_user_sinr: Vec<f64>,
    /// `log2(1 + sinr)`.
    pub per_user_rate: Vec<f64>,
    /// Transmit power as a fraction of the cap.
    pub q: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub min_nrtu_rate: f64,
    pub trace: Vec<f64>,
    pub uniform_restart: bool,
    pub hit_iteration_cap: bool,
}

impl DropRecord {
    pub fn from_solution(index: usize, sol: &Solution<f64>, problem: &Problem<f64>, wall_time_s: f64) -> Self {
        DropRecord {
            drop_index: index,
            status: sol.status,
            t_star: sol.t_star,
            per_user_sinr: sol.per_user_sinr.clone(),
            per_user_rate: sol.per_user_rate.clone(),
            q: sol.q.0.iter().zip(&problem.p_max).map(|(q, p)| q / p).collect(),
            iterations: sol.iterations,
            wall_time_s,
            min_nrtu_rate: sol.min_nrtu_rate(problem.rtu_targets.len()),
            trace: sol.trace.clone(),
            uniform_restart: sol.uniform_restart,
            hit_iteration_cap: sol.hit_iteration_cap,
        }
    }
}

pub fn status_label(s: PowerStatus) -> &'static str {
    match s {
        PowerStatus::Optimal => "optimal",
        PowerStatus::InfeasibleRtuTargets => "infeasible",
        PowerStatus::TargetsOnly => "targets_only",
    }
}

/// Proposed and (optionally) benchmark records of one drop.
#[derive(Clone, Debug)]
pub struct DropOutcome {
    pub proposed: DropRecord,
    pub benchmark: Option<DropRecord>,
}

pub fn run_drop(config: &ScenarioConfig, problem: &Problem<f64>, index: usize, benchmark: bool) -> Result<DropOutcome> {
    let drop = generate_drop(config, index)?;
    let start = Instant::now();
    let sol = run(&drop.stats, problem)?;
    let proposed = DropRecord::from_solution(index, &sol, problem, start.elapsed().as_secs_f64());
    let benchmark = if benchmark {
        let start = Instant::now();
        let b = run_benchmark_u1(&drop.stats, problem)?;
        Some(DropRecord::from_solution(index, &b, problem, start.elapsed().as_secs_f64()))
    } else {
        None
    };
    log::debug!(
        "drop {index}: {} t*={:?} in {} iterations",
        status_label(proposed.status),
        proposed.t_star,
        proposed.iterations
    );
    Ok(DropOutcome { proposed, benchmark })
}

/// Solves every drop of `spec` in parallel; results are in drop order.
pub fn run_drops(spec: &ExperimentSpec) -> std::result::Result<Vec<DropOutcome>, ExperimentError> {
    spec.validate()?;
    let problem = Problem::from_config(&spec.scenario)?;
    let results: Vec<_> = (0..spec.n_drops)
        .into_par_iter()
        .map(|i| run_drop(&spec.scenario, &problem, i, spec.benchmark).map_err(|source| ExperimentError::Drop { drop: i, source }))
        .collect();
    results.into_iter().collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub proposed: Summary,
    pub benchmark: Option<Summary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<DropRecord>,
    pub benchmark: Option<Vec<DropRecord>>,
    pub summary: SummaryFile,
    pub validation: Option<ValidationReport>,
    pub output_dir: PathBuf,
}

/// Runs the ensemble and writes all selected artifacts under `spec.output_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> std::result::Result<ExperimentOutcome, ExperimentError> {
    spec.validate()?;
    let dir = spec.output_dir.clone();
    fs::create_dir_all(&dir).map_err(ExperimentError::io(&dir, None))?;
    let outcomes = run_drops(spec)?;
    let records: Vec<DropRecord> = outcomes.iter().map(|o| o.proposed.clone()).collect();
    let bench: Option<Vec<DropRecord>> = spec
        .benchmark
        .then(|| outcomes.iter().filter_map(|o| o.benchmark.clone()).collect());
    let users = spec.scenario.users;

    write_drops_csv(&dir.join("drops.csv"), &records, users)?;
    write_jsonl(&dir.join("drops.jsonl"), &records)?;
    if let Some(b) = &bench {
        write_drops_csv(&dir.join("benchmark_drops.csv"), b, users)?;
        write_jsonl(&dir.join("benchmark_drops.jsonl"), b)?;
    }
    if spec.outputs.cdf {
        write_cdfs(&dir, "", &records)?;
        if let Some(b) = &bench {
            write_cdfs(&dir, "benchmark_", b)?;
        }
    }
    if spec.outputs.convergence {
        let cdir = dir.join("convergence");
        fs::create_dir_all(&cdir).map_err(ExperimentError::io(&cdir, None))?;
        for r in &records {
            write_trace(&cdir.join(format!("drop_{:04}.csv", r.drop_index)), r)?;
        }
    }
    if spec.outputs.table {
        write_table(&dir.join("table.csv"), &records, &spec.scenario)?;
    }
    let validation = if spec.outputs.validation {
        let path = dir.join("theorem1_validation.json");
        match write_validation(&path, spec) {
            Ok(report) => Some(report),
            Err(ExperimentError::Drop {
                source: Error::InsufficientSamples(msg),
                ..
            }) => {
                log::warn!("closed-form SINR check skipped: {msg}");
                write_json(&path, &serde_json::json!({ "error": msg }))?;
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let summary = SummaryFile {
        proposed: summarize(&records)?,
        benchmark: bench.as_deref().map(summarize).transpose()?,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("metadata.json"), &metadata(spec))?;
    log::info!(
        "{} drops, infeasible fraction {:.3}, p10 min NRTU rate {:.4}",
        records.len(),
        summary.proposed.infeasible_fraction,
        summary.proposed.min_nrtu_rate.p10
    );
    Ok(ExperimentOutcome {
        records,
        benchmark: bench,
        summary,
        validation,
        output_dir: dir,
    })
}

/// Recomputes `summary.json` from the JSON-lines records in `dir`.
pub fn summarize_dir(dir: &Path) -> std::result::Result<SummaryFile, ExperimentError> {
    let records = read_jsonl(&dir.join("drops.jsonl"))?;
    let bench_path = dir.join("benchmark_drops.jsonl");
    let bench = if bench_path.exists() {
        Some(read_jsonl(&bench_path)?)
    } else {
        None
    };
    let summary = SummaryFile {
        proposed: summarize(&records)?,
        benchmark: bench.as_deref().map(summarize).transpose()?,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn create(path: &Path, drop: Option<usize>) -> std::result::Result<BufWriter<File>, ExperimentError> {
    File::create(path).map(BufWriter::new).map_err(ExperimentError::io(path, drop))
}

fn csv_err(path: &Path, drop: Option<usize>) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::io(path, drop)(std::io::Error::other(e))
}

fn write_drops_csv(path: &Path, records: &[DropRecord], users: usize) -> std::result::Result<(), ExperimentError> {
    let mut out = create(path, None)?;
    writeln!(
        out,
        "# schema {SCHEMA_VERSION}: drop,status,t_star,iters, sinr_k, rate_k (bit/s/Hz), power_k (fraction of cap) for k = 1..{users}"
    )
    .map_err(ExperimentError::io(path, None))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["drop".to_string(), "status".into(), "t_star".into(), "iters".into()];
    for prefix in ["sinr", "rate", "power"] {
        header.extend((1..=users).map(|k| format!("{prefix}_{k}")));
    }
    w.write_record(&header).map_err(csv_err(path, None))?;
    for r in records {
        let mut row = vec![
            r.drop_index.to_string(),
            status_label(r.status).to_string(),
            r.t_star.map(fmt).unwrap_or_default(),
            r.iterations.to_string(),
        ];
        row.extend(r.per_user_sinr.iter().map(|x| fmt(*x)));
        row.extend(r.per_user_rate.iter().map(|x| fmt(*x)));
        row.extend(r.q.iter().map(|x| fmt(*x)));
        w.write_record(&row).map_err(csv_err(path, Some(r.drop_index)))?;
    }
    w.flush().map_err(ExperimentError::io(path, None))
}

fn write_jsonl(path: &Path, records: &[DropRecord]) -> std::result::Result<(), ExperimentError> {
    let mut out = create(path, None)?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(ExperimentError::io(path, Some(r.drop_index)))?;
    }
    out.flush().map_err(ExperimentError::io(path, None))
}

fn read_jsonl(path: &Path) -> std::result::Result<Vec<DropRecord>, ExperimentError> {
    let file = File::open(path).map_err(ExperimentError::io(path, None))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(ExperimentError::io(path, None))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| {
            ExperimentError::io(path, None)(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            ))
        })?;
        records.push(r);
    }
    Ok(records)
}

/// Ascending values with empirical CDF `i / n`.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

fn write_cdf(path: &Path, values: &[f64]) -> std::result::Result<(), ExperimentError> {
    let mut out = create(path, None)?;
    let io = |e| ExperimentError::io(path, None)(e);
    writeln!(out, "# empirical CDF: fraction of samples <= rate; infeasible drops count as rate 0").map_err(io)?;
    writeln!(out, "rate,cdf").map_err(io)?;
    for (x, p) in empirical_cdf(values) {
        writeln!(out, "{},{}", fmt(x), fmt(p)).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn write_cdfs(dir: &Path, prefix: &str, records: &[DropRecord]) -> std::result::Result<(), ExperimentError> {
    let mins: Vec<f64> = records.iter().map(|r| r.min_nrtu_rate).collect();
    let all: Vec<f64> = records.iter().flat_map(|r| r.per_user_rate.iter().copied()).collect();
    write_cdf(&dir.join(format!("{prefix}cdf_min_nrtu_rate.csv")), &mins)?;
    write_cdf(&dir.join(format!("{prefix}cdf_all_user_rate.csv")), &all)
}

fn write_trace(path: &Path, r: &DropRecord) -> std::result::Result<(), ExperimentError> {
    let mut out = create(path, Some(r.drop_index))?;
    let io = |e| ExperimentError::io(path, Some(r.drop_index))(e);
    writeln!(out, "iteration,t_star").map_err(io)?;
    for (i, t) in r.trace.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, fmt(*t)).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn write_table(path: &Path, records: &[DropRecord], config: &ScenarioConfig) -> std::result::Result<(), ExperimentError> {
    let mut out = create(path, None)?;
    writeln!(
        out,
        "# achieved SINR and power allocation (fraction of cap) per drop; RTU targets {:?}; an infeasible drop shows SINR 0",
        config.sinr_targets
    )
    .map_err(ExperimentError::io(path, None))?;
    let mut w = csv::Writer::from_writer(out);
    let k = config.users;
    let mut header = vec!["drop".to_string()];
    header.extend((1..=k).map(|i| format!("sinr_{i}")));
    header.extend((1..=k).map(|i| format!("power_{i}")));
    w.write_record(&header).map_err(csv_err(path, None))?;
    for r in records {
        let mut row = vec![r.drop_index.to_string()];
        row.extend(r.per_user_sinr.iter().map(|x| format!("{x:.4}")));
        row.extend(r.q.iter().map(|x| format!("{x:.4}")));
        w.write_record(&row).map_err(csv_err(path, Some(r.drop_index)))?;
    }
    w.flush().map_err(ExperimentError::io(path, None))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> std::result::Result<(), ExperimentError> {
    let mut out = create(path, None)?;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    writeln!(out, "{text}").map_err(ExperimentError::io(path, None))?;
    out.flush().map_err(ExperimentError::io(path, None))
}

/// Checks the closed-form SINR of drop 0 at its optimized operating point
/// (full power and uniform receivers if the drop is infeasible).
fn write_validation(path: &Path, spec: &ExperimentSpec) -> std::result::Result<ValidationReport, ExperimentError> {
    let cfg = &spec.scenario;
    let problem = Problem::from_config(cfg)?;
    let drop_err = |source| ExperimentError::Drop { drop: 0, source };
    let drop = generate_drop(cfg, 0).map_err(drop_err)?;
    let sol = run(&drop.stats, &problem).map_err(drop_err)?;
    let (weights, q) = if sol.status == PowerStatus::InfeasibleRtuTargets {
        (ReceiverWeights::uniform(cfg.aps, cfg.users), PowerAllocation::full(&problem.p_max))
    } else {
        (sol.weights, sol.q)
    };
    let instance = ValidationInstance {
        stats: drop.stats,
        pilots: drop.pilots,
        weights,
        q,
        antennas: cfg.antennas,
        rho: problem.rho,
    };
    let settings = McSettings {
        n_samples: spec.validation_samples,
        seed: cfg.seed,
        ..McSettings::default()
    };
    let report = validate_theorem1(&instance, ValidationTolerances::default(), &settings).map_err(drop_err)?;
    if !report.pass {
        log::warn!("closed-form SINR check failed on drop 0; see {}", path.display());
    }
    write_json(path, &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema_version: u32,
    crate_version: &'static str,
    n_drops: usize,
    benchmark: bool,
    scenario: &'a ScenarioConfig,
    noise_power_w: f64,
    pilot_snr: f64,
    data_snr: f64,
    p_max_normalized: f64,
    power_units: &'static str,
    min_nrtu_rate: &'static str,
    percentile_convention: &'static str,
}

fn metadata(spec: &ExperimentSpec) -> Metadata<'_> {
    let (p_p, rho) = normalized_snrs(&spec.scenario);
    Metadata {
        schema_version: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION"),
        n_drops: spec.n_drops,
        benchmark: spec.benchmark,
        scenario: &spec.scenario,
        noise_power_w: noise_power(&spec.scenario),
        pilot_snr: p_p,
        data_snr: rho,
        p_max_normalized: spec.scenario.p_max_normalized(),
        power_units: "power_k columns are q_k / p_max",
        min_nrtu_rate: "smallest rate among non-real-time users (all users when every user has a target); its 10th percentile is the 90%-likely throughput",
        percentile_convention: PERCENTILE_CONVENTION,
    }
}
