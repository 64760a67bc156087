use std::path::PathBuf;
use std::process::ExitCode;

use cellfree::experiments::{run_experiment, summarize_dir, ExperimentError, ExperimentSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Uplink cell-free massive MIMO mixed-QoS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a drop ensemble and write CSV/JSON artifacts.
    Run {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        drops: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also solve every drop with all receiver weights set to one.
        #[arg(long)]
        benchmark: bool,
        /// Monte Carlo check of the closed-form SINR on drop 0.
        #[arg(long)]
        validate_theorem1: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override any config key, e.g. `--set scenario.aps=20`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Recompute summary.json from the records in a results directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            drops,
            seed,
            benchmark,
            validate_theorem1,
            out,
            set,
        } => {
            let mut spec = ExperimentSpec::from_file(&config, &set)?;
            if let Some(n) = drops {
                spec.n_drops = n;
            }
            if let Some(s) = seed {
                spec.scenario.seed = s;
            }
            spec.benchmark |= benchmark;
            spec.outputs.validation |= validate_theorem1;
            if let Some(dir) = out {
                spec.output_dir = dir;
            }
            let outcome = run_experiment(&spec)?;
            let p = &outcome.summary.proposed;
            println!(
                "{} drops -> {}: infeasible {:.1}%, min NRTU rate p10 {:.4} / p50 {:.4} bit/s/Hz",
                p.n_drops,
                outcome.output_dir.display(),
                100.0 * p.infeasible_fraction,
                p.min_nrtu_rate.p10,
                p.min_nrtu_rate.p50
            );
            if let Some(b) = &outcome.summary.benchmark {
                println!(
                    "benchmark: min NRTU rate p10 {:.4} / p50 {:.4} bit/s/Hz",
                    b.min_nrtu_rate.p10, b.min_nrtu_rate.p50
                );
            }
            if let Some(v) = &outcome.validation {
                println!("closed-form SINR check: {}", if v.pass { "PASS" } else { "FAIL" });
            }
        }
        Command::Summarize { input } => {
            let summary = summarize_dir(&input)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
