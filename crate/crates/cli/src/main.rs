use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use covert_ma::bsum::{run_bsum, SolverConfig};
use covert_ma::channel::{watts_to_dbm, Scenario, SystemConfig};
use covert_ma::covertness::{covert_power_budget, min_detection_error, warden_received_power};
use covert_ma::experiment::{
    aggregate, read_records_file, resolve_threads, run_sweep, write_outputs, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "covert-ma",
    version,
    about = "Movable-antenna covert beamforming experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: $COVERT_MA_THREADS, then all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-check power, spacing and covertness of every row in a records file.
    Verify {
        #[arg(long)]
        record: PathBuf,
    },
    /// Solve one default scenario and print the sum-rate trace.
    Demo {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Exit status: 0 success, 1 configuration or input error, 2 flagged trials
/// or failed verification.
enum Outcome {
    Clean,
    Flagged,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Flagged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Run {
            config,
            trials,
            seed,
            out,
            threads,
        } => {
            let mut cfg =
                ExperimentConfig::from_file(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let threads = resolve_threads(threads)?;
            let records = run_sweep(&cfg, threads)?;
            write_outputs(&cfg.output_dir, cfg.sweep.kind, &records)
                .with_context(|| format!("writing {}", cfg.output_dir.display()))?;

            println!(
                "{:<8} {:>10} {:>6} {:>10} {:>10}",
                "scheme",
                cfg.sweep.kind.name(),
                "n",
                "mean",
                "std"
            );
            for row in aggregate(&records) {
                println!(
                    "{:<8} {:>10} {:>6} {:>10.4} {:>10.4}",
                    row.scheme.name(),
                    row.sweep_value,
                    row.count,
                    row.mean,
                    row.std
                );
            }
            let flagged = records.iter().filter(|r| r.flagged).count();
            println!("{} records written to {}", records.len(), cfg.output_dir.display());
            if flagged > 0 {
                eprintln!("{flagged} trial(s) flagged; see the diagnostic column");
                return Ok(Outcome::Flagged);
            }
            Ok(Outcome::Clean)
        }
        Command::Verify { record } => {
            let records = read_records_file(&record).with_context(|| format!("reading {}", record.display()))?;
            let mut failures = 0;
            for r in &records {
                if let Err(problems) = r.verify() {
                    failures += 1;
                    for p in problems {
                        println!(
                            "{} value={} trial={}: {p}",
                            r.scheme.name(),
                            r.sweep_value,
                            r.trial_index
                        );
                    }
                }
            }
            println!("{} of {} records pass", records.len() - failures, records.len());
            Ok(if failures == 0 {
                Outcome::Clean
            } else {
                Outcome::Flagged
            })
        }
        Command::Demo { seed } => {
            let cfg = SystemConfig::defaults();
            let scenario = Scenario::sample(&cfg, seed)?;
            let state = run_bsum(&scenario, &SolverConfig::default(), seed)?;
            println!(
                "K={} N={} A={} m p_max={} dBm",
                cfg.users,
                cfg.antennas,
                cfg.region_size,
                watts_to_dbm(cfg.max_power)
            );
            for (i, rate) in state.sum_rate_trace.iter().enumerate() {
                println!("iter {i:>3}  sum rate {rate:.6} bit/s/Hz");
            }
            for (n, p) in state.array.positions.iter().enumerate() {
                println!("antenna {n}: ({:.5}, {:.5}) m", p.x, p.y);
            }
            let warden = warden_received_power(&scenario.channels(&state.array).warden, &state.beamformer);
            let p_th = covert_power_budget(cfg.warden_noise_power, cfg.noise_uncertainty, cfg.covertness_level).p_th;
            let xi = min_detection_error(warden, cfg.warden_noise_power, cfg.noise_uncertainty)?;
            println!("warden power {warden:.4e} W (cap {p_th:.4e} W), detection error {xi:.6}");
            Ok(if state.flagged {
                Outcome::Flagged
            } else {
                Outcome::Clean
            })
        }
    }
}
