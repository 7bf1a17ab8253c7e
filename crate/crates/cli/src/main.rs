//! `scalemix` command-line entry point.
//!
//! Exit codes: 0 on success, 1 for user or input errors, 2 for numerical
//! failures. Failures print a JSON error record on stderr and, when the
//! output directory exists, write it to `error.json` there.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scalemix::cli_io::{self, ErrorRecord};
use scalemix::Error;

#[derive(Parser, Debug)]
#[command(name = "scalemix", version, about = "Spatial extremes with spatially varying tail dependence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and its truth sidecar from a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to the configured station data.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write a checkpoint every this many iterations (0: only at the end).
        #[arg(long, default_value_t = 100)]
        checkpoint_every: usize,
    },
    /// Continue a fit from its checkpoint.
    Resume {
        #[arg(long)]
        dir: PathBuf,
        /// New total iteration count.
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long, default_value_t = 100)]
        checkpoint_every: usize,
    },
    /// Moving-window and pairwise tail-dependence tables for a data or fit directory.
    Diagnose {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Coverage of credible intervals over simulated datasets.
    Coverage {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Holdout predictive log-likelihood and QQ envelopes from a fit directory.
    Predict {
        #[arg(long)]
        dir: PathBuf,
        /// Holdout station table (defaults to the configured one).
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        max_draws: usize,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

impl Command {
    fn output_dir(&self) -> &Path {
        match self {
            Command::Simulate { out, .. } | Command::Fit { out, .. } | Command::Coverage { out, .. } => out,
            Command::Resume { dir, .. } | Command::Diagnose { dir } | Command::Predict { dir, .. } => dir,
        }
    }

    fn run(&self) -> scalemix::Result<()> {
        match self {
            Command::Simulate { config, out } => cli_io::simulate(config, out),
            Command::Fit { config, out, checkpoint_every } => {
                let s = cli_io::fit(config, out, *checkpoint_every)?;
                println!("fit: {} iterations, trace digest {}", s.iterations, s.trace_digest);
                Ok(())
            }
            Command::Resume { dir, n_iter, checkpoint_every } => {
                let s = cli_io::resume(dir, *n_iter, *checkpoint_every)?;
                println!("resume: {} iterations, trace digest {}", s.iterations, s.trace_digest);
                Ok(())
            }
            Command::Diagnose { dir } => cli_io::diagnose(dir).map(|_| ()),
            Command::Coverage { config, out } => {
                let r = cli_io::coverage(config, out)?;
                for row in &r.rows {
                    println!("{} @ {}: {}/{} covered", row.parameter, row.level, row.covered, row.n);
                }
                Ok(())
            }
            Command::Predict { dir, holdout, max_draws, replicates, seed } => {
                let p = cli_io::predict(dir, holdout.as_deref(), *max_draws, *replicates, *seed)?;
                let mean = p.mean_loglik.iter().sum::<f64>() / p.mean_loglik.len() as f64;
                println!("predict: {} stations, {} draws, mean log-likelihood {mean}", p.station_ids.len(), p.n_draws);
                Ok(())
            }
        }
    }
}

fn report(e: &Error, dir: &Path) {
    let rec = ErrorRecord::from_error(e);
    let json = serde_json::to_string(&rec).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", rec.message));
    eprintln!("{json}");
    // The workflows record their own failures once they hold the lock.
    let path = dir.join(cli_io::output::ERROR_FILE);
    if dir.is_dir() && !path.exists() && !dir.join(cli_io::output::LOCK_FILE).exists() {
        let _ = std::fs::write(path, json + "\n");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, cli.command.output_dir());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
