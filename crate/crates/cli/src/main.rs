mod commands;
mod error;
mod measure;
mod properties;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use holo_core::netmodel::DEFAULT_MAX_HOPS;

use commands::{AnalyzeArgs, Shared};
use error::{Failure, Result};

#[derive(Parser)]
#[command(name = "holo", version, about = "Holographic traffic data pipeline")]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SharedArgs {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "HOLO_SEED")]
    seed: Option<u64>,
    /// Stream parameters as TOML.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Minimal speed of the same-trip test, m/s.
    #[arg(long, global = true)]
    v_min: Option<f64>,
    /// Worker thread cap.
    #[arg(long, global = true, env = "HOLO_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Checks that every camera pair is joined by at most one camera-free path.
    VerifyNet {
        #[arg(short, long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_HOPS)]
        max_hops: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Joins plate records into trips with inferred passings.
    BuildTrips {
        #[arg(short, long)]
        data_dir: PathBuf,
        /// Plate recognition table, defaults to lpr.csv in the data directory.
        #[arg(long)]
        lpr: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Reject phase chains faster than this speed, m/s.
        #[arg(long)]
        v_max: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MAX_HOPS)]
        max_hops: usize,
    },
    /// Reconstructs per-segment trajectories from trips.
    Reconstruct {
        #[arg(short, long)]
        data_dir: PathBuf,
        #[arg(long)]
        trips: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Runs virtual loop detectors and probe vehicles over the trajectory store.
    Measure {
        #[arg(short, long)]
        data_dir: PathBuf,
        #[arg(short = 'c', long)]
        config: PathBuf,
    },
    /// Simulates a signalized corridor and writes a complete data directory.
    Simulate {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        vehicles: usize,
        #[arg(long, default_value_t = 20)]
        cycles: usize,
        #[arg(long, default_value_t = 0.0)]
        miss_rate: f64,
    },
    /// Travel concentration, traveler classes and fundamental diagram fits.
    Analyze(AnalyzeArgs),
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.shared.jobs {
        if jobs == 0 {
            return Err(Failure::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::config(e.to_string()))?;
    }
    if let Some(v) = cli.shared.v_min {
        if !(v > 0.0) {
            return Err(Failure::config(format!("--v-min must be positive, got {v}")));
        }
    }
    let shared = || -> Result<Shared> {
        Ok(Shared {
            seed: cli.shared.seed.unwrap_or(0),
            params: store::read_params(cli.shared.params.as_deref())?,
            v_min: cli.shared.v_min,
        })
    };
    match cli.command {
        Command::VerifyNet {
            ref data_dir,
            max_hops,
            ref report,
        } => commands::verify_net(data_dir, max_hops, report.as_deref()),
        Command::BuildTrips {
            ref data_dir,
            ref lpr,
            ref output,
            v_max,
            max_hops,
        } => commands::build(data_dir, lpr.as_deref(), output.as_deref(), v_max, max_hops, &shared()?),
        Command::Reconstruct {
            ref data_dir,
            ref trips,
            ref output,
        } => commands::reconstruct(data_dir, trips.as_deref(), output.as_deref(), &shared()?),
        Command::Measure {
            ref data_dir,
            ref config,
        } => {
            let written = measure::run_measure(data_dir, config, cli.shared.seed)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Simulate {
            ref output,
            vehicles,
            cycles,
            miss_rate,
        } => commands::simulate(output, vehicles, cycles, miss_rate, &shared()?),
        Command::Analyze(ref args) => commands::analyze(args, &shared()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("holo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
