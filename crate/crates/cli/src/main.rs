//! `rrg`: identification, residual detection, baseline sweeps and the
//! fixed-point workflow from the command line.

mod artifacts;
mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "rrg", version, about, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate Markov parameters from an input/output CSV.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Past horizon.
        #[arg(long)]
        p: Option<usize>,
    },
    /// Run the chi-squared residual detector over a CSV record.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        markov: Option<PathBuf>,
        #[arg(long)]
        gram: Option<PathBuf>,
        /// Detection window L.
        #[arg(long, short = 'L')]
        window: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Baseline false-alarm grid, gain-error table and one trace.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated window lengths.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr_db: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        table_snr_db: Option<Vec<f64>>,
        #[arg(long)]
        table_trials: Option<usize>,
        #[arg(long)]
        run_length: Option<usize>,
        #[arg(long)]
        sequential: bool,
    },
    /// Range collection, format proposal and a fixed-point detector run.
    Fx {
        #[command(flatten)]
        common: Common,
        /// Use these formats and skip the range pass.
        #[arg(long)]
        formats: Option<PathBuf>,
        /// Target fractional bits for proposals.
        #[arg(long)]
        frac: Option<u32>,
        #[arg(long)]
        static_bounds: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        dhat: Option<f64>,
        #[arg(long, short = 'L')]
        window: Option<usize>,
        #[arg(long)]
        run_length: Option<usize>,
    },
    /// Simulate identification and detection records from a predictor plant.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        id_samples: Option<usize>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load(common: Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.out.is_some() {
        cfg.out = common.out;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Identify { common, data, p } => {
            let mut cfg = load(common)?;
            if data.is_some() {
                cfg.identify.data = data;
            }
            set(&mut cfg.identify.p, p);
            commands::identify(cfg)
        }
        Command::Detect {
            common,
            data,
            markov,
            gram,
            window,
            alpha,
        } => {
            let mut cfg = load(common)?;
            let d = &mut cfg.detect;
            if data.is_some() {
                d.data = data;
            }
            if markov.is_some() {
                d.markov = markov;
            }
            if gram.is_some() {
                d.gram = gram;
            }
            set(&mut d.horizon, window);
            set(&mut d.alpha, alpha);
            commands::detect(cfg)
        }
        Command::Sweep {
            common,
            horizons,
            snr_db,
            trials,
            table_snr_db,
            table_trials,
            run_length,
            sequential,
        } => {
            let mut cfg = load(common)?;
            let s = &mut cfg.sweep;
            set(&mut s.horizons, horizons);
            set(&mut s.snr_db, snr_db);
            set(&mut s.trials, trials);
            set(&mut s.table_snr_db, table_snr_db);
            set(&mut s.table_trials, table_trials);
            s.sequential |= sequential;
            set(&mut cfg.baseline.run_length, run_length);
            commands::sweep(cfg)
        }
        Command::Fx {
            common,
            formats,
            frac,
            static_bounds,
            dhat,
            window,
            run_length,
        } => {
            let mut cfg = load(common)?;
            if formats.is_some() {
                cfg.fx.formats = formats;
            }
            if static_bounds.is_some() {
                cfg.fx.static_bounds = static_bounds;
            }
            set(&mut cfg.fx.frac, frac);
            if dhat.is_some() {
                cfg.baseline.dhat = dhat;
            }
            set(&mut cfg.baseline.horizon, window);
            set(&mut cfg.baseline.run_length, run_length);
            commands::fx(cfg)
        }
        Command::Simulate {
            common,
            samples,
            id_samples,
        } => {
            let mut cfg = load(common)?;
            set(&mut cfg.simulate.samples, samples);
            set(&mut cfg.simulate.id_samples, id_samples);
            commands::simulate(cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
