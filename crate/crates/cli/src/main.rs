use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eamamba_core::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "eamamba", version, about = "Multi-head selective-scan image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on synthetic noisy data and write a checkpoint directory.
    Train {
        /// `key = value` run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Print a progress line every N iterations (0 = silent).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Restore one PGM/PPM image with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Effective receptive field of one output pixel, written as PGM and CSV.
    Erf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        col: usize,
        /// Output prefix; writes PREFIX.pgm and PREFIX.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and MAC breakdown as CSV.
    Cost {
        /// Run configuration; the default network when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
    },
    /// Visiting order of a scan curve as `step,row,col` CSV.
    Curves {
        /// Curve name, optionally with a `_rev` suffix.
        kind: String,
        height: usize,
        width: usize,
    },
    /// Finite-difference check of the full network in 64-bit.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates probed per parameter tensor.
        #[arg(long, default_value_t = 2)]
        coords: usize,
    },
    /// Scan-path cost of the multi-head and per-direction operators over k.
    ScanBench {
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        groups: usize,
        #[arg(long, default_value_t = 16)]
        d_state: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Noise level on the 8-bit scale.
    #[arg(long, default_value_t = 25.0)]
    sigma: f64,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() || matches!(e, Error::Contract(_)) {
        3
    } else {
        2
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
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
