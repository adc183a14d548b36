use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use finitekey_cli::{
    bounds, init_threads, keyrate, mc_run, open_output, optimize, parse_list, sweep_blocksize, sweep_distance,
    CliError, CliResult, Overrides, EXIT_CONFIG,
};

/// Finite-key secure key rate calculator for decoy-state BB84.
#[derive(Parser)]
#[command(name = "finitekey", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Fiber length in km.
    #[arg(long, value_name = "KM")]
    distance: Option<f64>,
    /// Acquisition time in seconds.
    #[arg(long, value_name = "S")]
    time: Option<f64>,
    /// Seed for the optimizer and Monte Carlo rounds.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "X")]
    eps_sec: Option<f64>,
    #[arg(long, value_name = "X")]
    eps_ver: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            distance: self.distance,
            time: self.time,
            seed: self.seed,
            eps_sec: self.eps_sec,
            eps_ver: self.eps_ver,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Key length breakdown for one configuration.
    Keyrate(Common),
    /// Optimized key rate versus distance, as CSV.
    SweepDistance {
        #[command(flatten)]
        common: Common,
        /// Comma separated distances in km.
        #[arg(long, value_name = "LIST")]
        distances: Option<String>,
    },
    /// Optimized key rate versus acquisition time, as CSV.
    SweepBlocksize {
        #[command(flatten)]
        common: Common,
        /// Comma separated acquisition times in seconds.
        #[arg(long, value_name = "LIST")]
        times: Option<String>,
        /// Size of the default logarithmic time grid.
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Binomial versus hypergeometric comparison table, as CSV.
    BoundsDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long = "N", default_value_t = 120_000)]
        population: u64,
        #[arg(long = "n", default_value_t = 103_820)]
        draws: u64,
        #[arg(long = "K", default_value_t = 600)]
        successes: u64,
        /// Failure probability per side; defaults to eps_sec / 46.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Optimize the protocol parameters and print the resulting config.
    Optimize(Common),
    /// Seeded Monte Carlo protocol rounds with bound containment diagnostics.
    McRun {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
}

fn list(flag: &str, s: Option<String>) -> CliResult<Option<Vec<f64>>> {
    s.map(|s| parse_list(&s).map_err(|e| CliError::Config(format!("--{flag}: {e}"))))
        .transpose()
}

fn run(cli: Cli) -> CliResult<i32> {
    init_threads(std::env::var("FINITEKEY_THREADS").ok())?;
    let mut stderr = io::stderr().lock();
    match cli.command {
        Command::Keyrate(c) => {
            let cfg = c.overrides().load()?;
            keyrate(&cfg, &mut open_output(c.out.as_deref())?)
        }
        Command::Optimize(c) => {
            let cfg = c.overrides().load()?;
            optimize(&cfg, &mut open_output(c.out.as_deref())?)
        }
        Command::SweepDistance { common, distances } => {
            let cfg = common.overrides().load()?;
            let distances = list("distances", distances)?;
            sweep_distance(&cfg, distances, &mut open_output(common.out.as_deref())?, &mut stderr)
        }
        Command::SweepBlocksize { common, times, points } => {
            let cfg = common.overrides().load()?;
            let times = list("times", times)?;
            sweep_blocksize(&cfg, times, points, &mut open_output(common.out.as_deref())?, &mut stderr)
        }
        Command::BoundsDemo {
            common,
            population,
            draws,
            successes,
            eps,
        } => {
            let cfg = common.overrides().load()?;
            let eps = eps.unwrap_or_else(|| cfg.protocol.eps_per_constraint());
            bounds(population, draws, successes, eps, &mut open_output(common.out.as_deref())?, &mut stderr)
        }
        Command::McRun { common, repeats } => {
            let cfg = common.overrides().load()?;
            mc_run(&cfg, repeats, &mut open_output(common.out.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            EXIT_CONFIG
        }
    };
    ExitCode::from(code as u8)
}
