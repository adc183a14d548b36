//! Command implementations behind the `finitekey` binary.

pub mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use finitekey::channel::{expected_counts, sample_counts, Basis, IntensityClass};
use finitekey::decoy::estimate;
use finitekey::experiments::{
    blocksize_sweep, bounds_demo, default_times, distance_sweep, free_variables, optimize_parameters,
    DEFAULT_DISTANCES_KM, FREE_VARIABLES,
};
use finitekey::keyrate::{evaluate, secure_key_length};
use finitekey::{AbortReason, Error, KeyRateReport};

pub use config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ABORT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Anything that stops a command before it produces its output.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Flags shared by every subcommand that reads a configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub distance: Option<f64>,
    pub time: Option<f64>,
    pub seed: Option<u64>,
    pub eps_sec: Option<f64>,
    pub eps_ver: Option<f64>,
}

impl Overrides {
    /// Read the config file (if any), apply the flags, validate.
    pub fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(d) = self.distance {
            cfg.channel.fiber_length_km = d;
        }
        if let Some(t) = self.time {
            cfg.protocol.acquisition_time_s = t;
        }
        if let Some(s) = self.seed {
            cfg.optimization.seed = s;
        }
        if let Some(e) = self.eps_sec {
            cfg.protocol.eps_sec = e;
        }
        if let Some(e) = self.eps_ver {
            cfg.protocol.eps_ver = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes to `path` when given, stdout otherwise.
pub fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Cap the global rayon pool from `FINITEKEY_THREADS`.
pub fn init_threads(var: Option<String>) -> CliResult<()> {
    let Some(v) = var else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FINITEKEY_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn report_exit(report: &KeyRateReport) -> i32 {
    if report.is_aborted() {
        EXIT_ABORT
    } else {
        EXIT_OK
    }
}

pub fn keyrate(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let counts = expected_counts(&cfg.channel, &cfg.protocol)?;
    let report = evaluate(&counts, &cfg.protocol)?;
    writeln!(out, "distance_km = {}", cfg.channel.fiber_length_km)?;
    writeln!(out, "acquisition_time_s = {}", cfg.protocol.acquisition_time_s)?;
    report.write_key_value(&mut *out)?;
    out.flush()?;
    Ok(report_exit(&report))
}

pub fn optimize(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<i32> {
    let res = optimize_parameters(&cfg.channel, &cfg.protocol, &cfg.optimization)?;
    let mut best = cfg.clone();
    best.protocol = res.protocol;
    writeln!(out, "# optimized at {} km, {} s", cfg.channel.fiber_length_km, cfg.protocol.acquisition_time_s)?;
    writeln!(out, "# evaluations = {}", res.evaluations)?;
    if let Some(start) = &res.start_report {
        writeln!(out, "# start rate_bps = {}", start.rate_bps)?;
    }
    writeln!(out, "# best rate_bps = {}", res.report.rate_bps)?;
    writeln!(out, "# best n_sec = {}", res.report.n_sec)?;
    if let Some(r) = &res.report.abort {
        writeln!(out, "# abort = {}", r.tag())?;
    }
    for (name, x) in FREE_VARIABLES.iter().zip(free_variables(&res.protocol)) {
        writeln!(out, "# best {name} = {x}")?;
    }
    out.write_all(best.to_document().as_bytes())?;
    out.flush()?;
    Ok(report_exit(&res.report))
}

pub fn sweep_distance(
    cfg: &RunConfig,
    distances: Option<Vec<f64>>,
    out: &mut dyn Write,
    summary: &mut dyn Write,
) -> CliResult<i32> {
    let distances = distances.unwrap_or_else(|| DEFAULT_DISTANCES_KM.to_vec());
    let sweep = distance_sweep(&cfg.channel, &cfg.protocol, &distances, &cfg.optimization)?;
    sweep.write_csv(&mut *out)?;
    out.flush()?;
    sweep.write_summary(&mut *summary)?;
    Ok(EXIT_OK)
}

pub fn sweep_blocksize(
    cfg: &RunConfig,
    times: Option<Vec<f64>>,
    points: usize,
    out: &mut dyn Write,
    summary: &mut dyn Write,
) -> CliResult<i32> {
    let times = times.unwrap_or_else(|| default_times(points));
    let sweep = blocksize_sweep(&cfg.channel, &cfg.protocol, &times, &cfg.optimization)?;
    sweep.write_csv(&mut *out)?;
    out.flush()?;
    sweep.write_summary(&mut *summary)?;
    Ok(EXIT_OK)
}

pub fn bounds(
    population: u64,
    draws: u64,
    successes: u64,
    epsilon: f64,
    out: &mut dyn Write,
    summary: &mut dyn Write,
) -> CliResult<i32> {
    let table = bounds_demo(population, draws, successes, epsilon)?;
    table.write_csv(&mut *out)?;
    out.flush()?;
    table.write_summary(&mut *summary)?;
    Ok(EXIT_OK)
}

/// Outcome of one simulated protocol round.
#[derive(Debug, Clone)]
pub struct McRound {
    pub seed: u64,
    pub abort: Option<AbortReason>,
    /// (label, true value, lower, upper)
    pub checks: Vec<(String, f64, f64, f64)>,
    pub n_sec: u64,
}

impl McRound {
    pub fn contained(&self) -> usize {
        self.checks.iter().filter(|(_, t, lo, hi)| lo <= t && t <= hi).count()
    }
}

pub fn mc_round(cfg: &RunConfig, seed: u64) -> CliResult<McRound> {
    let (ch, pr) = (&cfg.channel, &cfg.protocol);
    let counts = sample_counts(ch, pr, seed)?;
    let est = match estimate(&counts, pr) {
        Ok(est) => est,
        Err(Error::Abort(reason)) => {
            return Ok(McRound {
                seed,
                abort: Some(reason),
                checks: Vec::new(),
                n_sec: 0,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let mut checks = Vec::new();
    for c in IntensityClass::ALL {
        for b in Basis::ALL {
            let truth = ch.detection_prob(pr.intensity(c)).min(1.0);
            let (lo, hi) = (est.yields.lower(c, b), est.yields.upper(c, b));
            checks.push((format!("Y_{c}{b}"), truth, lo, hi));
        }
    }
    checks.push((
        "E_uXX".to_string(),
        ch.error_prob(pr.signal()),
        0.0,
        est.yields.x_error_upper(),
    ));
    for b in Basis::ALL {
        for k in 0..2 {
            let truth = ch.photon_yield(k as u32).min(1.0);
            checks.push((
                format!("y{k}_{b}"),
                truth,
                est.photons.y_lower(b, k),
                est.photons.y_upper(b, k),
            ));
        }
    }
    checks.push((
        "e1_X".to_string(),
        ch.photon_error_rate(1),
        0.0,
        est.photons.qber1_upper,
    ));
    let report = secure_key_length(&est, &counts, pr)?;
    Ok(McRound {
        seed,
        abort: report.abort.clone(),
        checks,
        n_sec: report.n_sec,
    })
}

/// Repeated seeded rounds. Exit code 1 only when every round aborts.
pub fn mc_run(cfg: &RunConfig, repeats: usize, out: &mut dyn Write) -> CliResult<i32> {
    if repeats == 0 {
        return Err(CliError::Config("--repeats must be at least 1".into()));
    }
    let base = cfg.optimization.seed;
    let rounds = (0..repeats as u64)
        .into_par_iter()
        .map(|r| mc_round(cfg, base.wrapping_add(r)))
        .collect::<CliResult<Vec<_>>>()?;

    writeln!(out, "distance_km = {}", cfg.channel.fiber_length_km)?;
    writeln!(out, "acquisition_time_s = {}", cfg.protocol.acquisition_time_s)?;
    writeln!(out, "repeats = {repeats}")?;
    for r in &rounds {
        writeln!(out, "round seed={}", r.seed)?;
        for (label, t, lo, hi) in &r.checks {
            let mark = if lo <= t && t <= hi { "in" } else { "OUT" };
            writeln!(out, "  {label:<8} true={t:<24} bound=[{lo}, {hi}] {mark}")?;
        }
        match &r.abort {
            Some(reason) => writeln!(out, "  aborted: {} ({reason})", reason.tag())?,
            None => writeln!(out, "  n_sec = {}", r.n_sec)?,
        }
    }
    let aborted = rounds.iter().filter(|r| r.abort.is_some()).count();
    let checked: usize = rounds.iter().map(|r| r.checks.len()).sum();
    let contained: usize = rounds.iter().map(McRound::contained).sum();
    writeln!(out, "aborted_rounds = {aborted}")?;
    writeln!(out, "abort_probability_estimate = {}", aborted as f64 / repeats as f64)?;
    writeln!(out, "containment = {contained}/{checked}")?;
    out.flush()?;
    Ok(if aborted == repeats { EXIT_ABORT } else { EXIT_OK })
}

/// Parse a comma separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect()
}
