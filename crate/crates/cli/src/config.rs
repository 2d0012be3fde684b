//! Command-line flags, the flat `key = value` config file and the resolved
//! run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use glbulk_core::fullgl::{Domain, MAX_FIELD_RATIO};
use glbulk_core::BoundaryKind;
use serde::Serialize;

use crate::CliError;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "GLBULK_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "glbulk", version, about = "Ginzburg-Landau bulk energies on a magnetic square")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Lowest eigenvalues of the magnetic Laplacian
    Spectrum,
    /// Nonlinear bulk minimizer e(b, R)
    Bulk,
    /// L4-constrained quotient m(b, R)
    Quotient,
    /// Abrikosov energy on the lowest Landau level
    Abrikosov,
    /// Sweep over R and extrapolate to the thermodynamic limit
    Limit,
    /// Full Ginzburg-Landau solves and local L4 scans
    Glapp,
    /// Invariant suite with a pass/fail table
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Bulk => "bulk",
            Command::Quotient => "quotient",
            Command::Abrikosov => "abrikosov",
            Command::Limit => "limit",
            Command::Glapp => "glapp",
            Command::Verify => "verify",
        }
    }
}

/// Flags shared by every subcommand; list flags take comma separated values.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` file; flags given on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub b: Option<Vec<f64>>,
    /// Flux integers N; the side is sqrt(2 pi N)
    #[arg(long, global = true, value_delimiter = ',')]
    pub flux: Option<Vec<u32>>,
    /// Boundary conditions: dirichlet, neumann, periodic
    #[arg(long, global = true, value_delimiter = ',')]
    pub bc: Option<Vec<BoundaryKind>>,
    /// Cells per side (default: resolution policy of each module)
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Minimizer gradient tolerance
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Recompute even when the cache holds a record
    #[arg(long, global = true)]
    pub force: bool,
    /// GL parameters kappa (glapp)
    #[arg(long, global = true, value_delimiter = ',')]
    pub kappa: Option<Vec<f64>>,
    /// Field ratios H / kappa (glapp)
    #[arg(long, global = true, value_delimiter = ',')]
    pub ratio: Option<Vec<f64>>,
    /// Inset of the scanned squares (glapp; default 2 kappa^{-1/2})
    #[arg(long, global = true)]
    pub inset: Option<f64>,
    /// Domain for glapp: square or disk
    #[arg(long, global = true)]
    pub domain: Option<Domain>,
    /// Number of eigenvalues (spectrum; default 2N + 2)
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Add a c2 / R^2 term to the extrapolation (limit)
    #[arg(long, global = true)]
    pub quadratic: bool,
}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub b: Vec<f64>,
    pub flux: Vec<u32>,
    pub bc: Vec<BoundaryKind>,
    pub n: Option<usize>,
    pub tol: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
    pub kappa: Vec<f64>,
    pub ratio: Vec<f64>,
    pub inset: Option<f64>,
    pub domain: Domain,
    pub count: Option<usize>,
    pub quadratic: bool,
    /// Relative duality gate of the dual solver.
    pub gate: f64,
    #[serde(skip)]
    pub jobs: usize,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub cache_dir: PathBuf,
    #[serde(skip)]
    pub force: bool,
}

pub const DEFAULT_GATE: f64 = 1e-4;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| bad(format!("config key '{key}': {e}"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| bad(format!("config key '{key}': {e}")))
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1)))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

/// Fills every flag that was not given on the command line from `file`.
pub fn merge_file(flags: &mut Flags, file: &BTreeMap<String, String>) -> Result<(), CliError> {
    for (k, v) in file {
        match k.as_str() {
            "b" => flags.b = flags.b.take().or(Some(parse_list(k, v)?)),
            "flux" => flags.flux = flags.flux.take().or(Some(parse_list(k, v)?)),
            "bc" => flags.bc = flags.bc.take().or(Some(parse_list(k, v)?)),
            "n" => flags.n = flags.n.or(Some(parse_one(k, v)?)),
            "tol" => flags.tol = flags.tol.or(Some(parse_one(k, v)?)),
            "restarts" => flags.restarts = flags.restarts.or(Some(parse_one(k, v)?)),
            "seed" => flags.seed = flags.seed.or(Some(parse_one(k, v)?)),
            "jobs" => flags.jobs = flags.jobs.or(Some(parse_one(k, v)?)),
            "out" => flags.out = flags.out.take().or(Some(PathBuf::from(v))),
            "force" => flags.force |= parse_one::<bool>(k, v)?,
            "kappa" => flags.kappa = flags.kappa.take().or(Some(parse_list(k, v)?)),
            "ratio" => flags.ratio = flags.ratio.take().or(Some(parse_list(k, v)?)),
            "inset" => flags.inset = flags.inset.or(Some(parse_one(k, v)?)),
            "domain" => flags.domain = flags.domain.or(Some(parse_one(k, v)?)),
            "count" => flags.count = flags.count.or(Some(parse_one(k, v)?)),
            "quadratic" => flags.quadratic |= parse_one::<bool>(k, v)?,
            other => return Err(bad(format!("unknown config key '{other}'"))),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Applies the config file, the per-command defaults and validation.
    pub fn resolve(command: Command, mut flags: Flags) -> Result<RunConfig, CliError> {
        if let Some(path) = flags.config.clone() {
            let file = read_config_file(&path)?;
            merge_file(&mut flags, &file)?;
        }
        let (b, flux): (Vec<f64>, Vec<u32>) = match command {
            Command::Limit => (vec![0.5], vec![4, 8, 16]),
            Command::Abrikosov => (vec![], vec![8, 16]),
            Command::Spectrum => (vec![], vec![8]),
            _ => (vec![0.3, 0.5, 0.7, 0.9], vec![8]),
        };
        let out = flags.out.unwrap_or_else(|| PathBuf::from("glbulk-out"));
        let cache_dir = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| out.join("cache"));
        let cfg = RunConfig {
            command,
            b: flags.b.unwrap_or(b),
            flux: flags.flux.unwrap_or(flux),
            bc: flags.bc.unwrap_or_else(|| vec![BoundaryKind::Periodic]),
            n: flags.n,
            tol: flags.tol,
            restarts: flags.restarts.unwrap_or(4),
            seed: flags.seed.unwrap_or(0x5eed),
            kappa: flags.kappa.unwrap_or_else(|| vec![12.0, 16.0, 24.0]),
            ratio: flags.ratio.unwrap_or_else(|| vec![0.85, 0.95, 1.0, 1.05]),
            inset: flags.inset,
            domain: flags.domain.unwrap_or(Domain::Square),
            count: flags.count,
            quadratic: flags.quadratic,
            gate: DEFAULT_GATE,
            jobs: flags.jobs.unwrap_or(0),
            out,
            cache_dir,
            force: flags.force,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(t) = self.tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(bad(format!("tol = {t} outside valid range (0, 1)")));
            }
        }
        if let Some(n) = self.n {
            if n < glbulk_core::grid::MIN_POINTS {
                return Err(bad(format!(
                    "n = {n} below the minimum of {} cells per side",
                    glbulk_core::grid::MIN_POINTS
                )));
            }
        }
        if self.flux.iter().any(|&f| f == 0) {
            return Err(bad("flux integers must be positive"));
        }
        let b_range = match self.command {
            Command::Quotient => Some((false, "(0, 1)")),
            Command::Bulk | Command::Limit => Some((true, "(0, 1]")),
            _ => None,
        };
        if let Some((closed, range)) = b_range {
            if self.b.is_empty() {
                return Err(bad("no b values given"));
            }
            for &b in &self.b {
                let ok = b > 0.0 && (b < 1.0 || (closed && b == 1.0));
                if !ok {
                    return Err(bad(format!("b = {b} outside valid range {range}")));
                }
            }
        }
        match self.command {
            Command::Spectrum | Command::Bulk | Command::Quotient | Command::Abrikosov | Command::Limit => {
                if self.flux.is_empty() || self.bc.is_empty() {
                    return Err(bad("need at least one flux and one boundary condition"));
                }
            }
            _ => {}
        }
        if self.command == Command::Abrikosov && self.bc.iter().any(|&k| k != BoundaryKind::Periodic) {
            return Err(bad("the lowest Landau level is defined for the periodic boundary condition only"));
        }
        if self.command == Command::Limit {
            let mut f = self.flux.clone();
            f.sort_unstable();
            f.dedup();
            if f.len() < 3 {
                return Err(bad(format!(
                    "extrapolation needs at least 3 distinct side lengths, got {}",
                    f.len()
                )));
            }
        }
        if self.command == Command::Glapp {
            if self.kappa.is_empty() || self.ratio.is_empty() {
                return Err(bad("need at least one kappa and one field ratio"));
            }
            if let Some(&k) = self.kappa.iter().find(|&&k| !(k > 0.0)) {
                return Err(bad(format!("kappa = {k} must be positive")));
            }
            if let Some(&r) = self.ratio.iter().find(|&&r| !(r >= 0.5 && r <= MAX_FIELD_RATIO)) {
                return Err(bad(format!("ratio = {r} outside valid range [0.5, {MAX_FIELD_RATIO}]")));
            }
            if let Some(i) = self.inset {
                if !(i >= 0.0) {
                    return Err(bad(format!("inset = {i} must be nonnegative")));
                }
            }
        }
        Ok(())
    }

    /// Config echoed into output headers: everything that determines the
    /// numbers, without output locations or thread counts.
    pub fn header(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
