//! Command-line flags and their resolution into a [`RunConfig`].
//!
//! Precedence: explicit flag, then the `--config` TOML file, then (for the
//! seed only) the `CSP_SEED` environment variable, then built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ricsp_core::driver::constraints_for_alpha;
use ricsp_core::{Error, InitRule, MoveRule, Observable, ProblemKind};

use crate::commands::embedded_config;
use crate::config::*;

const DEFAULT_BUDGET_PER_SITE: u64 = ricsp_core::repair::DEFAULT_BUDGET_PER_SITE;
const DEFAULT_GRID: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(
    name = "ricsp",
    version,
    about = "Recursive incremental constraint satisfaction experiments"
)]
pub struct Cli {
    /// TOML file with default values for any flag (kebab-case keys).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random constraint stream.
    Generate(StreamArgs),
    /// Run the incremental procedure on one stream.
    Run(RunArgs),
    /// Run one independent instance per seed and average the curves.
    Sweep(SweepArgs),
    /// Exact solution and cluster counts for every prefix of a small stream.
    Enumerate(StreamArgs),
    /// Fit a power-law divergence to the trajectories in a directory.
    Fit(FitArgs),
    /// Re-run the command embedded in an output file.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct StreamArgs {
    /// Problem family: col<q> or sat<K>.
    #[arg(long)]
    kind: Option<ProblemKind>,
    #[arg(long)]
    n: Option<u32>,
    /// Stream length.
    #[arg(long, conflicts_with = "alpha_max")]
    m: Option<usize>,
    /// Stream length as a density: M = ceil(alpha_max * N).
    #[arg(long)]
    alpha_max: Option<f64>,
    /// Defaults to $CSP_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Read the stream from a file instead of generating it.
    #[arg(long, conflicts_with_all = ["kind", "n", "m", "alpha_max", "seed"])]
    input: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RepairArgs {
    /// Flip budget per repair call, in flips per variable.
    #[arg(long)]
    budget_per_site: Option<u64>,
    /// Longest run of consecutive zero-delta moves (0 = unlimited).
    #[arg(long)]
    sideways_cap: Option<u64>,
    /// focused or greedy.
    #[arg(long)]
    move_rule: Option<MoveRule>,
    /// random or zero.
    #[arg(long)]
    init: Option<InitRule>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    repair: RepairArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    kind: Option<ProblemKind>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, conflicts_with = "alpha_max")]
    m: Option<usize>,
    #[arg(long)]
    alpha_max: Option<f64>,
    /// Inclusive range A..B, or a single seed.
    #[arg(long)]
    seeds: Option<String>,
    #[command(flatten)]
    repair: RepairArgs,
    /// Density spacing of the averaged curves.
    #[arg(long)]
    grid: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Directory holding trajectory CSV files (searched recursively).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    grid: Option<f64>,
    /// integrated or per-step.
    #[arg(long)]
    fit_observable: Option<Observable>,
    /// Explicit fit window LO,HI in alpha; automatic when absent.
    #[arg(long, value_delimiter = ',')]
    window: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Any file written by this tool.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn param(msg: impl Into<String>) -> anyhow::Error {
    Error::Parameter(msg.into()).into()
}

/// Flag value, else a value parsed from the config file.
fn pick<T: FromStr>(flag: Option<T>, file: &Option<String>, key: &str) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(s)) => s
            .parse()
            .map(Some)
            .map_err(|e| param(format!("config file key {key}: {e}"))),
        (None, None) => Ok(None),
    }
}

fn required<T>(v: Option<T>, flag: &str) -> anyhow::Result<T> {
    v.ok_or_else(|| param(format!("missing --{flag}")))
}

fn parse_seed_range(s: &str) -> anyhow::Result<[u64; 2]> {
    let bad = || param(format!("invalid seed range {s:?}; expected A..B or a single seed"));
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(param(format!("empty seed range {s:?}")));
            }
            Ok([a, b])
        }
        None => {
            let a = s.trim().parse().map_err(|_| bad())?;
            Ok([a, a])
        }
    }
}

fn load_overrides(path: Option<&Path>) -> anyhow::Result<Overrides> {
    let Some(path) = path else {
        return Ok(Overrides::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| param(format!("config file {}: {e}", path.display())))
}

fn seed_from_env() -> anyhow::Result<Option<u64>> {
    match std::env::var("CSP_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| param(format!("CSP_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn stream_length(n: u32, m: Option<usize>, alpha_max: Option<f64>, o: &Overrides) -> anyhow::Result<usize> {
    match (m, alpha_max) {
        (Some(m), _) => Ok(m),
        (None, Some(a)) => Ok(constraints_for_alpha(a, n)?),
        (None, None) => match (o.m, o.alpha_max) {
            (Some(_), Some(_)) => Err(param("config file sets both m and alpha-max")),
            (Some(m), None) => Ok(m),
            (None, Some(a)) => Ok(constraints_for_alpha(a, n)?),
            (None, None) => Err(param("missing --m or --alpha-max")),
        },
    }
}

fn stream_source(a: &StreamArgs, o: &Overrides) -> anyhow::Result<StreamSource> {
    let input = a.input.as_ref().map(|p| p.display().to_string()).or(o.input.clone());
    let any_flag = a.kind.is_some() || a.n.is_some() || a.m.is_some() || a.alpha_max.is_some() || a.seed.is_some();
    if let (Some(path), false) = (input, any_flag) {
        return Ok(StreamSource::File { path });
    }
    let kind = required(pick(a.kind, &o.kind, "kind")?, "kind")?;
    let n = required(a.n.or(o.n), "n")?;
    let m = stream_length(n, a.m, a.alpha_max, o)?;
    let seed = required(
        a.seed
            .or(o.seed)
            .map(Ok)
            .or_else(|| seed_from_env().transpose())
            .transpose()?,
        "seed (or set CSP_SEED)",
    )?;
    Ok(StreamSource::Generated(GeneratedStream { kind, n, m, seed }))
}

fn repair_spec(a: &RepairArgs, o: &Overrides) -> anyhow::Result<RepairSpec> {
    Ok(RepairSpec {
        budget_per_site: a
            .budget_per_site
            .or(o.budget_per_site)
            .unwrap_or(DEFAULT_BUDGET_PER_SITE),
        sideways_cap: a.sideways_cap.or(o.sideways_cap).unwrap_or(0),
        move_rule: pick(a.move_rule, &o.move_rule, "move-rule")?.unwrap_or(MoveRule::Focused),
        init: pick(a.init, &o.init, "init")?.unwrap_or(InitRule::UniformRandom),
    })
}

fn grid(flag: Option<f64>, o: &Overrides) -> anyhow::Result<f64> {
    let g = flag.or(o.grid).unwrap_or(DEFAULT_GRID);
    if !(g.is_finite() && g > 0.0) {
        return Err(param(format!("--grid must be positive, got {g}")));
    }
    Ok(g)
}

/// Builds the configuration and output directory for a parsed command line.
pub fn resolve(cli: &Cli) -> anyhow::Result<(RunConfig, PathBuf)> {
    let o = load_overrides(cli.config.as_deref())?;
    Ok(match &cli.command {
        Command::Generate(a) => {
            let g = match stream_source(a, &o)? {
                StreamSource::Generated(g) => g,
                StreamSource::File { .. } => return Err(param("generate does not take --input")),
            };
            (RunConfig::Generate(g), a.out.clone())
        }
        Command::Run(a) => {
            let spec = RunSpec {
                stream: stream_source(&a.stream, &o)?,
                repair: repair_spec(&a.repair, &o)?,
            };
            (RunConfig::Run(spec), a.stream.out.clone())
        }
        Command::Enumerate(a) => {
            let spec = EnumerateSpec {
                stream: stream_source(a, &o)?,
            };
            (RunConfig::Enumerate(spec), a.out.clone())
        }
        Command::Sweep(a) => {
            let kind = required(pick(a.kind, &o.kind, "kind")?, "kind")?;
            let n = required(a.n.or(o.n), "n")?;
            let m = stream_length(n, a.m, a.alpha_max, &o)?;
            let seeds = match a.seeds.as_ref().or(o.seeds.as_ref()) {
                Some(s) => parse_seed_range(s)?,
                None => {
                    let s = required(
                        o.seed.map(Ok).or_else(|| seed_from_env().transpose()).transpose()?,
                        "seeds",
                    )?;
                    [s, s]
                }
            };
            let workers = a.workers.or(o.workers);
            if workers == Some(0) {
                return Err(param("--workers must be at least 1"));
            }
            let spec = SweepSpec {
                kind,
                n,
                m,
                seeds,
                repair: repair_spec(&a.repair, &o)?,
                grid: grid(a.grid, &o)?,
                workers,
            };
            (RunConfig::Sweep(spec), a.out.clone())
        }
        Command::Fit(a) => {
            let input = a.input.as_ref().map(|p| p.display().to_string()).or(o.input.clone());
            let window = match a.window.as_deref() {
                Some(&[lo, hi]) => Some([lo, hi]),
                Some(_) => return Err(param("--window takes LO,HI")),
                None => o.window,
            };
            let spec = FitSpec {
                input: required(input, "input")?,
                grid: grid(a.grid, &o)?,
                observable: pick(a.fit_observable, &o.fit_observable, "fit-observable")?
                    .unwrap_or(Observable::Integrated),
                window,
            };
            (RunConfig::Fit(spec), a.out.clone())
        }
        Command::Replay(a) => (embedded_config(&a.input)?, a.out.clone()),
    })
}
