//! Fully resolved command configurations. A `RunConfig` is serialized into
//! every output file and is sufficient to re-run the command that wrote it.

use std::fmt::Display;
use std::str::FromStr;

use ricsp_core::{InitRule, MoveRule, Observable, ProblemKind};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const TOOL: &str = concat!("ricsp ", env!("CARGO_PKG_VERSION"));

/// Serializes through `Display` / `FromStr`, so configs use the same
/// spellings as the command line (`col3`, `random`, `per-step`).
mod as_str {
    use super::*;

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Generate(GeneratedStream),
    Run(RunSpec),
    Sweep(SweepSpec),
    Enumerate(EnumerateSpec),
    Fit(FitSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedStream {
    #[serde(with = "as_str")]
    pub kind: ProblemKind,
    pub n: u32,
    pub m: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StreamSource {
    Generated(GeneratedStream),
    File { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairSpec {
    pub budget_per_site: u64,
    pub sideways_cap: u64,
    #[serde(with = "as_str")]
    pub move_rule: MoveRule,
    #[serde(with = "as_str")]
    pub init: InitRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub stream: StreamSource,
    pub repair: RepairSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(with = "as_str")]
    pub kind: ProblemKind,
    pub n: u32,
    pub m: usize,
    /// Inclusive seed range.
    pub seeds: [u64; 2],
    pub repair: RepairSpec,
    pub grid: f64,
    pub workers: Option<usize>,
}

impl SweepSpec {
    pub fn seed_list(&self) -> Vec<u64> {
        (self.seeds[0]..=self.seeds[1]).collect()
    }

    /// Config of the standalone `run` that reproduces one member of the sweep.
    pub fn member(&self, seed: u64) -> RunSpec {
        RunSpec {
            stream: StreamSource::Generated(GeneratedStream {
                kind: self.kind,
                n: self.n,
                m: self.m,
                seed,
            }),
            repair: self.repair.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerateSpec {
    pub stream: StreamSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// Directory searched (recursively) for trajectory CSV files.
    pub input: String,
    pub grid: f64,
    #[serde(with = "as_str")]
    pub observable: Observable,
    /// Explicit `[lo, hi]` window; automatic selection when absent.
    pub window: Option<[f64; 2]>,
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Values read from a `--config` TOML file. Command-line flags win over
/// these; keys irrelevant to a subcommand are ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    pub kind: Option<String>,
    pub n: Option<u32>,
    pub m: Option<usize>,
    pub alpha_max: Option<f64>,
    pub seed: Option<u64>,
    pub seeds: Option<String>,
    pub input: Option<String>,
    pub budget_per_site: Option<u64>,
    pub sideways_cap: Option<u64>,
    pub move_rule: Option<String>,
    pub init: Option<String>,
    pub grid: Option<f64>,
    pub fit_observable: Option<String>,
    pub window: Option<[f64; 2]>,
    pub workers: Option<usize>,
}
