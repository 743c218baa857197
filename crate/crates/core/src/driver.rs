//! The recursive incremental procedure: activate one constraint, repair,
//! record, and stop at the first failed repair or at the end of the stream.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repair::{repair_with, RepairParams};
use crate::rng::{lane_rng, substream_rng, Lane};
use crate::state::{count_violated, Assignment, ViolationState};
use crate::stream::{generate_stream, ConstraintStream, ProblemKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Independent uniform values, seeded from the stream seed.
    UniformRandom,
    AllZero,
}

impl fmt::Display for InitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitRule::UniformRandom => "random",
            InitRule::AllZero => "zero",
        })
    }
}

impl FromStr for InitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitRule::UniformRandom),
            "zero" => Ok(InitRule::AllZero),
            _ => Err(Error::param(format!(
                "unknown init rule {s:?}; expected random or zero"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Active prefix length after the step.
    pub m: u64,
    pub n_vars: u64,
    /// Accepted flips spent on this step.
    pub flips: u64,
    /// Accepted flips summed over steps `1..=m`.
    pub total_flips: u64,
    pub success: bool,
}

impl StepRecord {
    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.n_vars as f64
    }

    pub fn cumulative_flips_per_site(&self) -> f64 {
        self.total_flips as f64 / self.n_vars as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StreamExhausted,
    RepairFailed { m_stop: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_vars: u32,
    /// Stream length `M`.
    pub n_constraints: u64,
    pub kind: ProblemKind,
    pub seed: u64,
    pub params: RepairParams,
    pub init: InitRule,
    pub records: Vec<StepRecord>,
    pub stop_reason: StopReason,
}

impl Trajectory {
    /// Density at which repair first failed, if it did.
    pub fn alpha_stop(&self) -> Option<f64> {
        match self.stop_reason {
            StopReason::RepairFailed { m_stop } => Some(m_stop as f64 / self.n_vars as f64),
            StopReason::StreamExhausted => None,
        }
    }

    pub fn total_flips(&self) -> u64 {
        self.records.last().map_or(0, |r| r.total_flips)
    }

    /// Total accepted flips over the successful steps with `m / N <= alpha`.
    pub fn flips_up_to(&self, alpha: f64) -> u64 {
        let m_max = alpha_to_prefix(alpha, self.n_vars);
        self.records
            .iter()
            .take_while(|r| r.m <= m_max && r.success)
            .last()
            .map_or(0, |r| r.total_flips)
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut total = 0;
        for (i, r) in self.records.iter().enumerate() {
            if r.m != i as u64 + 1 {
                return Err(format!("record {i} has m = {}", r.m));
            }
            total += r.flips;
            if r.total_flips != total {
                return Err(format!("record {i}: prefix sum {} != {total}", r.total_flips));
            }
            if !r.success && i + 1 != self.records.len() {
                return Err(format!("failed record {i} is not last"));
            }
        }
        match (self.stop_reason, self.records.last()) {
            (StopReason::RepairFailed { m_stop }, Some(r)) if r.m == m_stop && !r.success => Ok(()),
            (StopReason::RepairFailed { .. }, _) => Err("repair_failed without a failed last record".into()),
            (StopReason::StreamExhausted, last) => {
                if last.is_some_and(|r| !r.success) {
                    Err("stream_exhausted but last record failed".into())
                } else if self.records.len() as u64 != self.n_constraints {
                    Err("stream_exhausted before the last constraint".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Largest prefix length `m` with `m / N <= alpha`, robust to the rounding
/// of `alpha` itself (e.g. `0.29 * 100`).
pub fn alpha_to_prefix(alpha: f64, n_vars: u32) -> u64 {
    let x = alpha * n_vars as f64;
    if x <= 0.0 {
        0
    } else {
        (x + 1e-9).floor() as u64
    }
}

/// Hooks into a driver run. Every method has an empty default.
pub trait RunObserver {
    /// After constraint `m` was activated, before any repair.
    fn on_activate(&mut self, _state: &ViolationState<'_>) {}
    /// After each accepted repair move.
    fn on_move(&mut self, _state: &ViolationState<'_>, _delta: i64) {}
    /// After the step's record was produced.
    fn on_step(&mut self, _record: &StepRecord, _state: &ViolationState<'_>) {}
}

impl RunObserver for () {}

pub fn initial_assignment(stream: &ConstraintStream, init: InitRule, init_seed: u64) -> Assignment {
    let n = stream.n_vars as usize;
    let domain = stream.kind.domain_size();
    match init {
        InitRule::AllZero => Assignment::zeros(n, domain),
        InitRule::UniformRandom => Assignment::uniform(n, domain, &mut lane_rng(init_seed, Lane::Init)),
    }
}

/// Runs the procedure over `stream`, drawing the random initial assignment
/// from `stream.seed` and repair moves from `repair.rng_seed`.
pub fn run_incremental(stream: &ConstraintStream, repair: &RepairParams, init: InitRule) -> Result<Trajectory> {
    run_observed(stream, repair, init, stream.seed, &mut ()).map(|(t, _)| t)
}

/// [`run_incremental`] with an explicit initial-assignment seed and an
/// observer; also returns the final assignment.
pub fn run_observed<O: RunObserver + ?Sized>(
    stream: &ConstraintStream,
    repair: &RepairParams,
    init: InitRule,
    init_seed: u64,
    observer: &mut O,
) -> Result<(Trajectory, Assignment)> {
    repair.validate()?;
    stream.validate()?;
    let start = initial_assignment(stream, init, init_seed);
    let mut state = ViolationState::new(stream, start)?;
    let mut rng = lane_rng(repair.rng_seed, Lane::Repair);
    let n = stream.n_vars as u64;
    let mut records = Vec::with_capacity(stream.len());
    let mut total = 0u64;
    let mut stop_reason = StopReason::StreamExhausted;

    while !state.is_exhausted() {
        let violated = state.activate_next()?;
        observer.on_activate(&state);
        let m = state.active_prefix() as u64;
        let (flips, success) = if violated {
            let out = repair_with(&mut state, repair, &mut rng, |s, d| observer.on_move(s, d));
            (out.flips_used, out.success)
        } else {
            (0, true)
        };
        total += flips;
        let record = StepRecord {
            m,
            n_vars: n,
            flips,
            total_flips: total,
            success,
        };
        records.push(record);
        observer.on_step(&record, &state);
        if !success {
            stop_reason = StopReason::RepairFailed { m_stop: m };
            break;
        }
        if m.is_power_of_two() {
            debug_assert_eq!(count_violated(stream, m as usize, state.assignment().values()), 0);
        }
    }
    if stop_reason == StopReason::StreamExhausted {
        debug_assert_eq!(state.recount_energy(), 0);
    }

    let trajectory = Trajectory {
        n_vars: stream.n_vars,
        n_constraints: stream.len() as u64,
        kind: stream.kind,
        seed: stream.seed,
        params: *repair,
        init,
        records,
        stop_reason,
    };
    Ok((trajectory, state.into_assignment()))
}

/// Stream length for a target density: `ceil(alpha_max * N)`.
pub fn constraints_for_alpha(alpha_max: f64, n_vars: u32) -> Result<usize> {
    if !(alpha_max.is_finite() && alpha_max >= 0.0) {
        return Err(Error::param(format!(
            "alpha_max must be finite and >= 0, got {alpha_max}"
        )));
    }
    Ok((alpha_max * n_vars as f64 - 1e-9).ceil().max(0.0) as usize)
}

/// One independent run per seed. Each run generates its stream from the
/// seed and uses the same seed for repair moves (`repair.rng_seed` is
/// overridden). `workers = None` uses the global rayon pool.
pub fn sweep(
    kind: ProblemKind,
    n_vars: u32,
    alpha_max: f64,
    seeds: &[u64],
    repair: &RepairParams,
    init: InitRule,
    workers: Option<usize>,
) -> Result<Vec<Trajectory>> {
    if seeds.is_empty() {
        return Err(Error::param("sweep needs at least one seed"));
    }
    repair.validate()?;
    let m = constraints_for_alpha(alpha_max, n_vars)?;
    let one = |&seed: &u64| -> Result<Trajectory> {
        let stream = generate_stream(kind, n_vars, m, seed)?;
        run_incremental(&stream, &repair.with_seed(seed), init)
    };
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::param(format!("cannot build worker pool: {e}")))?;
            pool.install(|| seeds.par_iter().map(one).collect())
        }
        None => seeds.par_iter().map(one).collect(),
    }
}

/// Independent initial-assignment seed for trial `index` on a stream.
pub fn trial_init_seed(stream_seed: u64, index: u32) -> u64 {
    use rand::RngCore;
    substream_rng(stream_seed, Lane::Init, index + 1).next_u64()
}
