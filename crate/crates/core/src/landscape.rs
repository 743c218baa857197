//! Exact small-instance analysis of the nested solution sets of a stream.
//!
//! The pseudo-energy of a configuration is `M` minus the length of the
//! longest prefix it satisfies. Its level sets are the solution sets of the
//! prefixes, which are nested, so the pseudo-energy is a single-valued
//! envelope over them. The incremental procedure only ever moves within the
//! level set of the current prefix, which is what
//! [`descent_equivalence_check`] verifies move by move.

use std::io::Write;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{run_observed, trial_init_seed, InitRule, RunObserver, StepRecord};
use crate::error::{Error, Result};
use crate::repair::RepairParams;
use crate::state::{count_violated, Assignment, ViolationState};
use crate::stream::ConstraintStream;

/// Largest configuration space [`enumerate_prefixes`] will walk.
pub const MAX_CONFIGURATIONS: u64 = 4_000_000;

fn check_domain(assignment: &Assignment, stream: &ConstraintStream) -> Result<()> {
    if assignment.len() != stream.n_vars as usize || assignment.domain() != stream.kind.domain_size() {
        return Err(Error::param(format!(
            "assignment (N = {}, domain {}) does not fit a {} stream with N = {}",
            assignment.len(),
            assignment.domain(),
            stream.kind,
            stream.n_vars
        )));
    }
    Ok(())
}

/// Length of the longest prefix of `stream` satisfied by `values`.
fn satisfied_prefix(stream: &ConstraintStream, values: &[u32]) -> usize {
    stream
        .constraints
        .iter()
        .position(|c| !c.is_satisfied(values))
        .unwrap_or(stream.len())
}

/// `M - max{m : values satisfy c_1..c_m}`.
pub fn pseudo_energy(assignment: &Assignment, stream: &ConstraintStream) -> Result<usize> {
    check_domain(assignment, stream)?;
    Ok(stream.len() - satisfied_prefix(stream, assignment.values()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixReport {
    pub m: usize,
    pub solution_count: u64,
    /// Connected components of the solution set under single-variable changes.
    pub cluster_count: u64,
    /// Solutions at `m` are a subset of those at `m - 1` (true at `m = 0`).
    pub nested_ok: bool,
}

/// Size of the configuration space, or a capacity error past the guard.
pub fn configuration_count(stream: &ConstraintStream) -> Result<u64> {
    let q = stream.kind.domain_size() as u64;
    let mut total = 1u64;
    for _ in 0..stream.n_vars {
        total = total.saturating_mul(q);
        if total > MAX_CONFIGURATIONS {
            return Err(Error::Capacity(format!(
                "{}^{} configurations exceed the enumeration limit of {MAX_CONFIGURATIONS}",
                q, stream.n_vars
            )));
        }
    }
    Ok(total)
}

struct Bitset(Vec<u64>);

impl Bitset {
    fn new(len: usize) -> Self {
        Bitset(vec![0; len.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn count(&self) -> u64 {
        self.0.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn is_subset_of(&self, other: &Bitset) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & !b == 0)
    }
}

/// Exact solution and cluster counts for every prefix `0..=m_max`.
///
/// Configurations are indexed in mixed radix, variable 0 least significant.
pub fn enumerate_prefixes(stream: &ConstraintStream, m_max: usize) -> Result<Vec<PrefixReport>> {
    stream.validate()?;
    let total = configuration_count(stream)? as usize;
    let m_max = m_max.min(stream.len());
    let n = stream.n_vars as usize;
    let q = stream.kind.domain_size();

    // Longest satisfied prefix of every configuration, capped at m_max.
    let truncated = stream.prefix(m_max);
    let mut reach = vec![0u32; total];
    const BLOCK: usize = 1 << 12;
    reach.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let mut values = decode(b * BLOCK, n, q);
        for slot in chunk.iter_mut() {
            *slot = satisfied_prefix(&truncated, &values) as u32;
            increment(&mut values, q);
        }
    });

    let sets: Vec<Bitset> = (0..=m_max)
        .into_par_iter()
        .map(|m| {
            let mut s = Bitset::new(total);
            for (x, &r) in reach.iter().enumerate() {
                if r as usize >= m {
                    s.set(x);
                }
            }
            s
        })
        .collect();

    let reports = (0..=m_max)
        .into_par_iter()
        .map(|m| {
            let set = &sets[m];
            let nested_ok = m == 0 || set.is_subset_of(&sets[m - 1]);
            let solution_count = set.count();
            let cluster_count = count_clusters(set, total, n, q);
            PrefixReport {
                m,
                solution_count,
                cluster_count,
                nested_ok,
            }
        })
        .collect();
    Ok(reports)
}

fn decode(mut index: usize, n: usize, q: u32) -> Vec<u32> {
    (0..n)
        .map(|_| {
            let d = (index % q as usize) as u32;
            index /= q as usize;
            d
        })
        .collect()
}

fn increment(values: &mut [u32], q: u32) {
    for v in values.iter_mut() {
        *v += 1;
        if *v < q {
            return;
        }
        *v = 0;
    }
}

fn count_clusters(set: &Bitset, total: usize, n: usize, q: u32) -> u64 {
    let mut uf = UnionFind::<u32>::new(total);
    let mut values = vec![0u32; n];
    for x in 0..total {
        if x > 0 {
            increment(&mut values, q);
        }
        if !set.get(x) {
            continue;
        }
        let mut stride = 1usize;
        for &digit in values.iter() {
            // Only link upward in each coordinate; the other direction is
            // covered from the neighbour's side.
            for a in digit + 1..q {
                let y = x + (a - digit) as usize * stride;
                if set.get(y) {
                    uf.union(x as u32, y as u32);
                }
            }
            stride *= q as usize;
        }
    }
    (0..total)
        .filter(|&x| set.get(x) && uf.find_mut(x as u32) == x as u32)
        .count() as u64
}

/// Writes `m,solution_count,cluster_count,nested_ok` rows.
pub fn write_prefix_csv<W: Write>(reports: &[PrefixReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "m,solution_count,cluster_count,nested_ok")?;
    for r in reports {
        writeln!(w, "{},{},{},{}", r.m, r.solution_count, r.cluster_count, r.nested_ok)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescentReport {
    pub trials: usize,
    pub steps_checked: u64,
    pub moves_checked: u64,
    /// Accepted moves that raised the violated count of the active prefix.
    pub uphill_moves: u64,
    /// Successful steps whose configuration had pseudo-energy above `M - m`.
    pub envelope_violations: u64,
    /// Successful steps that left active constraints violated.
    pub unsatisfied_steps: u64,
}

impl DescentReport {
    pub fn passed(&self) -> bool {
        self.uphill_moves == 0 && self.envelope_violations == 0 && self.unsatisfied_steps == 0
    }
}

/// Observer that re-derives every quantity by direct evaluation; it never
/// trusts the state's incremental bookkeeping.
pub struct DescentChecker<'s> {
    stream: &'s ConstraintStream,
    energy: usize,
    report: DescentReport,
}

impl<'s> DescentChecker<'s> {
    pub fn new(stream: &'s ConstraintStream) -> Self {
        DescentChecker {
            stream,
            energy: 0,
            report: DescentReport::default(),
        }
    }

    pub fn report(&self) -> DescentReport {
        self.report
    }

    fn recount(&self, state: &ViolationState<'_>) -> usize {
        count_violated(self.stream, state.active_prefix(), state.assignment().values())
    }
}

impl RunObserver for DescentChecker<'_> {
    fn on_activate(&mut self, state: &ViolationState<'_>) {
        self.energy = self.recount(state);
    }

    fn on_move(&mut self, state: &ViolationState<'_>, _delta: i64) {
        let e = self.recount(state);
        self.report.moves_checked += 1;
        if e > self.energy {
            self.report.uphill_moves += 1;
        }
        self.energy = e;
    }

    fn on_step(&mut self, record: &StepRecord, state: &ViolationState<'_>) {
        if !record.success {
            return;
        }
        self.report.steps_checked += 1;
        let values = state.assignment().values();
        if count_violated(self.stream, record.m as usize, values) != 0 {
            self.report.unsatisfied_steps += 1;
        }
        let pe = self.stream.len() - satisfied_prefix(self.stream, values);
        if pe > self.stream.len() - record.m as usize {
            self.report.envelope_violations += 1;
        }
    }
}

/// Runs `trials` independent driver runs (distinct initial assignments and
/// repair seeds) under a [`DescentChecker`].
pub fn descent_equivalence_check(
    stream: &ConstraintStream,
    params: &RepairParams,
    trials: usize,
) -> Result<DescentReport> {
    check_descent_with(stream, trials, |trial, checker| {
        let init_seed = trial_init_seed(stream.seed, trial as u32);
        let p = params.with_seed(params.rng_seed.wrapping_add(trial as u64));
        run_observed(stream, &p, InitRule::UniformRandom, init_seed, checker).map(|_| ())
    })
}

/// Generic form of [`descent_equivalence_check`]: `run(trial, checker)` must
/// drive one run and feed it every event.
pub fn check_descent_with<F>(stream: &ConstraintStream, trials: usize, mut run: F) -> Result<DescentReport>
where
    F: FnMut(usize, &mut DescentChecker<'_>) -> Result<()>,
{
    configuration_count(stream)?;
    let mut total = DescentReport::default();
    for trial in 0..trials {
        let mut checker = DescentChecker::new(stream);
        run(trial, &mut checker)?;
        let r = checker.report();
        total.steps_checked += r.steps_checked;
        total.moves_checked += r.moves_checked;
        total.uphill_moves += r.uphill_moves;
        total.envelope_violations += r.envelope_violations;
        total.unsatisfied_steps += r.unsatisfied_steps;
    }
    total.trials = trials;
    Ok(total)
}
