//! Zero-temperature single-variable repair.
//!
//! After a newly activated constraint is violated, [`repair`] drives the
//! violated count back to zero with moves that never increase it. Two move
//! rules are available: a focused rule (walk from a random violated
//! constraint) and a greedy rule (best move over all variables in violated
//! constraints).

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{lane_rng, Lane};
use crate::state::ViolationState;

/// Default flip budget per repair call, in flips per variable.
pub const DEFAULT_BUDGET_PER_SITE: u64 = 300;

/// Proposals (accepted or not) allowed per unit of flip budget before a
/// repair call is aborted as stalled.
pub const PROPOSAL_FACTOR: u64 = 50;

/// Largest instance the Hamming-ball oracle accepts.
pub const ORACLE_MAX_VARS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveRule {
    /// Pick a violated constraint, one of its variables, and that variable's
    /// best value; accept iff the energy does not rise.
    Focused,
    /// Apply the best move among all variables in violated constraints.
    Greedy,
}

impl fmt::Display for MoveRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoveRule::Focused => "focused",
            MoveRule::Greedy => "greedy",
        })
    }
}

impl FromStr for MoveRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focused" => Ok(MoveRule::Focused),
            "greedy" => Ok(MoveRule::Greedy),
            _ => Err(Error::param(format!(
                "unknown move rule {s:?}; expected focused or greedy"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairParams {
    /// Maximum accepted flips per repair call.
    pub budget: u64,
    /// Maximum run of consecutive sideways (zero-delta) moves; 0 = unlimited.
    pub sideways_cap: u64,
    pub move_rule: MoveRule,
    pub rng_seed: u64,
}

impl RepairParams {
    pub fn new(budget: u64, sideways_cap: u64, move_rule: MoveRule, rng_seed: u64) -> Result<Self> {
        let p = RepairParams {
            budget,
            sideways_cap,
            move_rule,
            rng_seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Focused rule, unlimited sideways moves, `300 * n_vars` flips per call.
    pub fn default_for(n_vars: u32, rng_seed: u64) -> Self {
        RepairParams {
            budget: DEFAULT_BUDGET_PER_SITE * (n_vars as u64).max(1),
            sideways_cap: 0,
            move_rule: MoveRule::Focused,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::param("repair budget must be at least one flip"));
        }
        Ok(())
    }

    pub fn with_seed(self, rng_seed: u64) -> Self {
        RepairParams { rng_seed, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStop {
    Solved,
    BudgetExhausted,
    /// Too many rejected proposals without reaching the flip budget.
    ProposalStall,
    /// Greedy rule found no move with non-positive delta.
    NoDescent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub success: bool,
    pub flips_used: u64,
    pub final_energy: usize,
    pub stop: RepairStop,
}

/// Repairs `state` with a generator derived from `params.rng_seed`.
pub fn repair(state: &mut ViolationState<'_>, params: &RepairParams) -> Result<RepairOutcome> {
    params.validate()?;
    let mut rng = lane_rng(params.rng_seed, Lane::Repair);
    Ok(repair_with(state, params, &mut rng, |_, _| {}))
}

/// Repair loop with an external generator and a hook called after every
/// accepted move with the state and the move's energy delta.
pub fn repair_with<R, F>(
    state: &mut ViolationState<'_>,
    params: &RepairParams,
    rng: &mut R,
    mut on_move: F,
) -> RepairOutcome
where
    R: Rng + ?Sized,
    F: FnMut(&ViolationState<'_>, i64),
{
    let mut flips = 0u64;
    let mut proposals = 0u64;
    let max_proposals = params.budget.saturating_mul(PROPOSAL_FACTOR);
    let mut sideways_run = 0u64;
    let mut deltas = Vec::new();
    let mut chooser = MoveChooser::new(state.n_vars());

    let stop = loop {
        if state.energy() == 0 {
            break RepairStop::Solved;
        }
        if flips >= params.budget {
            break RepairStop::BudgetExhausted;
        }
        if proposals >= max_proposals {
            break RepairStop::ProposalStall;
        }
        proposals += 1;
        let sideways_allowed = params.sideways_cap == 0 || sideways_run < params.sideways_cap;

        let proposal = match params.move_rule {
            MoveRule::Focused => focused_proposal(state, rng, &mut deltas),
            MoveRule::Greedy => chooser.greedy(state, rng, &mut deltas),
        };
        let (var, value, delta) = proposal;
        let acceptable = delta < 0 || (delta == 0 && sideways_allowed);
        if !acceptable {
            if params.move_rule == MoveRule::Greedy {
                break RepairStop::NoDescent;
            }
            continue;
        }
        let applied = state.flip_unchecked(var, value);
        debug_assert_eq!(applied, delta);
        debug_assert!(applied <= 0, "uphill move accepted");
        flips += 1;
        sideways_run = if applied == 0 { sideways_run + 1 } else { 0 };
        on_move(state, applied);
    };

    if stop == RepairStop::ProposalStall {
        warn!(
            "proposal stall: {proposals} proposals, {flips} flips, energy {} at m = {}",
            state.energy(),
            state.active_prefix()
        );
    }
    RepairOutcome {
        success: state.energy() == 0,
        flips_used: flips,
        final_energy: state.energy(),
        stop,
    }
}

/// Index of the minimum, ties broken uniformly; ignores `skip`.
fn argmin_uniform<R: Rng + ?Sized>(values: &[i64], skip: usize, rng: &mut R) -> (usize, i64) {
    let mut best = (usize::MAX, i64::MAX);
    let mut ties = 0u32;
    for (i, &d) in values.iter().enumerate() {
        if i == skip {
            continue;
        }
        if d < best.1 {
            best = (i, d);
            ties = 1;
        } else if d == best.1 {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                best = (i, d);
            }
        }
    }
    best
}

fn focused_proposal<R: Rng + ?Sized>(
    state: &mut ViolationState<'_>,
    rng: &mut R,
    deltas: &mut Vec<i64>,
) -> (usize, u32, i64) {
    let violated = state.violated();
    let j = violated[rng.random_range(0..violated.len() as u32) as usize] as usize;
    let c = &state.stream().constraints[j];
    let var = c.var_at(rng.random_range(0..c.arity() as u32) as usize) as usize;
    state.deltas_all_values(var, deltas);
    let cur = state.assignment().get(var) as usize;
    let (value, delta) = argmin_uniform(deltas, cur, rng);
    (var, value as u32, delta)
}

struct MoveChooser {
    stamp: Vec<u32>,
    epoch: u32,
    candidates: Vec<usize>,
}

impl MoveChooser {
    fn new(n: usize) -> Self {
        MoveChooser {
            stamp: vec![0; n],
            epoch: 0,
            candidates: Vec::new(),
        }
    }

    fn greedy<R: Rng + ?Sized>(
        &mut self,
        state: &mut ViolationState<'_>,
        rng: &mut R,
        deltas: &mut Vec<i64>,
    ) -> (usize, u32, i64) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.candidates.clear();
        for &j in state.violated() {
            for x in state.stream().constraints[j as usize].vars() {
                let x = x as usize;
                if self.stamp[x] != self.epoch {
                    self.stamp[x] = self.epoch;
                    self.candidates.push(x);
                }
            }
        }
        // Candidate order follows the violated set, which is itself a
        // deterministic function of the move history.
        let mut best = (usize::MAX, 0u32, i64::MAX);
        let mut ties = 0u32;
        for &x in &self.candidates {
            state.deltas_all_values(x, deltas);
            let cur = state.assignment().get(x) as usize;
            for (v, &d) in deltas.iter().enumerate() {
                if v == cur {
                    continue;
                }
                if d < best.2 {
                    best = (x, v as u32, d);
                    ties = 1;
                } else if d == best.2 {
                    ties += 1;
                    if rng.random_range(0..ties) == 0 {
                        best = (x, v as u32, d);
                    }
                }
            }
        }
        best
    }
}

/// Exact minimum number of variables that must change to reach a zero-energy
/// assignment of the active prefix, searching Hamming balls of growing
/// radius. `Ok(None)` means no solution within `max_hamming`.
pub fn min_repair_oracle(state: &ViolationState<'_>, max_hamming: usize) -> Result<Option<usize>> {
    let n = state.n_vars();
    if n > ORACLE_MAX_VARS {
        return Err(Error::Capacity(format!(
            "Hamming-ball oracle limited to N <= {ORACLE_MAX_VARS}, got N = {n}"
        )));
    }
    let mut work = state.clone();
    for radius in 0..=max_hamming.min(n) {
        if search_ball(&mut work, 0, radius) {
            return Ok(Some(radius));
        }
    }
    Ok(None)
}

/// Whether changing exactly `remaining` variables with index >= `from` can
/// zero the energy.
fn search_ball(state: &mut ViolationState<'_>, from: usize, remaining: usize) -> bool {
    if remaining == 0 {
        return state.energy() == 0;
    }
    let n = state.n_vars();
    for x in from..=n.saturating_sub(remaining) {
        let original = state.assignment().get(x);
        for value in (0..state.domain()).filter(|&v| v != original) {
            state.flip_unchecked(x, value);
            let found = search_ball(state, x + 1, remaining - 1);
            state.flip_unchecked(x, original);
            if found {
                return true;
            }
        }
    }
    false
}
