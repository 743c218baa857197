//! Assignments and incremental violation bookkeeping over an active prefix.
//!
//! [`ViolationState`] keeps, for the first `m` constraints of a stream, the set
//! of violated constraints and a per-variable incidence list. Activating a
//! constraint and flipping a variable both cost time proportional to the
//! local degree, never to `N` or `M`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::stream::{Constraint, ConstraintStream};

const ABSENT: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Assignment {
    values: Vec<u32>,
    domain: u32,
}

impl Assignment {
    pub fn new(values: Vec<u32>, domain: u32) -> Result<Self> {
        if domain < 2 {
            return Err(Error::param(format!("domain size must be >= 2, got {domain}")));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| v >= domain) {
            return Err(Error::param(format!("value {v} at variable {i} outside [0, {domain})")));
        }
        Ok(Assignment { values, domain })
    }

    pub fn zeros(n: usize, domain: u32) -> Self {
        Assignment {
            values: vec![0; n],
            domain,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(n: usize, domain: u32, rng: &mut R) -> Self {
        Assignment {
            values: (0..n).map(|_| rng.random_range(0..domain)).collect(),
            domain,
        }
    }

    #[inline]
    pub fn get(&self, var: usize) -> u32 {
        self.values[var]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn domain(&self) -> u32 {
        self.domain
    }

    /// Number of positions where the two assignments differ.
    pub fn hamming(&self, other: &Assignment) -> usize {
        self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count()
    }

    pub(crate) fn set(&mut self, var: usize, value: u32) {
        self.values[var] = value;
    }
}

/// Number of constraints among the first `m` that `values` violates, by
/// direct evaluation.
pub fn count_violated(stream: &ConstraintStream, m: usize, values: &[u32]) -> usize {
    stream.constraints[..m]
        .iter()
        .filter(|c| !c.is_satisfied(values))
        .count()
}

#[derive(Clone, Debug)]
pub struct ViolationState<'s> {
    stream: &'s ConstraintStream,
    assignment: Assignment,
    active: usize,
    /// Violated active constraints, in arbitrary order.
    violated: Vec<u32>,
    /// Position of each constraint in `violated`, or `ABSENT`.
    position: Vec<u32>,
    /// Active constraints incident to each variable.
    incidence: Vec<Vec<u32>>,
    /// True-literal count per active clause; unused for edges.
    true_count: Vec<u32>,
    constraint_visits: u64,
}

impl<'s> ViolationState<'s> {
    /// Starts with an empty active prefix.
    pub fn new(stream: &'s ConstraintStream, assignment: Assignment) -> Result<Self> {
        if assignment.len() != stream.n_vars as usize {
            return Err(Error::param(format!(
                "assignment has {} variables, stream has {}",
                assignment.len(),
                stream.n_vars
            )));
        }
        if assignment.domain() != stream.kind.domain_size() {
            return Err(Error::param(format!(
                "assignment domain {} does not match {} (domain {})",
                assignment.domain(),
                stream.kind,
                stream.kind.domain_size()
            )));
        }
        Ok(ViolationState {
            stream,
            assignment,
            active: 0,
            violated: Vec::new(),
            position: vec![ABSENT; stream.len()],
            incidence: vec![Vec::new(); stream.n_vars as usize],
            true_count: vec![0; stream.len()],
            constraint_visits: 0,
        })
    }

    pub fn stream(&self) -> &'s ConstraintStream {
        self.stream
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn into_assignment(self) -> Assignment {
        self.assignment
    }

    pub fn n_vars(&self) -> usize {
        self.assignment.len()
    }

    pub fn domain(&self) -> u32 {
        self.assignment.domain()
    }

    /// Length `m` of the active prefix.
    pub fn active_prefix(&self) -> usize {
        self.active
    }

    pub fn is_exhausted(&self) -> bool {
        self.active == self.stream.len()
    }

    /// Number of violated active constraints.
    #[inline]
    pub fn energy(&self) -> usize {
        self.violated.len()
    }

    /// Indices (0-based) of violated active constraints, in no particular order.
    pub fn violated(&self) -> &[u32] {
        &self.violated
    }

    pub fn is_violated(&self, constraint: usize) -> bool {
        self.position[constraint] != ABSENT
    }

    /// Active constraints touching `var`.
    pub fn incident(&self, var: usize) -> &[u32] {
        &self.incidence[var]
    }

    /// Constraint records visited by flips and delta queries so far.
    pub fn constraint_visits(&self) -> u64 {
        self.constraint_visits
    }

    /// From-scratch violated count of the active prefix.
    pub fn recount_energy(&self) -> usize {
        count_violated(self.stream, self.active, self.assignment.values())
    }

    /// Full consistency check of the incremental bookkeeping against a
    /// recount. Intended for tests.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let values = self.assignment.values();
        for (j, c) in self.stream.constraints.iter().enumerate() {
            let active = j < self.active;
            let flagged = self.position[j] != ABSENT;
            if !active && flagged {
                return Err(format!("inactive constraint {j} is in the violated set"));
            }
            if active && flagged == c.is_satisfied(values) {
                return Err(format!("constraint {j}: violated flag {flagged} is stale"));
            }
            if active {
                if let Constraint::Clause(lits) = c {
                    let t = lits.iter().filter(|l| l.is_true(values[l.var as usize])).count();
                    if t as u32 != self.true_count[j] {
                        return Err(format!("clause {j}: true count {} != {t}", self.true_count[j]));
                    }
                }
            }
        }
        for (p, &j) in self.violated.iter().enumerate() {
            if self.position[j as usize] != p as u32 {
                return Err(format!("position index of constraint {j} is stale"));
            }
        }
        for (x, inc) in self.incidence.iter().enumerate() {
            let expected = self.stream.constraints[..self.active]
                .iter()
                .filter(|c| c.vars().any(|y| y as usize == x))
                .count();
            if expected != inc.len() || inc.iter().any(|&j| j as usize >= self.active) {
                return Err(format!(
                    "incidence list of variable {x} does not cover the active prefix"
                ));
            }
        }
        Ok(())
    }

    /// Activates constraint `m + 1` and reports whether the current
    /// assignment violates it. Never changes the assignment.
    pub fn activate_next(&mut self) -> Result<bool> {
        if self.is_exhausted() {
            return Err(Error::SequenceEnd(self.stream.len()));
        }
        let j = self.active;
        let c = &self.stream.constraints[j];
        for x in c.vars() {
            self.incidence[x as usize].push(j as u32);
        }
        let violated = match c {
            Constraint::Edge { u, v } => self.assignment.get(*u as usize) == self.assignment.get(*v as usize),
            Constraint::Clause(lits) => {
                let t = lits
                    .iter()
                    .filter(|l| l.is_true(self.assignment.get(l.var as usize)))
                    .count() as u32;
                self.true_count[j] = t;
                t == 0
            }
        };
        if violated {
            self.insert_violated(j);
        }
        self.active += 1;
        Ok(violated)
    }

    fn check_move(&self, var: usize, new_value: u32) -> Result<()> {
        if var >= self.n_vars() {
            return Err(Error::param(format!("variable {var} outside [0, {})", self.n_vars())));
        }
        if new_value >= self.domain() {
            return Err(Error::param(format!(
                "value {new_value} outside domain [0, {})",
                self.domain()
            )));
        }
        Ok(())
    }

    /// Sets `var` to `new_value` and returns the energy change. Setting a
    /// variable to its current value is a no-op with delta 0.
    pub fn flip(&mut self, var: usize, new_value: u32) -> Result<i64> {
        self.check_move(var, new_value)?;
        Ok(self.flip_unchecked(var, new_value))
    }

    /// Energy change `flip` would produce, without mutating anything.
    pub fn energy_delta_if(&self, var: usize, new_value: u32) -> Result<i64> {
        self.check_move(var, new_value)?;
        Ok(self.delta_unchecked(var, new_value))
    }

    /// Whether constraint `j` would be violated after `var := new_value`.
    #[inline]
    fn violated_after(&self, j: usize, var: u32, new_value: u32) -> bool {
        match &self.stream.constraints[j] {
            Constraint::Edge { u, v } => {
                let other = if *u == var { *v } else { *u };
                self.assignment.get(other as usize) == new_value
            }
            Constraint::Clause(lits) => {
                let lit = lits
                    .iter()
                    .find(|l| l.var == var)
                    .expect("incident clause contains var");
                let old = self.assignment.get(var as usize);
                let others = self.true_count[j] - lit.is_true(old) as u32;
                others == 0 && !lit.is_true(new_value)
            }
        }
    }

    pub(crate) fn delta_unchecked(&self, var: usize, new_value: u32) -> i64 {
        if self.assignment.get(var) == new_value {
            return 0;
        }
        let mut delta = 0i64;
        for &j in &self.incidence[var] {
            let before = self.position[j as usize] != ABSENT;
            let after = self.violated_after(j as usize, var as u32, new_value);
            delta += after as i64 - before as i64;
        }
        delta
    }

    pub(crate) fn flip_unchecked(&mut self, var: usize, new_value: u32) -> i64 {
        let old = self.assignment.get(var);
        if old == new_value {
            return 0;
        }
        let before_energy = self.energy() as i64;
        self.constraint_visits += self.incidence[var].len() as u64;
        for i in 0..self.incidence[var].len() {
            let j = self.incidence[var][i] as usize;
            let after = self.violated_after(j, var as u32, new_value);
            if let Constraint::Clause(lits) = &self.stream.constraints[j] {
                let lit = lits.iter().find(|l| l.var as usize == var).expect("incident");
                self.true_count[j] = self.true_count[j] - lit.is_true(old) as u32 + lit.is_true(new_value) as u32;
            }
            match (self.position[j] != ABSENT, after) {
                (false, true) => self.insert_violated(j),
                (true, false) => self.remove_violated(j),
                _ => {}
            }
        }
        self.assignment.set(var, new_value);
        self.energy() as i64 - before_energy
    }

    /// Energy change for every value of `var`, written into `out`
    /// (`out[current] = 0`). Coloring uses one pass over the incidence list.
    pub(crate) fn deltas_all_values(&mut self, var: usize, out: &mut Vec<i64>) {
        let q = self.domain() as usize;
        out.clear();
        out.resize(q, 0);
        let cur = self.assignment.get(var);
        self.constraint_visits += self.incidence[var].len() as u64;
        match self.stream.kind {
            crate::stream::ProblemKind::Coloring { .. } => {
                // out[c] temporarily counts active neighbours holding colour c.
                for &j in &self.incidence[var] {
                    if let Constraint::Edge { u, v } = &self.stream.constraints[j as usize] {
                        let other = if *u as usize == var { *v } else { *u };
                        out[self.assignment.get(other as usize) as usize] += 1;
                    }
                }
                let base = out[cur as usize];
                for d in out.iter_mut() {
                    *d -= base;
                }
            }
            crate::stream::ProblemKind::KSat { .. } => {
                out[1 - cur as usize] = self.delta_unchecked(var, 1 - cur);
            }
        }
    }

    fn insert_violated(&mut self, j: usize) {
        debug_assert_eq!(self.position[j], ABSENT);
        self.position[j] = self.violated.len() as u32;
        self.violated.push(j as u32);
    }

    fn remove_violated(&mut self, j: usize) {
        let p = self.position[j] as usize;
        let last = *self.violated.last().expect("non-empty");
        self.violated.swap_remove(p);
        if last as usize != j {
            self.position[last as usize] = p as u32;
        }
        self.position[j] = ABSENT;
    }
}

/// Creates a state with an empty active prefix over `stream`.
pub fn init_state(stream: &ConstraintStream, assignment: Assignment) -> Result<ViolationState<'_>> {
    ViolationState::new(stream, assignment)
}
