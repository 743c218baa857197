//! Incremental constraint streams for random q-coloring and random K-SAT.
//!
//! A [`ConstraintStream`] is an ordered list `c_1..c_M` over `N` variables.
//! Activating its prefixes one constraint at a time is the difficulty axis of
//! the whole crate: the constraint density at prefix `m` is `m / N`.
//!
//! Streams serialize to a line-oriented text format:
//!
//! ```text
//! CSPSTREAM v1 coloring N=4 M=2 q=3 seed=7 gen=xoshiro256pp-sm64-v1
//! E 0 3
//! E 1 2
//! ```
//!
//! K-SAT streams use `ksat`, `K=<k>` and clause lines `C +0 -5 +9` (0-based
//! variables, explicit polarity).

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{lane_rng, Lane, GENERATOR_ID};

/// Which random ensemble a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemKind {
    /// Graph coloring with `q` colours; constraints are edges.
    Coloring { q: u32 },
    /// Boolean satisfiability with `k` literals per clause.
    KSat { k: u32 },
}

/// Largest colour count accepted; values are stored as `u32` but larger
/// domains are never useful for the experiments here.
pub const MAX_COLORS: u32 = 256;

impl ProblemKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProblemKind::Coloring { q } if !(2..=MAX_COLORS).contains(&q) => Err(Error::param(format!(
                "coloring needs 2 <= q <= {MAX_COLORS}, got q = {q}"
            ))),
            ProblemKind::KSat { k: 0 } => Err(Error::param("K-SAT needs at least one literal per clause")),
            _ => Ok(()),
        }
    }

    /// Number of values a single variable can take.
    pub fn domain_size(&self) -> u32 {
        match *self {
            ProblemKind::Coloring { q } => q,
            ProblemKind::KSat { .. } => 2,
        }
    }

    /// `q` for coloring, `K` for K-SAT.
    pub fn parameter(&self) -> u32 {
        match *self {
            ProblemKind::Coloring { q } => q,
            ProblemKind::KSat { k } => k,
        }
    }

    fn family(&self) -> &'static str {
        match self {
            ProblemKind::Coloring { .. } => "coloring",
            ProblemKind::KSat { .. } => "ksat",
        }
    }
}

/// Short names `col<q>` and `sat<K>`.
impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ProblemKind::Coloring { q } => write!(f, "col{q}"),
            ProblemKind::KSat { k } => write!(f, "sat{k}"),
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::param(format!("unknown problem kind {s:?}; expected col<q> or sat<K>"));
        let kind = if let Some(q) = s.strip_prefix("col") {
            ProblemKind::Coloring {
                q: q.parse().map_err(|_| bad())?,
            }
        } else if let Some(k) = s.strip_prefix("sat") {
            ProblemKind::KSat {
                k: k.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// A signed occurrence of a Boolean variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub var: u32,
    pub positive: bool,
}

impl Literal {
    pub fn new(var: u32, positive: bool) -> Self {
        Literal { var, positive }
    }

    /// Whether the literal is true when its variable holds `value` (0 or 1).
    #[inline]
    pub fn is_true(&self, value: u32) -> bool {
        (value == 1) == self.positive
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.positive { '+' } else { '-' };
        write!(f, "{sign}{}", self.var)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    /// Endpoints must receive different colours. Stored with `u < v`.
    Edge { u: u32, v: u32 },
    /// At least one literal must be true.
    Clause(Box<[Literal]>),
}

impl Constraint {
    /// Builds an edge in canonical orientation.
    pub fn edge(a: u32, b: u32) -> Self {
        Constraint::Edge {
            u: a.min(b),
            v: a.max(b),
        }
    }

    pub fn clause(literals: impl Into<Box<[Literal]>>) -> Self {
        Constraint::Clause(literals.into())
    }

    /// Number of variables the constraint touches.
    #[inline]
    pub fn arity(&self) -> usize {
        match self {
            Constraint::Edge { .. } => 2,
            Constraint::Clause(lits) => lits.len(),
        }
    }

    /// The `i`-th variable, `i < arity()`.
    #[inline]
    pub fn var_at(&self, i: usize) -> u32 {
        match self {
            Constraint::Edge { u, v } => {
                if i == 0 {
                    *u
                } else {
                    *v
                }
            }
            Constraint::Clause(lits) => lits[i].var,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.arity()).map(move |i| self.var_at(i))
    }

    /// Direct evaluation against a full value vector.
    pub fn is_satisfied(&self, values: &[u32]) -> bool {
        match self {
            Constraint::Edge { u, v } => values[*u as usize] != values[*v as usize],
            Constraint::Clause(lits) => lits.iter().any(|l| l.is_true(values[l.var as usize])),
        }
    }

    fn check(&self, n_vars: u32, kind: ProblemKind) -> std::result::Result<(), String> {
        match (self, kind) {
            (Constraint::Edge { u, v }, ProblemKind::Coloring { .. }) => {
                if *u >= n_vars || *v >= n_vars {
                    return Err(format!("edge ({u}, {v}) has an index outside [0, {n_vars})"));
                }
                if u == v {
                    return Err(format!("self-loop on vertex {u}"));
                }
                if u > v {
                    return Err(format!("edge ({u}, {v}) is not in canonical order"));
                }
                Ok(())
            }
            (Constraint::Clause(lits), ProblemKind::KSat { k }) => {
                if lits.len() != k as usize {
                    return Err(format!("clause has {} literals, expected {k}", lits.len()));
                }
                for (i, l) in lits.iter().enumerate() {
                    if l.var >= n_vars {
                        return Err(format!("literal {l} is outside [0, {n_vars})"));
                    }
                    if lits[..i].iter().any(|o| o.var == l.var) {
                        return Err(format!("variable {} repeated within a clause", l.var));
                    }
                }
                Ok(())
            }
            (Constraint::Edge { .. }, _) => Err("edge in a K-SAT stream".into()),
            (Constraint::Clause(_), _) => Err("clause in a coloring stream".into()),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Edge { u, v } => write!(f, "E {u} {v}"),
            Constraint::Clause(lits) => {
                f.write_str("C")?;
                for l in lits.iter() {
                    write!(f, " {l}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintStream {
    pub n_vars: u32,
    pub kind: ProblemKind,
    pub constraints: Vec<Constraint>,
    pub seed: u64,
    pub generator_id: String,
}

impl ConstraintStream {
    /// Builds a stream from explicit constraints, checking every invariant.
    pub fn from_constraints(
        kind: ProblemKind,
        n_vars: u32,
        constraints: Vec<Constraint>,
        seed: u64,
        generator_id: impl Into<String>,
    ) -> Result<Self> {
        let stream = ConstraintStream {
            n_vars,
            kind,
            constraints,
            seed,
            generator_id: generator_id.into(),
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Constraint density of the prefix of length `m`.
    pub fn alpha(&self, m: usize) -> f64 {
        m as f64 / self.n_vars as f64
    }

    /// The stream truncated to its first `m` constraints.
    pub fn prefix(&self, m: usize) -> ConstraintStream {
        ConstraintStream {
            constraints: self.constraints[..m.min(self.len())].to_vec(),
            generator_id: self.generator_id.clone(),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.generator_id.is_empty() || self.generator_id.contains(char::is_whitespace) {
            return Err(Error::param("generator id must be a non-empty token"));
        }
        let mut seen = HashSet::new();
        for (i, c) in self.constraints.iter().enumerate() {
            c.check(self.n_vars, self.kind)
                .map_err(|e| Error::param(format!("constraint {}: {e}", i + 1)))?;
            if let Constraint::Edge { u, v } = c {
                if !seen.insert((*u, *v)) {
                    return Err(Error::param(format!("constraint {}: duplicate edge ({u}, {v})", i + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "CSPSTREAM v1 {} N={} M={} {}={} seed={} gen={}",
            self.kind.family(),
            self.n_vars,
            self.len(),
            match self.kind {
                ProblemKind::Coloring { .. } => "q",
                ProblemKind::KSat { .. } => "K",
            },
            self.kind.parameter(),
            self.seed,
            self.generator_id
        )?;
        for c in &self.constraints {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("stream text is ASCII")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty input, expected CSPSTREAM header"))?;
        let header = parse_header(&header?)?;

        let mut constraints = Vec::with_capacity(header.m.min(1 << 24));
        let mut seen = HashSet::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if constraints.len() == header.m {
                return Err(Error::parse(line_no, "trailing content after the last constraint"));
            }
            let c = parse_constraint(&line, header.kind, line_no)?;
            c.check(header.n_vars, header.kind)
                .map_err(|e| Error::parse(line_no, e))?;
            if let Constraint::Edge { u, v } = c {
                if !seen.insert((u, v)) {
                    return Err(Error::parse(line_no, format!("duplicate edge ({u}, {v})")));
                }
            }
            constraints.push(c);
        }
        if constraints.len() != header.m {
            return Err(Error::parse(
                constraints.len() + 2,
                format!("expected {} constraints, found {}", header.m, constraints.len()),
            ));
        }
        Ok(ConstraintStream {
            n_vars: header.n_vars,
            kind: header.kind,
            constraints,
            seed: header.seed,
            generator_id: header.generator_id,
        })
    }
}

impl FromStr for ConstraintStream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConstraintStream::read_from(s.as_bytes())
    }
}

/// Serializes `stream` into `w` in the stream text format.
pub fn write_stream<W: Write>(stream: &ConstraintStream, w: W) -> std::io::Result<()> {
    stream.write_to(w)
}

/// Parses a stream previously produced by [`write_stream`].
pub fn read_stream<R: BufRead>(r: R) -> Result<ConstraintStream> {
    ConstraintStream::read_from(r)
}

struct Header {
    kind: ProblemKind,
    n_vars: u32,
    m: usize,
    seed: u64,
    generator_id: String,
}

fn parse_header(line: &str) -> Result<Header> {
    let err = |msg: String| Error::parse(1, msg);
    let tokens: Vec<&str> = line.split(' ').collect();
    if tokens.len() != 8 || tokens[0] != "CSPSTREAM" || tokens[1] != "v1" {
        return Err(err(format!("malformed header {line:?}")));
    }
    fn field<'a>(tok: &'a str, key: &str) -> std::result::Result<&'a str, String> {
        tok.strip_prefix(key)
            .and_then(|t| t.strip_prefix('='))
            .ok_or_else(|| format!("expected {key}=<value>, found {tok:?}"))
    }
    fn number<T: FromStr>(tok: &str, key: &str) -> std::result::Result<T, String> {
        let raw = field(tok, key)?;
        raw.parse().map_err(|_| format!("{key} has invalid value {raw:?}"))
    }
    let n_vars: u32 = number(tokens[3], "N").map_err(err)?;
    let m: usize = number(tokens[4], "M").map_err(err)?;
    let kind = match tokens[2] {
        "coloring" => ProblemKind::Coloring {
            q: number(tokens[5], "q").map_err(err)?,
        },
        "ksat" => ProblemKind::KSat {
            k: number(tokens[5], "K").map_err(err)?,
        },
        other => return Err(err(format!("unknown problem family {other:?}"))),
    };
    kind.validate().map_err(|e| err(e.to_string()))?;
    let seed: u64 = number(tokens[6], "seed").map_err(err)?;
    let generator_id = field(tokens[7], "gen").map_err(err)?;
    if generator_id.is_empty() {
        return Err(err("empty generator id".into()));
    }
    Ok(Header {
        kind,
        n_vars,
        m,
        seed,
        generator_id: generator_id.to_string(),
    })
}

fn parse_constraint(line: &str, kind: ProblemKind, line_no: usize) -> Result<Constraint> {
    let err = |msg: String| Error::parse(line_no, msg);
    let mut tokens = line.split(' ');
    let tag = tokens.next().unwrap_or_default();
    let parse_var = |tok: &str| -> Result<u32> {
        // Reject '+', leading zeros are tolerated by `parse` but signs are not.
        if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err(format!("invalid variable index {tok:?}")));
        }
        tok.parse()
            .map_err(|_| err(format!("variable index {tok:?} out of range")))
    };
    match (tag, kind) {
        ("E", ProblemKind::Coloring { .. }) => {
            let rest: Vec<&str> = tokens.collect();
            if rest.len() != 2 {
                return Err(err(format!("edge line must be `E u v`, found {line:?}")));
            }
            let (u, v) = (parse_var(rest[0])?, parse_var(rest[1])?);
            if u == v {
                return Err(err(format!("self-loop on vertex {u}")));
            }
            Ok(Constraint::edge(u, v))
        }
        ("C", ProblemKind::KSat { .. }) => {
            let lits = tokens
                .map(|tok| {
                    let (positive, digits) = match tok.as_bytes().first() {
                        Some(b'+') => (true, &tok[1..]),
                        Some(b'-') => (false, &tok[1..]),
                        _ => return Err(err(format!("literal {tok:?} lacks a +/- sign"))),
                    };
                    Ok(Literal::new(parse_var(digits)?, positive))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Constraint::Clause(lits.into()))
        }
        _ => Err(err(format!("unexpected line {line:?} for a {} stream", kind.family()))),
    }
}

/// Draws a reproducible random stream.
///
/// Coloring: each constraint is a uniformly random unordered pair of distinct
/// vertices; pairs already present are rejected and redrawn, so every prefix
/// is a uniform G(N, m) graph. K-SAT: each clause picks `K` distinct variables
/// uniformly and independent uniform signs; repeated clauses are allowed.
pub fn generate_stream(kind: ProblemKind, n_vars: u32, n_constraints: usize, seed: u64) -> Result<ConstraintStream> {
    kind.validate()?;
    let mut rng = lane_rng(seed, Lane::Stream);
    let constraints = match kind {
        ProblemKind::Coloring { .. } => {
            if n_vars < 2 {
                return Err(Error::param(format!("coloring needs N >= 2, got {n_vars}")));
            }
            let capacity = n_vars as u64 * (n_vars as u64 - 1) / 2;
            if n_constraints as u64 > capacity {
                return Err(Error::Capacity(format!(
                    "{n_constraints} distinct edges requested but N = {n_vars} admits only {capacity}"
                )));
            }
            let mut seen = HashSet::with_capacity(n_constraints);
            let mut edges = Vec::with_capacity(n_constraints);
            while edges.len() < n_constraints {
                let a = rng.random_range(0..n_vars);
                let mut b = rng.random_range(0..n_vars - 1);
                if b >= a {
                    b += 1;
                }
                let e = (a.min(b), a.max(b));
                if seen.insert(e) {
                    edges.push(Constraint::Edge { u: e.0, v: e.1 });
                }
            }
            edges
        }
        ProblemKind::KSat { k } => {
            if n_vars < k {
                return Err(Error::param(format!("{k}-SAT needs N >= {k}, got {n_vars}")));
            }
            let mut vars = Vec::with_capacity(k as usize);
            (0..n_constraints)
                .map(|_| {
                    vars.clear();
                    while vars.len() < k as usize {
                        let x = rng.random_range(0..n_vars);
                        if !vars.contains(&x) {
                            vars.push(x);
                        }
                    }
                    vars.sort_unstable();
                    let lits: Vec<Literal> = vars.iter().map(|&x| Literal::new(x, rng.random::<bool>())).collect();
                    Constraint::Clause(lits.into())
                })
                .collect()
        }
    };
    Ok(ConstraintStream {
        n_vars,
        kind,
        constraints,
        seed,
        generator_id: GENERATOR_ID.to_string(),
    })
}
