//! Trajectory CSV files and the per-run JSON-lines summary.
//!
//! ```text
//! # CSPTRAJ v1 kind=col3 N=1000 seed=7 budget=300000 rule=focused init=random sideways_cap=0 repair_seed=7 M=3000
//! m,alpha,flips,cumflips_per_site,success
//! 1,0.001,0,0,true
//! ```
//!
//! Extra `#` comment lines may follow the header; readers skip them.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::driver::{InitRule, StepRecord, StopReason, Trajectory};
use crate::error::{Error, Result};
use crate::repair::RepairParams;

pub const TRAJECTORY_COLUMNS: &str = "m,alpha,flips,cumflips_per_site,success";

pub fn write_trajectory_csv<W: Write>(t: &Trajectory, comments: &[String], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "# CSPTRAJ v1 kind={} N={} seed={} budget={} rule={} init={} sideways_cap={} repair_seed={} M={}",
        t.kind,
        t.n_vars,
        t.seed,
        t.params.budget,
        t.params.move_rule,
        t.init,
        t.params.sideways_cap,
        t.params.rng_seed,
        t.n_constraints
    )?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{TRAJECTORY_COLUMNS}")?;
    for r in &t.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.m,
            r.alpha(),
            r.flips,
            r.cumulative_flips_per_site(),
            r.success
        )?;
    }
    Ok(())
}

/// Reads a trajectory CSV. Also returns the extra comment lines (without
/// the leading `# `).
pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<(Trajectory, Vec<String>)> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty trajectory file"))?;
    let header = header?;
    let body = header
        .strip_prefix("# CSPTRAJ v1 ")
        .ok_or_else(|| Error::parse(1, "missing `# CSPTRAJ v1` header"))?;
    let fields: HashMap<&str, &str> = body
        .split(' ')
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::parse(1, format!("bad header field {kv:?}")))
        })
        .collect::<Result<_>>()?;
    fn get<T: std::str::FromStr>(fields: &HashMap<&str, &str>, key: &str) -> Result<T> {
        let raw = fields
            .get(key)
            .ok_or_else(|| Error::parse(1, format!("header lacks {key}=")))?;
        raw.parse()
            .map_err(|_| Error::parse(1, format!("header field {key} has invalid value {raw:?}")))
    }
    let kind = get(&fields, "kind")?;
    let n_vars: u32 = get(&fields, "N")?;
    let seed = get(&fields, "seed")?;
    let params = RepairParams {
        budget: get(&fields, "budget")?,
        sideways_cap: get(&fields, "sideways_cap")?,
        move_rule: get(&fields, "rule")?,
        rng_seed: get(&fields, "repair_seed")?,
    };
    let init: InitRule = get(&fields, "init")?;
    let n_constraints = get(&fields, "M")?;

    let mut comments = Vec::new();
    let mut saw_columns = false;
    let mut records: Vec<StepRecord> = Vec::new();
    for (line_no, line) in lines {
        let line = line?;
        if !saw_columns {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
                continue;
            }
            if line != TRAJECTORY_COLUMNS {
                return Err(Error::parse(
                    line_no,
                    format!("expected column header {TRAJECTORY_COLUMNS:?}"),
                ));
            }
            saw_columns = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::parse(line_no, "expected 5 columns"));
        }
        let bad = |what: &str| Error::parse(line_no, format!("invalid {what}"));
        let m: u64 = cols[0].parse().map_err(|_| bad("m"))?;
        let flips: u64 = cols[2].parse().map_err(|_| bad("flips"))?;
        let success: bool = cols[4].parse().map_err(|_| bad("success"))?;
        let total_flips = records.last().map_or(0, |r| r.total_flips) + flips;
        let record = StepRecord {
            m,
            n_vars: n_vars as u64,
            flips,
            total_flips,
            success,
        };
        if cols[1] != record.alpha().to_string() || cols[3] != record.cumulative_flips_per_site().to_string() {
            return Err(Error::parse(
                line_no,
                "alpha or cumflips_per_site inconsistent with counts",
            ));
        }
        records.push(record);
    }
    if !saw_columns {
        return Err(Error::parse(1, "missing column header"));
    }
    let stop_reason = match records.last() {
        Some(r) if !r.success => StopReason::RepairFailed { m_stop: r.m },
        _ => StopReason::StreamExhausted,
    };
    let t = Trajectory {
        n_vars,
        n_constraints,
        kind,
        seed,
        params,
        init,
        records,
        stop_reason,
    };
    t.check_invariants().map_err(|e| Error::parse(0, e))?;
    Ok((t, comments))
}

/// One JSON-lines record per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub n_vars: u32,
    pub seed: u64,
    pub n_constraints: u64,
    pub steps: usize,
    pub stop_reason: StopReason,
    pub alpha_stop: Option<f64>,
    pub total_flips: u64,
    pub total_flips_per_site: f64,
    pub budget: u64,
    pub rule: String,
}

impl RunSummary {
    pub fn of(t: &Trajectory) -> Self {
        RunSummary {
            kind: t.kind.to_string(),
            n_vars: t.n_vars,
            seed: t.seed,
            n_constraints: t.n_constraints,
            steps: t.records.len(),
            stop_reason: t.stop_reason,
            alpha_stop: t.alpha_stop(),
            total_flips: t.total_flips(),
            total_flips_per_site: t.total_flips() as f64 / t.n_vars as f64,
            budget: t.params.budget,
            rule: t.params.move_rule.to_string(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::run_incremental;
    use crate::stream::{generate_stream, ProblemKind};

    #[test]
    fn csv_round_trip_with_failure() {
        let s = generate_stream(ProblemKind::Coloring { q: 3 }, 60, 200, 3).unwrap();
        let params = RepairParams::new(40, 0, crate::repair::MoveRule::Focused, 3).unwrap();
        let t = run_incremental(&s, &params, InitRule::UniformRandom).unwrap();
        assert!(t.alpha_stop().is_some(), "budget 40 should fail before alpha = 3.3");
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &["config {}".to_string()], &mut buf).unwrap();
        let (back, comments) = read_trajectory_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(comments, vec!["config {}".to_string()]);
    }

    #[test]
    fn rejects_tampered_rows() {
        let s = generate_stream(ProblemKind::Coloring { q: 3 }, 10, 5, 3).unwrap();
        let t = run_incremental(&s, &RepairParams::default_for(10, 3), InitRule::AllZero).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\n2,0.2,", "\n2,0.3,");
        assert!(read_trajectory_csv(text.as_bytes()).is_err());
        assert!(read_trajectory_csv(&b"m,alpha\n"[..]).is_err());
    }

    #[test]
    fn summary_line() {
        let s = generate_stream(ProblemKind::KSat { k: 3 }, 20, 30, 1).unwrap();
        let t = run_incremental(&s, &RepairParams::default_for(20, 1), InitRule::UniformRandom).unwrap();
        let line = RunSummary::of(&t).to_json_line();
        let back: RunSummary = serde_json::from_str(&line).unwrap();
        assert_eq!(back, RunSummary::of(&t));
        assert!(!line.contains('\n'));
    }
}
