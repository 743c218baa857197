//! Executes resolved configurations and writes their output files.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use ricsp_core::analysis::{report_entry, AlphaStopStats};
use ricsp_core::landscape::write_prefix_csv;
use ricsp_core::rng::GENERATOR_ID;
use ricsp_core::trajectory_io::{read_trajectory_csv, write_trajectory_csv, RunSummary};
use ricsp_core::{
    aggregate, enumerate_prefixes, fit_power_law, generate_stream, read_stream, run_incremental, sweep, AggregateTable,
    ConstraintStream, DivergenceFit, Error, Observable, RepairParams, Trajectory, WindowPolicy,
};
use serde::Serialize;

use crate::config::*;

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub message: String,
}

/// Runs `config`, writing into `out`. Every result is computed before the
/// first file is written, and each file appears atomically.
pub fn execute(config: &RunConfig, out: &Path) -> anyhow::Result<Outcome> {
    match config {
        RunConfig::Generate(g) => generate(g, out),
        RunConfig::Run(r) => run(config, r, out),
        RunConfig::Sweep(s) => run_sweep(config, s, out),
        RunConfig::Enumerate(e) => enumerate(config, e, out),
        RunConfig::Fit(f) => fit(config, f, out),
    }
}

/// Writes `name` under `dir` through a temporary file and a rename.
fn write_atomic<F>(dir: &Path, name: &str, body: F) -> anyhow::Result<PathBuf>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let target = dir.join(name);
    let parent = target.parent().unwrap_or(dir);
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(parent)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(&target)
        .with_context(|| format!("renaming into {}", target.display()))?;
    Ok(target)
}

/// `# tool ...` and `# config ...` comment lines (without the `# `).
fn provenance(config: &RunConfig) -> Vec<String> {
    vec![format!("tool {TOOL}"), format!("config {}", config.to_json())]
}

fn load_stream(source: &StreamSource) -> anyhow::Result<ConstraintStream> {
    Ok(match source {
        StreamSource::Generated(g) => generate_stream(g.kind, g.n, g.m, g.seed)?,
        StreamSource::File { path } => {
            let f = File::open(path).with_context(|| format!("opening stream {path}"))?;
            read_stream(BufReader::new(f)).with_context(|| format!("reading stream {path}"))?
        }
    })
}

fn repair_params(spec: &RepairSpec, n_vars: u32, seed: u64) -> anyhow::Result<RepairParams> {
    let budget = spec
        .budget_per_site
        .checked_mul(n_vars.max(1) as u64)
        .ok_or_else(|| Error::Parameter("budget per site overflows".into()))?;
    Ok(RepairParams::new(budget, spec.sideways_cap, spec.move_rule, seed)?)
}

pub fn stream_file_name(s: &ConstraintStream) -> String {
    format!("stream_{}_N{}_M{}_seed{}.csp", s.kind, s.n_vars, s.len(), s.seed)
}

pub fn trajectory_file_name(t: &Trajectory) -> String {
    format!("traj_{}_N{}_seed{}.csv", t.kind, t.n_vars, t.seed)
}

fn describe(t: &Trajectory) -> String {
    match t.alpha_stop() {
        Some(a) => format!(
            "seed {}: repair failed at alpha = {a} after {} flips",
            t.seed,
            t.total_flips()
        ),
        None => format!("seed {}: stream exhausted, {} flips", t.seed, t.total_flips()),
    }
}

fn generate(g: &GeneratedStream, out: &Path) -> anyhow::Result<Outcome> {
    let stream = generate_stream(g.kind, g.n, g.m, g.seed)?;
    // The stream header already determines the generator call.
    let path = write_atomic(out, &stream_file_name(&stream), |w| stream.write_to(w))?;
    Ok(Outcome {
        message: format!("{} constraints", stream.len()),
        files: vec![path],
    })
}

fn write_run(t: &Trajectory, config: &RunConfig, dir: &Path, name: &str) -> anyhow::Result<PathBuf> {
    let comments = provenance(config);
    write_atomic(dir, name, |w| write_trajectory_csv(t, &comments, w))
}

fn run(config: &RunConfig, r: &RunSpec, out: &Path) -> anyhow::Result<Outcome> {
    let stream = load_stream(&r.stream)?;
    let params = repair_params(&r.repair, stream.n_vars, stream.seed)?;
    let t = run_incremental(&stream, &params, r.repair.init)?;
    let path = write_run(&t, config, out, &trajectory_file_name(&t))?;
    Ok(Outcome {
        message: describe(&t),
        files: vec![path],
    })
}

#[derive(Serialize)]
struct Header<'a> {
    tool: &'a str,
    config: &'a RunConfig,
}

fn write_curve(table: &AggregateTable, config: &RunConfig, dir: &Path, name: &str) -> anyhow::Result<PathBuf> {
    write_atomic(dir, name, |w| {
        writeln!(
            w,
            "# CSPCURVE v1 kind={} N={} observable={} grid={} runs={}",
            table.kind, table.n_vars, table.observable, table.grid_step, table.n_runs
        )?;
        for c in provenance(config) {
            writeln!(w, "# {c}")?;
        }
        table.write_csv(w)
    })
}

fn curve_file_name(o: Observable) -> String {
    format!("curve_{o}.csv")
}

fn run_sweep(config: &RunConfig, s: &SweepSpec, out: &Path) -> anyhow::Result<Outcome> {
    if s.seeds[0] > s.seeds[1] {
        bail!(Error::Parameter(format!(
            "empty seed range {}..{}",
            s.seeds[0], s.seeds[1]
        )));
    }
    let seeds = s.seed_list();
    let params = repair_params(&s.repair, s.n, 0)?;
    let alpha_max = s.m as f64 / s.n.max(1) as f64;
    let trajectories = sweep(s.kind, s.n, alpha_max, &seeds, &params, s.repair.init, s.workers)?;
    let tables = [Observable::Integrated, Observable::PerStep]
        .into_iter()
        .map(|o| aggregate(&trajectories, s.grid, o))
        .collect::<Result<Vec<_>, _>>()?;

    let mut files = Vec::new();
    for t in &trajectories {
        debug_assert_eq!(t.n_constraints as usize, s.m);
        let member = RunConfig::Run(s.member(t.seed));
        files.push(write_run(
            t,
            &member,
            out,
            &format!("runs/{}", trajectory_file_name(t)),
        )?);
    }
    files.push(write_atomic(out, "summary.jsonl", |w| {
        let header = Header { tool: TOOL, config };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for t in &trajectories {
            writeln!(w, "{}", RunSummary::of(t).to_json_line())?;
        }
        Ok(())
    })?);
    for table in &tables {
        files.push(write_curve(table, config, out, &curve_file_name(table.observable))?);
    }

    let stats = AlphaStopStats::from_trajectories(&trajectories);
    let message = match (stats.mean, stats.relative_std) {
        (Some(m), Some(r)) => format!(
            "{} runs; alpha_stop mean {m:.4}, relative sd {:.2}% ({} exhausted)",
            seeds.len(),
            100.0 * r,
            stats.n_exhausted
        ),
        (Some(m), None) => format!("{} runs; alpha_stop {m:.4}", seeds.len()),
        _ => format!("{} runs; none failed", seeds.len()),
    };
    Ok(Outcome { files, message })
}

fn enumerate(config: &RunConfig, e: &EnumerateSpec, out: &Path) -> anyhow::Result<Outcome> {
    let stream = load_stream(&e.stream)?;
    let reports = enumerate_prefixes(&stream, stream.len())?;
    let nested = reports.iter().all(|r| r.nested_ok);
    let name = format!(
        "prefixes_{}_N{}_M{}_seed{}.csv",
        stream.kind,
        stream.n_vars,
        stream.len(),
        stream.seed
    );
    let path = write_atomic(out, &name, |w| {
        writeln!(
            w,
            "# CSPPREFIX v1 kind={} N={} M={} seed={}",
            stream.kind,
            stream.n_vars,
            stream.len(),
            stream.seed
        )?;
        for c in provenance(config) {
            writeln!(w, "# {c}")?;
        }
        write_prefix_csv(&reports, w)
    })?;
    let last = reports.last().map_or(0, |r| r.solution_count);
    Ok(Outcome {
        message: format!(
            "{} prefixes, nested: {nested}, final solution count {last}",
            reports.len()
        ),
        files: vec![path],
    })
}

/// Trajectory CSVs under `dir`, in sorted path order.
fn find_trajectories(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let mut first = String::new();
                BufReader::new(File::open(&path)?).read_line(&mut first)?;
                if first.starts_with("# CSPTRAJ v1 ") {
                    found.push(path);
                }
            }
        }
    }
    found.sort();
    Ok(found)
}

#[derive(Serialize)]
struct FitFile<'a> {
    tool: &'a str,
    config: &'a RunConfig,
    kind: String,
    n_vars: u32,
    n_runs: usize,
    observable: Observable,
    window_policy: WindowPolicy,
    #[serde(flatten)]
    fit: Option<DivergenceFit>,
    fit_error: Option<String>,
    alpha_stop: AlphaStopStats,
    gap: Option<f64>,
}

fn fit(config: &RunConfig, f: &FitSpec, out: &Path) -> anyhow::Result<Outcome> {
    let paths = find_trajectories(Path::new(&f.input))?;
    if paths.is_empty() {
        bail!(Error::Parameter(format!("no trajectory CSV files under {}", f.input)));
    }
    let mut trajectories = Vec::with_capacity(paths.len());
    for p in &paths {
        let (t, _) =
            read_trajectory_csv(BufReader::new(File::open(p)?)).with_context(|| format!("reading {}", p.display()))?;
        trajectories.push(t);
    }
    let first = &trajectories[0];
    if let Some(t) = trajectories
        .iter()
        .find(|t| t.kind != first.kind || t.n_vars != first.n_vars)
    {
        bail!(Error::Parameter(format!(
            "fit input mixes {} N={} with {} N={}; fit one group per directory",
            first.kind, first.n_vars, t.kind, t.n_vars
        )));
    }
    info!("fitting {} trajectories from {}", trajectories.len(), f.input);
    let table = aggregate(&trajectories, f.grid, f.observable)?;
    let policy = match f.window {
        Some([lo, hi]) => WindowPolicy::Explicit { lo, hi },
        None => WindowPolicy::default(),
    };
    let result = fit_power_law(&table, &policy);
    let entry = report_entry(&table, policy, result.as_ref().copied(), &trajectories);
    let file = FitFile {
        tool: TOOL,
        config,
        kind: entry.kind.clone(),
        n_vars: entry.n_vars,
        n_runs: entry.n_runs,
        observable: entry.observable,
        window_policy: entry.window_policy,
        fit: entry.fit,
        fit_error: entry.fit_error.clone(),
        alpha_stop: entry.alpha_stop.clone(),
        gap: entry.gap,
    };
    let json = serde_json::to_string_pretty(&file)?;
    let files = vec![
        write_curve(&table, config, out, "aggregate.csv")?,
        write_atomic(out, "fit.json", |w| writeln!(w, "{json}"))?,
    ];
    match result {
        Ok(fit) => Ok(Outcome {
            files,
            message: format!(
                "alpha* = {:.4}{}, gamma = {:.3}, residual = {:.4}, window [{:.3}, {:.3}] ({} points)",
                fit.alpha_star,
                if fit.at_search_edge {
                    " (at the edge of the search range)"
                } else {
                    ""
                },
                fit.gamma,
                fit.residual,
                fit.window[0],
                fit.window[1],
                fit.n_points
            ),
        }),
        Err(e) => {
            for p in &files {
                eprintln!("wrote {}", p.display());
            }
            Err(e.into())
        }
    }
}

/// Recovers the configuration embedded in an output file.
pub fn embedded_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or("");
    let (config, tool) = if first.starts_with("CSPSTREAM ") {
        let stream = read_stream(text.as_bytes())?;
        if stream.generator_id != GENERATOR_ID {
            bail!(Error::Parameter(format!(
                "stream was made by generator {:?}, this build has {GENERATOR_ID:?}",
                stream.generator_id
            )));
        }
        let g = GeneratedStream {
            kind: stream.kind,
            n: stream.n_vars,
            m: stream.len(),
            seed: stream.seed,
        };
        (RunConfig::Generate(g), None)
    } else if first.starts_with('#') {
        let mut config = None;
        let mut tool = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(c) = line.strip_prefix("# config ") {
                config = Some(serde_json::from_str(c)?);
            } else if let Some(t) = line.strip_prefix("# tool ") {
                tool = Some(t.to_string());
            }
        }
        let config = config.ok_or_else(|| Error::Parameter(format!("{} embeds no config", path.display())))?;
        (config, tool)
    } else {
        let value: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(_) => serde_json::from_str(first)?,
        };
        let config = value
            .get("config")
            .ok_or_else(|| Error::Parameter(format!("{} embeds no config", path.display())))?;
        let tool = value.get("tool").and_then(|t| t.as_str()).map(str::to_string);
        (serde_json::from_value(config.clone())?, tool)
    };
    if let Some(t) = tool.filter(|t| t != TOOL) {
        warn!("{} was written by {t}; replaying with {TOOL}", path.display());
    }
    Ok(config)
}
