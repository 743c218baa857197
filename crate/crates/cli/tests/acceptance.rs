//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances are pinned below.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use ricsp_core::analysis::AlphaStopStats;
use ricsp_core::rng::CspRng;
use ricsp_core::{
    aggregate, descent_equivalence_check, enumerate_prefixes, fit_points, fit_power_law, generate_stream, init_state,
    sweep, Assignment, Constraint, ConstraintStream, DivergenceFit, InitRule, Observable, ProblemKind, RepairParams,
    Trajectory, WindowPolicy,
};
use sha2::{Digest, Sha256};

const COL3: ProblemKind = ProblemKind::Coloring { q: 3 };

// Criterion 1
const NESTING_STREAMS: usize = 200;
const NESTING_MAX_SECONDS: f64 = 300.0;
// Criterion 2
const DESCENT_TRIALS: usize = 100;
// Criterion 3
const ORACLE_STATES: usize = 500;
const ORACLE_OPS_PER_STATE: usize = 200;
// Criteria 4 and 5
const DIVERGENCE_SIZES: [u32; 2] = [1000, 2000];
const DIVERGENCE_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const SWEEP_ALPHA_MAX: f64 = 3.0;
const FIT_GRID: f64 = 0.01;
const MAX_RELATIVE_SD: f64 = 0.05;
const MAX_RESIDUAL: f64 = 0.05;
const MAX_GAMMA_SPREAD: f64 = 0.25;
const MEAN_DEGREE_CORRIDOR: [f64; 2] = [4.4, 4.8];
// Criterion 6
const COST_SIZES: [u32; 4] = [500, 1000, 2000, 4000];
const COST_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const COST_FRACTION: f64 = 0.9;
const MAX_COST_RATIO: f64 = 2.0;
// Criterion 7
const TRUE_ALPHA_STAR: f64 = 2.0;
const TRUE_GAMMA: f64 = 1.5;
const NOISELESS_TOL: (f64, f64) = (0.005, 0.01);
const NOISY_TOL: (f64, f64) = (0.02, 0.10);
const NOISE_LEVEL: f64 = 0.02;
const NOISE_DRAWS: usize = 100;
// Criterion 8
const CORPUS_SIZE: usize = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn satisfied(c: &Constraint, values: &[u32]) -> bool {
    match c {
        Constraint::Edge { u, v } => values[*u as usize] != values[*v as usize],
        Constraint::Clause(lits) => lits.iter().any(|l| (values[l.var as usize] == 1) == l.positive),
    }
}

fn small_stream(kind: ProblemKind, n: u32, ratio: f64, seed: u64) -> ConstraintStream {
    let mut m = (ratio * n as f64).round() as usize;
    if let ProblemKind::Coloring { .. } = kind {
        m = m.min((n * (n - 1) / 2) as usize);
    }
    generate_stream(kind, n, m, seed).expect("valid small stream")
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let families: [(ProblemKind, u32, f64); 4] = [
        (ProblemKind::Coloring { q: 2 }, 14, 1.5),
        (COL3, 13, 2.5),
        (ProblemKind::KSat { k: 2 }, 14, 1.5),
        (ProblemKind::KSat { k: 3 }, 14, 5.0),
    ];
    let mut violations = 0;
    let mut prefixes = 0;
    for i in 0..NESTING_STREAMS {
        let (kind, n_max, ratio) = families[i % 4];
        let n = 6 + (i / 4) as u32 % (n_max - 5);
        let stream = small_stream(kind, n, ratio, 1000 + i as u64);
        let reports = enumerate_prefixes(&stream, stream.len()).expect("within the enumeration guard");
        prefixes += reports.len();
        violations += reports.iter().filter(|r| !r.nested_ok).count();
        violations += reports
            .windows(2)
            .filter(|w| w[1].solution_count > w[0].solution_count)
            .count();
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        violations == 0 && secs < NESTING_MAX_SECONDS,
        format!("{NESTING_STREAMS} streams, {prefixes} prefixes, {violations} violations, {secs:.1} s"),
    )
}

fn criterion_2() -> Verdict {
    let cases = [
        (COL3, 12, 30, 1),
        (COL3, 10, 25, 2),
        (ProblemKind::KSat { k: 3 }, 14, 60, 3),
        (ProblemKind::KSat { k: 2 }, 14, 20, 4),
    ];
    let per_case = DESCENT_TRIALS / cases.len();
    let (mut trials, mut steps, mut moves, mut bad) = (0, 0, 0, 0);
    for (kind, n, m, seed) in cases {
        let stream = generate_stream(kind, n, m, seed).unwrap();
        let report = descent_equivalence_check(&stream, &RepairParams::default_for(n, seed), per_case).unwrap();
        trials += report.trials;
        steps += report.steps_checked;
        moves += report.moves_checked;
        bad += report.uphill_moves + report.envelope_violations + report.unsatisfied_steps;
    }
    verdict(
        bad == 0 && trials == DESCENT_TRIALS,
        format!("{trials} trials, {steps} steps, {moves} moves, {bad} violations"),
    )
}

fn criterion_3() -> Verdict {
    let kinds = [
        COL3,
        ProblemKind::Coloring { q: 4 },
        ProblemKind::KSat { k: 3 },
        ProblemKind::KSat { k: 2 },
    ];
    let mut rng = CspRng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut checks = 0;
    for i in 0..ORACLE_STATES {
        let kind = kinds[i % kinds.len()];
        let n = 4 + (i as u32 % 13);
        let stream = small_stream(kind, n, 3.0, i as u64);
        let q = kind.domain_size();
        let start = Assignment::uniform(n as usize, q, &mut rng);
        let mut state = init_state(&stream, start).unwrap();
        for _ in 0..ORACLE_OPS_PER_STATE {
            if rng.random_range(0..3u32) == 0 && !state.is_exhausted() {
                state.activate_next().unwrap();
            } else {
                let v = rng.random_range(0..n) as usize;
                let x = rng.random_range(0..q);
                state.flip(v, x).unwrap();
            }
            let values = state.assignment().values();
            let brute = stream.constraints[..state.active_prefix()]
                .iter()
                .filter(|c| !satisfied(c, values))
                .count();
            checks += 1;
            mismatches += (brute != state.energy()) as usize;
        }
    }
    verdict(
        mismatches == 0,
        format!("{ORACLE_STATES} states, {checks} comparisons, {mismatches} mismatches"),
    )
}

struct SizeResult {
    stats: AlphaStopStats,
    fit: Result<DivergenceFit, String>,
}

fn divergence_sweeps() -> BTreeMap<u32, SizeResult> {
    let seeds: Vec<u64> = DIVERGENCE_SEEDS.collect();
    DIVERGENCE_SIZES
        .iter()
        .map(|&n| {
            let params = RepairParams::default_for(n, 0);
            let trajs = sweep(COL3, n, SWEEP_ALPHA_MAX, &seeds, &params, InitRule::UniformRandom, None).unwrap();
            let table = aggregate(&trajs, FIT_GRID, Observable::Integrated).unwrap();
            let fit = fit_power_law(&table, &WindowPolicy::default()).map_err(|e| e.to_string());
            let stats = AlphaStopStats::from_trajectories(&trajs);
            (n, SizeResult { stats, fit })
        })
        .collect()
}

fn fmt_fit(fit: &Result<DivergenceFit, String>) -> String {
    match fit {
        Ok(f) => format!(
            "alpha* {:.4}{} gamma {:.3} rms {:.4} window [{:.2}, {:.2}]",
            f.alpha_star,
            if f.at_search_edge { " (at search edge)" } else { "" },
            f.gamma,
            f.residual,
            f.window[0],
            f.window[1]
        ),
        Err(e) => format!("fit failed ({e})"),
    }
}

fn criterion_4(results: &BTreeMap<u32, SizeResult>) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut gammas = Vec::new();
    for (n, r) in results {
        let rsd = r.stats.relative_std.unwrap_or(f64::INFINITY);
        pass &= r.stats.n_exhausted == 0 && rsd <= MAX_RELATIVE_SD;
        match &r.fit {
            Ok(f) => {
                pass &= f.residual <= MAX_RESIDUAL;
                gammas.push(f.gamma);
            }
            Err(_) => pass = false,
        }
        parts.push(format!(
            "N={n}: alpha_stop mean {:.4} rel sd {:.1}%, {}",
            r.stats.mean.unwrap_or(f64::NAN),
            100.0 * rsd,
            fmt_fit(&r.fit)
        ));
    }
    if let [a, b] = gammas[..] {
        let spread = (a - b).abs() / (0.5 * (a + b));
        pass &= spread <= MAX_GAMMA_SPREAD;
        parts.push(format!("gamma spread {:.0}%", 100.0 * spread));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_5(results: &BTreeMap<u32, SizeResult>) -> Verdict {
    let largest = DIVERGENCE_SIZES[DIVERGENCE_SIZES.len() - 1];
    let parts: Vec<String> = results
        .iter()
        .map(|(n, r)| match &r.fit {
            Ok(f) => format!("N={n}: c* = {:.3}", 2.0 * f.alpha_star),
            Err(_) => format!("N={n}: no fit"),
        })
        .collect();
    let pass = match &results[&largest].fit {
        Ok(f) => (MEAN_DEGREE_CORRIDOR[0]..=MEAN_DEGREE_CORRIDOR[1]).contains(&(2.0 * f.alpha_star)),
        Err(_) => false,
    };
    verdict(
        pass,
        format!(
            "{} (corridor [{}, {}] at N={largest})",
            parts.join(", "),
            MEAN_DEGREE_CORRIDOR[0],
            MEAN_DEGREE_CORRIDOR[1]
        ),
    )
}

/// Flips per site up to `alpha`, averaged over the runs that got there.
fn cost_at(n: u32, alpha: f64) -> (Option<f64>, usize) {
    let seeds: Vec<u64> = COST_SEEDS.collect();
    let params = RepairParams::default_for(n, 0);
    let trajs: Vec<Trajectory> = sweep(COL3, n, alpha, &seeds, &params, InitRule::UniformRandom, None).unwrap();
    let done: Vec<f64> = trajs
        .iter()
        .filter(|t| t.alpha_stop().is_none())
        .map(|t| t.total_flips() as f64 / n as f64)
        .collect();
    let mean = (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64);
    (mean, done.len())
}

fn criterion_6(results: &BTreeMap<u32, SizeResult>) -> Verdict {
    // The operational alpha*: mean failure density at the largest sweep size.
    let largest = DIVERGENCE_SIZES[DIVERGENCE_SIZES.len() - 1];
    let Some(measured) = results[&largest].stats.mean else {
        return verdict(false, "no failure density measured");
    };
    let alpha = COST_FRACTION * measured;
    let mut per_site = Vec::new();
    let mut parts = Vec::new();
    for n in COST_SIZES {
        let (mean, survivors) = cost_at(n, alpha);
        parts.push(match mean {
            Some(m) => format!("N={n}: {m:.3} ({survivors} runs)"),
            None => format!("N={n}: no run reached alpha"),
        });
        per_site.push(mean);
    }
    let values: Option<Vec<f64>> = per_site.into_iter().collect();
    let (pass, ratio) = match values {
        Some(v) => {
            let max = v.iter().cloned().fold(f64::MIN, f64::max);
            let min = v.iter().cloned().fold(f64::MAX, f64::min);
            let ratio = max / min;
            (ratio <= MAX_COST_RATIO, ratio)
        }
        None => (false, f64::NAN),
    };
    verdict(
        pass,
        format!(
            "flips per site up to alpha = {alpha:.4}: {}; max/min {ratio:.2}",
            parts.join(", ")
        ),
    )
}

fn synthetic(noise: Option<&mut CspRng>) -> Vec<(f64, f64)> {
    let mut noise = noise;
    (0..40)
        .map(|i| {
            let a = 1.0 + 0.9 * i as f64 / 39.0;
            let mut f = (TRUE_ALPHA_STAR - a).powf(-TRUE_GAMMA);
            if let Some(rng) = noise.as_deref_mut() {
                // Box-Muller standard normal.
                let (u1, u2): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random());
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                f *= 1.0 + NOISE_LEVEL * z;
            }
            (a, f)
        })
        .collect()
}

fn rel_err(fit: &DivergenceFit) -> (f64, f64) {
    (
        (fit.alpha_star - TRUE_ALPHA_STAR).abs() / TRUE_ALPHA_STAR,
        (fit.gamma - TRUE_GAMMA).abs() / TRUE_GAMMA,
    )
}

fn criterion_7() -> Verdict {
    let clean = fit_points(&synthetic(None)).unwrap();
    let (ea, eg) = rel_err(&clean);
    let mut pass = ea <= NOISELESS_TOL.0 && eg <= NOISELESS_TOL.1;
    let mut rng = CspRng::seed_from_u64(7);
    let mut worst = (0.0f64, 0.0f64);
    let mut within = 0;
    for _ in 0..NOISE_DRAWS {
        match fit_points(&synthetic(Some(&mut rng))) {
            Ok(fit) => {
                let (a, g) = rel_err(&fit);
                worst = (worst.0.max(a), worst.1.max(g));
                within += (a <= NOISY_TOL.0 && g <= NOISY_TOL.1) as usize;
            }
            Err(_) => worst = (f64::INFINITY, f64::INFINITY),
        }
    }
    pass &= within == NOISE_DRAWS;
    verdict(
        pass,
        format!(
            "noiseless errors alpha* {:.2e} gamma {:.2e}; noisy {within}/{NOISE_DRAWS} within, worst alpha* {:.2}% gamma {:.2}%",
            ea,
            eg,
            100.0 * worst.0,
            100.0 * worst.1
        ),
    )
}

fn ricsp(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ricsp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CSP_SEED")
        .env("RUST_LOG", "error")
        .output()
        .expect("ricsp runs")
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                pending.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let root = work.path();
    std::fs::write(
        root.join("overrides.toml"),
        "kind = \"sat3\"\nn = 200\nalpha-max = 5.0\nmove-rule = \"greedy\"\n",
    )
    .unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec![
            "generate", "--kind", "col3", "--n", "100", "--m", "200", "--seed", "7", "--out", "corpus",
        ],
        vec![
            "generate", "--kind", "col4", "--n", "50", "--m", "100", "--seed", "1", "--out", "corpus",
        ],
        vec![
            "generate", "--kind", "sat3", "--n", "60", "--m", "250", "--seed", "2", "--out", "corpus",
        ],
        vec![
            "generate", "--kind", "sat2", "--n", "12", "--m", "20", "--seed", "3", "--out", "corpus",
        ],
        vec![
            "generate", "--kind", "col3", "--n", "2", "--m", "1", "--seed", "9", "--out", "corpus",
        ],
        vec![
            "run",
            "--kind",
            "col3",
            "--n",
            "300",
            "--alpha-max",
            "3",
            "--seed",
            "5",
            "--out",
            "corpus",
        ],
        vec!["--config", "overrides.toml", "run", "--seed", "6", "--out", "corpus"],
        vec![
            "run",
            "--input",
            "corpus/stream_col4_N50_M100_seed1.csp",
            "--init",
            "zero",
            "--out",
            "corpus",
        ],
        vec![
            "enumerate",
            "--kind",
            "col3",
            "--n",
            "8",
            "--m",
            "20",
            "--seed",
            "1",
            "--out",
            "corpus",
        ],
        vec![
            "enumerate",
            "--input",
            "corpus/stream_sat2_N12_M20_seed3.csp",
            "--out",
            "corpus",
        ],
        vec![
            "sweep",
            "--kind",
            "col3",
            "--n",
            "200",
            "--alpha-max",
            "3",
            "--seeds",
            "1..5",
            "--grid",
            "0.02",
            "--out",
            "corpus/sweep",
        ],
        vec![
            "fit",
            "--input",
            "corpus/sweep",
            "--grid",
            "0.02",
            "--window",
            "0.2,0.5",
            "--out",
            "corpus/fit",
        ],
    ];
    for args in &commands {
        let out = ricsp(args, root);
        if !out.status.success() {
            return verdict(
                false,
                format!(
                    "`ricsp {}` failed: {}",
                    args.join(" "),
                    String::from_utf8_lossy(&out.stderr)
                ),
            );
        }
    }
    let corpus = files_under(&root.join("corpus"));
    if corpus.len() != CORPUS_SIZE {
        return verdict(
            false,
            format!("expected {CORPUS_SIZE} corpus files, found {}", corpus.len()),
        );
    }
    let mut mismatches = Vec::new();
    for (i, file) in corpus.iter().enumerate() {
        let replay_dir = format!("replay{i}");
        let out = ricsp(
            &["replay", "--input", file.to_str().unwrap(), "--out", &replay_dir],
            root,
        );
        let name = file.file_name().unwrap();
        let twin = files_under(&root.join(&replay_dir))
            .into_iter()
            .find(|p| p.file_name() == Some(name));
        match twin {
            Some(t) if out.status.success() && sha256(&t) == sha256(file) => {}
            _ => mismatches.push(name.to_string_lossy().into_owned()),
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "{} files replayed, {} hash mismatches{}",
            corpus.len(),
            mismatches.len(),
            if mismatches.is_empty() {
                String::new()
            } else {
                format!(": {}", mismatches.join(", "))
            }
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |id, name, v: Verdict| {
        println!(
            "criterion {id} ({name}): {} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        verdicts.push((id, name, v));
    };
    record(1, "nesting", criterion_1());
    record(2, "descent", criterion_2());
    record(3, "oracle soundness", criterion_3());
    let sweeps = divergence_sweeps();
    record(4, "reproducible divergence", criterion_4(&sweeps));
    record(5, "mean-degree corridor", criterion_5(&sweeps));
    record(6, "polynomial cost", criterion_6(&sweeps));
    record(7, "fit on synthetic truth", criterion_7());
    record(8, "determinism", criterion_8());
    let failed: Vec<usize> = verdicts
        .iter()
        .filter(|(_, _, v)| !v.pass)
        .map(|(id, _, _)| *id)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        verdicts.len() - failed.len(),
        verdicts.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
