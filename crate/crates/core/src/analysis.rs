//! Seed aggregation and power-law divergence fits.
//!
//! The fitted model is `F(alpha) = A * (alpha_star - alpha)^(-gamma)`. For a
//! fixed `alpha_star` it is linear in log space, so the fit is an ordinary
//! least-squares line for every candidate location, and the location itself
//! is chosen by a one-dimensional search on the log-space RMS residual.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::driver::{alpha_to_prefix, Trajectory};
use crate::error::{Error, Result};
use crate::stream::ProblemKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Cumulative accepted flips per variable.
    Integrated,
    /// Accepted flips per added constraint, averaged over a grid cell.
    PerStep,
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observable::Integrated => "integrated",
            Observable::PerStep => "per-step",
        })
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrated" => Ok(Observable::Integrated),
            "per-step" => Ok(Observable::PerStep),
            _ => Err(Error::param(format!(
                "unknown observable {s:?}; expected integrated or per-step"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Runs still alive at this density.
    pub n_alive: usize,
    /// Runs that failed at or below this density.
    pub n_censored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub kind: ProblemKind,
    pub n_vars: u32,
    pub grid_step: f64,
    pub observable: Observable,
    pub n_runs: usize,
    pub points: Vec<CurvePoint>,
}

impl AggregateTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,mean,stderr,n_alive,n_censored")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", p.alpha, p.mean, p.stderr, p.n_alive, p.n_censored)?;
        }
        Ok(())
    }
}

/// Value of the observable for one run at grid point `k` (density `k * step`),
/// or `None` once the run is no longer alive there.
fn sample(t: &Trajectory, k: u64, step: f64, observable: Observable) -> Option<f64> {
    let alpha = k as f64 * step;
    let m = alpha_to_prefix(alpha, t.n_vars);
    let alive = match t.alpha_stop() {
        Some(_) => {
            let m_stop = t.records.last().map_or(0, |r| r.m);
            m < m_stop
        }
        None => m <= t.records.len() as u64,
    };
    if !alive {
        return None;
    }
    let total_at = |m: u64| -> u64 {
        if m == 0 {
            0
        } else {
            t.records[m as usize - 1].total_flips
        }
    };
    let n = t.n_vars as f64;
    Some(match observable {
        Observable::Integrated => total_at(m) as f64 / n,
        Observable::PerStep => {
            let m_prev = if k == 0 {
                0
            } else {
                alpha_to_prefix((k - 1) as f64 * step, t.n_vars)
            };
            if m == m_prev {
                0.0
            } else {
                (total_at(m) - total_at(m_prev)) as f64 / (m - m_prev) as f64
            }
        }
    })
}

/// Mean observable across runs on the grid `alpha = k * grid_step`,
/// `k = 1, 2, ...`, using only runs still alive at each point. A failed run
/// is alive strictly below its failure density, so failed steps never enter
/// the curve.
pub fn aggregate(trajectories: &[Trajectory], grid_step: f64, observable: Observable) -> Result<AggregateTable> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::param("aggregate needs at least one trajectory"))?;
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::param(format!("grid step must be positive, got {grid_step}")));
    }
    if let Some(t) = trajectories
        .iter()
        .find(|t| t.kind != first.kind || t.n_vars != first.n_vars)
    {
        return Err(Error::param(format!(
            "cannot aggregate {} N={} with {} N={}",
            first.kind, first.n_vars, t.kind, t.n_vars
        )));
    }
    let max_m = trajectories.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let max_alpha = max_m as f64 / first.n_vars as f64;
    let mut points = Vec::new();
    let mut k = 1u64;
    while k as f64 * grid_step <= max_alpha + 1e-12 {
        let mut samples: Vec<f64> = trajectories
            .iter()
            .filter_map(|t| sample(t, k, grid_step, observable))
            .collect();
        if samples.is_empty() {
            break;
        }
        // Sorting makes the sum independent of the input order.
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        points.push(CurvePoint {
            alpha: k as f64 * grid_step,
            mean,
            stderr,
            n_alive: n,
            n_censored: trajectories.len() - n,
        });
        k += 1;
    }
    Ok(AggregateTable {
        kind: first.kind,
        n_vars: first.n_vars,
        grid_step,
        observable,
        n_runs: trajectories.len(),
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Starts where the curve first exceeds `threshold_factor` times its
    /// value at the `baseline_quantile` point of the curve; ends before the
    /// first run death, dropping the last `tail_exclusion` fraction of the
    /// points before it.
    Auto {
        baseline_quantile: f64,
        threshold_factor: f64,
        tail_exclusion: f64,
    },
    Explicit {
        lo: f64,
        hi: f64,
    },
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::Auto {
            baseline_quantile: 0.2,
            threshold_factor: 5.0,
            tail_exclusion: 0.02,
        }
    }
}

/// Minimum number of points a fit window must hold.
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFit {
    pub alpha_star: f64,
    pub gamma: f64,
    pub amplitude: f64,
    /// Root-mean-square misfit of `ln F`.
    pub residual: f64,
    pub window: [f64; 2],
    pub n_points: usize,
    /// The best location sat on the upper end of the searched range, so the
    /// divergence is not resolved by the window.
    #[serde(default)]
    pub at_search_edge: bool,
}

impl DivergenceFit {
    pub fn predict(&self, alpha: f64) -> f64 {
        self.amplitude * (self.alpha_star - alpha).powf(-self.gamma)
    }
}

/// Selects the `(alpha, value)` pairs a policy admits.
pub fn select_window(table: &AggregateTable, policy: &WindowPolicy) -> Result<Vec<(f64, f64)>> {
    let pts = &table.points;
    match *policy {
        WindowPolicy::Explicit { lo, hi } => {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::param(format!("empty fit window [{lo}, {hi}]")));
            }
            Ok(pts
                .iter()
                .filter(|p| p.alpha >= lo - 1e-12 && p.alpha <= hi + 1e-12)
                .map(|p| (p.alpha, p.mean))
                .collect())
        }
        WindowPolicy::Auto {
            baseline_quantile,
            threshold_factor,
            tail_exclusion,
        } => {
            let uncensored = pts.iter().take_while(|p| p.n_censored == 0).count();
            let keep = uncensored - (tail_exclusion * uncensored as f64).ceil() as usize;
            let pts = &pts[..keep.min(uncensored)];
            if pts.is_empty() {
                return Ok(Vec::new());
            }
            let base_idx = ((baseline_quantile * pts.len() as f64).floor() as usize).min(pts.len() - 1);
            let threshold = threshold_factor * pts[base_idx].mean;
            let start = pts
                .iter()
                .position(|p| p.mean > threshold && p.mean > 0.0)
                .unwrap_or(pts.len());
            Ok(pts[start..].iter().map(|p| (p.alpha, p.mean)).collect())
        }
    }
}

pub fn fit_power_law(table: &AggregateTable, policy: &WindowPolicy) -> Result<DivergenceFit> {
    let window = select_window(table, policy)?;
    fit_points(&window)
}

struct LineFit {
    slope: f64,
    intercept: f64,
    rms: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    LineFit {
        slope,
        intercept,
        rms: (ss / n).sqrt(),
    }
}

/// Log-space fit at a fixed divergence location.
fn fit_at(alpha_star: f64, alphas: &[f64], log_values: &[f64], xs: &mut Vec<f64>) -> LineFit {
    xs.clear();
    xs.extend(alphas.iter().map(|a| (alpha_star - a).ln()));
    least_squares(xs, log_values)
}

/// Number of log-spaced candidate offsets scanned before refinement.
const SCAN_POINTS: usize = 400;
/// Smallest offset `alpha_star - alpha_hi` considered.
const MIN_OFFSET: f64 = 1e-6;

/// Fits the power law to raw `(alpha, value)` points.
///
/// The divergence location is searched in `(alpha_hi, alpha_hi + 1]`: a
/// log-spaced scan of the offset `alpha_star - alpha_hi` brackets the best
/// residual, and golden-section search refines it inside the bracket.
pub fn fit_points(points: &[(f64, f64)]) -> Result<DivergenceFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "window holds {} points, need at least {MIN_FIT_POINTS}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.1 > 0.0 && p.1.is_finite() && p.0.is_finite()))
    {
        return Err(Error::Fit(format!(
            "non-positive or non-finite value at alpha = {}",
            p.0
        )));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Fit("alphas must be strictly increasing".into()));
    }
    let first = points[0];
    let last = points[points.len() - 1];
    if last.1 <= first.1 {
        return Err(Error::Fit(
            "data do not increase across the window; no divergence".into(),
        ));
    }

    let alphas: Vec<f64> = points.iter().map(|p| p.0).collect();
    let logs: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    // Centred logs keep the residual free of the amplitude's magnitude.
    let log_mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let logs: Vec<f64> = logs.iter().map(|y| y - log_mean).collect();
    let alpha_hi = last.0;
    let mut xs = Vec::with_capacity(points.len());
    let mut cost = |log_offset: f64| fit_at(alpha_hi + log_offset.exp(), &alphas, &logs, &mut xs).rms;

    let (lo, hi) = (MIN_OFFSET.ln(), 0.0f64);
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| lo + step * i as f64).collect();
    let costs: Vec<f64> = grid.iter().map(|&t| cost(t)).collect();
    let best = costs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(SCAN_POINTS - 1)];

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = cost(d);
        }
    }
    let mut t = if fc <= fd { c } else { d };
    if costs[best] < cost(t) {
        t = grid[best];
    }
    let t = polish(t, &alphas, &logs, alpha_hi);

    let alpha_star = alpha_hi + t.exp();
    let line = fit_at(alpha_star, &alphas, &logs, &mut xs);
    let gamma = -line.slope;
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Fit(format!("fitted exponent {gamma} is not positive")));
    }
    Ok(DivergenceFit {
        alpha_star,
        gamma,
        amplitude: (line.intercept + log_mean).exp(),
        residual: line.rms,
        window: [first.0, alpha_hi],
        n_points: points.len(),
        at_search_edge: t >= -1e-9,
    })
}

/// Derivative of the squared residual with respect to `alpha_star`, at the
/// least-squares line for that location: `-2 b * sum(r_i / (alpha_star - alpha_i))`.
fn residual_slope(alpha_star: f64, alphas: &[f64], logs: &[f64]) -> f64 {
    let xs: Vec<f64> = alphas.iter().map(|a| (alpha_star - a).ln()).collect();
    let line = least_squares(&xs, logs);
    let s: f64 = xs
        .iter()
        .zip(logs)
        .zip(alphas)
        .map(|((x, y), a)| (y - line.intercept - line.slope * x) / (alpha_star - a))
        .sum();
    -2.0 * line.slope * s
}

/// Golden-section search locates the minimum to about the square root of
/// machine precision; bisection on the analytic derivative takes it to
/// machine precision when the derivative changes sign around it.
fn polish(log_offset: f64, alphas: &[f64], logs: &[f64], alpha_hi: f64) -> f64 {
    let slope_at = |t: f64| residual_slope(alpha_hi + t.exp(), alphas, logs);
    let width = 1e-4;
    let (mut lo, mut hi) = (log_offset - width, (log_offset + width).min(0.0));
    let (mut g_lo, g_hi) = (slope_at(lo), slope_at(hi));
    if !(g_lo < 0.0 && g_hi > 0.0) {
        return log_offset;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = slope_at(mid);
        if g == 0.0 {
            return mid;
        }
        if (g < 0.0) == (g_lo < 0.0) {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaStopStats {
    /// Failure densities of the runs that failed, sorted.
    pub values: Vec<f64>,
    /// Runs that reached the end of their stream without failing.
    pub n_exhausted: usize,
    pub mean: Option<f64>,
    pub std_dev: Option<f64>,
    pub relative_std: Option<f64>,
}

impl AlphaStopStats {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Self {
        let mut values: Vec<f64> = trajectories.iter().filter_map(Trajectory::alpha_stop).collect();
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std_dev = (n > 1).then(|| {
            let m = mean.unwrap_or(0.0);
            (values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        AlphaStopStats {
            n_exhausted: trajectories.len() - n,
            relative_std: mean.zip(std_dev).map(|(m, s)| s / m),
            values,
            mean,
            std_dev,
        }
    }
}

/// Fit summary for one `(kind, N)` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub kind: String,
    pub n_vars: u32,
    pub n_runs: usize,
    pub observable: Observable,
    pub window_policy: WindowPolicy,
    pub fit: Option<DivergenceFit>,
    pub fit_error: Option<String>,
    pub alpha_stop: AlphaStopStats,
    /// `fit.alpha_star - alpha_stop.mean`.
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::parse(e.line(), e.to_string()))
    }
}

/// Summarizes a fit outcome next to the empirical failure densities.
pub fn report_entry(
    table: &AggregateTable,
    policy: WindowPolicy,
    fit: std::result::Result<DivergenceFit, &Error>,
    trajectories: &[Trajectory],
) -> ReportEntry {
    let alpha_stop = AlphaStopStats::from_trajectories(trajectories);
    let (fit, fit_error) = match fit {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ReportEntry {
        kind: table.kind.to_string(),
        n_vars: table.n_vars,
        n_runs: trajectories.len(),
        observable: table.observable,
        window_policy: policy,
        gap: fit.zip(alpha_stop.mean).map(|(f, m)| f.alpha_star - m),
        fit,
        fit_error,
        alpha_stop,
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return writeln!(f, "no trajectories");
        }
        for e in &self.entries {
            writeln!(
                f,
                "{} N={} ({} runs, {} flips)",
                e.kind, e.n_vars, e.n_runs, e.observable
            )?;
            match (&e.fit, &e.fit_error) {
                (Some(fit), _) => writeln!(
                    f,
                    "  fit: alpha* = {:.4}  gamma = {:.3}  A = {:.4}  rms = {:.4}  window [{:.3}, {:.3}] ({} pts){}",
                    fit.alpha_star,
                    fit.gamma,
                    fit.amplitude,
                    fit.residual,
                    fit.window[0],
                    fit.window[1],
                    fit.n_points,
                    if fit.at_search_edge { "  [at search edge]" } else { "" }
                )?,
                (None, Some(err)) => writeln!(f, "  fit: failed ({err})")?,
                (None, None) => writeln!(f, "  fit: not attempted")?,
            }
            let s = &e.alpha_stop;
            match (s.mean, s.std_dev) {
                (Some(m), Some(sd)) => writeln!(
                    f,
                    "  alpha_stop: mean {m:.4}  sd {sd:.4}  ({} failed, {} exhausted)",
                    s.values.len(),
                    s.n_exhausted
                )?,
                (Some(m), None) => writeln!(f, "  alpha_stop: {m:.4} (single run)")?,
                _ => writeln!(f, "  alpha_stop: none ({} runs exhausted their stream)", s.n_exhausted)?,
            }
            if let Some(g) = e.gap {
                writeln!(f, "  gap alpha* - mean alpha_stop = {g:+.4}")?;
            }
        }
        Ok(())
    }
}
