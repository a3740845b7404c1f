//! Scenario generation, sweeps, CSV output and the oracle validation suite.

mod config;
mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    db_to_linear, dbm_to_watts, generate_scenario, ExperimentConfig, Scenario, Scheme, Sweep, SweepPoint, SweepVar,
    SystemSpec, UserGen, USER_STREAM,
};
pub use validate::{validate, CheckResult, ValidateOptions, ValidationReport};

use crate::channel::{AntennaLayout, SystemConfig, UserStats};
use crate::ergodic::{mc_ergodic_rate, mrt_ergodic_approx, zf_ergodic_lower_bound};
use crate::mrt_opt::{mrt_objective, optimize_mrt};
use crate::optimizer::{AoOptions, OptimizerTrace};
use crate::zf_opt::{optimize_zf, zf_objective};
use crate::{Error, Point, Result};

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    /// Scheme name; closed-form companions carry a `:bound` or `:approx`
    /// suffix.
    pub scheme: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub sum_rate: f64,
    /// Standard error of `sum_rate`; `None` for closed forms.
    pub stderr: Option<f64>,
    /// AO sweeps spent on the layout (0 for fixed arrays).
    pub iters: usize,
    pub wall_ms: f64,
    pub per_user: Vec<f64>,
}

/// Result of placing antennas for one scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    pub scheme: Scheme,
    pub layout: AntennaLayout,
    /// `None` for fixed arrays.
    pub trace: Option<OptimizerTrace>,
}

/// Antenna layout for `scheme`: the FPA grid, or the AO optimum started
/// from it.
pub fn place(scheme: Scheme, cfg: &SystemConfig, users: &[UserStats], opts: &AoOptions) -> Result<Placement> {
    place_from(scheme, &AntennaLayout::fpa_grid(cfg)?, cfg, users, opts)
}

/// Like [`place`], but movable schemes start the AO loop from `start`.
pub fn place_from(
    scheme: Scheme,
    start: &AntennaLayout,
    cfg: &SystemConfig,
    users: &[UserStats],
    opts: &AoOptions,
) -> Result<Placement> {
    let (layout, trace) = match scheme {
        Scheme::MaZf => {
            let (l, t) = optimize_zf(start, users, cfg, opts)?;
            (l, Some(t))
        }
        Scheme::MaMrt => {
            let (l, t) = optimize_mrt(start, users, cfg, opts)?;
            (l, Some(t))
        }
        _ => (AntennaLayout::fpa_grid(cfg)?, None),
    };
    Ok(Placement { scheme, layout, trace })
}

/// Closed-form objective the AO loop of a movable scheme maximizes.
fn placement_objective(scheme: Scheme, layout: &AntennaLayout, cfg: &SystemConfig, users: &[UserStats]) -> Result<f64> {
    match scheme {
        Scheme::MaZf => zf_objective(layout, users, cfg),
        _ => Ok(mrt_objective(layout, users, cfg)),
    }
}

/// Output of the `optimize` verb.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub scenario: String,
    pub scheme: Scheme,
    pub initial_layout: Vec<Point>,
    pub layout: Vec<Point>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub sweep_objectives: Vec<f64>,
}

/// Runs every movable scheme of the scenario's first sweep point.
pub fn optimize(scenario: &Scenario) -> Result<Vec<OptimizeOutcome>> {
    let point = scenario.points()?.swap_remove(0);
    movable_schemes(scenario)
        .into_iter()
        .filter(|s| !s.needs_zf() || point.cfg.n_antennas > point.users.len())
        .map(|scheme| {
            let placed = place(scheme, &point.cfg, &point.users, &scenario.optimizer)?;
            let trace = placed.trace.expect("movable schemes carry a trace");
            Ok(OptimizeOutcome {
                scenario: scenario.id.clone(),
                scheme,
                initial_layout: AntennaLayout::fpa_grid(&point.cfg)?.positions().to_vec(),
                layout: placed.layout.positions().to_vec(),
                initial_objective: trace.initial_objective,
                final_objective: trace.final_objective(),
                sweeps: trace.sweeps(),
                converged: trace.converged,
                sweep_objectives: trace.sweep_objectives,
            })
        })
        .collect()
}

fn movable_schemes(scenario: &Scenario) -> Vec<Scheme> {
    let picked: Vec<Scheme> = scenario.schemes.iter().copied().filter(|s| s.movable()).collect();
    if picked.is_empty() {
        vec![Scheme::MaZf, Scheme::MaMrt]
    } else {
        picked
    }
}

/// Monte-Carlo seed of a scenario. Every scheme and sweep point uses the
/// same small-scale fading draws, so differences along a curve or between
/// curves are not masked by sampling noise.
pub fn mc_seed(scenario_seed: u64) -> u64 {
    scenario_seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Wall-clock timer for the `wall_ms` column. `wasm32-unknown-unknown` has
/// no clock, so it reads 0 there.
struct Stopwatch(#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))] std::time::Instant);

impl Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }

    #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
    fn start() -> Self {
        Stopwatch()
    }

    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }

    #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
    fn ms(&self) -> f64 {
        0.0
    }
}

/// Placement of every scheme at one sweep point, with the time it took.
struct PointPlacements {
    placed: Vec<Placement>,
    wall_ms: Vec<f64>,
}

fn place_point(scenario: &Scenario, point: &SweepPoint) -> Result<PointPlacements> {
    let mut out = PointPlacements { placed: Vec::new(), wall_ms: Vec::new() };
    for &scheme in &scenario.schemes {
        let start = Stopwatch::start();
        out.placed.push(place(scheme, &point.cfg, &point.users, &scenario.optimizer)?);
        out.wall_ms.push(start.ms());
    }
    Ok(out)
}

/// Warm starts along the sweep. The AO loop only finds local optima, so a
/// point whose own optimum is beaten by another point's optimized layout
/// (feasible here, judged by this point's objective) is re-optimized from
/// that layout. Passes repeat until nothing changes; each pass reads a
/// snapshot of the previous one, so the result does not depend on threads.
fn warm_start(scenario: &Scenario, points: &[SweepPoint], placements: &mut [PointPlacements]) -> Result<()> {
    let opts = &scenario.optimizer;
    for _ in 0..points.len() {
        let snapshot: Vec<Vec<AntennaLayout>> =
            placements.iter().map(|p| p.placed.iter().map(|pl| pl.layout.clone()).collect()).collect();
        let updates = map_items(points, |i, point| -> Result<Vec<(usize, Placement, f64)>> {
            let mut found = Vec::new();
            for (k, &scheme) in scenario.schemes.iter().enumerate() {
                if !scheme.movable() {
                    continue;
                }
                let start = Stopwatch::start();
                let own = placement_objective(scheme, &snapshot[i][k], &point.cfg, &point.users)?;
                let mut best: Option<(f64, &AntennaLayout)> = None;
                for (j, layouts) in snapshot.iter().enumerate() {
                    let cand = &layouts[k];
                    if j == i || cand.check(&point.cfg).is_err() {
                        continue;
                    }
                    let f = placement_objective(scheme, cand, &point.cfg, &point.users)?;
                    if f > own + opts.zeta * own.abs() && best.is_none_or(|(b, _)| f > b) {
                        best = Some((f, cand));
                    }
                }
                if let Some((_, cand)) = best {
                    let placed = place_from(scheme, cand, &point.cfg, &point.users, opts)?;
                    let f = placement_objective(scheme, &placed.layout, &point.cfg, &point.users)?;
                    if f > own {
                        found.push((k, placed, start.ms()));
                    }
                }
            }
            Ok(found)
        });
        let mut changed = false;
        for (p, u) in placements.iter_mut().zip(updates) {
            for (k, placed, ms) in u? {
                p.placed[k] = placed;
                p.wall_ms[k] += ms;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(())
}

/// Layouts of every scheme at every sweep point, including the warm starts
/// that [`evaluate`] applies. Indexed `[point][scheme]` in the scenario's
/// scheme order.
pub fn place_all(scenario: &Scenario) -> Result<Vec<Vec<Placement>>> {
    let points = scenario.points()?;
    let (mut placements, err) = ok_prefix(map_items(&points, |_, p| place_point(scenario, p)));
    if let Some(e) = err {
        return Err(e);
    }
    warm_start(scenario, &points, &mut placements)?;
    Ok(placements.into_iter().map(|p| p.placed).collect())
}

fn evaluate_point(scenario: &Scenario, point: &SweepPoint, placements: &PointPlacements) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let sweep_value = if point.value.is_nan() { 0.0 } else { point.value };
    let row = |scheme: String, sum_rate, stderr, iters, wall_ms, per_user| ResultRow {
        scenario: scenario.id.clone(),
        scheme,
        sweep_var: scenario.sweep_var().to_string(),
        sweep_value,
        sum_rate,
        stderr,
        iters,
        wall_ms,
        per_user,
    };
    for (placed, &place_ms) in placements.placed.iter().zip(&placements.wall_ms) {
        let scheme = placed.scheme;
        let start = Stopwatch::start();
        let iters = placed.trace.as_ref().map_or(0, OptimizerTrace::sweeps);
        let mc = mc_ergodic_rate(
            &placed.layout,
            &point.users,
            &point.cfg,
            scheme.beamformer(),
            scenario.mc_samples,
            mc_seed(scenario.seed),
        )?;
        let wall_ms = place_ms + start.ms();
        rows.push(row(scheme.name().into(), mc.sum, mc.sum_std_err, iters, wall_ms, mc.per_user));
        let closed = match scheme {
            Scheme::MaZf | Scheme::FpaZf => Some(("bound", zf_ergodic_lower_bound(&placed.layout, &point.users, &point.cfg)?)),
            Scheme::MaMrt | Scheme::FpaMrt => Some(("approx", mrt_ergodic_approx(&placed.layout, &point.users, &point.cfg))),
            _ => None,
        };
        if let Some((tag, rep)) = closed {
            rows.push(row(format!("{}:{tag}", scheme.name()), rep.sum, None, iters, 0.0, rep.per_user));
        }
    }
    if let Some(bad) = rows.iter().find(|r| !(r.sum_rate >= 0.0 && r.sum_rate.is_finite())) {
        return Err(Error::Domain(format!("{} produced rate {}", bad.scheme, bad.sum_rate)));
    }
    Ok(rows)
}

#[cfg(feature = "parallel")]
fn map_items<I: Sync, T: Send, F>(items: &[I], f: F) -> Vec<T>
where
    F: Fn(usize, &I) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_items<I, T, F: Fn(usize, &I) -> T>(items: &[I], f: F) -> Vec<T> {
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Splits per-item results at the first error.
fn ok_prefix<T>(results: Vec<Result<T>>) -> (Vec<T>, Option<Error>) {
    let mut ok = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => return (ok, Some(e)),
        }
    }
    (ok, None)
}

/// Evaluates every (sweep point, scheme) pair without touching the disk.
///
/// On failure returns the rows of the points before the first failing one,
/// their count, and the error.
pub fn evaluate(scenario: &Scenario) -> std::result::Result<Vec<ResultRow>, (Vec<ResultRow>, usize, Error)> {
    let points = scenario.points().map_err(|e| (Vec::new(), 0, e))?;
    let (mut placements, mut err) = ok_prefix(map_items(&points, |_, p| place_point(scenario, p)));
    let points = &points[..placements.len()];
    if let Err(e) = warm_start(scenario, points, &mut placements) {
        return Err((Vec::new(), 0, e));
    }
    let (per_point, eval_err) = ok_prefix(map_items(points, |i, p| evaluate_point(scenario, p, &placements[i])));
    let done = per_point.len();
    let rows: Vec<ResultRow> = per_point.into_iter().flatten().collect();
    if eval_err.is_some() {
        err = eval_err;
    }
    match err {
        Some(e) => Err((rows, done, e)),
        None => Ok(rows),
    }
}

/// Evaluates the scenario and writes the rows to `out` as CSV.
///
/// If a sweep point fails, the completed rows go to `<out>.partial` and the
/// returned [`Error::Partial`] names that file.
pub fn run(scenario: &Scenario, out: &Path) -> Result<Vec<ResultRow>> {
    match evaluate(scenario) {
        Ok(rows) => {
            write_rows_csv(&rows, out)?;
            Ok(rows)
        }
        Err((rows, completed, source)) => {
            let partial = with_suffix(out, ".partial");
            write_rows_csv(&rows, &partial)?;
            let total = scenario.points().map_or(0, |p| p.len());
            Err(Error::Partial {
                completed,
                total,
                partial: partial.display().to_string(),
                source: Box::new(source),
            })
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub const CSV_HEADER: [&str; 8] = ["scenario", "scheme", "sweep_var", "sweep_value", "sum_rate", "stderr", "iters", "wall_ms"];

/// Writes rows through a temporary sibling file and renames it into place.
pub fn write_rows_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let k_max = rows.iter().map(|r| r.per_user.len()).max().unwrap_or(0);
    let mut header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((1..=k_max).map(|k| format!("rate_user_{k}")));
    let mut records = vec![header];
    for r in rows {
        let mut rec = vec![
            r.scenario.clone(),
            r.scheme.clone(),
            r.sweep_var.clone(),
            fmt_f64(r.sweep_value),
            fmt_f64(r.sum_rate),
            r.stderr.map(fmt_f64).unwrap_or_default(),
            r.iters.to_string(),
            format!("{:.3}", r.wall_ms),
        ];
        rec.extend((0..k_max).map(|k| r.per_user.get(k).map(|&v| fmt_f64(v)).unwrap_or_default()));
        records.push(rec);
    }
    write_csv_atomic(path, &records)
}

fn write_csv_atomic(path: &Path, records: &[Vec<String>]) -> Result<()> {
    let tmp = with_suffix(path, ".tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(csv_err)?;
        for rec in records {
            w.write_record(rec).map_err(csv_err)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// One per-sweep line of a convergence trace; sweep 0 is the initial layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRow {
    pub scenario: String,
    pub scheme: String,
    pub iteration: usize,
    pub objective: f64,
    pub fractional_increase: f64,
    pub accepted_moves: usize,
    pub mm_steps: usize,
}

/// Optimizer traces for the movable schemes at the first sweep point,
/// written to `out` as CSV.
pub fn converge(scenario: &Scenario, out: &Path) -> Result<Vec<ConvergeRow>> {
    let point = scenario.points()?.swap_remove(0);
    let mut rows = Vec::new();
    for scheme in movable_schemes(scenario) {
        if scheme.needs_zf() && point.cfg.n_antennas <= point.users.len() {
            continue;
        }
        let trace = place(scheme, &point.cfg, &point.users, &scenario.optimizer)?.trace.expect("movable");
        let mut prev = trace.initial_objective;
        rows.push(ConvergeRow {
            scenario: scenario.id.clone(),
            scheme: scheme.name().into(),
            iteration: 0,
            objective: prev,
            fractional_increase: 0.0,
            accepted_moves: 0,
            mm_steps: 0,
        });
        for (i, &obj) in trace.sweep_objectives.iter().enumerate() {
            let steps = trace.iterations.iter().filter(|s| s.sweep == i + 1);
            let (accepted, mm) = steps.fold((0, 0), |(a, m), s| (a + s.accepted as usize, m + s.mm_steps));
            rows.push(ConvergeRow {
                scenario: scenario.id.clone(),
                scheme: scheme.name().into(),
                iteration: i + 1,
                objective: obj,
                fractional_increase: crate::optimizer::fractional_increase(prev, obj),
                accepted_moves: accepted,
                mm_steps: mm,
            });
            prev = obj;
        }
    }
    let mut records = vec![[
        "scenario",
        "scheme",
        "iteration",
        "objective",
        "fractional_increase",
        "accepted_moves",
        "mm_steps",
    ]
    .map(String::from)
    .to_vec()];
    for r in &rows {
        records.push(vec![
            r.scenario.clone(),
            r.scheme.clone(),
            r.iteration.to_string(),
            fmt_f64(r.objective),
            fmt_f64(r.fractional_increase),
            r.accepted_moves.to_string(),
            r.mm_steps.to_string(),
        ]);
    }
    write_csv_atomic(out, &records)?;
    Ok(rows)
}
