//! Alternating (antenna-by-antenna) optimization loop shared by the MRT and
//! ZF position optimizers.

use serde::{Deserialize, Serialize};

use crate::channel::{AntennaLayout, SystemConfig};
use crate::subsolver::SolveOutcome;
use crate::{Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoOptions {
    /// Stop once a full sweep raises the objective by less than this fraction.
    pub zeta: f64,
    pub max_sweeps: usize,
    /// Projected-gradient tolerance handed to the subsolver.
    pub tol: f64,
    /// Surrogate re-expansions per antenna within one sweep. `1` gives the
    /// plain one-step-per-sweep schedule.
    pub inner_steps: usize,
    /// An antenna's inner loop stops once a step gains less than this
    /// fraction of the objective.
    pub inner_tol: f64,
    /// After an accepted step `t⁰ → t*`, also try `t⁰ + 2^i (t* − t⁰)` for
    /// `i = 1, 2, ...` while the true objective keeps increasing.
    pub extrapolate: bool,
}

impl Default for AoOptions {
    fn default() -> Self {
        AoOptions {
            zeta: 0.5e-4,
            max_sweeps: 200,
            tol: crate::subsolver::DEFAULT_TOL,
            inner_steps: 20,
            inner_tol: 1e-6,
            extrapolate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based sweep index.
    pub sweep: usize,
    pub antenna: usize,
    /// Surrogate value at the subsolver output.
    pub surrogate: f64,
    /// True objective after the step (accepted or not).
    pub objective: f64,
    pub accepted: bool,
    pub subsolver_converged: bool,
    /// Surrogate solves spent on this antenna.
    pub mm_steps: usize,
    pub layout: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub initial_objective: f64,
    pub iterations: Vec<TraceStep>,
    /// True objective at the end of each sweep.
    pub sweep_objectives: Vec<f64>,
    pub converged: bool,
    pub threshold: f64,
}

impl OptimizerTrace {
    pub fn sweeps(&self) -> usize {
        self.sweep_objectives.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.sweep_objectives.last().copied().unwrap_or(self.initial_objective)
    }

    /// Fractional increase over the last sweep.
    pub fn last_increase(&self) -> f64 {
        let n = self.sweep_objectives.len();
        let prev = match n {
            0 => return 0.0,
            1 => self.initial_objective,
            _ => self.sweep_objectives[n - 2],
        };
        fractional_increase(prev, self.sweep_objectives[n - 1])
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        let mut prev = self.initial_objective;
        self.iterations.iter().all(|s| {
            let ok = s.objective >= prev - tol;
            prev = s.objective;
            ok
        })
    }
}

pub fn fractional_increase(before: f64, after: f64) -> f64 {
    if before.abs() > 0.0 {
        (after - before) / before.abs()
    } else {
        after - before
    }
}

/// One position-optimization problem as seen by the AO loop.
pub(crate) trait AoProblem {
    /// True objective at a layout.
    fn objective(&self, layout: &AntennaLayout) -> Result<f64>;
    /// Builds and solves the surrogate subproblem for antenna `n`.
    fn solve_antenna(&self, layout: &AntennaLayout, n: usize, tol: f64) -> Result<SolveOutcome>;
}

/// Sweeps antennas in ascending order, moving each one to its subproblem
/// solution whenever that keeps the layout feasible and does not lower the
/// true objective.
pub(crate) fn run_ao<P: AoProblem>(
    problem: &P,
    layout0: &AntennaLayout,
    cfg: &SystemConfig,
    opts: &AoOptions,
) -> Result<(AntennaLayout, OptimizerTrace)> {
    layout0.check(cfg)?;
    let mut layout = layout0.clone();
    let mut f = problem.objective(&layout)?;
    let mut trace = OptimizerTrace {
        initial_objective: f,
        iterations: Vec::new(),
        sweep_objectives: Vec::new(),
        converged: false,
        threshold: opts.zeta,
    };
    for sweep in 1..=opts.max_sweeps {
        let f_start = f;
        for n in 0..layout.len() {
            let mut accepted = false;
            let mut last = None;
            let mut mm_steps = 0;
            while mm_steps < opts.inner_steps.max(1) {
                mm_steps += 1;
                let t0 = layout.position(n);
                let out = problem.solve_antenna(&layout, n, opts.tol)?;
                let f_in = f;
                let mut moved = false;
                if out.point != t0 {
                    if let Some(f_new) = try_move(problem, &mut layout, cfg, n, out.point, f)? {
                        f = f_new;
                        moved = true;
                    }
                }
                if moved && opts.extrapolate {
                    let mut scale = 2.0;
                    while let Some(f_new) = try_move(problem, &mut layout, cfg, n, t0 + (out.point - t0) * scale, f)? {
                        if f_new <= f {
                            break;
                        }
                        f = f_new;
                        scale *= 2.0;
                    }
                }
                accepted |= moved;
                last = Some(out);
                if !moved || f - f_in <= opts.inner_tol * f.abs() {
                    break;
                }
            }
            let out = last.expect("at least one surrogate solve");
            trace.iterations.push(TraceStep {
                sweep,
                antenna: n,
                surrogate: out.value,
                objective: f,
                accepted,
                subsolver_converged: out.converged,
                mm_steps,
                layout: layout.positions().to_vec(),
            });
        }
        trace.sweep_objectives.push(f);
        if fractional_increase(f_start, f) < opts.zeta {
            trace.converged = true;
            break;
        }
    }
    Ok((layout, trace))
}

/// Moves antenna `n` to `p` if the result is feasible and the objective does
/// not drop below `f`; returns the new objective on success.
fn try_move<P: AoProblem>(
    problem: &P,
    layout: &mut AntennaLayout,
    cfg: &SystemConfig,
    n: usize,
    p: Point,
    f: f64,
) -> Result<Option<f64>> {
    let mut cand = layout.clone();
    cand.set_position(n, p);
    if cand.check(cfg).is_err() {
        return Ok(None);
    }
    let f_new = problem.objective(&cand)?;
    if f_new >= f {
        *layout = cand;
        Ok(Some(f_new))
    } else {
        Ok(None)
    }
}
