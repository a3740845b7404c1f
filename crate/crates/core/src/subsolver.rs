//! Maximizer for a concave objective of one 2-D antenna position over a box
//! intersected with linear half-planes.
//!
//! The feasible set is a convex polygon with a handful of edges, so the
//! Euclidean projection is computed exactly by enumerating active sets of
//! size one (edges) and two (vertices). Ascent is projected gradient with
//! Armijo backtracking.

use rand::Rng;

use crate::channel::{AntennaLayout, Region};
use crate::{Error, Point, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_ITERS: usize = 10_000;
/// Absolute slack (in meters) when testing polygon membership.
const MEMBERSHIP_TOL: f64 = 1e-12;

/// `normalᵀx ≥ offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub normal: Point,
    pub offset: f64,
}

impl HalfPlane {
    pub fn slack(&self, x: &Point) -> f64 {
        self.normal.dot(x) - self.offset
    }

    /// Same half-plane with a unit normal, or `None` for a degenerate one.
    fn normalized(&self) -> Option<HalfPlane> {
        let len = self.normal.norm();
        (len > 0.0).then(|| HalfPlane { normal: self.normal / len, offset: self.offset / len })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn from_region(region: &Region) -> Self {
        Rect {
            min: Point::new(-region.x_half, -region.y_half),
            max: Point::new(region.x_half, region.y_half),
        }
    }

    pub fn contains(&self, p: &Point, slack: f64) -> bool {
        p.x >= self.min.x - slack
            && p.x <= self.max.x + slack
            && p.y >= self.min.y - slack
            && p.y <= self.max.y + slack
    }

    fn halfplanes(&self) -> [HalfPlane; 4] {
        [
            HalfPlane { normal: Point::new(1.0, 0.0), offset: self.min.x },
            HalfPlane { normal: Point::new(-1.0, 0.0), offset: -self.max.x },
            HalfPlane { normal: Point::new(0.0, 1.0), offset: self.min.y },
            HalfPlane { normal: Point::new(0.0, -1.0), offset: -self.max.y },
        ]
    }

    fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }
}

/// A concave objective of one position.
///
/// `gain` is the objective minus [`Objective2D::reference_value`]; objectives
/// built around an expansion point evaluate it without the cancellation a
/// full value would suffer, which keeps the line search meaningful near the
/// optimum. Points outside the objective's domain return `-inf`.
pub trait Objective2D {
    fn gain(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;

    fn reference_value(&self) -> f64 {
        0.0
    }

    fn value(&self, x: &Point) -> f64 {
        self.reference_value() + self.gain(x)
    }
}

/// Adapter turning a `(value, gradient)` closure pair into an objective.
pub struct FnObjective<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> Objective2D for FnObjective<V, G>
where
    V: Fn(&Point) -> f64,
    G: Fn(&Point) -> Point,
{
    fn gain(&self, x: &Point) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        (self.gradient)(x)
    }
}

#[derive(Debug, Clone)]
pub struct Subproblem2D<O> {
    pub objective: O,
    pub halfplanes: Vec<HalfPlane>,
    pub bounds: Rect,
    pub start: Point,
}

impl<O: Objective2D> Subproblem2D<O> {
    pub fn is_feasible(&self, x: &Point, slack: f64) -> bool {
        self.bounds.contains(x, slack)
            && self.halfplanes.iter().all(|h| match h.normalized() {
                Some(u) => u.slack(x) >= -slack,
                None => h.offset <= 0.0,
            })
    }

    /// All constraints (box included) with unit normals.
    fn constraints(&self) -> Vec<HalfPlane> {
        let mut out: Vec<HalfPlane> = self.bounds.halfplanes().to_vec();
        out.extend(self.halfplanes.iter().filter_map(HalfPlane::normalized));
        out
    }

    /// Adds a regular polygon inscribed in the disc of `radius` around
    /// `center` to the constraints.
    pub fn restrict_to_disc(&mut self, center: Point, radius: f64, sides: usize) {
        let apothem = radius * (std::f64::consts::PI / sides as f64).cos();
        for k in 0..sides {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
            let outward = Point::new(ang.cos(), ang.sin());
            self.halfplanes.push(HalfPlane {
                normal: -outward,
                offset: -outward.dot(&center) - apothem,
            });
        }
    }

    /// Midpoint-concavity spot check along random segments of the box.
    pub fn spot_check_concavity<R: Rng + ?Sized>(&self, rng: &mut R, segments: usize) -> bool {
        let draw = |rng: &mut R| {
            Point::new(
                rng.random_range(self.bounds.min.x..=self.bounds.max.x),
                rng.random_range(self.bounds.min.y..=self.bounds.max.y),
            )
        };
        (0..segments).all(|_| {
            let a = draw(rng);
            let b = draw(rng);
            let (fa, fb) = (self.objective.gain(&a), self.objective.gain(&b));
            if !(fa.is_finite() && fb.is_finite()) {
                return true;
            }
            let fm = self.objective.gain(&((a + b) / 2.0));
            fm >= 0.5 * (fa + fb) - 1e-9 * (1.0 + fa.abs().max(fb.abs()))
        })
    }
}

/// Exact Euclidean projection of `p` onto `{x : nᵀx ≥ b}` for unit-normal
/// constraints; `None` if the set is empty.
pub fn project_polygon(p: &Point, constraints: &[HalfPlane]) -> Option<Point> {
    let feasible = |x: &Point| constraints.iter().all(|c| c.slack(x) >= -MEMBERSHIP_TOL);
    if feasible(p) {
        return Some(*p);
    }
    let mut best: Option<(f64, Point)> = None;
    let mut consider = |q: Point| {
        if feasible(&q) {
            let d = (q - p).norm_squared();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, q));
            }
        }
    };
    for c in constraints {
        let s = c.slack(p);
        if s < 0.0 {
            consider(p - c.normal * s);
        }
    }
    for (k, a) in constraints.iter().enumerate() {
        for b in &constraints[k + 1..] {
            let det = a.normal.x * b.normal.y - a.normal.y * b.normal.x;
            if det.abs() < 1e-14 {
                continue;
            }
            let x = (a.offset * b.normal.y - a.normal.y * b.offset) / det;
            let y = (a.normal.x * b.offset - a.offset * b.normal.x) / det;
            consider(Point::new(x, y));
        }
    }
    best.map(|(_, q)| q)
}

/// Linearized minimum-distance constraints for antenna `n`:
/// `‖t_n⁰ − t_i‖² + 2(t_n⁰ − t_i)ᵀ(x − t_n⁰) ≥ D_min²` for every `i ≠ n`,
/// where `t_n⁰` is the current position of antenna `n`. The linearization
/// is a global under-estimator of `‖x − t_i‖²`, so every point satisfying it
/// also satisfies the true spacing constraint.
pub fn linearize_distance_constraints(layout: &AntennaLayout, n: usize, d_min: f64) -> Vec<HalfPlane> {
    let t0 = layout.position(n);
    layout
        .positions()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != n)
        .map(|(_, ti)| {
            let diff = t0 - ti;
            let normal = 2.0 * diff;
            // dist² + 2diffᵀ(x − t0) ≥ D²  ⇔  2diffᵀx ≥ D² − dist² + 2diffᵀt0
            let offset = d_min * d_min - diff.norm_squared() + normal.dot(&t0);
            HalfPlane { normal, offset }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub point: Point,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x − P(x + ∇f(x))‖` at the returned point.
    pub pg_norm: f64,
    /// Trial points rejected because the objective was not finite there.
    pub domain_hits: usize,
}

/// Projected gradient ascent from the feasible start.
///
/// The returned point is feasible and its value is never below the start
/// value. Converged means the projected-gradient norm reached `tol`, or the
/// line search stalled at the floating-point resolution of the objective.
/// If the iteration cap is hit, or the search stalls on points outside the
/// objective's domain, the best iterate is returned with `converged = false`.
pub fn maximize<O: Objective2D>(sub: &Subproblem2D<O>, tol: f64) -> Result<SolveOutcome> {
    let scale = (sub.bounds.max - sub.bounds.min).norm().max(1.0);
    if !sub.is_feasible(&sub.start, 1e-9 * scale) {
        return Err(Error::InfeasibleLayout(format!(
            "subproblem start ({}, {}) violates its constraints",
            sub.start.x, sub.start.y
        )));
    }
    let constraints = sub.constraints();
    let project = |p: &Point| project_polygon(p, &constraints).map(|q| sub.bounds.clamp(q));
    let mut x = sub.start;
    let mut fx = sub.objective.gain(&x);
    if !fx.is_finite() {
        return Err(Error::SurrogateDomain(fx));
    }
    let mut step = 1.0;
    let mut domain_hits = 0;
    let mut pg_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        let g = sub.objective.gradient(&x);
        let Some(full) = project(&(x + g)) else { break };
        pg_norm = (full - x).norm();
        if pg_norm <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut s = step;
        let mut accepted = false;
        let hits_before = domain_hits;
        for _ in 0..80 {
            let Some(y) = project(&(x + g * s)) else { break };
            let fy = sub.objective.gain(&y);
            if !fy.is_finite() {
                domain_hits += 1;
            } else if fy >= fx && fy - fx >= 0.5 * g.dot(&(y - x)) {
                accepted = y != x;
                x = y;
                fx = fy;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            // For a smooth objective and an exact projection the Armijo test
            // passes for small enough steps, so a stall without domain hits
            // means rounding has swamped the remaining ascent.
            converged = domain_hits == hits_before;
            break;
        }
        step = (2.0 * s).min(1e15);
    }
    Ok(SolveOutcome {
        point: x,
        value: sub.objective.reference_value() + fx,
        iterations,
        converged,
        pg_norm,
        domain_hits,
    })
}
