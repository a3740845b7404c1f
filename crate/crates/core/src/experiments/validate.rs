//! Self-consistency checks of the closed forms, surrogates and optimizers
//! on one scenario.

use std::path::Path;

use nalgebra::Matrix2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Scenario;
use crate::beamforming::Beamformer;
use crate::channel::{stream_rng, AntennaLayout, ChannelSampler, SystemConfig, UserStats};
use crate::ergodic::{mc_ergodic_rate, mrt_ergodic_approx, mrt_moments, zf_ergodic_lower_bound};
use crate::mrt_opt::{mrt_objective, p3n_from_terms, optimize_mrt, MrtSurrogateTerms};
use crate::optimizer::{AoOptions, OptimizerTrace};
use crate::subsolver::Objective2D;
use crate::zf_opt::{optimize_zf, p5n_from_terms, zf_objective, ZfPerAntennaCache};
use crate::{Error, Point, Result};

const VALIDATE_STREAM: u64 = 0x5641_4c49;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateOptions {
    /// Random layouts per check, on top of the FPA grid.
    pub layouts: usize,
    /// Sampled positions per (layout, antenna).
    pub points: usize,
    pub moment_draws: usize,
    pub mc_samples: usize,
    /// Standard-error multiple allowed for each Monte-Carlo comparison.
    pub z_limit: f64,
    /// Multiplies every ψ (values below 1 break the MRT minorizer).
    pub psi_scale: f64,
    /// Multiplies every ξ (values below 1 break the ZF minorizer).
    pub xi_scale: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            layouts: 4,
            points: 50,
            moment_draws: 20_000,
            mc_samples: 20_000,
            z_limit: 4.5,
            psi_scale: 1.0,
            xi_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub residual: f64,
    /// Pass threshold for `residual`.
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, residual: f64, threshold: f64, detail: String) -> Self {
        CheckResult { name: name.into(), passed: residual <= threshold, residual, threshold, detail }
    }

    fn skipped(name: &str, why: &str) -> Self {
        CheckResult { name: name.into(), passed: true, residual: 0.0, threshold: 0.0, detail: format!("skipped: {why}") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

struct Ctx<'a> {
    cfg: &'a SystemConfig,
    users: &'a [UserStats],
    layouts: Vec<AntennaLayout>,
    opts: &'a ValidateOptions,
    seed: u64,
    zf_ok: bool,
}

/// Runs the check suite on the first sweep point of `scenario`; writes the
/// report as JSON to `out` when given.
pub fn validate(scenario: &Scenario, opts: &ValidateOptions, out: Option<&Path>) -> Result<ValidationReport> {
    let point = scenario.points()?.swap_remove(0);
    let mut rng = stream_rng(scenario.seed, VALIDATE_STREAM);
    let mut layouts = vec![AntennaLayout::fpa_grid(&point.cfg)?];
    for _ in 0..opts.layouts {
        layouts.push(AntennaLayout::random(&point.cfg, &mut rng)?);
    }
    let ctx = Ctx {
        cfg: &point.cfg,
        users: &point.users,
        layouts,
        opts,
        seed: scenario.seed,
        zf_ok: point.cfg.n_antennas > point.users.len(),
    };
    let checks = vec![
        moments(&ctx),
        mrt_approx(&ctx)?,
        zf_jensen(&ctx)?,
        woodbury(&ctx),
        mrt_minorization(&ctx),
        zf_minorization(&ctx)?,
        mrt_curvature(&ctx),
        zf_curvature(&ctx)?,
        mrt_gradient(&ctx),
        zf_gradient(&ctx)?,
        invariance(&ctx, &scenario.optimizer)?,
        monotone(&ctx, &scenario.optimizer)?,
    ];
    let report = ValidationReport {
        scenario: scenario.id.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

impl Ctx<'_> {
    fn rng(&self, stream: u64) -> rand_chacha::ChaCha8Rng {
        stream_rng(self.seed, VALIDATE_STREAM + stream)
    }

    fn random_point<R: Rng>(&self, rng: &mut R) -> Point {
        let r = &self.cfg.region;
        Point::new(rng.random_range(-r.x_half..=r.x_half), rng.random_range(-r.y_half..=r.y_half))
    }

    fn with_position(&self, layout: &AntennaLayout, n: usize, t: Point) -> AntennaLayout {
        let mut l = layout.clone();
        l.set_position(n, t);
        l
    }

    /// Uniform point of the region within `λ/4` of `center`.
    fn near_point<R: Rng>(&self, center: &Point, rng: &mut R) -> Point {
        let r = 0.25 * self.cfg.wavelength * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let p = center + Point::new(r * a.cos(), r * a.sin());
        let reg = &self.cfg.region;
        Point::new(p.x.clamp(-reg.x_half, reg.x_half), p.y.clamp(-reg.y_half, reg.y_half))
    }

    /// Position for antenna `n` that keeps the spacing to the others, when
    /// one is found within a few draws.
    fn feasible_point<R: Rng>(&self, layout: &AntennaLayout, n: usize, rng: &mut R) -> Point {
        let mut t = self.random_point(rng);
        for _ in 0..100 {
            let ok = layout
                .positions()
                .iter()
                .enumerate()
                .all(|(j, p)| j == n || (p - t).norm() >= self.cfg.d_min);
            if ok {
                break;
            }
            t = self.random_point(rng);
        }
        t
    }
}

fn moments(ctx: &Ctx) -> CheckResult {
    let mut rng = ctx.rng(1);
    let draws = ctx.opts.moment_draws.max(2) as f64;
    let m_users = ctx.users.len();
    let mut worst: f64 = 0.0;
    for layout in &ctx.layouts {
        let closed = mrt_moments(layout, ctx.users, ctx.cfg.wavelength);
        let sampler = ChannelSampler::new(layout, ctx.users, ctx.cfg.wavelength);
        // Running (sum, sum of squares) of |h_j^H h_m|^2, diagonal = ‖h_m‖⁴.
        let mut acc = vec![(0.0f64, 0.0f64); m_users * m_users];
        for _ in 0..ctx.opts.moment_draws {
            let h = sampler.sample(&mut rng);
            let gram = h.matrix().adjoint() * h.matrix();
            for j in 0..m_users {
                for m in 0..m_users {
                    let v = gram[(j, m)].norm_sqr();
                    let a = &mut acc[j * m_users + m];
                    a.0 += v;
                    a.1 += v * v;
                }
            }
        }
        for j in 0..m_users {
            for m in 0..m_users {
                let (s, s2) = acc[j * m_users + m];
                let mean = s / draws;
                let se = ((s2 / draws - mean * mean).max(0.0) / (draws - 1.0)).sqrt();
                let target = if j == m { closed.fourth[m] } else { closed.cross[(j, m)] };
                if se > 0.0 {
                    worst = worst.max((mean - target).abs() / se);
                }
            }
        }
    }
    CheckResult::at_most(
        "mrt_moments",
        worst,
        ctx.opts.z_limit,
        format!("max |MC − closed form| in standard errors over {} layouts", ctx.layouts.len()),
    )
}

fn mrt_approx(ctx: &Ctx) -> Result<CheckResult> {
    let layout = &ctx.layouts[0];
    let approx = mrt_ergodic_approx(layout, ctx.users, ctx.cfg);
    let mc = mc_ergodic_rate(layout, ctx.users, ctx.cfg, Beamformer::Mrt, ctx.opts.mc_samples, ctx.seed)?;
    let se = mc.mc_std_err.clone().unwrap_or_default();
    // Residual: excess over the allowed band, as a fraction of it.
    let mut worst = f64::NEG_INFINITY;
    for m in 0..ctx.users.len() {
        let allowed = 0.05 * mc.per_user[m] + 3.0 * se[m];
        worst = worst.max((approx.per_user[m] - mc.per_user[m]).abs() / allowed.max(f64::MIN_POSITIVE));
    }
    Ok(CheckResult::at_most(
        "mrt_approx_vs_mc",
        worst,
        1.0,
        "per-user |approx − MC| / (5% of MC + 3 standard errors) at the FPA grid".into(),
    ))
}

fn zf_jensen(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.zf_ok {
        return Ok(CheckResult::skipped("zf_jensen", "ZF needs more antennas than users"));
    }
    let layout = &ctx.layouts[0];
    let bound = zf_ergodic_lower_bound(layout, ctx.users, ctx.cfg)?;
    let mc = mc_ergodic_rate(layout, ctx.users, ctx.cfg, Beamformer::Zf, ctx.opts.mc_samples, ctx.seed)?;
    let se = mc.mc_std_err.clone().unwrap_or_default();
    let worst = (0..ctx.users.len())
        .map(|m| (bound.per_user[m] - mc.per_user[m]) / se[m].max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        "zf_jensen",
        worst,
        ctx.opts.z_limit,
        "max (bound − MC) per user in standard errors at the FPA grid".into(),
    ))
}

fn woodbury(ctx: &Ctx) -> CheckResult {
    if !ctx.zf_ok {
        return CheckResult::skipped("woodbury", "ZF needs more antennas than users");
    }
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for layout in &ctx.layouts {
        for n in 0..layout.len() {
            match ZfPerAntennaCache::build(layout, ctx.users, ctx.cfg, n) {
                Ok(c) => worst = worst.max(c.woodbury_residual),
                Err(_) => failures += 1,
            }
        }
    }
    let mut r = CheckResult::at_most(
        "woodbury",
        worst,
        crate::zf_opt::WOODBURY_TOL,
        format!("relative residual of the rank-one inverse; {failures} cache builds failed"),
    );
    r.passed &= failures == 0;
    r
}

/// Worst violations over sampled positions: surrogate above truth (relative
/// to `max(1, |truth|)`), per-user bound crossing its function (relative to
/// the function's amplitude), and the gap at the anchor.
#[derive(Default)]
struct Minorization {
    above: f64,
    per_user: f64,
    gap: f64,
}

/// `surrogate(layout, n)` returns the subproblem objective and a per-user
/// check `t ↦ worst relative violation of the per-user bound at t`.
fn minorization<S, T>(ctx: &Ctx, stream: u64, surrogate: S, truth: T) -> Result<Minorization>
where
    S: Fn(&AntennaLayout, usize) -> Result<(Box<dyn Objective2D>, Box<dyn Fn(&Point) -> f64>)>,
    T: Fn(&AntennaLayout) -> Result<f64>,
{
    let mut rng = ctx.rng(stream);
    let mut worst = Minorization { above: f64::NEG_INFINITY, per_user: f64::NEG_INFINITY, gap: 0.0 };
    for layout in &ctx.layouts {
        for n in 0..layout.len() {
            let (obj, per_user) = surrogate(layout, n)?;
            let t0 = layout.position(n);
            let f0 = truth(layout)?;
            worst.gap = worst.gap.max((obj.value(&t0) - f0).abs() / f0.abs().max(1.0));
            for i in 0..ctx.opts.points {
                // Half the samples near the anchor, where the bound is tightest.
                let t = if i % 2 == 0 {
                    ctx.feasible_point(layout, n, &mut rng)
                } else {
                    ctx.near_point(&t0, &mut rng)
                };
                let f = truth(&ctx.with_position(layout, n, t))?;
                let s = obj.value(&t);
                if s.is_finite() {
                    worst.above = worst.above.max((s - f) / f.abs().max(1.0));
                }
                worst.per_user = worst.per_user.max(per_user(&t));
            }
        }
    }
    Ok(worst)
}

fn minorization_check(name: &str, m: Minorization) -> CheckResult {
    let mut r = CheckResult::at_most(
        name,
        m.above.max(m.per_user),
        1e-10,
        format!(
            "max relative excess of surrogate over truth {:.2e}, of per-user bounds {:.2e}; anchor gap {:.2e}",
            m.above, m.per_user, m.gap
        ),
    );
    r.passed &= m.gap <= 1e-9;
    r
}

fn mrt_minorization(ctx: &Ctx) -> CheckResult {
    let scale = ctx.opts.psi_scale;
    let res = minorization(
        ctx,
        2,
        |l, n| {
            let terms = MrtSurrogateTerms::new(l, ctx.users, ctx.cfg, n);
            let obj = p3n_from_terms(&terms, l, ctx.cfg, scale).objective;
            // b_m(t) ≤ b_m(t⁰) + ∇b_mᵀd + (ψ_m/2)‖d‖²
            let check = move |t: &Point| {
                let t0 = terms.anchor;
                let d = t - t0;
                (0..terms.n_users())
                    .map(|m| {
                        let upper = terms.b(&t0, m) + terms.grad_b(&t0, m).dot(&d) + 0.5 * scale * terms.psi_bound(m) * d.norm_squared();
                        let amp: f64 = (0..terms.n_users()).map(|j| 2.0 * terms.c1[(m, j)] * terms.tau[(m, j)].norm()).sum();
                        if amp > 0.0 { (terms.b(t, m) - upper) / amp } else { f64::NEG_INFINITY }
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            Ok((Box::new(obj) as Box<dyn Objective2D>, Box::new(check) as Box<dyn Fn(&Point) -> f64>))
        },
        |l| Ok(mrt_objective(l, ctx.users, ctx.cfg)),
    )
    .expect("MRT surrogate construction is infallible");
    minorization_check("mrt_minorization", res)
}

fn zf_minorization(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.zf_ok {
        return Ok(CheckResult::skipped("zf_minorization", "ZF needs more antennas than users"));
    }
    let scale = ctx.opts.xi_scale;
    let res = minorization(
        ctx,
        3,
        |l, n| {
            let terms = ZfPerAntennaCache::build(l, ctx.users, ctx.cfg, n)?.surrogate_terms();
            let obj = p5n_from_terms(&terms, l, ctx.cfg, n, scale)?.objective;
            // F_m(t) ≥ F_m(t⁰) + ∇F_mᵀd − (ξ_m/2)‖d‖²
            let check = move |t: &Point| {
                let t0 = terms.anchor;
                let d = t - t0;
                (0..terms.n_users())
                    .map(|m| {
                        let lower = terms.f(&t0, m) + terms.grad_f(&t0, m).dot(&d) - 0.5 * scale * terms.xi_bound(m) * d.norm_squared();
                        let amp: f64 = terms.q[m].iter().map(|q| q.norm()).sum();
                        if amp > 0.0 { (lower - terms.f(t, m)) / amp } else { f64::NEG_INFINITY }
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            Ok((Box::new(obj) as Box<dyn Objective2D>, Box::new(check) as Box<dyn Fn(&Point) -> f64>))
        },
        |l| zf_objective(l, ctx.users, ctx.cfg),
    )?;
    Ok(minorization_check("zf_minorization", res))
}

fn lam_max(h: &Matrix2<f64>) -> f64 {
    h.symmetric_eigenvalues().max()
}

/// Worst `λ_max(Hessian) / bound` over sampled positions.
fn curvature<H, B>(ctx: &Ctx, stream: u64, hess: H, bound: B) -> Result<f64>
where
    H: Fn(&AntennaLayout, usize, &Point, usize) -> Result<Matrix2<f64>>,
    B: Fn(&AntennaLayout, usize, usize) -> Result<f64>,
{
    let mut rng = ctx.rng(stream);
    let mut worst = f64::NEG_INFINITY;
    for layout in &ctx.layouts {
        for n in 0..layout.len() {
            for m in 0..ctx.users.len() {
                let b = bound(layout, n, m)?;
                for _ in 0..ctx.opts.points.div_ceil(ctx.users.len()) {
                    let t = ctx.random_point(&mut rng);
                    let lam = lam_max(&hess(layout, n, &t, m)?);
                    let ratio = if b > 0.0 { lam / b } else if lam <= 0.0 { 0.0 } else { f64::INFINITY };
                    worst = worst.max(ratio);
                }
            }
        }
    }
    Ok(worst)
}

fn mrt_curvature(ctx: &Ctx) -> CheckResult {
    let scale = ctx.opts.psi_scale;
    let worst = curvature(
        ctx,
        4,
        |l, n, t, m| Ok(MrtSurrogateTerms::new(l, ctx.users, ctx.cfg, n).hessian_b(t, m)),
        |l, n, m| Ok(scale * MrtSurrogateTerms::new(l, ctx.users, ctx.cfg, n).psi_bound(m)),
    )
    .expect("infallible");
    CheckResult::at_most("mrt_curvature", worst, 1.0 + 1e-12, "max λmax(∇²b) / ψ over sampled positions".into())
}

fn zf_curvature(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.zf_ok {
        return Ok(CheckResult::skipped("zf_curvature", "ZF needs more antennas than users"));
    }
    let scale = ctx.opts.xi_scale;
    let terms = |l: &AntennaLayout, n| ZfPerAntennaCache::build(l, ctx.users, ctx.cfg, n).map(|c| c.surrogate_terms());
    let worst = curvature(
        ctx,
        5,
        |l, n, t, m| Ok(terms(l, n)?.hessian_f(t, m)),
        |l, n, m| Ok(scale * terms(l, n)?.xi_bound(m)),
    )?;
    Ok(CheckResult::at_most("zf_curvature", worst, 1.0 + 1e-12, "max λmax(∇²F) / ξ over sampled positions".into()))
}

fn fd_gradient(f: impl Fn(&Point) -> f64, t: &Point, h: f64) -> Point {
    let ex = Point::new(h, 0.0);
    let ey = Point::new(0.0, h);
    Point::new((f(&(t + ex)) - f(&(t - ex))) / (2.0 * h), (f(&(t + ey)) - f(&(t - ey))) / (2.0 * h))
}

const GRAD_TOL: f64 = 1e-4;

fn mrt_gradient(ctx: &Ctx) -> CheckResult {
    let mut rng = ctx.rng(6);
    let h = 1e-6 * ctx.cfg.wavelength;
    let mut worst: f64 = 0.0;
    for layout in &ctx.layouts {
        for n in 0..layout.len() {
            let terms = MrtSurrogateTerms::new(layout, ctx.users, ctx.cfg, n);
            for m in 0..ctx.users.len() {
                // Norm bound of ∇b, used as a floor for the relative error.
                let scale: f64 = (0..ctx.users.len())
                    .map(|j| 2.0 * terms.wavenumber * terms.c1[(m, j)] * terms.tau[(m, j)].norm() * terms.dir_diff[m][j].norm())
                    .sum();
                if scale == 0.0 {
                    continue;
                }
                let t = ctx.random_point(&mut rng);
                let g = terms.grad_b(&t, m);
                let fd = fd_gradient(|x| terms.b(x, m), &t, h);
                worst = worst.max((g - fd).norm() / g.norm().max(1e-3 * scale));
            }
        }
    }
    CheckResult::at_most("mrt_gradient", worst, GRAD_TOL, "max relative error of ∇b against central differences".into())
}

fn zf_gradient(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.zf_ok {
        return Ok(CheckResult::skipped("zf_gradient", "ZF needs more antennas than users"));
    }
    let mut rng = ctx.rng(7);
    let h = 1e-6 * ctx.cfg.wavelength;
    let mut worst: f64 = 0.0;
    for layout in &ctx.layouts {
        for n in 0..layout.len() {
            let terms = ZfPerAntennaCache::build(layout, ctx.users, ctx.cfg, n)?.surrogate_terms();
            for m in 0..ctx.users.len() {
                let scale: f64 = terms.q[m].iter().zip(&terms.dirs).map(|(q, a)| terms.wavenumber * q.norm() * a.norm()).sum();
                if scale == 0.0 {
                    continue;
                }
                let t = ctx.random_point(&mut rng);
                let g = terms.grad_f(&t, m);
                let fd = fd_gradient(|x| terms.f(x, m), &t, h);
                worst = worst.max((g - fd).norm() / g.norm().max(1e-3 * scale));
            }
        }
    }
    Ok(CheckResult::at_most("zf_gradient", worst, GRAD_TOL, "max relative error of ∇F against central differences".into()))
}

fn objective_drift(trace: &OptimizerTrace) -> f64 {
    trace
        .sweep_objectives
        .iter()
        .map(|f| (f - trace.initial_objective).abs())
        .fold(0.0, f64::max)
}

/// Single-user and pure-Rayleigh variants must leave both objectives flat.
fn invariance(ctx: &Ctx, ao: &AoOptions) -> Result<CheckResult> {
    let opts = AoOptions { max_sweeps: ao.max_sweeps.min(5), ..*ao };
    let grid = &ctx.layouts[0];
    let single = vec![ctx.users[0].clone()];
    let rayleigh: Vec<UserStats> = ctx.users.iter().map(|u| UserStats { kappa: 0.0, ..u.clone() }).collect();
    let mut worst: f64 = 0.0;
    for users in [&single, &rayleigh] {
        let mut cfg = ctx.cfg.clone();
        cfg.n_users = users.len();
        worst = worst.max(objective_drift(&optimize_mrt(grid, users, &cfg, &opts)?.1));
        if cfg.n_antennas > users.len() {
            worst = worst.max(objective_drift(&optimize_zf(grid, users, &cfg, &opts)?.1));
        }
    }
    Ok(CheckResult::at_most(
        "invariance",
        worst,
        1e-12,
        "max objective change across sweeps for M = 1 and all κ = 0".into(),
    ))
}

fn monotone(ctx: &Ctx, ao: &AoOptions) -> Result<CheckResult> {
    let grid = &ctx.layouts[0];
    let mut traces = vec![("mrt", optimize_mrt(grid, ctx.users, ctx.cfg, ao)?)];
    if ctx.zf_ok {
        traces.push(("zf", optimize_zf(grid, ctx.users, ctx.cfg, ao)?));
    }
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (name, (layout, trace)) in &traces {
        layout.check(ctx.cfg).map_err(|e| Error::CacheInvariant(format!("{name} optimizer left the feasible set: {e}")))?;
        let mut prev = trace.initial_objective;
        for s in &trace.iterations {
            worst = worst.max(prev - s.objective);
            prev = s.objective;
        }
        detail.push(format!(
            "{name}: {:.6} → {:.6} in {} sweeps (converged: {})",
            trace.initial_objective,
            trace.final_objective(),
            trace.sweeps(),
            trace.converged
        ));
    }
    Ok(CheckResult::at_most("monotone", worst, 0.0, detail.join("; ")))
}
