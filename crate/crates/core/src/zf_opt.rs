//! Position optimization for ZF beamforming.
//!
//! With all antennas but `n` fixed, Woodbury's identity isolates antenna
//! `n`'s LoS row `ḡ(t)` (entries `e^{-jk tᵀa_u}`) in the ZF bound:
//! `[Σ⁻¹]_mm = ḡᴴX_mḡ / ḡᴴYḡ`. A minorize-maximize step linearizes the
//! ratio `ḡᴴYḡ / ḡᴴX_mḡ` into `χ_m + Re{q_m ḡ(t)}`, and a curvature bound
//! `ξ_m` on the resulting cosine sum gives a concave surrogate in `t_n`.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::channel::{AntennaLayout, SystemConfig, UserStats};
use crate::ergodic::{hermitian_pd_inverse, los_fraction, zf_ergodic_lower_bound, zf_eta};
use crate::optimizer::{run_ao, AoOptions, AoProblem, OptimizerTrace};
use crate::subsolver::{linearize_distance_constraints, maximize, Objective2D, Rect, SolveOutcome, Subproblem2D};
use crate::{Error, Point, Result, C64};

/// Relative tolerance of the Woodbury self-check in [`ZfPerAntennaCache::build`].
pub const WOODBURY_TOL: f64 = 1e-9;
/// Trust-region radius, in wavelengths, used when the surrogate leaves its
/// log domain.
pub const TRUST_RADIUS_WAVELENGTHS: f64 = 0.25;
const TRUST_SIDES: usize = 16;

/// Antenna-`n` decomposition of the ZF bound at a layout.
#[derive(Debug, Clone)]
pub struct ZfPerAntennaCache {
    pub n: usize,
    pub anchor: Point,
    pub wavenumber: f64,
    pub n_antennas: usize,
    pub dirs: Vec<Point>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// `ḡ` at the anchor.
    pub gbar: DVector<C64>,
    pub theta1: DMatrix<C64>,
    pub theta2_inv: DMatrix<C64>,
    pub y: DMatrix<C64>,
    /// `l_m` with `l_mᴴ` the `m`-th row of `Θ₂⁻¹Λ₂`.
    pub l: Vec<DVector<C64>>,
    pub x: Vec<DMatrix<C64>>,
    pub lam_max_x: Vec<f64>,
    pub eta: Vec<f64>,
    /// Relative residual of the Woodbury inverse against direct inversion.
    pub woodbury_residual: f64,
}

/// `ḡ(t)_u = e^{-jk tᵀa_u}`.
pub fn gbar(t: &Point, dirs: &[Point], wavenumber: f64) -> DVector<C64> {
    DVector::from_iterator(dirs.len(), dirs.iter().map(|a| C64::from_polar(1.0, -wavenumber * t.dot(a))))
}

fn quad(a: &DMatrix<C64>, g: &DVector<C64>) -> f64 {
    g.dotc(&(a * g)).re
}

impl ZfPerAntennaCache {
    pub fn build(layout: &AntennaLayout, users: &[UserStats], cfg: &SystemConfig, n: usize) -> Result<Self> {
        let (n_ant, m_users) = (layout.len(), users.len());
        if n_ant <= m_users {
            return Err(Error::Dimension(format!("ZF needs N > M, got N={n_ant}, M={m_users}")));
        }
        let k = cfg.wavenumber();
        let nf = n_ant as f64;
        let dirs: Vec<Point> = users.iter().map(UserStats::direction).collect();
        let lambda1: Vec<f64> = users
            .iter()
            .map(|u| if u.kappa.is_infinite() { 0.0 } else { 1.0 / (u.kappa + 1.0) })
            .collect();
        let lambda2: Vec<f64> = users.iter().map(|u| los_fraction(u.kappa).sqrt()).collect();
        let theta1 = DMatrix::from_fn(m_users, m_users, |u, v| {
            if u == v {
                return C64::new(nf - 1.0, 0.0);
            }
            let d = dirs[v] - dirs[u];
            layout
                .positions()
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != n)
                .map(|(_, t)| C64::from_polar(1.0, k * t.dot(&d)))
                .sum()
        });
        let l2 = DMatrix::from_diagonal(&DVector::from_iterator(m_users, lambda2.iter().map(|&v| C64::new(v, 0.0))));
        let l1 = DMatrix::from_diagonal(&DVector::from_iterator(m_users, lambda1.iter().map(|&v| C64::new(v, 0.0))));
        let theta2 = &l1 + &l2 * &theta1 * &l2 / C64::new(nf, 0.0);
        let theta2_inv = hermitian_pd_inverse(&theta2)?;
        let t2l2 = &theta2_inv * &l2;
        let y = DMatrix::<C64>::identity(m_users, m_users) * C64::new(nf / m_users as f64, 0.0) + &l2 * &t2l2;
        let l: Vec<DVector<C64>> = (0..m_users).map(|m| t2l2.row(m).adjoint()).collect();
        let x: Vec<DMatrix<C64>> = (0..m_users)
            .map(|m| &y * theta2_inv[(m, m)] - &l[m] * l[m].adjoint())
            .collect();
        let lam_max_x = x
            .iter()
            .map(|xm| {
                let h = (xm + xm.adjoint()) * C64::new(0.5, 0.0);
                h.symmetric_eigenvalues().max()
            })
            .collect();
        let anchor = layout.position(n);
        let g = gbar(&anchor, &dirs, k);

        // Woodbury inverse against direct inversion of Θ₂ + (1/N)Λ₂ḡḡᴴΛ₂.
        let l2g = &l2 * &g;
        let sigma = &theta2 + &l2g * l2g.adjoint() / C64::new(nf, 0.0);
        let direct = hermitian_pd_inverse(&sigma)?;
        let t2l2g = &theta2_inv * &l2g;
        let denom = nf + l2g.dotc(&t2l2g).re;
        let woodbury = &theta2_inv - &t2l2g * t2l2g.adjoint() / C64::new(denom, 0.0);
        let woodbury_residual = (&woodbury - &direct).norm() / direct.norm();
        if !(woodbury_residual < WOODBURY_TOL) {
            return Err(Error::CacheInvariant(format!("Woodbury residual {woodbury_residual:.3e}")));
        }

        let cache = ZfPerAntennaCache {
            n,
            anchor,
            wavenumber: k,
            n_antennas: n_ant,
            eta: zf_eta(users, cfg, n_ant),
            dirs,
            lambda1,
            lambda2,
            gbar: g,
            theta1,
            theta2_inv,
            y,
            l,
            x,
            lam_max_x,
            woodbury_residual,
        };
        for m in 0..m_users {
            if !(quad(&cache.x[m], &cache.gbar) > 0.0) {
                return Err(Error::CacheInvariant(format!("ḡᴴXḡ is not positive for user {m}")));
            }
        }
        Ok(cache)
    }

    pub fn n_users(&self) -> usize {
        self.eta.len()
    }

    pub fn gbar_at(&self, t: &Point) -> DVector<C64> {
        gbar(t, &self.dirs, self.wavenumber)
    }

    /// `[Σ⁻¹]_mm = ḡᴴX_mḡ / ḡᴴYḡ` at `t`.
    pub fn sigma_inv_diag(&self, t: &Point, m: usize) -> Result<f64> {
        let g = self.gbar_at(t);
        let (num, den) = (quad(&self.x[m], &g), quad(&self.y, &g));
        if !(num > 0.0 && den > 0.0) {
            return Err(Error::CacheInvariant(format!("nonpositive quadratic form for user {m}")));
        }
        Ok(num / den)
    }

    /// `log₂(1 + η_m ḡᴴYḡ / ḡᴴX_mḡ)` at `t`.
    pub fn rate_lb1_at(&self, t: &Point, m: usize) -> Result<f64> {
        Ok((1.0 + self.eta[m] / self.sigma_inv_diag(t, m)?).log2())
    }

    /// [`Self::rate_lb1_at`] at the anchor.
    pub fn rate_lb1(&self, m: usize) -> Result<f64> {
        self.rate_lb1_at(&self.anchor.clone(), m)
    }

    pub fn sum_rate_at(&self, t: &Point) -> Result<f64> {
        (0..self.n_users()).map(|m| self.rate_lb1_at(t, m)).sum()
    }

    /// Minorizer of `ḡᴴYḡ / ḡᴴX_mḡ` built at `g_ref`, evaluated at `g_at`.
    pub fn mm_minorizer(&self, m: usize, g_at: &DVector<C64>, g_ref: &DVector<C64>) -> f64 {
        let x = &self.x[m];
        let lam = self.lam_max_x[m];
        let mf = self.n_users() as f64;
        let s = quad(&self.y, g_ref);
        let r = quad(x, g_ref);
        let shifted = x - DMatrix::<C64>::identity(x.nrows(), x.ncols()) * C64::new(lam, 0.0);
        let lin_y = g_ref.dotc(&(&self.y * g_at)).re;
        let lin_x = g_ref.dotc(&(shifted * g_at)).re;
        2.0 * lin_y / r - s / (r * r) * (2.0 * lam * mf - r + 2.0 * lin_x)
    }

    pub fn surrogate_terms(&self) -> ZfSurrogateTerms {
        let m_users = self.n_users();
        let mf = m_users as f64;
        let g = &self.gbar;
        let s = quad(&self.y, g);
        let mut chi = Vec::with_capacity(m_users);
        let mut q = Vec::with_capacity(m_users);
        for m in 0..m_users {
            let lam = self.lam_max_x[m];
            let r = quad(&self.x[m], g);
            chi.push(-s / (r * r) * (2.0 * lam * mf - r));
            let shifted = &self.x[m] - DMatrix::<C64>::identity(m_users, m_users) * C64::new(lam, 0.0);
            let inner = &self.y - shifted * C64::new(s / r, 0.0);
            // row vector gᴴ(·) stored as a column of its entries
            let row = g.adjoint() * inner * C64::new(2.0 / r, 0.0);
            q.push(row.transpose());
        }
        ZfSurrogateTerms {
            anchor: self.anchor,
            wavenumber: self.wavenumber,
            dirs: self.dirs.clone(),
            chi,
            q,
            eta: self.eta.clone(),
        }
    }
}

/// MM constants at the anchor, per user.
#[derive(Debug, Clone)]
pub struct ZfSurrogateTerms {
    pub anchor: Point,
    pub wavenumber: f64,
    pub dirs: Vec<Point>,
    pub chi: Vec<f64>,
    /// Entries of the row vector `q_m`.
    pub q: Vec<DVector<C64>>,
    pub eta: Vec<f64>,
}

impl ZfSurrogateTerms {
    pub fn n_users(&self) -> usize {
        self.chi.len()
    }

    fn phases<'a>(&'a self, t: &'a Point, m: usize) -> impl Iterator<Item = (f64, f64, &'a Point)> + 'a {
        self.q[m]
            .iter()
            .zip(&self.dirs)
            .map(move |(qu, a)| (qu.norm(), self.wavenumber * t.dot(a) - qu.arg(), a))
    }

    /// `F_m(t) = Re{q_m ḡ(t)} = Σ_u |q_u| cos(k tᵀa_u − ∠q_u)`.
    pub fn f(&self, t: &Point, m: usize) -> f64 {
        self.phases(t, m).map(|(amp, arg, _)| amp * arg.cos()).sum()
    }

    pub fn grad_f(&self, t: &Point, m: usize) -> Point {
        self.phases(t, m)
            .fold(Point::zeros(), |acc, (amp, arg, a)| acc - a * (self.wavenumber * amp * arg.sin()))
    }

    pub fn hessian_f(&self, t: &Point, m: usize) -> Matrix2<f64> {
        self.phases(t, m).fold(Matrix2::zeros(), |acc, (amp, arg, a)| {
            acc - a * a.transpose() * (self.wavenumber.powi(2) * amp * arg.cos())
        })
    }

    /// `(Ξ₁₁, Ξ₁₂, Ξ₂₂)` with `Ξ = Σ_u |q_u| [a_x², |a_x a_y|; |a_x a_y|, a_y²]`.
    pub fn xi_entries(&self, m: usize) -> (f64, f64, f64) {
        self.q[m].iter().zip(&self.dirs).fold((0.0, 0.0, 0.0), |(x11, x12, x22), (qu, a)| {
            let w = qu.norm();
            (x11 + w * a.x * a.x, x12 + w * (a.x * a.y).abs(), x22 + w * a.y * a.y)
        })
    }

    /// `(k²/2)(Ξ₁₁ + Ξ₂₂ + sqrt((Ξ₁₁ − Ξ₂₂)² + 4Ξ₁₂²))`, i.e. `k²·λ_max(Ξ)`.
    pub fn xi_bound(&self, m: usize) -> f64 {
        let (x11, x12, x22) = self.xi_entries(m);
        0.5 * self.wavenumber.powi(2) * (x11 + x22 + ((x11 - x22).powi(2) + 4.0 * x12 * x12).sqrt())
    }

    /// `χ_m + F_m(t)`, the minorizer of the ratio along steering vectors.
    pub fn minorized_ratio(&self, t: &Point, m: usize) -> f64 {
        self.chi[m] + self.f(t, m)
    }
}

/// `Σ_m log₂(1 + η_m(χ_m + F_m(t⁰) + ∇F_m(t⁰)ᵀd − (ξ_m/2)‖d‖²))`, `d = t − t⁰`.
#[derive(Debug, Clone)]
pub struct P5nObjective {
    pub anchor: Point,
    /// `1 + η_m(χ_m + F_m(t⁰))`
    pub base_arg: Vec<f64>,
    pub eta: Vec<f64>,
    pub grad: Vec<Point>,
    pub xi: Vec<f64>,
    base: f64,
}

impl Objective2D for P5nObjective {
    fn gain(&self, x: &Point) -> f64 {
        let d = x - self.anchor;
        let dd = d.norm_squared();
        let mut total = 0.0;
        for m in 0..self.eta.len() {
            let rel = self.eta[m] * (self.grad[m].dot(&d) - 0.5 * self.xi[m] * dd) / self.base_arg[m];
            if !(rel > -1.0) {
                return f64::NEG_INFINITY;
            }
            total += rel.ln_1p();
        }
        total / LN_2
    }

    fn gradient(&self, x: &Point) -> Point {
        let d = x - self.anchor;
        let dd = d.norm_squared();
        (0..self.eta.len()).fold(Point::zeros(), |acc, m| {
            let arg = self.base_arg[m] + self.eta[m] * (self.grad[m].dot(&d) - 0.5 * self.xi[m] * dd);
            acc + (self.grad[m] - d * self.xi[m]) * (self.eta[m] / (arg * LN_2))
        })
    }

    fn reference_value(&self) -> f64 {
        self.base
    }
}

pub fn build_p5n(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    n: usize,
) -> Result<Subproblem2D<P5nObjective>> {
    build_p5n_scaled(layout, users, cfg, n, 1.0)
}

/// [`build_p5n`] with every `ξ_m` multiplied by `xi_scale` (negative testing).
pub fn build_p5n_scaled(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    n: usize,
    xi_scale: f64,
) -> Result<Subproblem2D<P5nObjective>> {
    let cache = ZfPerAntennaCache::build(layout, users, cfg, n)?;
    p5n_from_terms(&cache.surrogate_terms(), layout, cfg, n, xi_scale)
}

pub fn p5n_from_terms(
    terms: &ZfSurrogateTerms,
    layout: &AntennaLayout,
    cfg: &SystemConfig,
    n: usize,
    xi_scale: f64,
) -> Result<Subproblem2D<P5nObjective>> {
    let t0 = terms.anchor;
    let m_users = terms.n_users();
    let base_arg: Vec<f64> = (0..m_users).map(|m| 1.0 + terms.eta[m] * terms.minorized_ratio(&t0, m)).collect();
    if let Some(bad) = base_arg.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::SurrogateDomain(*bad));
    }
    let base = base_arg.iter().map(|v| v.log2()).sum();
    Ok(Subproblem2D {
        objective: P5nObjective {
            anchor: t0,
            grad: (0..m_users).map(|m| terms.grad_f(&t0, m)).collect(),
            xi: (0..m_users).map(|m| xi_scale * terms.xi_bound(m)).collect(),
            eta: terms.eta.clone(),
            base_arg,
            base,
        },
        halfplanes: linearize_distance_constraints(layout, n, cfg.d_min),
        bounds: Rect::from_region(&cfg.region),
        start: t0,
    })
}

/// Sum of per-user ZF lower bounds.
pub fn zf_objective(layout: &AntennaLayout, users: &[UserStats], cfg: &SystemConfig) -> Result<f64> {
    Ok(zf_ergodic_lower_bound(layout, users, cfg)?.sum)
}

/// Solves (P5.n); if the search probed outside the surrogate's log domain,
/// solves again inside a disc of radius `λ/4` around the anchor.
pub fn solve_p5n(sub: &Subproblem2D<P5nObjective>, wavelength: f64, tol: f64) -> Result<SolveOutcome> {
    let out = maximize(sub, tol)?;
    if out.domain_hits == 0 {
        return Ok(out);
    }
    let mut guarded = sub.clone();
    guarded.restrict_to_disc(sub.start, TRUST_RADIUS_WAVELENGTHS * wavelength, TRUST_SIDES);
    let retry = maximize(&guarded, tol)?;
    Ok(if retry.value >= out.value { retry } else { out })
}

struct ZfProblem<'a> {
    users: &'a [UserStats],
    cfg: &'a SystemConfig,
}

impl AoProblem for ZfProblem<'_> {
    fn objective(&self, layout: &AntennaLayout) -> Result<f64> {
        zf_objective(layout, self.users, self.cfg)
    }

    fn solve_antenna(&self, layout: &AntennaLayout, n: usize, tol: f64) -> Result<SolveOutcome> {
        let sub = build_p5n(layout, self.users, self.cfg, n)?;
        solve_p5n(&sub, self.cfg.wavelength, tol)
    }
}

/// Alternating position optimization of the ZF ergodic-rate lower bound.
pub fn optimize_zf(
    layout0: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    opts: &AoOptions,
) -> Result<(AntennaLayout, OptimizerTrace)> {
    cfg.validate()?;
    if layout0.len() <= users.len() {
        return Err(Error::Dimension(format!("ZF needs N > M, got N={}, M={}", layout0.len(), users.len())));
    }
    run_ao(&ZfProblem { users, cfg }, layout0, cfg, opts)
}
