//! Position optimization for MRT beamforming.
//!
//! With all antennas but `n` fixed, user `m`'s approximate ergodic rate is
//! `log₂(1 + c₂/(b_m(t_n) + c₃))` where
//! `b_m(t) = 2Σ_{j≠m} c₁|τ_{mj}| cos(k tᵀ(a_m − a_j) − ∠τ_{mj})`.
//! The rate is convex and decreasing in `b_m`, so linearizing it in `b_m`
//! and bounding `b_m` above by a quadratic with curvature `ψ_m` gives a
//! concave quadratic minorizer in `t_n`.

use nalgebra::{DMatrix, Matrix2};

use crate::channel::{AntennaLayout, SystemConfig, UserStats};
use crate::ergodic::{los_fraction, mrt_ergodic_approx};
use crate::optimizer::{run_ao, AoOptions, AoProblem, OptimizerTrace};
use crate::subsolver::{linearize_distance_constraints, maximize, Objective2D, Rect, SolveOutcome, Subproblem2D};
use crate::{Point, Result, C64};

/// `τ_{n,m,j} = Σ_{i≠n} e^{jk t_iᵀ(a_m − a_j)}`.
pub fn tau(layout: &AntennaLayout, users: &[UserStats], n: usize, m: usize, j: usize, wavelength: f64) -> C64 {
    let k = 2.0 * std::f64::consts::PI / wavelength;
    let d = users[m].direction() - users[j].direction();
    layout
        .positions()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != n)
        .map(|(_, t)| C64::from_polar(1.0, k * t.dot(&d)))
        .sum()
}

/// Per-antenna constants of the MRT rate expression.
#[derive(Debug, Clone)]
pub struct MrtSurrogateTerms {
    pub n: usize,
    /// Position of antenna `n` when the terms were built.
    pub anchor: Point,
    pub wavenumber: f64,
    /// `a_m − a_j`, indexed `[(m, j)]`.
    pub dir_diff: Vec<Vec<Point>>,
    pub tau: DMatrix<C64>,
    pub c1: DMatrix<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
}

impl MrtSurrogateTerms {
    pub fn new(layout: &AntennaLayout, users: &[UserStats], cfg: &SystemConfig, n: usize) -> Self {
        let m_users = users.len();
        let nf = layout.len() as f64;
        let rho: Vec<f64> = users.iter().map(|u| los_fraction(u.kappa)).collect();
        let dirs: Vec<Point> = users.iter().map(UserStats::direction).collect();
        let dir_diff = (0..m_users).map(|m| (0..m_users).map(|j| dirs[m] - dirs[j]).collect()).collect();
        let tau = DMatrix::from_fn(m_users, m_users, |m, j| {
            if m == j {
                C64::new(0.0, 0.0)
            } else {
                tau(layout, users, n, m, j, cfg.wavelength)
            }
        });
        let c1 = DMatrix::from_fn(m_users, m_users, |m, j| {
            if m == j {
                0.0
            } else {
                users[j].beta * rho[m] * rho[j]
            }
        });
        let c2 = users
            .iter()
            .zip(&rho)
            .map(|(u, r)| u.beta * (nf * nf + nf * (1.0 - r * r)))
            .collect();
        let beta_sum: f64 = users.iter().map(|u| u.beta).sum();
        let c3 = (0..m_users)
            .map(|m| {
                let mut s = users[m].noise_power * nf * beta_sum / (users[m].beta * cfg.p_tot);
                for j in (0..m_users).filter(|&j| j != m) {
                    s += c1[(m, j)] * (tau[(m, j)].norm_sqr() + 1.0);
                    s += nf * users[j].beta * (1.0 - rho[m] * rho[j]);
                }
                s
            })
            .collect();
        MrtSurrogateTerms {
            n,
            anchor: layout.position(n),
            wavenumber: cfg.wavenumber(),
            dir_diff,
            tau,
            c1,
            c2,
            c3,
        }
    }

    pub fn n_users(&self) -> usize {
        self.c2.len()
    }

    fn others(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_users()).filter(move |&j| j != m)
    }

    /// `(c₁|τ|, phase argument)` for pair `(m, j)` at `t`.
    fn pair(&self, t: &Point, m: usize, j: usize) -> (f64, f64) {
        let tau = self.tau[(m, j)];
        let amp = self.c1[(m, j)] * tau.norm();
        (amp, self.wavenumber * t.dot(&self.dir_diff[m][j]) - tau.arg())
    }

    pub fn b(&self, t: &Point, m: usize) -> f64 {
        self.others(m)
            .map(|j| {
                let (amp, arg) = self.pair(t, m, j);
                2.0 * amp * arg.cos()
            })
            .sum()
    }

    pub fn grad_b(&self, t: &Point, m: usize) -> Point {
        self.others(m).fold(Point::zeros(), |acc, j| {
            let (amp, arg) = self.pair(t, m, j);
            acc - self.dir_diff[m][j] * (2.0 * self.wavenumber * amp * arg.sin())
        })
    }

    pub fn hessian_b(&self, t: &Point, m: usize) -> Matrix2<f64> {
        self.others(m).fold(Matrix2::zeros(), |acc, j| {
            let (amp, arg) = self.pair(t, m, j);
            let d = self.dir_diff[m][j];
            acc - d * d.transpose() * (2.0 * self.wavenumber.powi(2) * amp * arg.cos())
        })
    }

    /// `(Ψ₁₁, Ψ₁₂, Ψ₂₂)` with `Ψ = Σ_j c₁|τ| [dx², |dx·dy|; |dx·dy|, dy²]`.
    pub fn psi_entries(&self, m: usize) -> (f64, f64, f64) {
        self.others(m).fold((0.0, 0.0, 0.0), |(p11, p12, p22), j| {
            let w = self.c1[(m, j)] * self.tau[(m, j)].norm();
            let d = self.dir_diff[m][j];
            (p11 + w * d.x * d.x, p12 + w * (d.x * d.y).abs(), p22 + w * d.y * d.y)
        })
    }

    /// Curvature bound `ψ_m ≥ λ_max(∇²b_m(t))` for every `t`:
    /// `k²·(Ψ₁₁ + Ψ₂₂ + sqrt((Ψ₁₁ − Ψ₂₂)² + 4Ψ₁₂²))`, i.e. `2k²·λ_max(Ψ)`.
    pub fn psi_bound(&self, m: usize) -> f64 {
        let (p11, p12, p22) = self.psi_entries(m);
        self.wavenumber.powi(2) * (p11 + p22 + ((p11 - p22).powi(2) + 4.0 * p12 * p12).sqrt())
    }

    /// Looser Frobenius-norm bound `2k²‖Ψ‖_F`.
    pub fn psi_bar(&self, m: usize) -> f64 {
        let (p11, p12, p22) = self.psi_entries(m);
        2.0 * self.wavenumber.powi(2) * (p11 * p11 + 2.0 * p12 * p12 + p22 * p22).sqrt()
    }

    /// `log₂(1 + c₂/(b_m(t) + c₃))`.
    pub fn rate(&self, t: &Point, m: usize) -> f64 {
        (1.0 + self.c2[m] / (self.b(t, m) + self.c3[m])).log2()
    }

    pub fn sum_rate(&self, t: &Point) -> f64 {
        (0..self.n_users()).map(|m| self.rate(t, m)).sum()
    }

    /// `-dR_m/db_m` at the anchor.
    pub fn slope(&self, m: usize) -> f64 {
        let den = self.b(&self.anchor, m) + self.c3[m];
        self.c2[m] * std::f64::consts::LOG2_E / (den * (den + self.c2[m]))
    }
}

/// Concave quadratic surrogate
/// `Σ_m [R_m(t⁰) − s_m(∇b_m(t⁰)ᵀd + (ψ_m/2)‖d‖²)]` with `d = t − t⁰`,
/// collapsed to `base − gᵀd − (κ/2)‖d‖²`.
#[derive(Debug, Clone)]
pub struct P3nObjective {
    pub anchor: Point,
    pub base: f64,
    pub linear: Point,
    pub curvature: f64,
}

impl Objective2D for P3nObjective {
    fn gain(&self, x: &Point) -> f64 {
        let d = x - self.anchor;
        -(self.linear.dot(&d) + 0.5 * self.curvature * d.norm_squared())
    }

    fn gradient(&self, x: &Point) -> Point {
        -(self.linear + (x - self.anchor) * self.curvature)
    }

    fn reference_value(&self) -> f64 {
        self.base
    }
}

pub fn build_p3n(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    n: usize,
) -> Subproblem2D<P3nObjective> {
    build_p3n_scaled(layout, users, cfg, n, 1.0)
}

/// [`build_p3n`] with every `ψ_m` multiplied by `psi_scale`; values below 1
/// break the minorization property and exist for negative testing.
pub fn build_p3n_scaled(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    n: usize,
    psi_scale: f64,
) -> Subproblem2D<P3nObjective> {
    let terms = MrtSurrogateTerms::new(layout, users, cfg, n);
    p3n_from_terms(&terms, layout, cfg, psi_scale)
}

pub fn p3n_from_terms(
    terms: &MrtSurrogateTerms,
    layout: &AntennaLayout,
    cfg: &SystemConfig,
    psi_scale: f64,
) -> Subproblem2D<P3nObjective> {
    let t0 = terms.anchor;
    let mut linear = Point::zeros();
    let mut curvature = 0.0;
    for m in 0..terms.n_users() {
        let s = terms.slope(m);
        if s > 0.0 && s.is_finite() {
            linear += terms.grad_b(&t0, m) * s;
            curvature += s * psi_scale * terms.psi_bound(m);
        }
    }
    Subproblem2D {
        objective: P3nObjective { anchor: t0, base: terms.sum_rate(&t0), linear, curvature },
        halfplanes: linearize_distance_constraints(layout, terms.n, cfg.d_min),
        bounds: Rect::from_region(&cfg.region),
        start: t0,
    }
}

/// Sum of approximate MRT ergodic rates.
pub fn mrt_objective(layout: &AntennaLayout, users: &[UserStats], cfg: &SystemConfig) -> f64 {
    mrt_ergodic_approx(layout, users, cfg).sum
}

struct MrtProblem<'a> {
    users: &'a [UserStats],
    cfg: &'a SystemConfig,
}

impl AoProblem for MrtProblem<'_> {
    fn objective(&self, layout: &AntennaLayout) -> Result<f64> {
        Ok(mrt_objective(layout, self.users, self.cfg))
    }

    fn solve_antenna(&self, layout: &AntennaLayout, n: usize, tol: f64) -> Result<SolveOutcome> {
        maximize(&build_p3n(layout, self.users, self.cfg, n), tol)
    }
}

/// Alternating position optimization of the approximate MRT ergodic sum rate.
pub fn optimize_mrt(
    layout0: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    opts: &AoOptions,
) -> Result<(AntennaLayout, OptimizerTrace)> {
    cfg.validate()?;
    run_ao(&MrtProblem { users, cfg }, layout0, cfg, opts)
}
