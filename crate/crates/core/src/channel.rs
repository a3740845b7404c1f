//! System geometry, statistical CSI and Rician channel realizations.
//!
//! Lengths are in meters; with the default `wavelength = 1.0` every length is
//! effectively expressed in wavelengths.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result, C64};

/// Relative slack used for region membership and spacing checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Axis-aligned movable region centered on the reference point `o`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_half: f64,
    pub y_half: f64,
}

impl Region {
    pub fn contains(&self, p: &Point, slack: f64) -> bool {
        p.x.abs() <= self.x_half + slack && p.y.abs() <= self.y_half + slack
    }

    /// Diagonal length of the rectangle.
    pub fn diameter(&self) -> f64 {
        2.0 * self.x_half.hypot(self.y_half)
    }

    /// Region `[-Nr·A·λ/2, Nr·A·λ/2] × [-Nc·A·λ/2, Nc·A·λ/2]` where `Nr × Nc`
    /// is the most-square factorization of `n_antennas`.
    pub fn scaled_for(n_antennas: usize, size_a: f64, wavelength: f64) -> Self {
        let (nr, nc) = grid_factor(n_antennas);
        Region {
            x_half: nr as f64 * size_a * wavelength / 2.0,
            y_half: nc as f64 * size_a * wavelength / 2.0,
        }
    }
}

/// Most-square factorization `n = nr · nc` with `nr ≤ nc`.
pub fn grid_factor(n: usize) -> (usize, usize) {
    let mut nr = (n as f64).sqrt().floor() as usize;
    while nr > 1 && !n.is_multiple_of(nr) {
        nr -= 1;
    }
    let nr = nr.max(1);
    (nr, n / nr)
}

/// Global constants of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub wavelength: f64,
    /// Total transmit power budget in watts.
    pub p_tot: f64,
    /// Minimum inter-antenna spacing in meters.
    pub d_min: f64,
    pub region: Region,
    /// Linear path gain at the 1 m reference distance.
    pub beta0: f64,
    /// Path-loss exponent.
    pub alpha: f64,
}

impl SystemConfig {
    /// Simulation defaults: λ = 1, P_tot = 1 W, D_min = λ/2, A = 2,
    /// β₀ = −40 dB, α = 2.8.
    pub fn with_defaults(n_antennas: usize, n_users: usize) -> Self {
        let wavelength = 1.0;
        SystemConfig {
            n_antennas,
            n_users,
            wavelength,
            p_tot: 1.0,
            d_min: wavelength / 2.0,
            region: Region::scaled_for(n_antennas, 2.0, wavelength),
            beta0: 1e-4,
            alpha: 2.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_antennas == 0 || self.n_users == 0 {
            return bad("antenna and user counts must be positive".into());
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return bad(format!("wavelength must be positive, got {}", self.wavelength));
        }
        // P_tot = 0 is admitted: every rate is then zero.
        if !(self.p_tot >= 0.0 && self.p_tot.is_finite()) {
            return bad(format!("p_tot must be non-negative, got {}", self.p_tot));
        }
        if !(self.d_min >= 0.0) {
            return bad(format!("d_min must be non-negative, got {}", self.d_min));
        }
        if !(self.region.x_half > 0.0 && self.region.y_half > 0.0) {
            return bad("region half-widths must be positive".into());
        }
        if !(self.beta0 > 0.0) {
            return bad("beta0 must be positive".into());
        }
        if self.fpa_positions().is_none() {
            return bad(format!(
                "region {:?} cannot hold a grid of {} antennas at spacing {}",
                self.region,
                self.n_antennas,
                self.grid_spacing()
            ));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    fn grid_spacing(&self) -> f64 {
        (self.wavelength / 2.0).max(self.d_min)
    }

    /// Uniform `Nr × Nc` grid centered at the origin, or `None` when it does
    /// not fit in the region in either orientation.
    fn fpa_positions(&self) -> Option<Vec<Point>> {
        let s = self.grid_spacing();
        let (nr, nc) = grid_factor(self.n_antennas);
        let fits = |nx: usize, ny: usize| {
            (nx - 1) as f64 * s / 2.0 <= self.region.x_half * (1.0 + FEASIBILITY_TOL)
                && (ny - 1) as f64 * s / 2.0 <= self.region.y_half * (1.0 + FEASIBILITY_TOL)
        };
        let (nx, ny) = if fits(nr, nc) {
            (nr, nc)
        } else if fits(nc, nr) {
            (nc, nr)
        } else {
            return None;
        };
        let offset = |k: usize, count: usize| (k as f64 - (count - 1) as f64 / 2.0) * s;
        let mut out = Vec::with_capacity(self.n_antennas);
        for iy in 0..ny {
            for ix in 0..nx {
                out.push(Point::new(offset(ix, nx), offset(iy, ny)));
            }
        }
        Some(out)
    }
}

/// Per-user statistical CSI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    /// Elevation angle of departure (rad).
    pub theta: f64,
    /// Azimuth angle of departure (rad).
    pub phi: f64,
    /// Rician factor (linear).
    pub kappa: f64,
    /// Large-scale channel gain (linear).
    pub beta: f64,
    /// Receiver noise power (W).
    pub noise_power: f64,
    /// BS–user distance (m); informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl UserStats {
    pub fn new(theta: f64, phi: f64, kappa: f64, beta: f64, noise_power: f64) -> Result<Self> {
        let user = UserStats { theta, phi, kappa, beta, noise_power, distance: None };
        user.validate()?;
        Ok(user)
    }

    pub fn validate(&self) -> Result<()> {
        let half_pi = PI / 2.0 + 1e-12;
        if !(self.theta.abs() <= half_pi && self.phi.abs() <= half_pi) {
            return Err(Error::InvalidUser(format!(
                "angles must lie in [-pi/2, pi/2], got theta={} phi={}",
                self.theta, self.phi
            )));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidUser(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.beta > 0.0) || !(self.noise_power > 0.0) {
            return Err(Error::InvalidUser("beta and noise_power must be positive".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Point {
        direction_vector(self.theta, self.phi)
    }
}

/// `[cos θ · sin φ, sin θ]`: projection of the departure direction onto the
/// antenna plane.
pub fn direction_vector(theta: f64, phi: f64) -> Point {
    Point::new(theta.cos() * phi.sin(), theta.sin())
}

/// `β₀ · d^(−α)`.
pub fn large_scale_fading(distance: f64, beta0: f64, alpha: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    Ok(beta0 * distance.powf(-alpha))
}

/// Positions of the `N` movable antennas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaLayout {
    positions: Vec<Point>,
}

impl AntennaLayout {
    /// Validated layout: every point inside the region and pairwise spacing
    /// at least `d_min`.
    pub fn new(positions: Vec<Point>, cfg: &SystemConfig) -> Result<Self> {
        let layout = AntennaLayout { positions };
        layout.check(cfg)?;
        Ok(layout)
    }

    pub fn from_positions_unchecked(positions: Vec<Point>) -> Self {
        AntennaLayout { positions }
    }

    /// The fixed-position (FPA) baseline: a λ/2-spaced grid centered in the
    /// region.
    pub fn fpa_grid(cfg: &SystemConfig) -> Result<Self> {
        let positions = cfg.fpa_positions().ok_or_else(|| {
            Error::InvalidConfig("region cannot hold the FPA grid".into())
        })?;
        Ok(AntennaLayout { positions })
    }

    /// Uniformly random feasible layout by sequential rejection sampling.
    pub fn random<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        const ATTEMPTS: usize = 10_000;
        'outer: for _ in 0..100 {
            let mut pts: Vec<Point> = Vec::with_capacity(cfg.n_antennas);
            while pts.len() < cfg.n_antennas {
                let mut placed = false;
                for _ in 0..ATTEMPTS {
                    let p = Point::new(
                        rng.random_range(-cfg.region.x_half..=cfg.region.x_half),
                        rng.random_range(-cfg.region.y_half..=cfg.region.y_half),
                    );
                    if pts.iter().all(|q| (p - q).norm() >= cfg.d_min) {
                        pts.push(p);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'outer;
                }
            }
            return Ok(AntennaLayout { positions: pts });
        }
        Err(Error::InfeasibleLayout("rejection sampling found no feasible layout".into()))
    }

    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        if self.positions.len() != cfg.n_antennas {
            return Err(Error::InfeasibleLayout(format!(
                "expected {} positions, got {}",
                cfg.n_antennas,
                self.positions.len()
            )));
        }
        let slack = FEASIBILITY_TOL * cfg.wavelength;
        for (n, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) || !cfg.region.contains(p, slack) {
                return Err(Error::InfeasibleLayout(format!(
                    "antenna {n} at ({}, {}) is outside the region",
                    p.x, p.y
                )));
            }
        }
        let min = self.min_spacing();
        if min < cfg.d_min - slack {
            return Err(Error::InfeasibleLayout(format!(
                "minimum spacing {min} is below d_min = {}",
                cfg.d_min
            )));
        }
        Ok(())
    }

    pub fn min_spacing(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (i, p) in self.positions.iter().enumerate() {
            for q in &self.positions[i + 1..] {
                min = min.min((p - q).norm());
            }
        }
        min
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, n: usize) -> Point {
        self.positions[n]
    }

    pub fn set_position(&mut self, n: usize, p: Point) {
        self.positions[n] = p;
    }

    pub fn translated(&self, delta: Point) -> Self {
        AntennaLayout { positions: self.positions.iter().map(|p| p + delta).collect() }
    }
}

/// `e^{j·(2π/λ)·tᵀa}` for one position/direction pair.
#[inline]
pub fn phasor(t: &Point, a: &Point, wavelength: f64) -> C64 {
    C64::from_polar(1.0, 2.0 * PI / wavelength * t.dot(a))
}

/// LoS steering vector `h̄_m(t)`; every entry has unit modulus.
pub fn los_steering(layout: &AntennaLayout, user: &UserStats, wavelength: f64) -> DVector<C64> {
    let a = user.direction();
    DVector::from_iterator(layout.len(), layout.positions().iter().map(|t| phasor(t, &a, wavelength)))
}

/// `H̄(t) = [h̄_1, …, h̄_M]`.
pub fn los_matrix(layout: &AntennaLayout, users: &[UserStats], wavelength: f64) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(layout.len(), users.len());
    for (m, user) in users.iter().enumerate() {
        out.set_column(m, &los_steering(layout, user, wavelength));
    }
    out
}

/// One instantaneous `N × M` realization `H(t)`, column `m` is `h_m(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub DMatrix<C64>);

impl ChannelMatrix {
    pub fn n_antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        ChannelMatrix(self.0.map(|v| v * c))
    }
}

/// Seeded stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard circularly-symmetric complex Gaussian `CN(0, 1)`.
pub fn standard_cn<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// Precomputed Rician means and scatter amplitudes for repeated draws at a
/// fixed layout.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    los: DMatrix<C64>,
    nlos_amplitude: Vec<f64>,
}

impl ChannelSampler {
    pub fn new(layout: &AntennaLayout, users: &[UserStats], wavelength: f64) -> Self {
        let mut los = los_matrix(layout, users, wavelength);
        let mut nlos_amplitude = Vec::with_capacity(users.len());
        for (m, u) in users.iter().enumerate() {
            let (los_w, nlos_w) = rician_weights(u.kappa, u.beta);
            los.column_mut(m).scale_mut(los_w);
            nlos_amplitude.push(nlos_w);
        }
        ChannelSampler { los, nlos_amplitude }
    }

    /// Deterministic part `sqrt(κβ/(κ+1))·H̄`.
    pub fn mean(&self) -> &DMatrix<C64> {
        &self.los
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelMatrix {
        let mut h = self.los.clone();
        self.sample_into(rng, &mut h);
        ChannelMatrix(h)
    }

    /// Overwrites `out` with a fresh draw; draws are column-major.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut DMatrix<C64>) {
        out.copy_from(&self.los);
        for (m, amp) in self.nlos_amplitude.iter().enumerate() {
            for v in out.column_mut(m).iter_mut() {
                *v += standard_cn(rng) * *amp;
            }
        }
    }
}

/// `(sqrt(κβ/(κ+1)), sqrt(β/(κ+1)))`, finite for arbitrarily large κ.
pub fn rician_weights(kappa: f64, beta: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        return (beta.sqrt(), 0.0);
    }
    let los = (beta * kappa / (kappa + 1.0)).sqrt();
    let nlos = (beta / (kappa + 1.0)).sqrt();
    (los, nlos)
}

/// Draws one Rician realization `H(t)`.
pub fn sample_channel<R: Rng + ?Sized>(
    layout: &AntennaLayout,
    users: &[UserStats],
    wavelength: f64,
    rng: &mut R,
) -> ChannelMatrix {
    ChannelSampler::new(layout, users, wavelength).sample(rng)
}
