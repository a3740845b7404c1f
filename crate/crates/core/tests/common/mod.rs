//! Reference implementations used as test oracles. They are written from the
//! channel model directly and share no code with the library beyond its
//! plain data types.
#![allow(dead_code)]

use std::f64::consts::PI;

use mamimo::channel::{AntennaLayout, SystemConfig, UserStats};
use mamimo::experiments::{ExperimentConfig, Scenario};
use mamimo::{Point, C64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn report(name: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

/// Scenario drawn by the library's generator (N = 6, M = 5 unless changed).
pub fn scenario(seed: u64, kappa: f64) -> Scenario {
    let json = format!(r#"{{"seed": {seed}, "user_gen": {{"kappa": {kappa}}}}}"#);
    Scenario::from_config(&ExperimentConfig::from_json(&json).unwrap()).unwrap()
}

pub fn direction(u: &UserStats) -> Point {
    Point::new(u.theta.cos() * u.phi.sin(), u.theta.sin())
}

/// `[e^{j(2π/λ) t_nᵀ a}]_n`
pub fn steering(positions: &[Point], a: &Point, wavelength: f64) -> DVector<C64> {
    DVector::from_iterator(
        positions.len(),
        positions.iter().map(|t| C64::from_polar(1.0, 2.0 * PI / wavelength * t.dot(a))),
    )
}

pub fn cn<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One Rician draw, columns `h_m = sqrt(κβ/(κ+1)) h̄_m + sqrt(β/(κ+1)) w`.
pub fn draw<R: Rng>(positions: &[Point], users: &[UserStats], wavelength: f64, rng: &mut R) -> DMatrix<C64> {
    let mut h = DMatrix::zeros(positions.len(), users.len());
    for (m, u) in users.iter().enumerate() {
        let hbar = steering(positions, &direction(u), wavelength);
        let los = (u.beta * u.kappa / (u.kappa + 1.0)).sqrt();
        let nlos = (u.beta / (u.kappa + 1.0)).sqrt();
        for n in 0..positions.len() {
            h[(n, m)] = hbar[n] * los + cn(rng) * nlos;
        }
    }
    h
}

/// Per-user rates of one draw: MRT with `w_m = sqrt(P/Σ‖h‖²) h_m`, or ZF
/// with equal power `P/M` on unit-norm pseudo-inverse columns.
pub fn draw_rates(h: &DMatrix<C64>, users: &[UserStats], p_tot: f64, zf: bool) -> Vec<f64> {
    let m_users = users.len();
    if zf {
        let inv = (h.adjoint() * h).try_inverse().expect("invertible Gram matrix");
        (0..m_users)
            .map(|m| (1.0 + p_tot / m_users as f64 / (users[m].noise_power * inv[(m, m)].re)).log2())
            .collect()
    } else {
        let p = p_tot / h.norm_squared();
        (0..m_users)
            .map(|m| {
                let hm = h.column(m);
                let signal = p * hm.norm_squared().powi(2);
                let interference: f64 = (0..m_users).filter(|&j| j != m).map(|j| p * hm.dotc(&h.column(j)).norm_sqr()).sum();
                (1.0 + signal / (interference + users[m].noise_power)).log2()
            })
            .collect()
    }
}

/// Monte-Carlo mean and standard error of each user's rate.
pub fn mc_rates(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    zf: bool,
    draws: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng(seed);
    let m = users.len();
    let (mut s, mut s2) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..draws {
        let h = draw(layout.positions(), users, cfg.wavelength, &mut rng);
        for (k, r) in draw_rates(&h, users, cfg.p_tot, zf).into_iter().enumerate() {
            s[k] += r;
            s2[k] += r * r;
        }
    }
    let d = draws as f64;
    let mean: Vec<f64> = s.iter().map(|v| v / d).collect();
    let se = (0..m).map(|k| ((s2[k] / d - mean[k] * mean[k]).max(0.0) / (d - 1.0)).sqrt()).collect();
    (mean, se)
}

/// `log₂(1 + E‖h_m‖⁴ / (Σ_{j≠m} E|h_jᴴh_m|² + σ²NΣβ/P))` with the moments
/// of a Rician vector written out term by term.
pub fn mrt_approx(positions: &[Point], users: &[UserStats], cfg: &SystemConfig) -> Vec<f64> {
    let n = positions.len() as f64;
    let hbar: Vec<DVector<C64>> = users.iter().map(|u| steering(positions, &direction(u), cfg.wavelength)).collect();
    let beta_sum: f64 = users.iter().map(|u| u.beta).sum();
    let split = |u: &UserStats| (u.beta * u.kappa / (u.kappa + 1.0), u.beta / (u.kappa + 1.0));
    (0..users.len())
        .map(|m| {
            // h = μ + w with per-entry LoS power l and scatter power sc.
            let (l, sc) = split(&users[m]);
            let fourth = l * l * n * n + 2.0 * l * sc * n * (n + 1.0) + sc * sc * n * (n + 1.0);
            let mut interference = 0.0;
            for j in 0..users.len() {
                if j == m {
                    continue;
                }
                let (lj, sj) = split(&users[j]);
                let overlap = hbar[j].dotc(&hbar[m]).norm_sqr();
                interference += l * lj * overlap + n * (l * sj + sc * lj + sc * sj);
            }
            let noise = users[m].noise_power * n * beta_sum / cfg.p_tot;
            (1.0 + fourth / (interference + noise)).log2()
        })
        .collect()
}

/// `E|h_jᴴh_m|²` for `j ≠ m` and `E‖h_m‖⁴` on the diagonal, by the same expansion.
pub fn mrt_moment_table(positions: &[Point], users: &[UserStats], wavelength: f64) -> DMatrix<f64> {
    let n = positions.len() as f64;
    let hbar: Vec<DVector<C64>> = users.iter().map(|u| steering(positions, &direction(u), wavelength)).collect();
    let split = |u: &UserStats| (u.beta * u.kappa / (u.kappa + 1.0), u.beta / (u.kappa + 1.0));
    DMatrix::from_fn(users.len(), users.len(), |j, m| {
        let (l, s) = split(&users[m]);
        if j == m {
            l * l * n * n + 2.0 * l * s * n * (n + 1.0) + s * s * n * (n + 1.0)
        } else {
            let (lj, sj) = split(&users[j]);
            l * lj * hbar[j].dotc(&hbar[m]).norm_sqr() + n * (l * sj + s * lj + s * sj)
        }
    })
}

/// `Σ = Λ₁ + (1/N)Λ₂H̄ᴴH̄Λ₂` with `Λ₁ = diag(1/(κ+1))`, `Λ₂ = diag(sqrt(κ/(κ+1)))`.
pub fn zf_sigma(positions: &[Point], users: &[UserStats], wavelength: f64) -> DMatrix<C64> {
    let n = positions.len() as f64;
    let hbar: Vec<DVector<C64>> = users.iter().map(|u| steering(positions, &direction(u), wavelength)).collect();
    DMatrix::from_fn(users.len(), users.len(), |u, v| {
        let l2u = (users[u].kappa / (users[u].kappa + 1.0)).sqrt();
        let l2v = (users[v].kappa / (users[v].kappa + 1.0)).sqrt();
        let mut x = hbar[u].dotc(&hbar[v]) * (l2u * l2v / n);
        if u == v {
            x += C64::new(1.0 / (users[u].kappa + 1.0), 0.0);
        }
        x
    })
}

/// `log₂(1 + η_m / [Σ⁻¹]_mm)`, `η_m = (P/M)/σ² · β_m (N − M)`.
pub fn zf_bound(positions: &[Point], users: &[UserStats], cfg: &SystemConfig) -> Vec<f64> {
    let inv = zf_sigma(positions, users, cfg.wavelength).try_inverse().unwrap();
    let (n, m) = (positions.len() as f64, users.len() as f64);
    users
        .iter()
        .enumerate()
        .map(|(k, u)| (1.0 + cfg.p_tot / m / u.noise_power * u.beta * (n - m) / inv[(k, k)].re).log2())
        .collect()
}

/// Uniform point of the region at least `d_min` from every antenna but `n`.
pub fn feasible_point<R: Rng>(layout: &AntennaLayout, n: usize, cfg: &SystemConfig, rng: &mut R) -> Point {
    loop {
        let t = Point::new(
            rng.random_range(-cfg.region.x_half..=cfg.region.x_half),
            rng.random_range(-cfg.region.y_half..=cfg.region.y_half),
        );
        if layout.positions().iter().enumerate().all(|(j, p)| j == n || (p - t).norm() >= cfg.d_min) {
            return t;
        }
    }
}

pub fn replace(layout: &AntennaLayout, n: usize, t: Point) -> Vec<Point> {
    let mut p = layout.positions().to_vec();
    p[n] = t;
    p
}
