//! Ergodic rates: closed-form MRT approximation, ZF Jensen lower bound and
//! Monte-Carlo estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::beamforming::{rate_report, Beamformer};
use crate::channel::{los_matrix, stream_rng, AntennaLayout, ChannelSampler, SystemConfig, UserStats};
use crate::{Error, Result, C64};

/// Draws per RNG stream in [`mc_ergodic_rate`].
pub const MC_CHUNK: usize = 256;
pub const DEFAULT_MC_SAMPLES: usize = 20_000;
/// Consecutive beamformer failures tolerated before giving up on a draw.
const MAX_RESAMPLES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    MrtApprox,
    ZfLowerBound,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    /// bits/s/Hz
    pub per_user: Vec<f64>,
    pub sum: f64,
    pub kind: RateKind,
    /// Per-user standard errors, Monte Carlo only.
    pub mc_std_err: Option<Vec<f64>>,
    /// Standard error of the sum rate, Monte Carlo only.
    pub sum_std_err: Option<f64>,
    /// Draws redrawn because the beamformer failed on them.
    pub resamples: usize,
}

impl ErgodicReport {
    fn closed_form(per_user: Vec<f64>, kind: RateKind) -> Self {
        let sum = per_user.iter().sum();
        ErgodicReport { per_user, sum, kind, mc_std_err: None, sum_std_err: None, resamples: 0 }
    }
}

/// `κ/(κ+1)`, equal to 1 for infinite κ.
pub fn los_fraction(kappa: f64) -> f64 {
    if kappa.is_infinite() {
        1.0
    } else {
        kappa / (kappa + 1.0)
    }
}

/// Closed-form channel moments at a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MrtMoments {
    /// `E‖h_m‖⁴`
    pub fourth: Vec<f64>,
    /// `[j, m] = E|h_jᴴh_m|²` for `j ≠ m`, zero on the diagonal.
    pub cross: DMatrix<f64>,
    /// `E‖h_m‖² = Nβ_m`
    pub second: Vec<f64>,
}

/// Writing `ρ = κ/(κ+1)`:
/// `E‖h_m‖⁴ = β_m²(N² + N(1 − ρ_m²))` and
/// `E|h_jᴴh_m|² = β_mβ_j(ρ_mρ_j|h̄_jᴴh̄_m|² + N(1 − ρ_mρ_j))`.
pub fn mrt_moments(layout: &AntennaLayout, users: &[UserStats], wavelength: f64) -> MrtMoments {
    let n = layout.len() as f64;
    let m_users = users.len();
    let hbar = los_matrix(layout, users, wavelength);
    let gram = hbar.adjoint() * &hbar;
    let rho: Vec<f64> = users.iter().map(|u| los_fraction(u.kappa)).collect();
    let fourth = users
        .iter()
        .zip(&rho)
        .map(|(u, r)| u.beta * u.beta * (n * n + n * (1.0 - r * r)))
        .collect();
    let cross = DMatrix::from_fn(m_users, m_users, |j, m| {
        if j == m {
            return 0.0;
        }
        let rr = rho[m] * rho[j];
        users[m].beta * users[j].beta * (rr * gram[(j, m)].norm_sqr() + n * (1.0 - rr))
    });
    let second = users.iter().map(|u| n * u.beta).collect();
    MrtMoments { fourth, cross, second }
}

/// MRT ergodic rate approximation `log₂(1 + E‖h_m‖⁴ / (Σ_{j≠m} E|h_jᴴh_m|² + E{σ_m²/p}))`
/// with `E{σ_m²/p} = σ_m² N Σ_j β_j / P_tot`.
pub fn mrt_ergodic_approx(layout: &AntennaLayout, users: &[UserStats], cfg: &SystemConfig) -> ErgodicReport {
    let mom = mrt_moments(layout, users, cfg.wavelength);
    let n = layout.len() as f64;
    let beta_sum: f64 = users.iter().map(|u| u.beta).sum();
    let per_user = users
        .iter()
        .enumerate()
        .map(|(m, u)| {
            let interference: f64 = mom.cross.column(m).sum();
            let noise = u.noise_power * n * beta_sum / cfg.p_tot;
            (1.0 + mom.fourth[m] / (interference + noise)).log2()
        })
        .collect();
    ErgodicReport::closed_form(per_user, RateKind::MrtApprox)
}

/// Deterministic terms of the ZF lower bound at a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfStatsCache {
    /// Diagonal of `Ω` (Rician factors).
    pub omega: Vec<f64>,
    /// Diagonal of `Λ₁ = (Ω + I)⁻¹`.
    pub lambda1: Vec<f64>,
    /// Diagonal of `Λ₂ = (ΩΛ₁)^{1/2}`.
    pub lambda2: Vec<f64>,
    pub hbar: DMatrix<C64>,
    /// `Σ = Λ₁ + (1/N)Λ₂H̄ᴴH̄Λ₂`.
    pub sigma: DMatrix<C64>,
}

impl ZfStatsCache {
    /// `Σ⁻¹`, or a numerical-rank error if `Σ` is not positive definite.
    pub fn sigma_inverse(&self) -> Result<DMatrix<C64>> {
        hermitian_pd_inverse(&self.sigma)
    }
}

/// Inverse of a Hermitian positive definite matrix via Cholesky, with a
/// condition estimate from the pivots on failure.
pub(crate) fn hermitian_pd_inverse(a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let m = a.nrows();
    let scale = (0..m).map(|i| a[(i, i)].re).fold(0.0, f64::max);
    match a.clone().cholesky() {
        Some(ch) => {
            let min_pivot = (0..m).map(|i| ch.l_dirty()[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-14 * scale {
                Ok(ch.inverse())
            } else {
                Err(Error::NumericalRank { condition: scale / min_pivot })
            }
        }
        None => Err(Error::NumericalRank { condition: f64::INFINITY }),
    }
}

pub fn zf_sigma(layout: &AntennaLayout, users: &[UserStats], wavelength: f64) -> ZfStatsCache {
    let n = layout.len() as f64;
    let omega: Vec<f64> = users.iter().map(|u| u.kappa).collect();
    let lambda1: Vec<f64> = omega.iter().map(|k| if k.is_infinite() { 0.0 } else { 1.0 / (k + 1.0) }).collect();
    let lambda2: Vec<f64> = omega.iter().map(|&k| los_fraction(k).sqrt()).collect();
    let hbar = los_matrix(layout, users, wavelength);
    let gram = hbar.adjoint() * &hbar;
    let m_users = users.len();
    let sigma = DMatrix::from_fn(m_users, m_users, |u, v| {
        let mut s = gram[(u, v)] * (lambda2[u] * lambda2[v] / n);
        if u == v {
            // diagonal is exactly λ₁ + λ₂² = 1; avoid carrying rounding from N·N⁻¹
            s = C64::new(lambda1[u] + lambda2[u] * lambda2[u], 0.0);
        }
        s
    });
    ZfStatsCache { omega, lambda1, lambda2, hbar, sigma }
}

/// `η_m = (P_tot/M)/σ_m² · β_m(N − M)`.
pub fn zf_eta(users: &[UserStats], cfg: &SystemConfig, n_antennas: usize) -> Vec<f64> {
    let m_users = users.len();
    let p = cfg.p_tot / m_users as f64;
    users
        .iter()
        .map(|u| p / u.noise_power * u.beta * (n_antennas - m_users) as f64)
        .collect()
}

/// `log₂(1 + η_m / [Σ⁻¹]_mm)` per user.
pub fn zf_ergodic_lower_bound(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
) -> Result<ErgodicReport> {
    let (n, m_users) = (layout.len(), users.len());
    if n <= m_users {
        return Err(Error::Dimension(format!("ZF lower bound needs N > M, got N={n}, M={m_users}")));
    }
    let inv = zf_sigma(layout, users, cfg.wavelength).sigma_inverse()?;
    let eta = zf_eta(users, cfg, n);
    let per_user = (0..m_users).map(|m| (1.0 + eta[m] / inv[(m, m)].re).log2()).collect();
    Ok(ErgodicReport::closed_form(per_user, RateKind::ZfLowerBound))
}

#[derive(Debug, Clone)]
struct Accumulator {
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    total: f64,
    total_sq: f64,
    resamples: usize,
}

impl Accumulator {
    fn new(m: usize) -> Self {
        Accumulator { count: 0, sum: vec![0.0; m], sum_sq: vec![0.0; m], total: 0.0, total_sq: 0.0, resamples: 0 }
    }

    fn push(&mut self, rates: &[f64]) {
        self.count += 1;
        let mut s = 0.0;
        for (k, r) in rates.iter().enumerate() {
            self.sum[k] += r;
            self.sum_sq[k] += r * r;
            s += r;
        }
        self.total += s;
        self.total_sq += s * s;
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        self.count += other.count;
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        self.total += other.total;
        self.total_sq += other.total_sq;
        self.resamples += other.resamples;
        self
    }
}

fn std_err(sum: f64, sum_sq: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Sample-mean ergodic rate over `n_samples` Rician draws at a fixed layout.
///
/// Draws are split into chunks of [`MC_CHUNK`]; chunk `c` uses stream `c`
/// of `seed`, and chunk statistics are reduced in chunk order, so the result
/// depends only on `seed` and not on the thread count. A draw on which the
/// beamformer fails is replaced by a fresh draw from the same stream.
pub fn mc_ergodic_rate(
    layout: &AntennaLayout,
    users: &[UserStats],
    cfg: &SystemConfig,
    beamformer: Beamformer,
    n_samples: usize,
    seed: u64,
) -> Result<ErgodicReport> {
    if n_samples < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 Monte-Carlo samples, got {n_samples}")));
    }
    let (n, m_users) = (layout.len(), users.len());
    if matches!(beamformer, Beamformer::Zf | Beamformer::ZfWaterfill) && n <= m_users {
        return Err(Error::Dimension(format!("ZF needs N > M, got N={n}, M={m_users}")));
    }
    let sampler = ChannelSampler::new(layout, users, cfg.wavelength);
    let noise: Vec<f64> = users.iter().map(|u| u.noise_power).collect();
    let n_chunks = n_samples.div_ceil(MC_CHUNK);

    let run_chunk = |c: usize| -> Result<Accumulator> {
        let mut rng = stream_rng(seed, c as u64);
        let draws = MC_CHUNK.min(n_samples - c * MC_CHUNK);
        let mut acc = Accumulator::new(m_users);
        for _ in 0..draws {
            let mut failures = 0;
            loop {
                let h = sampler.sample(&mut rng);
                match beamformer.design(&h, cfg.p_tot, &noise) {
                    Ok(w) => {
                        acc.push(&rate_report(&h, &w, &noise).per_user_rate);
                        break;
                    }
                    Err(e @ (Error::RankDeficient(_) | Error::DegenerateChannel(_))) => {
                        failures += 1;
                        acc.resamples += 1;
                        if failures >= MAX_RESAMPLES {
                            return Err(e);
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(acc)
    };

    #[cfg(feature = "parallel")]
    let chunks: Vec<Result<Accumulator>> = {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Result<Accumulator>> = (0..n_chunks).map(run_chunk).collect();

    let mut acc = Accumulator::new(m_users);
    for c in chunks {
        acc = acc.merge(&c?);
    }
    let per_user: Vec<f64> = acc.sum.iter().map(|s| s / acc.count as f64).collect();
    let mc_std_err = (0..m_users).map(|k| std_err(acc.sum[k], acc.sum_sq[k], acc.count)).collect();
    Ok(ErgodicReport {
        sum: acc.total / acc.count as f64,
        per_user,
        kind: RateKind::MonteCarlo,
        mc_std_err: Some(mc_std_err),
        sum_std_err: Some(std_err(acc.total, acc.total_sq, acc.count)),
        resamples: acc.resamples,
    })
}

/// Per-user `[Σ⁻¹]_mm` (convenience for diagnostics).
pub fn sigma_inverse_diagonal(layout: &AntennaLayout, users: &[UserStats], wavelength: f64) -> Result<DVector<f64>> {
    let inv = zf_sigma(layout, users, wavelength).sigma_inverse()?;
    Ok(DVector::from_fn(users.len(), |m, _| inv[(m, m)].re))
}
