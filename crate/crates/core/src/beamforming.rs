//! Small-timescale beamformers and instantaneous SINR / rate evaluation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::{standard_cn, stream_rng, ChannelMatrix};
use crate::{Error, Result, C64};

/// Relative slack on the total power constraint.
pub const POWER_SLACK: f64 = 1e-9;

/// `W = [w_1 … w_M]`, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix(pub DMatrix<C64>);

impl BeamformingMatrix {
    pub fn total_power(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn satisfies_power(&self, p_tot: f64) -> bool {
        self.total_power() <= p_tot * (1.0 + POWER_SLACK) + f64::MIN_POSITIVE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    /// bits/s/Hz
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
}

/// Which small-timescale beamformer a scheme uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beamformer {
    /// MRT with the channel-gain-proportional power of [`mrt_beamformer`].
    Mrt,
    /// MRT directions, per-user power by projected gradient ascent.
    MrtPowerOpt,
    /// ZF with equal power.
    Zf,
    /// ZF directions with water-filling power.
    ZfWaterfill,
    /// WMMSE sum-rate heuristic.
    Wmmse,
}

impl Beamformer {
    pub fn design(self, h: &ChannelMatrix, p_tot: f64, noise: &[f64]) -> Result<BeamformingMatrix> {
        match self {
            Beamformer::Mrt => mrt_beamformer(h, p_tot),
            Beamformer::MrtPowerOpt => mrt_power_optimized(h, p_tot, noise, MRT_PGA_STEPS),
            Beamformer::Zf => zf_beamformer(h, p_tot),
            Beamformer::ZfWaterfill => {
                let powers = zf_waterfilling_power(h, p_tot, noise)?;
                zf_with_powers(h, &powers)
            }
            Beamformer::Wmmse => {
                wmmse_baseline(h, p_tot, noise, &WmmseOptions::default()).map(|o| o.beamformer)
            }
        }
    }
}

/// `w_m = sqrt(p)·h_m` with `p = P_tot / Σ‖h_m‖²`, so the budget is met with
/// equality.
pub fn mrt_beamformer(h: &ChannelMatrix, p_tot: f64) -> Result<BeamformingMatrix> {
    let gain = h.0.norm_squared();
    if gain == 0.0 || !gain.is_finite() {
        return Err(Error::DegenerateChannel("MRT needs a nonzero channel".into()));
    }
    let p = p_tot / gain;
    Ok(BeamformingMatrix(h.0.map(|v| v * p.sqrt())))
}

/// `(HᴴH)⁻¹`, failing when `N ≤ M` or `H` is numerically rank deficient.
pub fn gram_inverse(h: &ChannelMatrix) -> Result<DMatrix<C64>> {
    let (n, m) = h.0.shape();
    if n <= m {
        return Err(Error::RankDeficient(format!("ZF needs N > M, got N={n}, M={m}")));
    }
    let gram = h.0.adjoint() * &h.0;
    let scale = (0..m).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Gram matrix is not positive definite".into()))?;
    let min_pivot = (0..m).map(|i| chol.l_dirty()[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * scale) {
        return Err(Error::RankDeficient(format!(
            "Gram pivot ratio {:.3e}",
            min_pivot / scale
        )));
    }
    Ok(chol.inverse())
}

/// Effective ZF gains `g_m = 1 / [(HᴴH)⁻¹]_mm`.
pub fn zf_gains(h: &ChannelMatrix) -> Result<Vec<f64>> {
    let inv = gram_inverse(h)?;
    Ok((0..h.n_users()).map(|m| 1.0 / inv[(m, m)].re).collect())
}

/// ZF with equal power `P_tot / M`.
pub fn zf_beamformer(h: &ChannelMatrix, p_tot: f64) -> Result<BeamformingMatrix> {
    let m = h.n_users();
    zf_with_powers(h, &vec![p_tot / m as f64; m])
}

/// ZF directions (columns of the pseudo-inverse `H(HᴴH)⁻¹`, unit-normalized)
/// with the given per-user powers.
pub fn zf_with_powers(h: &ChannelMatrix, powers: &[f64]) -> Result<BeamformingMatrix> {
    if powers.len() != h.n_users() {
        return Err(Error::Dimension(format!(
            "{} powers for {} users",
            powers.len(),
            h.n_users()
        )));
    }
    let inv = gram_inverse(h)?;
    let mut w = &h.0 * inv;
    for (m, p) in powers.iter().enumerate() {
        let mut col = w.column_mut(m);
        let norm = col.norm();
        col.scale_mut(p.max(0.0).sqrt() / norm);
    }
    Ok(BeamformingMatrix(w))
}

/// Classic water-filling: maximizes `Σ log₂(1 + p_m / floor_m)` subject to
/// `Σ p_m = p_tot`, `p_m ≥ 0`, where `floor_m` is the noise-to-gain ratio.
pub fn water_filling(floors: &[f64], p_tot: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..floors.len()).collect();
    order.sort_by(|&a, &b| floors[a].total_cmp(&floors[b]));
    let mut level = 0.0;
    let mut active = 0;
    let mut acc = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        acc += floors[idx];
        let candidate = (p_tot + acc) / (k + 1) as f64;
        if candidate > floors[idx] {
            level = candidate;
            active = k + 1;
        } else {
            break;
        }
    }
    let mut powers = vec![0.0; floors.len()];
    for &idx in &order[..active] {
        powers[idx] = (level - floors[idx]).max(0.0);
    }
    powers
}

/// Water-filling power for ZF: floors `σ_m² / g_m` with `g_m` from [`zf_gains`].
pub fn zf_waterfilling_power(h: &ChannelMatrix, p_tot: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_noise(h, noise)?;
    let gains = zf_gains(h)?;
    let floors: Vec<f64> = gains.iter().zip(noise).map(|(g, s)| s / g).collect();
    Ok(water_filling(&floors, p_tot))
}

fn check_noise(h: &ChannelMatrix, noise: &[f64]) -> Result<()> {
    if noise.len() != h.n_users() {
        return Err(Error::Dimension(format!(
            "{} noise powers for {} users",
            noise.len(),
            h.n_users()
        )));
    }
    Ok(())
}

/// Number of projected-gradient steps used by the `MrtPowerOpt` baseline.
pub const MRT_PGA_STEPS: usize = 500;

/// MRT directions with per-user power chosen by projected gradient ascent on
/// the instantaneous sum rate over the power simplex. Starts from the
/// [`mrt_beamformer`] allocation, so the result never does worse than it.
pub fn mrt_power_optimized(
    h: &ChannelMatrix,
    p_tot: f64,
    noise: &[f64],
    steps: usize,
) -> Result<BeamformingMatrix> {
    check_noise(h, noise)?;
    let m_users = h.n_users();
    let norms: Vec<f64> = (0..m_users).map(|m| h.0.column(m).norm()).collect();
    if norms.contains(&0.0) {
        return Err(Error::DegenerateChannel("MRT needs nonzero user channels".into()));
    }
    if p_tot == 0.0 {
        return Ok(BeamformingMatrix(DMatrix::zeros(h.n_antennas(), m_users)));
    }
    // coupling[m][j] = |h_mᴴ ĥ_j|² · p_tot / σ_m², so x lives on the unit simplex
    let mut coupling = DMatrix::<f64>::zeros(m_users, m_users);
    for m in 0..m_users {
        for j in 0..m_users {
            let inner = h.0.column(m).dotc(&h.0.column(j)).norm_sqr() / (norms[j] * norms[j]);
            coupling[(m, j)] = inner * p_tot / noise[m];
        }
    }
    let rate = |x: &DVector<f64>| -> f64 {
        (0..m_users)
            .map(|m| {
                let total: f64 = 1.0 + (0..m_users).map(|j| coupling[(m, j)] * x[j]).sum::<f64>();
                let interference = total - coupling[(m, m)] * x[m];
                (total / interference).log2()
            })
            .sum()
    };
    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(m_users);
        for m in 0..m_users {
            let total: f64 = 1.0 + (0..m_users).map(|j| coupling[(m, j)] * x[j]).sum::<f64>();
            let interference = total - coupling[(m, m)] * x[m];
            for k in 0..m_users {
                let mut d = coupling[(m, k)] / total;
                if k != m {
                    d -= coupling[(m, k)] / interference;
                }
                g[k] += d / std::f64::consts::LN_2;
            }
        }
        g
    };
    let total_gain: f64 = norms.iter().map(|v| v * v).sum();
    let mut x = DVector::from_iterator(m_users, norms.iter().map(|v| v * v / total_gain));
    let mut fx = rate(&x);
    let mut step = 1.0;
    for _ in 0..steps {
        let g = grad(&x);
        let mut accepted = false;
        let mut s = step;
        for _ in 0..60 {
            let y = project_simplex(&(&x + &g * s));
            let fy = rate(&y);
            if fy >= fx + 0.5 * g.dot(&(&y - &x)) {
                if fy >= fx {
                    x = y;
                    fx = fy;
                }
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (2.0 * s).min(1e12);
    }
    let mut w = h.0.clone();
    for m in 0..m_users {
        let scale = (x[m].max(0.0) * p_tot).sqrt() / norms[m];
        w.column_mut(m).scale_mut(scale);
    }
    Ok(BeamformingMatrix(w))
}

/// Euclidean projection onto the unit simplex `{x ≥ 0, Σx = 1}`.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            shift = t;
        }
    }
    v.map(|x| (x - shift).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum WmmseInit {
    /// Start from whichever of fixed-power MRT and equal-power ZF has the
    /// larger sum rate (ZF is skipped when it is undefined).
    BestOfMrtZf,
    /// Random complex Gaussian beamformer scaled to full power.
    Random(u64),
    Given(BeamformingMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOptions {
    pub max_iters: usize,
    /// Stop when the relative sum-rate increase falls below this.
    pub rel_tol: f64,
    pub init: WmmseInit,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        WmmseOptions { max_iters: 200, rel_tol: 1e-8, init: WmmseInit::BestOfMrtZf }
    }
}

#[derive(Debug, Clone)]
pub struct WmmseOutcome {
    pub beamformer: BeamformingMatrix,
    /// Sum rate of the initial point followed by one entry per iteration.
    pub sum_rate_trace: Vec<f64>,
}

/// Weighted-MMSE sum-rate heuristic (stand-in for an optimal beamformer).
///
/// The problem is solved on noise-normalized channels `h_m / σ_m`; each
/// iteration updates the MMSE receivers, the MSE weights, then the
/// beamformer with the power multiplier found by bisection. The sum rate is
/// non-decreasing along the returned trace.
pub fn wmmse_baseline(
    h: &ChannelMatrix,
    p_tot: f64,
    noise: &[f64],
    opts: &WmmseOptions,
) -> Result<WmmseOutcome> {
    check_noise(h, noise)?;
    let (n, m_users) = h.0.shape();
    if h.0.norm_squared() == 0.0 {
        return Err(Error::DegenerateChannel("WMMSE needs a nonzero channel".into()));
    }
    if p_tot == 0.0 {
        return Ok(WmmseOutcome {
            beamformer: BeamformingMatrix(DMatrix::zeros(n, m_users)),
            sum_rate_trace: vec![0.0],
        });
    }
    let mut w = match &opts.init {
        WmmseInit::Given(w0) => {
            if w0.0.shape() != (n, m_users) {
                return Err(Error::Dimension("initial beamformer shape".into()));
            }
            if w0.total_power() == 0.0 {
                return Err(Error::Domain("WMMSE cannot start from a zero beamformer".into()));
            }
            w0.0.clone()
        }
        WmmseInit::Random(seed) => {
            let mut rng = stream_rng(*seed, 0);
            let raw = DMatrix::from_fn(n, m_users, |_, _| standard_cn(&mut rng));
            let scale = (p_tot / raw.norm_squared()).sqrt();
            raw * C64::from(scale)
        }
        WmmseInit::BestOfMrtZf => {
            let mrt = mrt_beamformer(h, p_tot)?;
            let mrt_rate = rate_report(h, &mrt, noise).sum_rate;
            match zf_beamformer(h, p_tot) {
                Ok(zf) if rate_report(h, &zf, noise).sum_rate > mrt_rate => zf.0,
                _ => mrt.0,
            }
        }
    };

    let mut hn = h.0.clone();
    for (m, s) in noise.iter().enumerate() {
        hn.column_mut(m).scale_mut(1.0 / s.sqrt());
    }
    let mut trace = vec![rate_report(h, &BeamformingMatrix(w.clone()), noise).sum_rate];
    for _ in 0..opts.max_iters {
        // receivers and weights
        let cross = hn.adjoint() * &w;
        let mut a = DMatrix::<C64>::zeros(n, n);
        let mut b = DMatrix::<C64>::zeros(n, m_users);
        for m in 0..m_users {
            let total: f64 = 1.0 + cross.row(m).iter().map(|v| v.norm_sqr()).sum::<f64>();
            let signal = cross[(m, m)];
            let u = signal / total;
            let mse = 1.0 - signal.norm_sqr() / total;
            let weight = 1.0 / mse.max(1e-300);
            let col = hn.column(m);
            a += col * col.adjoint() * C64::from(weight * u.norm_sqr());
            b.set_column(m, &(col * (u * weight)));
        }
        w = constrained_quadratic_minimizer(a, &b, p_tot);
        let rate = rate_report(h, &BeamformingMatrix(w.clone()), noise).sum_rate;
        let prev = *trace.last().unwrap();
        trace.push(rate);
        if rate - prev <= opts.rel_tol * prev.abs() {
            break;
        }
    }
    Ok(WmmseOutcome { beamformer: BeamformingMatrix(w), sum_rate_trace: trace })
}

/// `argmin_W Σ_m w_mᴴ A w_m − 2Re(b_mᴴ w_m)` subject to `‖W‖_F² ≤ p_tot`,
/// i.e. `W = (A + νI)⁺ B` with the multiplier `ν ≥ 0` set by bisection.
fn constrained_quadratic_minimizer(a: DMatrix<C64>, b: &DMatrix<C64>, p_tot: f64) -> DMatrix<C64> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let d_max = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    let proj = eig.eigenvectors.adjoint() * b;
    let keep: Vec<bool> = eig.eigenvalues.iter().map(|&d| d > 1e-12 * d_max).collect();
    let energy: Vec<f64> = (0..n).map(|i| proj.row(i).iter().map(|v| v.norm_sqr()).sum()).collect();
    let power = |nu: f64| -> f64 {
        (0..n)
            .filter(|&i| keep[i])
            .map(|i| energy[i] / (eig.eigenvalues[i] + nu).powi(2))
            .sum()
    };
    let nu = if power(0.0) <= p_tot {
        0.0
    } else {
        let total: f64 = energy.iter().sum();
        let mut lo = 0.0;
        let mut hi = (total / p_tot).sqrt();
        while power(hi) > p_tot {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if power(mid) > p_tot {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        hi
    };
    let mut scaled = proj;
    for i in 0..n {
        let f = if keep[i] { 1.0 / (eig.eigenvalues[i] + nu) } else { 0.0 };
        scaled.row_mut(i).scale_mut(f);
    }
    eig.eigenvectors * scaled
}

/// Per-user SINR `|h_mᴴw_m|² / (Σ_{j≠m}|h_mᴴw_j|² + σ_m²)` and rates.
pub fn rate_report(h: &ChannelMatrix, w: &BeamformingMatrix, noise: &[f64]) -> RateReport {
    let cross = h.0.adjoint() * &w.0;
    let m_users = h.n_users();
    let mut sinr = Vec::with_capacity(m_users);
    for m in 0..m_users {
        let signal = cross[(m, m)].norm_sqr();
        let interference: f64 =
            (0..m_users).filter(|&j| j != m).map(|j| cross[(m, j)].norm_sqr()).sum();
        sinr.push(signal / (interference + noise[m]));
    }
    let per_user_rate: Vec<f64> = sinr.iter().map(|g| g.ln_1p() / std::f64::consts::LN_2).collect();
    let sum_rate = per_user_rate.iter().sum();
    RateReport { sinr, per_user_rate, sum_rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, stream_rng, AntennaLayout, SystemConfig, UserStats};

    fn random_channel(n: usize, m: usize, seed: u64) -> ChannelMatrix {
        let mut rng = stream_rng(seed, 0);
        ChannelMatrix(DMatrix::from_fn(n, m, |_, _| standard_cn(&mut rng)))
    }

    /// Independent scalar evaluation of the MRT SINR with `p = P/Σ‖h‖²`.
    fn mrt_sinr_scalar(h: &DMatrix<C64>, p_tot: f64, noise: &[f64]) -> Vec<f64> {
        let (n, m_users) = h.shape();
        let mut total = 0.0;
        for j in 0..m_users {
            for i in 0..n {
                total += h[(i, j)].norm_sqr();
            }
        }
        let p = p_tot / total;
        (0..m_users)
            .map(|m| {
                let mut norm2 = 0.0;
                for i in 0..n {
                    norm2 += h[(i, m)].norm_sqr();
                }
                let mut interf = 0.0;
                for j in 0..m_users {
                    if j == m {
                        continue;
                    }
                    let mut inner = C64::new(0.0, 0.0);
                    for i in 0..n {
                        inner += h[(i, j)].conj() * h[(i, m)];
                    }
                    interf += p * inner.norm_sqr();
                }
                p * norm2 * norm2 / (interf + noise[m])
            })
            .collect()
    }

    #[test]
    fn mrt_single_user_snr() {
        let h = random_channel(4, 1, 1);
        let w = mrt_beamformer(&h, 2.0).unwrap();
        let rep = rate_report(&h, &w, &[0.5]);
        let expect = 2.0 * h.0.norm_squared() / 0.5;
        assert!((rep.sinr[0] - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn mrt_uses_full_power() {
        for seed in 0..5 {
            let h = random_channel(5, 3, seed);
            let w = mrt_beamformer(&h, 3.7).unwrap();
            assert!((w.total_power() - 3.7).abs() < 1e-12 * 3.7);
        }
    }

    #[test]
    fn mrt_matches_scalar_sinr() {
        let h = random_channel(4, 3, 42);
        let noise = [0.3, 0.1, 0.7];
        let w = mrt_beamformer(&h, 1.5).unwrap();
        let rep = rate_report(&h, &w, &noise);
        let oracle = mrt_sinr_scalar(&h.0, 1.5, &noise);
        for (a, b) in rep.sinr.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn mrt_rejects_zero_channel() {
        let h = ChannelMatrix(DMatrix::zeros(3, 2));
        assert!(matches!(mrt_beamformer(&h, 1.0), Err(Error::DegenerateChannel(_))));
    }

    #[test]
    fn zf_nulls_interference_and_matches_gram_snr() {
        for seed in 0..10 {
            let h = random_channel(6, 4, seed);
            let noise = [0.2, 0.4, 0.1, 1.0];
            let w = zf_beamformer(&h, 2.0).unwrap();
            assert!((w.total_power() - 2.0).abs() < 1e-12);
            let cross = h.0.adjoint() * &w.0;
            for m in 0..4 {
                for j in 0..4 {
                    if j != m {
                        let bound = 1e-9 * h.0.column(m).norm() * w.0.column(j).norm();
                        assert!(cross[(m, j)].norm() <= bound);
                    }
                }
            }
            let inv = gram_inverse(&h).unwrap();
            let rep = rate_report(&h, &w, &noise);
            for m in 0..4 {
                let snr = (2.0 / 4.0) / noise[m] / inv[(m, m)].re;
                assert!((rep.sinr[m] - snr).abs() < 1e-9 * snr);
            }
        }
    }

    #[test]
    fn zf_on_orthogonal_columns_is_mrt_direction() {
        let mut h = DMatrix::<C64>::zeros(4, 2);
        h[(0, 0)] = C64::new(1.0, 1.0);
        h[(1, 0)] = C64::new(0.0, -2.0);
        h[(2, 1)] = C64::new(3.0, 0.5);
        let h = ChannelMatrix(h);
        let w = zf_beamformer(&h, 1.0).unwrap();
        for m in 0..2 {
            let hm = h.0.column(m);
            let cos = w.0.column(m).dotc(&hm).norm() / (w.0.column(m).norm() * hm.norm());
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zf_single_user_is_matched_filter() {
        let h = random_channel(3, 1, 9);
        let zf = zf_beamformer(&h, 1.0).unwrap();
        let mrt = mrt_beamformer(&h, 1.0).unwrap();
        assert!((zf.0.clone() - mrt.0).norm() < 1e-12);
    }

    #[test]
    fn zf_rank_errors() {
        assert!(matches!(zf_beamformer(&random_channel(3, 3, 1), 1.0), Err(Error::RankDeficient(_))));
        let mut h = random_channel(4, 2, 2).0;
        let c = h.column(0).clone_owned();
        h.set_column(1, &(c * C64::new(0.0, 2.0)));
        assert!(zf_beamformer(&ChannelMatrix(h), 1.0).is_err());
    }

    #[test]
    fn water_filling_symmetric_and_dominant() {
        let p = water_filling(&[0.5, 0.5, 0.5], 3.0);
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let p = water_filling(&[1e-3, 10.0, 20.0], 0.1);
        assert!((p[0] - 0.1).abs() < 1e-15 && p[1] == 0.0 && p[2] == 0.0);
    }

    #[test]
    fn water_filling_kkt() {
        let floors = [0.3, 1.1, 0.05, 2.0, 0.7];
        let p = water_filling(&floors, 1.3);
        assert!((p.iter().sum::<f64>() - 1.3).abs() < 1e-12);
        let level = p.iter().zip(&floors).find(|(p, _)| **p > 0.0).map(|(p, f)| p + f).unwrap();
        for (pi, fi) in p.iter().zip(&floors) {
            if *pi > 0.0 {
                assert!((pi + fi - level).abs() < 1e-10);
            } else {
                assert!(*fi >= level - 1e-10);
            }
        }
    }

    #[test]
    fn zf_waterfilling_matches_simplex_grid_search() {
        let h = random_channel(5, 3, 77);
        let noise = [0.4, 1.0, 0.25];
        let p_tot = 2.0;
        let p = zf_waterfilling_power(&h, p_tot, &noise).unwrap();
        let g = zf_gains(&h).unwrap();
        let objective = |q: [f64; 3]| -> f64 {
            (0..3).map(|m| (1.0 + q[m] * g[m] / noise[m]).log2()).sum()
        };
        let steps = 1000;
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let k = steps - i - j;
                let q = [i, j, k].map(|v| v as f64 / steps as f64 * p_tot);
                let f = objective(q);
                if f > best.0 {
                    best = (f, q);
                }
            }
        }
        for m in 0..3 {
            assert!((p[m] - best.1[m]).abs() <= 1e-3 * p_tot, "{p:?} vs {:?}", best.1);
        }
        assert!(objective([p[0], p[1], p[2]]) >= best.0 - 1e-12);
    }

    #[test]
    fn wmmse_single_user_reaches_matched_filter() {
        let h = random_channel(4, 1, 5);
        let out = wmmse_baseline(&h, 1.0, &[0.3], &WmmseOptions::default()).unwrap();
        let rep = rate_report(&h, &out.beamformer, &[0.3]);
        let opt = (1.0 + h.0.norm_squared() / 0.3).log2();
        assert!((rep.sum_rate - opt).abs() < 1e-6);
    }

    #[test]
    fn wmmse_beats_mrt_and_zf() {
        for seed in 0..8 {
            let h = random_channel(6, 4, 100 + seed);
            let noise = [0.1, 0.2, 0.05, 0.3];
            let out = wmmse_baseline(&h, 1.0, &noise, &WmmseOptions::default()).unwrap();
            assert!(out.beamformer.satisfies_power(1.0));
            let w = rate_report(&h, &out.beamformer, &noise).sum_rate;
            let mrt = rate_report(&h, &mrt_beamformer(&h, 1.0).unwrap(), &noise).sum_rate;
            let zf = rate_report(&h, &zf_beamformer(&h, 1.0).unwrap(), &noise).sum_rate;
            assert!(w >= mrt.max(zf) - 1e-9, "{w} < max({mrt}, {zf})");
        }
    }

    #[test]
    fn wmmse_random_init_trace_is_monotone() {
        let h = random_channel(5, 3, 8);
        let noise = [0.5, 0.5, 0.5];
        let opts = WmmseOptions { init: WmmseInit::Random(4), ..Default::default() };
        let out = wmmse_baseline(&h, 2.0, &noise, &opts).unwrap();
        assert!(out.sum_rate_trace.len() > 2);
        for pair in out.sum_rate_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs());
        }
    }

    #[test]
    fn wmmse_rejects_zero_init() {
        let h = random_channel(3, 2, 1);
        let opts = WmmseOptions {
            init: WmmseInit::Given(BeamformingMatrix(DMatrix::zeros(3, 2))),
            ..Default::default()
        };
        assert!(matches!(wmmse_baseline(&h, 1.0, &[1.0, 1.0], &opts), Err(Error::Domain(_))));
    }

    #[test]
    fn mrt_power_opt_improves_on_fixed_power() {
        for seed in 0..5 {
            let h = random_channel(4, 3, 300 + seed);
            let noise = [0.05, 0.1, 0.2];
            let opt = mrt_power_optimized(&h, 1.0, &noise, MRT_PGA_STEPS).unwrap();
            assert!(opt.satisfies_power(1.0));
            let fixed = mrt_beamformer(&h, 1.0).unwrap();
            let r_opt = rate_report(&h, &opt, &noise).sum_rate;
            let r_fixed = rate_report(&h, &fixed, &noise).sum_rate;
            assert!(r_opt >= r_fixed - 1e-12);
        }
    }

    #[test]
    fn zero_beamformer_gives_zero_rates() {
        let h = random_channel(3, 2, 3);
        let rep = rate_report(&h, &BeamformingMatrix(DMatrix::zeros(3, 2)), &[1.0, 1.0]);
        assert_eq!(rep.sum_rate, 0.0);
        assert!(rep.per_user_rate.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn zf_interference_is_negligible_in_rate_report() {
        let h = random_channel(6, 3, 21);
        let w = zf_beamformer(&h, 1.0).unwrap();
        let cross = h.0.adjoint() * &w.0;
        for m in 0..3 {
            let signal = cross[(m, m)].norm_sqr();
            let interf: f64 = (0..3).filter(|&j| j != m).map(|j| cross[(m, j)].norm_sqr()).sum();
            assert!(interf <= 1e-15 * signal);
        }
    }

    #[test]
    fn rate_report_matches_scalar_evaluation() {
        let cfg = SystemConfig::with_defaults(4, 2);
        let layout = AntennaLayout::fpa_grid(&cfg).unwrap();
        let users = vec![
            UserStats::new(0.2, -0.4, 3.0, 1.0, 0.1).unwrap(),
            UserStats::new(-0.6, 0.9, 1.0, 0.5, 0.2).unwrap(),
        ];
        let mut rng = stream_rng(13, 0);
        let h = sample_channel(&layout, &users, 1.0, &mut rng);
        let w = BeamformingMatrix(DMatrix::from_fn(4, 2, |_, _| standard_cn(&mut rng)));
        let noise = [0.1, 0.2];
        let rep = rate_report(&h, &w, &noise);
        for m in 0..2 {
            let inner = |j: usize| {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..4 {
                    acc += h.0[(i, m)].conj() * w.0[(i, j)];
                }
                acc.norm_sqr()
            };
            let other = 1 - m;
            let sinr = inner(m) / (inner(other) + noise[m]);
            assert!((rep.sinr[m] - sinr).abs() < 1e-12 * sinr);
            assert!((rep.per_user_rate[m] - (1.0 + sinr).log2()).abs() < 1e-12);
        }
        assert!((rep.sum_rate - rep.per_user_rate.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn mrt_sinr_is_scale_covariant() {
        let h = random_channel(5, 3, 61);
        let noise = [0.1, 0.3, 0.2];
        let base = rate_report(&h, &mrt_beamformer(&h, 1.0).unwrap(), &noise);
        // Scaling H by c with noise scaled by c² leaves every SINR unchanged.
        let c = 3.5;
        let scaled_noise: Vec<f64> = noise.iter().map(|s| s * c * c).collect();
        let hs = h.scaled(c);
        let scaled = rate_report(&hs, &mrt_beamformer(&hs, 1.0).unwrap(), &scaled_noise);
        for (a, b) in base.sinr.iter().zip(&scaled.sinr) {
            assert!((a - b).abs() < 1e-10 * a);
        }
    }
}
