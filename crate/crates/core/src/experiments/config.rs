//! JSON experiment configuration.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::channel::{large_scale_fading, stream_rng, Region, SystemConfig, UserStats};
use crate::optimizer::AoOptions;
use crate::{Error, Result};

/// RNG stream reserved for user generation.
pub const USER_STREAM: u64 = 0x5553_4552;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MaZf,
    MaMrt,
    FpaZf,
    FpaMrt,
    FpaZfWf,
    FpaWmmse,
    /// FPA with MRT directions and optimized per-user power.
    FpaMrtPa,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::MaZf,
        Scheme::MaMrt,
        Scheme::FpaZf,
        Scheme::FpaMrt,
        Scheme::FpaZfWf,
        Scheme::FpaWmmse,
        Scheme::FpaMrtPa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MaZf => "ma_zf",
            Scheme::MaMrt => "ma_mrt",
            Scheme::FpaZf => "fpa_zf",
            Scheme::FpaMrt => "fpa_mrt",
            Scheme::FpaZfWf => "fpa_zf_wf",
            Scheme::FpaWmmse => "fpa_wmmse",
            Scheme::FpaMrtPa => "fpa_mrt_pa",
        }
    }

    pub fn movable(self) -> bool {
        matches!(self, Scheme::MaZf | Scheme::MaMrt)
    }

    pub fn needs_zf(self) -> bool {
        matches!(self, Scheme::MaZf | Scheme::FpaZf | Scheme::FpaZfWf)
    }

    pub fn beamformer(self) -> crate::beamforming::Beamformer {
        use crate::beamforming::Beamformer;
        match self {
            Scheme::MaZf | Scheme::FpaZf => Beamformer::Zf,
            Scheme::MaMrt | Scheme::FpaMrt => Beamformer::Mrt,
            Scheme::FpaZfWf => Beamformer::ZfWaterfill,
            Scheme::FpaWmmse => Beamformer::Wmmse,
            Scheme::FpaMrtPa => Beamformer::MrtPowerOpt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    PTot,
    Kappa,
    #[serde(alias = "region_A")]
    RegionA,
    NUsers,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::PTot => "p_tot",
            SweepVar::Kappa => "kappa",
            SweepVar::RegionA => "region_a",
            SweepVar::NUsers => "n_users",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVar,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub n_antennas: usize,
    pub n_users: usize,
    pub wavelength: f64,
    pub p_tot: f64,
    /// Region size parameter `A`.
    pub region_a: f64,
    /// Defaults to half a wavelength.
    pub d_min: Option<f64>,
    pub beta0: f64,
    pub alpha: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec {
            n_antennas: 6,
            n_users: 5,
            wavelength: 1.0,
            p_tot: 1.0,
            region_a: 2.0,
            d_min: None,
            beta0: 1e-4,
            alpha: 2.8,
        }
    }
}

impl SystemSpec {
    pub fn to_config(&self) -> Result<SystemConfig> {
        let cfg = SystemConfig {
            n_antennas: self.n_antennas,
            n_users: self.n_users,
            wavelength: self.wavelength,
            p_tot: self.p_tot,
            d_min: self.d_min.unwrap_or(self.wavelength / 2.0),
            region: Region::scaled_for(self.n_antennas, self.region_a, self.wavelength),
            beta0: self.beta0,
            alpha: self.alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Random user drop: distances and angles uniform on their ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserGen {
    pub kappa: f64,
    pub distance: [f64; 2],
    pub angle: [f64; 2],
    pub noise_power: f64,
}

impl Default for UserGen {
    fn default() -> Self {
        UserGen { kappa: 6.0, distance: [50.0, 70.0], angle: [-FRAC_PI_2, FRAC_PI_2], noise_power: 1e-11 }
    }
}

impl UserGen {
    /// Draws `count` users; a prefix of a longer draw equals a shorter draw.
    pub fn generate<R: Rng + ?Sized>(&self, count: usize, sys: &SystemSpec, rng: &mut R) -> Result<Vec<UserStats>> {
        let [d_lo, d_hi] = self.distance;
        let [a_lo, a_hi] = self.angle;
        if !(0.0 < d_lo && d_lo <= d_hi) || !(a_lo <= a_hi) {
            return Err(Error::Scenario(format!("bad user_gen ranges {:?} / {:?}", self.distance, self.angle)));
        }
        let uniform = |rng: &mut R, lo: f64, hi: f64| if lo < hi { rng.random_range(lo..hi) } else { lo };
        (0..count)
            .map(|_| {
                let d = uniform(rng, d_lo, d_hi);
                let theta = uniform(rng, a_lo, a_hi);
                let phi = uniform(rng, a_lo, a_hi);
                let beta = large_scale_fading(d, sys.beta0, sys.alpha)?;
                let mut u = UserStats::new(theta, phi, self.kappa, beta, self.noise_power)?;
                u.distance = Some(d);
                Ok(u)
            })
            .collect()
    }
}

/// Top-level JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default)]
    pub users: Option<Vec<UserStats>>,
    #[serde(default)]
    pub user_gen: Option<UserGen>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub optimizer: AoOptions,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::MaZf, Scheme::MaMrt, Scheme::FpaZf, Scheme::FpaMrt]
}

fn default_mc_samples() -> usize {
    crate::ergodic::DEFAULT_MC_SAMPLES
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            seed: 0,
            system: SystemSpec::default(),
            users: None,
            user_gen: None,
            sweep: None,
            schemes: default_schemes(),
            mc_samples: default_mc_samples(),
            optimizer: AoOptions::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON, converting `*_db` (ratio) and `*_dbm` (power) keys to
    /// linear values under the suffix-free name.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        convert_db_keys(&mut value)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

fn convert_db_keys(value: &mut Value) -> Result<()> {
    match value {
        Value::Object(map) => {
            let mut out = Map::with_capacity(map.len());
            for (key, mut v) in std::mem::take(map) {
                convert_db_keys(&mut v)?;
                let (base, conv): (&str, fn(f64) -> f64) = if let Some(b) = key.strip_suffix("_dbm") {
                    (b, dbm_to_watts)
                } else if let Some(b) = key.strip_suffix("_db") {
                    (b, db_to_linear)
                } else {
                    (key.as_str(), |x| x)
                };
                let v = if base.len() == key.len() {
                    v
                } else {
                    let x = v
                        .as_f64()
                        .ok_or_else(|| Error::Scenario(format!("`{key}` must be a number")))?;
                    Value::from(conv(x))
                };
                if out.insert(base.to_string(), v).is_some() {
                    return Err(Error::Scenario(format!("`{base}` given more than once")));
                }
            }
            *map = out;
        }
        Value::Array(items) => {
            for v in items {
                convert_db_keys(v)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub system: SystemSpec,
    pub cfg: SystemConfig,
    /// Users for the largest user count the sweep asks for.
    pub users: Vec<UserStats>,
    pub sweep: Option<Sweep>,
    pub schemes: Vec<Scheme>,
    pub mc_samples: usize,
    pub optimizer: AoOptions,
}

/// One sweep point: its value and the system it induces.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub cfg: SystemConfig,
    pub users: Vec<UserStats>,
}

/// Resolves `config` into a scenario, drawing users from `rng` when the
/// configuration does not list them.
pub fn generate_scenario<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<Scenario> {
    let cfg = config.system.to_config()?;
    let mut m_max = config.system.n_users;
    if let Some(Sweep { variable: SweepVar::NUsers, values }) = &config.sweep {
        m_max = values.iter().fold(m_max, |acc, &v| acc.max(v as usize));
    }
    let users = match (&config.users, &config.user_gen) {
        (Some(_), Some(_)) => return Err(Error::Scenario("give either `users` or `user_gen`, not both".into())),
        (Some(list), None) => {
            for u in list {
                u.validate()?;
            }
            if list.len() < m_max {
                return Err(Error::Scenario(format!("{} users listed but {m_max} needed", list.len())));
            }
            list.clone()
        }
        (None, gen) => gen.clone().unwrap_or_default().generate(m_max, &config.system, rng)?,
    };
    let scenario = Scenario {
        id: config.name.clone().unwrap_or_else(|| format!("s{}", config.seed)),
        seed: config.seed,
        system: config.system.clone(),
        cfg,
        users,
        sweep: config.sweep.clone(),
        schemes: config.schemes.clone(),
        mc_samples: config.mc_samples,
        optimizer: config.optimizer,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// [`generate_scenario`] with the user stream of `config.seed`.
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        generate_scenario(config, &mut stream_rng(config.seed, USER_STREAM))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Scenario("no schemes requested".into()));
        }
        if self.mc_samples < 100 {
            return Err(Error::Scenario(format!("mc_samples must be at least 100, got {}", self.mc_samples)));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Scenario("sweep has no values".into()));
            }
            if sweep.values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Scenario("sweep values must be strictly increasing".into()));
            }
            if sweep.variable == SweepVar::NUsers
                && sweep.values.iter().any(|&v| !(v >= 1.0 && v.fract() == 0.0))
            {
                return Err(Error::Scenario("n_users sweep values must be positive integers".into()));
            }
        }
        for p in self.points()? {
            p.cfg.validate()?;
        }
        Ok(())
    }

    /// The sweep points, or the base system as a single point.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let m = self.system.n_users;
        let base = SweepPoint { value: f64::NAN, cfg: self.cfg.clone(), users: self.users[..m].to_vec() };
        let Some(sweep) = &self.sweep else {
            return Ok(vec![base]);
        };
        sweep
            .values
            .iter()
            .map(|&value| {
                let mut p = SweepPoint { value, ..base.clone() };
                match sweep.variable {
                    SweepVar::PTot => p.cfg.p_tot = value,
                    SweepVar::Kappa => p.users.iter_mut().for_each(|u| u.kappa = value),
                    SweepVar::RegionA => {
                        p.cfg.region = Region::scaled_for(self.cfg.n_antennas, value, self.cfg.wavelength)
                    }
                    SweepVar::NUsers => {
                        p.users = self.users[..value as usize].to_vec();
                        p.cfg.n_users = value as usize;
                    }
                }
                p.cfg.validate()?;
                Ok(p)
            })
            .collect()
    }

    pub fn sweep_var(&self) -> &'static str {
        self.sweep.as_ref().map_or("none", |s| s.variable.name())
    }
}
