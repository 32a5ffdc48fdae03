//! Static environment: circular field, ground users, UAV hover point,
//! propagation constants and the power/bandwidth budgets.
//!
//! Everything here is immutable once built and can be shared freely across
//! worker threads. Angles are radians throughout; the degree conversion the
//! LoS model needs happens in [`crate::channel`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

/// Propagation constants of the air-to-ground link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConstants {
    /// LoS path-loss exponent.
    pub pathloss_los: f64,
    /// NLoS path-loss exponent, larger than the LoS one.
    pub pathloss_nlos: f64,
    /// Steepness constant of the logistic LoS-probability model.
    pub env_b: f64,
    /// Offset constant of the logistic LoS-probability model.
    pub env_c: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    /// Mean channel power gain of both fading laws.
    pub mean_gain: f64,
    /// Rice factor of the LoS fading.
    pub rice_k: f64,
}

impl Default for EnvConstants {
    /// Dense-urban values.
    fn default() -> Self {
        EnvConstants {
            pathloss_los: 2.5,
            pathloss_nlos: 3.5,
            env_b: 0.136,
            env_c: 11.95,
            noise_psd: 1e-16,
            mean_gain: 0.5,
            rice_k: 10.0,
        }
    }
}

impl EnvConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_los > 0.0 && self.pathloss_nlos > self.pathloss_los) {
            return Err(invalid(format!(
                "path-loss exponents must satisfy 0 < los ({}) < nlos ({})",
                self.pathloss_los, self.pathloss_nlos
            )));
        }
        if !(self.noise_psd > 0.0) {
            return Err(invalid("noise_psd must be positive"));
        }
        if !(self.mean_gain > 0.0) {
            return Err(invalid("mean_gain must be positive"));
        }
        if !(self.rice_k >= 0.0) {
            return Err(invalid("rice_k must be non-negative"));
        }
        if !(self.env_b > 0.0 && self.env_c > 0.0) {
            return Err(invalid("LoS model constants must be positive"));
        }
        Ok(())
    }
}

/// Power and bandwidth budgets. Bandwidth is handed out in whole blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub total_power: f64,
    pub total_bandwidth_hz: f64,
    pub block_hz: f64,
    pub n_blocks: usize,
}

impl Budgets {
    /// Builds budgets from a total bandwidth that must be an exact multiple
    /// of the block size.
    pub fn new(total_power: f64, total_bandwidth_hz: f64, block_hz: f64) -> Result<Self> {
        if !(total_power > 0.0) {
            return Err(invalid("total power must be positive"));
        }
        if !(block_hz > 0.0) {
            return Err(invalid("block size must be positive"));
        }
        let ratio = total_bandwidth_hz / block_hz;
        let n = ratio.round();
        if !(n >= 1.0) || (n * block_hz - total_bandwidth_hz).abs() > 1e-9 * total_bandwidth_hz {
            return Err(invalid(format!(
                "total bandwidth {total_bandwidth_hz} Hz is not a positive whole number of {block_hz} Hz blocks"
            )));
        }
        Ok(Budgets {
            total_power,
            total_bandwidth_hz: n * block_hz,
            block_hz,
            n_blocks: n as usize,
        })
    }

    pub fn from_blocks(total_power: f64, n_blocks: usize, block_hz: f64) -> Result<Self> {
        Self::new(total_power, n_blocks as f64 * block_hz, block_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundUser {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub rate_threshold_bps: f64,
}

impl GroundUser {
    pub fn ground_range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Rate requirements for a generated population.
#[derive(Debug, Clone, PartialEq)]
pub enum Thresholds {
    /// One requirement replicated for every user.
    Uniform(f64),
    PerUser(Vec<f64>),
}

impl Thresholds {
    fn for_user(&self, i: usize) -> f64 {
        match self {
            Thresholds::Uniform(t) => *t,
            Thresholds::PerUser(v) => v[i],
        }
    }
}

/// Geometry of one user relative to the UAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserGeometry {
    /// Horizontal distance from the field centre, m.
    pub ground_range: f64,
    /// Slant distance to the UAV, m.
    pub distance: f64,
    /// Elevation angle of the UAV seen from the user, rad.
    pub elevation: f64,
}

/// Geometry of a ground point at `(x, y)` under a UAV hovering at `height`.
pub fn geometry_at(x: f64, y: f64, height: f64) -> UserGeometry {
    let ground_range = x.hypot(y);
    let distance = ground_range.hypot(height);
    UserGeometry {
        ground_range,
        distance,
        elevation: (height / distance).asin(),
    }
}

/// Area-uniform point in a disk of radius `radius` (inverse-CDF radius).
pub fn sample_disk_point<R: rand::Rng + ?Sized>(radius: f64, rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let r = radius * u.sqrt();
    let angle = 2.0 * std::f64::consts::PI * v;
    (r * angle.cos(), r * angle.sin())
}

/// Places `n` users uniformly over the disk. Same seed, same layout.
pub fn generate_users(
    n: usize,
    radius_m: f64,
    thresholds: &Thresholds,
    rng_seed: u64,
) -> Result<Vec<GroundUser>> {
    if n == 0 {
        return Err(invalid("need at least one user"));
    }
    if !(radius_m > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    if let Thresholds::PerUser(v) = thresholds {
        if v.len() != n {
            return Err(invalid(format!("{} thresholds given for {n} users", v.len())));
        }
    }
    let mut rng = seed::rng_for(rng_seed, seed::tag::LAYOUT);
    let users = (0..n)
        .map(|i| {
            let (x, y) = sample_disk_point(radius_m, &mut rng);
            GroundUser {
                id: i,
                x,
                y,
                rate_threshold_bps: thresholds.for_user(i),
            }
        })
        .collect();
    Ok(users)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub radius_m: f64,
    pub uav_height_m: f64,
    pub users: Vec<GroundUser>,
    pub constants: EnvConstants,
    pub budgets: Budgets,
}

impl Scenario {
    pub fn new(
        radius_m: f64,
        uav_height_m: f64,
        users: Vec<GroundUser>,
        constants: EnvConstants,
        budgets: Budgets,
    ) -> Result<Self> {
        let s = Scenario {
            radius_m,
            uav_height_m,
            users,
            constants,
            budgets,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.uav_height_m > 0.0) {
            return Err(invalid("UAV height must be positive"));
        }
        if !(self.radius_m > 0.0) {
            return Err(invalid("field radius must be positive"));
        }
        self.constants.validate()?;
        for (i, u) in self.users.iter().enumerate() {
            if u.id != i {
                return Err(invalid(format!("user ids must be 0..N in order, found {} at {i}", u.id)));
            }
            if u.ground_range() > self.radius_m * (1.0 + 1e-12) {
                return Err(invalid(format!("user {i} lies outside the field")));
            }
            if !(u.rate_threshold_bps > 0.0) {
                return Err(invalid(format!("user {i} has a non-positive rate threshold")));
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_geometry(&self, i: usize) -> Result<UserGeometry> {
        let u = self
            .users
            .get(i)
            .ok_or_else(|| invalid(format!("user index {i} out of range")))?;
        Ok(geometry_at(u.x, u.y, self.uav_height_m))
    }

    /// The common rate threshold, if every user shares one.
    pub fn uniform_threshold(&self) -> Option<f64> {
        let first = self.users.first()?.rate_threshold_bps;
        self.users
            .iter()
            .all(|u| u.rate_threshold_bps == first)
            .then_some(first)
    }
}
