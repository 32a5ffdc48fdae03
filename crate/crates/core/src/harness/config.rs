//! Experiment configuration: a scale preset with TOML and command-line
//! overrides merged on top.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::ddpg::DdpgConfig;
use crate::dqn::DqnConfig;
use crate::error::{Error, Result};
use crate::scenario::{generate_users, Budgets, EnvConstants, Scenario, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Ten users and 200 blocks; minutes on a laptop.
    Desk,
    /// Fifty users and 1000 blocks at unit power.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Rate threshold, bit/s.
    Threshold,
    /// Total bandwidth, Hz; a whole number of blocks.
    TotalBandwidth,
    /// UAV height, m.
    Height,
    /// Total power.
    TotalPower,
    /// Mean fading power gain.
    Fading,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Threshold => "threshold",
            SweepAxis::TotalBandwidth => "total_bandwidth",
            SweepAxis::Height => "height",
            SweepAxis::TotalPower => "total_power",
            SweepAxis::Fading => "fading",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub radius_m: f64,
    pub uav_height_m: f64,
    pub n_users: usize,
    pub n_blocks: usize,
    pub block_hz: f64,
    pub total_power: f64,
    pub rate_threshold_bps: f64,
    pub rice_k: f64,
    pub mean_gain: f64,
    pub env_b: f64,
    pub env_c: f64,
    pub pathloss_los: f64,
    pub pathloss_nlos: f64,
    pub noise_psd: f64,
}

impl ScenarioConfig {
    pub fn constants(&self) -> EnvConstants {
        EnvConstants {
            pathloss_los: self.pathloss_los,
            pathloss_nlos: self.pathloss_nlos,
            env_b: self.env_b,
            env_c: self.env_c,
            noise_psd: self.noise_psd,
            mean_gain: self.mean_gain,
            rice_k: self.rice_k,
        }
    }

    /// The scenario with the user layout drawn from `layout_seed`.
    pub fn build(&self, layout_seed: u64) -> Result<Scenario> {
        let users = generate_users(
            self.n_users,
            self.radius_m,
            &Thresholds::Uniform(self.rate_threshold_bps),
            layout_seed,
        )?;
        Scenario::new(
            self.radius_m,
            self.uav_height_m,
            users,
            self.constants(),
            Budgets::from_blocks(self.total_power, self.n_blocks, self.block_hz)?,
        )
    }

    /// Copy with the swept quantity set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut s = self.clone();
        match axis {
            SweepAxis::Threshold => s.rate_threshold_bps = value,
            SweepAxis::TotalBandwidth => {
                s.n_blocks = Budgets::new(s.total_power, value, s.block_hz)?.n_blocks;
            }
            SweepAxis::Height => s.uav_height_m = value,
            SweepAxis::TotalPower => s.total_power = value,
            SweepAxis::Fading => s.mean_gain = value,
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Greedy rollouts per solve.
    pub eval_episodes: usize,
    /// Trailing window, in episodes, of the convergence criterion.
    pub convergence_window: usize,
    /// Relative band around the final window mean that counts as settled.
    pub convergence_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    /// Empty means the scale's default grid for the axis.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n_scenarios: usize,
    pub n_users: usize,
    pub n_blocks: usize,
    pub power_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    /// Layout and agent seeds; sweeps and comparisons run every one.
    pub seeds: Vec<u64>,
    /// Seed of the bandwidth agent, shared by all layouts. Defaults to the
    /// first layout seed.
    pub dqn_seed: Option<u64>,
    pub scenario: ScenarioConfig,
    pub dqn: DqnConfig,
    pub ddpg: DdpgConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub oracle: OracleConfig,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        let c = EnvConstants::default();
        let scenario = |uav_height_m, n_users, n_blocks, total_power, rate_threshold_bps| ScenarioConfig {
            radius_m: 200.0,
            uav_height_m,
            n_users,
            n_blocks,
            block_hz: 1600.0,
            total_power,
            rate_threshold_bps,
            rice_k: c.rice_k,
            mean_gain: c.mean_gain,
            env_b: c.env_b,
            env_c: c.env_c,
            pathloss_los: c.pathloss_los,
            pathloss_nlos: c.pathloss_nlos,
            noise_psd: c.noise_psd,
        };
        let (scenario, dqn) = match scale {
            Scale::Desk => (
                scenario(200.0, 10, 200, 1e-3, 1.5e5),
                DqnConfig {
                    // Pinned so bandwidth sweeps share one agent.
                    max_blocks: Some(200),
                    ..DqnConfig::default()
                },
            ),
            Scale::Full => (
                scenario(400.0, 50, 1000, 1.0, 1e6),
                DqnConfig {
                    p_min: Some(0.0005),
                    p_max: Some(0.05),
                    ..DqnConfig::default()
                },
            ),
        };
        ExperimentConfig {
            scale,
            seeds: vec![1, 2, 3, 4, 5],
            dqn_seed: None,
            scenario,
            dqn,
            ddpg: DdpgConfig::default(),
            eval: EvalConfig {
                eval_episodes: 1,
                convergence_window: 20,
                convergence_tolerance: 0.05,
            },
            sweep: SweepConfig {
                axis: None,
                values: Vec::new(),
            },
            oracle: OracleConfig {
                n_scenarios: 10,
                n_users: 5,
                n_blocks: 45,
                power_grid: 21,
            },
        }
    }

    /// Default grid of a sweep axis at this scale.
    pub fn default_values(&self, axis: SweepAxis) -> Vec<f64> {
        let s = &self.scenario;
        match (axis, self.scale) {
            (SweepAxis::Threshold, _) => [2.0 / 3.0, 5.0 / 6.0, 1.0, 7.0 / 6.0, 4.0 / 3.0]
                .iter()
                .map(|f| (f * s.rate_threshold_bps).round())
                .collect(),
            (SweepAxis::TotalBandwidth, _) => [0.5, 0.75, 1.0, 1.25, 1.5]
                .iter()
                .map(|f| (f * s.n_blocks as f64).round() * s.block_hz)
                .collect(),
            (SweepAxis::Height, Scale::Desk) => vec![25.0, 50.0, 125.0, 250.0, 400.0, 600.0],
            (SweepAxis::Height, Scale::Full) => vec![100.0, 200.0, 300.0, 400.0, 500.0, 600.0],
            (SweepAxis::TotalPower, _) => [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|f| f * s.total_power).collect(),
            (SweepAxis::Fading, _) => vec![0.25, 0.5, 0.75, 1.0],
        }
    }

    pub fn sweep_values(&self) -> Result<(SweepAxis, Vec<f64>)> {
        let axis = self
            .sweep
            .axis
            .ok_or_else(|| Error::Config("missing required key `sweep.axis`".into()))?;
        let values = if self.sweep.values.is_empty() {
            self.default_values(axis)
        } else {
            self.sweep.values.clone()
        };
        Ok((axis, values))
    }

    pub fn dqn_seed(&self) -> u64 {
        self.dqn_seed.unwrap_or(self.seeds[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.sweep.values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("`sweep.values` must all be positive".into()));
        }
        if self.eval.convergence_window == 0 || !(self.eval.convergence_tolerance > 0.0) {
            return Err(Error::Config("`eval` convergence settings must be positive".into()));
        }
        self.scenario.build(self.seeds[0]).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        self.dqn.validate()?;
        self.ddpg.validate()?;
        Ok(())
    }

    /// Canonical TOML of the fully resolved config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of [`ExperimentConfig::to_toml`], hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Recursive overlay: tables merge key by key, anything else replaces.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a command-line value as a TOML literal, falling back to a bare
/// string, so `--set sweep.axis=height` needs no quotes.
fn parse_literal(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// `a.b.c = v` as nested tables.
fn dotted(key: &str, value: Value) -> Result<Table> {
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key `{key}`")));
    }
    let last = parts.pop().expect("split yields one part");
    let mut t = Table::new();
    t.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(t));
        t = outer;
    }
    Ok(t)
}

/// Resolves a config: the preset of the scale (from `overrides`, then the
/// file, then `default_scale`), the file merged over it, then each
/// `key=value` override in order.
pub fn resolve(file: Option<&str>, overrides: &[(String, String)], default_scale: Scale) -> Result<ExperimentConfig> {
    let file_table: Table = match file {
        Some(text) => text.parse().map_err(|e| Error::Config(format!("{e}")))?,
        None => Table::new(),
    };
    let mut layers = vec![file_table];
    for (k, v) in overrides {
        layers.push(dotted(k, parse_literal(v))?);
    }
    let mut scale = default_scale;
    for layer in &layers {
        if let Some(v) = layer.get("scale") {
            scale = Scale::deserialize(v.clone()).map_err(|e| Error::Config(format!("scale: {e}")))?;
        }
    }
    let mut base = Table::try_from(ExperimentConfig::preset(scale)).map_err(|e| Error::Config(e.to_string()))?;
    for layer in layers {
        merge(&mut base, layer);
    }
    let cfg = ExperimentConfig::deserialize(Value::Table(base)).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
