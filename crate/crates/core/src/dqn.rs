//! Bandwidth agent.
//!
//! One episode concerns one user: given its power and position the agent
//! adds or removes a single bandwidth block per step and the episode ends
//! once the allocation is minimal sufficient, meaning the user is served at
//! `B` blocks but not at `B − 1`. A trained network is then queried through
//! [`DqnModel::allocate_blocks`] from a one-block start.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::channel::{is_served, rate_for_blocks, LinkState};
use crate::error::{invalid, Error, Result};
use crate::neural::{self, Activation, Matrix, Mlp, Optimizer, OptimizerKind};
use crate::rl::{epsilon_at, EpsilonSchedule, ReplayBuffer, Transition};
use crate::scenario::{sample_disk_point, EnvConstants, Scenario};
use crate::seed;

pub const ADD: usize = 0;
pub const REMOVE: usize = 1;

const RATIO_GAIN: f64 = 20.0;

/// Everything the per-user environment needs; stored with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnTask {
    pub radius_m: f64,
    pub uav_height_m: f64,
    pub rate_threshold_bps: f64,
    pub constants: EnvConstants,
    pub block_hz: f64,
    /// Upper clamp on blocks and normalizer for the block feature.
    pub max_blocks: usize,
    /// Reset power range, also the power feature scale (`p_max`).
    pub p_min: f64,
    pub p_max: f64,
    pub b_init_max: usize,
    /// Powers are truncated to four decimals of this unit before a query.
    pub power_unit: f64,
    #[serde(default)]
    pub encoding: Encoding,
    /// Append `ln(η/η_th)` at the current blocks to the network input.
    #[serde(default)]
    pub observe_ratio: bool,
}

/// How an observation is scaled into network inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Power by `p_max`, blocks by `max_blocks`, position by `R`.
    Linear,
    /// Logarithms of power and blocks, so one block is the same relative
    /// step whatever the target; position by `R`.
    #[default]
    Log,
}

impl DqnTask {
    /// Per-user task for a scenario whose users share one rate threshold.
    pub fn from_scenario(s: &Scenario, cfg: &DqnConfig) -> Result<Self> {
        let threshold = s
            .uniform_threshold()
            .ok_or_else(|| invalid("the bandwidth agent is trained for one shared rate threshold"))?;
        let max_blocks = cfg.max_blocks.unwrap_or(s.budgets.n_blocks);
        let p_max = cfg.p_max.unwrap_or(s.budgets.total_power);
        let p_min = cfg.p_min.unwrap_or(cfg.p_min_fraction * s.budgets.total_power);
        let task = DqnTask {
            radius_m: s.radius_m,
            uav_height_m: s.uav_height_m,
            rate_threshold_bps: threshold,
            constants: s.constants,
            block_hz: s.budgets.block_hz,
            max_blocks,
            p_min,
            p_max,
            b_init_max: cfg.b_init_max.unwrap_or((max_blocks / 2).max(1)),
            power_unit: s.budgets.total_power,
            encoding: cfg.encoding,
            observe_ratio: cfg.observe_ratio,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if !(self.radius_m > 0.0 && self.uav_height_m > 0.0) {
            return Err(invalid("radius and height must be positive"));
        }
        if !(self.rate_threshold_bps > 0.0 && self.block_hz > 0.0 && self.power_unit > 0.0) {
            return Err(invalid("threshold, block size and power unit must be positive"));
        }
        if !(0.0 <= self.p_min && self.p_min <= self.p_max && self.p_max > 0.0) {
            return Err(invalid(format!("bad reset power range [{}, {}]", self.p_min, self.p_max)));
        }
        if self.max_blocks == 0 || self.b_init_max == 0 || self.b_init_max > self.max_blocks {
            return Err(invalid("need 1 <= b_init_max <= max_blocks"));
        }
        Ok(())
    }

    fn link(&self, x: f64, y: f64) -> LinkState {
        LinkState::expected_at(0, x, y, self.uav_height_m, &self.constants)
    }

    fn rate(&self, link: &LinkState, power: f64, blocks: usize) -> f64 {
        rate_for_blocks(link, power, blocks, self.block_hz, &self.constants)
    }

    /// Served at `blocks` but not at `blocks − 1`.
    pub fn is_minimal_sufficient(&self, obs: &DqnObservation) -> bool {
        let link = self.link(obs.x, obs.y);
        self.minimal_at(&link, obs.power, obs.blocks)
    }

    fn minimal_at(&self, link: &LinkState, power: f64, blocks: usize) -> bool {
        let t = self.rate_threshold_bps;
        blocks >= 1
            && is_served(self.rate(link, power, blocks), t)
            && !is_served(self.rate(link, power, blocks - 1), t)
    }

    fn potential(&self, obs: &DqnObservation, kappa: f64) -> f64 {
        if kappa == 0.0 {
            return 0.0;
        }
        let ratio = self.served_ratio(obs);
        // Clamped so a zero rate stays finite.
        -kappa * ratio.max(1e-6).ln().abs()
    }

    /// Linear-scan reference for the terminal block count.
    pub fn oracle_blocks(&self, power: f64, x: f64, y: f64) -> Option<usize> {
        crate::channel::minimal_blocks_scan(
            &self.link(x, y),
            power,
            self.rate_threshold_bps,
            self.block_hz,
            self.max_blocks,
            &self.constants,
        )
    }

    pub fn input_dim(&self) -> usize {
        if self.observe_ratio {
            5
        } else {
            4
        }
    }

    fn served_ratio(&self, obs: &DqnObservation) -> f64 {
        self.rate(&self.link(obs.x, obs.y), obs.power, obs.blocks) / self.rate_threshold_bps
    }

    /// Network input for an observation; see [`Encoding`].
    pub fn features(&self, obs: &DqnObservation) -> Vec<f64> {
        let (x, y) = (obs.x / self.radius_m, obs.y / self.radius_m);
        let mut f = match self.encoding {
            Encoding::Linear => vec![
                obs.power / self.p_max,
                obs.blocks as f64 / self.max_blocks as f64,
                x,
                y,
            ],
            Encoding::Log => {
                // Decades below p_max, floored at four.
                let p = (obs.power / self.p_max).max(1e-4).log10();
                let b = (obs.blocks.max(1) as f64).ln() / (self.max_blocks.max(2) as f64).ln();
                vec![p, b, x, y]
            }
        };
        if self.observe_ratio {
            // One block near the target moves ln(η/η_th) by only a few
            // hundredths; the gain brings that to unit scale, asinh keeps
            // far-off states bounded without saturating.
            f.push((RATIO_GAIN * self.served_ratio(obs).max(1e-9).ln()).asinh());
        }
        f
    }

    /// Power truncated to four decimals of `power_unit`, so the truncated
    /// value never exceeds the real one.
    pub fn quantize_power(&self, power: f64) -> (i64, f64) {
        let key = (power / self.power_unit * 1e4 + 1e-9).floor() as i64;
        (key, key as f64 * 1e-4 * self.power_unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnObservation {
    pub power: f64,
    pub blocks: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: DqnObservation,
    pub reward: f64,
    pub done: bool,
}

/// Served ratio reward, less the squared overshoot once served.
pub fn ratio_reward(ratio: f64) -> f64 {
    if ratio > 1.0 {
        ratio - (ratio - 1.0).powi(2)
    } else {
        ratio
    }
}

pub fn dqn_env_reset<R: rand::Rng + ?Sized>(task: &DqnTask, rng: &mut R) -> DqnObservation {
    let power = if task.p_max > task.p_min {
        rng.random_range(task.p_min..=task.p_max)
    } else {
        task.p_min
    };
    let (x, y) = sample_disk_point(task.radius_m, rng);
    let blocks = rng.random_range(1..=task.b_init_max);
    DqnObservation { power, blocks, x, y }
}

pub fn dqn_env_step(obs: &DqnObservation, action: usize, task: &DqnTask) -> StepOutcome {
    let blocks = match action {
        ADD => (obs.blocks + 1).min(task.max_blocks),
        _ => obs.blocks.saturating_sub(1).max(1),
    };
    let next = DqnObservation { blocks, ..*obs };
    let link = task.link(obs.x, obs.y);
    let ratio = task.rate(&link, obs.power, blocks) / task.rate_threshold_bps;
    StepOutcome {
        next,
        reward: ratio_reward(ratio),
        done: task.minimal_at(&link, obs.power, blocks),
    }
}

fn argmax2(q: &[f64]) -> usize {
    // Ties go to "add".
    if q[REMOVE] > q[ADD] {
        REMOVE
    } else {
        ADD
    }
}

pub fn dqn_select_action<R: rand::Rng + ?Sized>(qnet: &Mlp, features: &[f64], eps: f64, rng: &mut R) -> Result<usize> {
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Ok(rng.random_range(0..2));
    }
    Ok(argmax2(&qnet.forward(features)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub lr: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub train_freq: u64,
    pub learning_starts: usize,
    /// Blend factor of the target copy; 1 is a hard copy.
    pub tau: f64,
    /// Environment steps between target refreshes; 1 bootstraps from the
    /// online network directly.
    pub target_update_interval: u64,
    pub loss: TdLoss,
    pub max_grad_norm: Option<f64>,
    pub episodes: usize,
    pub max_steps: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `episodes × max_steps` over which ε decays.
    pub eps_decay_fraction: f64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    /// Subtracted from every training reward so that lingering costs more
    /// than terminating.
    pub reward_offset: f64,
    /// Offset rewards are clipped to `[−clip, clip]`; the squared overshoot
    /// penalty otherwise dwarfs every other signal far above the target.
    pub reward_clip: f64,
    /// Weight of the potential `Φ = −κ·|ln(η/η_th)|` added to training
    /// rewards as `Φ(s′) − Φ(s)`; zero disables it.
    pub shaping: f64,
    pub encoding: Encoding,
    pub observe_ratio: bool,
    pub p_min: Option<f64>,
    /// Used when `p_min` is unset, as a fraction of the total power.
    pub p_min_fraction: f64,
    pub p_max: Option<f64>,
    pub max_blocks: Option<usize>,
    pub b_init_max: Option<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            lr: 1e-4,
            buffer_size: 1_000_000,
            batch_size: 32,
            gamma: 0.99,
            train_freq: 4,
            learning_starts: 100,
            tau: 1.0,
            target_update_interval: 10_000,
            loss: TdLoss::Mse,
            max_grad_norm: Some(10.0),
            episodes: 2000,
            max_steps: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.1,
            hidden: vec![128, 128],
            optimizer: OptimizerKind::Adam,
            reward_offset: 2.0,
            reward_clip: 3.0,
            shaping: 25.0,
            encoding: Encoding::Log,
            observe_ratio: true,
            p_min: None,
            p_min_fraction: 0.02,
            p_max: None,
            max_blocks: None,
            b_init_max: None,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.buffer_size > 0
            && self.batch_size > 0
            && (0.0..=1.0).contains(&self.gamma)
            && self.train_freq > 0
            && self.target_update_interval > 0
            && self.reward_clip > 0.0
            && self.max_grad_norm.is_none_or(|m| m > 0.0)
            && self.episodes > 0
            && self.max_steps > 0
            && (0.0..=1.0).contains(&self.eps_decay_fraction)
            && self.tau > 0.0
            && self.tau <= 1.0;
        if !ok {
            return Err(Error::Config("dqn hyperparameters out of range".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("dqn hidden sizes must be positive".into()));
        }
        EpsilonSchedule::new(self.eps_start, self.eps_end, 0).map(|_| ())
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        let total = (self.episodes * self.max_steps) as f64;
        EpsilonSchedule {
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            decay_horizon: (self.eps_decay_fraction * total).round() as u64,
        }
    }
}

pub fn q_network(input_dim: usize, hidden: &[usize], rng_seed: u64) -> Result<Mlp> {
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(2);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(Activation::Linear);
    neural::mlp_init(&sizes, &acts, rng_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TdLoss {
    Mse,
    /// Smooth L1 with unit threshold.
    Huber,
}

/// Knobs of one TD step.
#[derive(Debug, Clone, Copy)]
pub struct UpdateParams {
    pub batch_size: usize,
    pub gamma: f64,
    pub loss: TdLoss,
    pub max_grad_norm: Option<f64>,
}

/// One gradient step on the TD error over a minibatch. Targets bootstrap
/// from `target`, or from `qnet` itself when `target` is `None`.
pub fn dqn_update<R: rand::Rng + ?Sized>(
    qnet: &mut Mlp,
    target: Option<&Mlp>,
    opt: &mut Optimizer,
    buffer: &ReplayBuffer<usize>,
    params: &UpdateParams,
    rng: &mut R,
) -> Result<f64> {
    let batch = buffer.sample_minibatch(params.batch_size, rng)?;
    let states = Matrix::from_rows(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
    let targets: Vec<f64> = if params.gamma == 0.0 {
        batch.iter().map(|t| t.reward).collect()
    } else {
        let next = Matrix::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
        let q_next = target.unwrap_or(qnet).forward_batch(&next)?;
        batch
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if t.terminal {
                    t.reward
                } else {
                    let row = q_next.row(j);
                    t.reward + params.gamma * row[ADD].max(row[REMOVE])
                }
            })
            .collect()
    };
    let tape = qnet.forward_tape(&states)?;
    let q = tape.output();
    let w = batch.len() as f64;
    let mut upstream = Matrix::zeros(q.rows, q.cols);
    let mut loss = 0.0;
    for (j, t) in batch.iter().enumerate() {
        let err = q.row(j)[t.action] - targets[j];
        let (l, g) = match params.loss {
            TdLoss::Mse => (err * err, 2.0 * err),
            TdLoss::Huber if err.abs() <= 1.0 => (0.5 * err * err, err),
            TdLoss::Huber => (err.abs() - 0.5, err.signum()),
        };
        loss += l;
        upstream.row_mut(j)[t.action] = g / w;
    }
    loss /= w;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("TD loss became {loss}")));
    }
    let (mut grads, _) = qnet.backward(&tape, &upstream)?;
    if let Some(max) = params.max_grad_norm {
        grads.clip_norm(max);
    }
    opt.step(qnet, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnEpisodeResult {
    pub episode: usize,
    pub steps_to_terminal: usize,
    pub final_blocks: usize,
    /// Reward of the last step, before any training offset.
    pub final_reward: f64,
    pub epsilon: f64,
    pub truncated: bool,
}

/// Outcome of a greedy block query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDecision {
    pub blocks: usize,
    /// The rollout never reached a terminal state.
    pub saturated: bool,
}

/// A trained bandwidth agent bound to its task.
#[derive(Debug)]
pub struct DqnModel {
    pub net: Mlp,
    pub task: DqnTask,
    cache: Mutex<HashMap<(i64, u64, u64), BlockDecision>>,
}

impl Clone for DqnModel {
    fn clone(&self) -> Self {
        DqnModel::new(self.net.clone(), self.task.clone())
    }
}

impl DqnModel {
    pub fn new(net: Mlp, task: DqnTask) -> Self {
        DqnModel {
            net,
            task,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Greedy rollout from `obs` for at most `max_steps` steps. Returns the
    /// final state, the steps taken and whether a terminal state was hit.
    pub fn greedy_rollout(&self, obs: DqnObservation, max_steps: usize) -> Result<(DqnObservation, usize, bool)> {
        let task = &self.task;
        let link = task.link(obs.x, obs.y);
        let mut cur = obs;
        for step in 1..=max_steps {
            let q = self.net.forward(&task.features(&cur))?;
            cur = dqn_env_step(&cur, argmax2(&q), task).next;
            if task.minimal_at(&link, cur.power, cur.blocks) {
                return Ok((cur, step, true));
            }
        }
        Ok((cur, max_steps, false))
    }

    /// Blocks the agent grants a user at `power` and `(x, y)`, starting from
    /// one block. Queries are memoized on the four-decimal power key and
    /// the position; a rollout that never terminates within `max_blocks`
    /// steps returns `max_blocks` with `saturated` set.
    pub fn allocate_blocks(&self, power: f64, x: f64, y: f64) -> Result<BlockDecision> {
        let (key, qp) = self.task.quantize_power(power);
        let cache_key = (key, x.to_bits(), y.to_bits());
        if let Some(d) = self.cache.lock().expect("cache lock").get(&cache_key) {
            return Ok(*d);
        }
        let decision = if qp <= 0.0 {
            BlockDecision {
                blocks: self.task.max_blocks,
                saturated: true,
            }
        } else {
            let start = DqnObservation {
                power: qp,
                blocks: 1,
                x,
                y,
            };
            if self.task.is_minimal_sufficient(&start) {
                BlockDecision {
                    blocks: 1,
                    saturated: false,
                }
            } else {
                let (end, _, hit) = self.greedy_rollout(start, self.task.max_blocks)?;
                if hit {
                    BlockDecision {
                        blocks: end.blocks,
                        saturated: false,
                    }
                } else {
                    BlockDecision {
                        blocks: self.task.max_blocks,
                        saturated: true,
                    }
                }
            }
        };
        self.cache.lock().expect("cache lock").insert(cache_key, decision);
        Ok(decision)
    }

    /// Versioned text: a header line, the task as TOML, a `---` line, then
    /// the network in the neural text format.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = toml::to_string(&self.task).map_err(|e| Error::Format(e.to_string()))?;
        write!(w, "uav-alloc-dqn 1\n{meta}---\n")?;
        neural::save_mlp(&self.net, w)
    }

    pub fn load<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != "uav-alloc-dqn 1" {
            return Err(Error::Format("not a uav-alloc DQN model".into()));
        }
        let mut meta = String::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("missing `---` separator".into()));
            }
            if line.trim_end() == "---" {
                break;
            }
            meta.push_str(&line);
        }
        let task: DqnTask = toml::from_str(&meta).map_err(|e| Error::Format(e.to_string()))?;
        task.validate()?;
        let net = neural::load_mlp(r)?;
        if net.input_dim() != task.input_dim() || net.output_dim() != 2 {
            return Err(Error::Format("network shape does not fit the stored task".into()));
        }
        Ok(DqnModel::new(net, task))
    }
}

/// Trains a fresh Q-network on `task`. Returns the model and one log entry
/// per episode.
pub fn dqn_train(task: &DqnTask, cfg: &DqnConfig, rng_seed: u64) -> Result<(DqnModel, Vec<DqnEpisodeResult>)> {
    task.validate()?;
    cfg.validate()?;
    let mut rng = seed::rng_for(rng_seed, seed::tag::DQN);
    let mut net = q_network(task.input_dim(), &cfg.hidden, seed::derive(rng_seed, seed::tag::DQN))?;
    let mut opt = Optimizer::new(cfg.optimizer, &net, cfg.lr);
    let mut target = (cfg.target_update_interval > 1).then(|| net.clone());
    let mut buffer = ReplayBuffer::new(cfg.buffer_size)?;
    let sched = cfg.schedule();
    let params = UpdateParams {
        batch_size: cfg.batch_size,
        gamma: cfg.gamma,
        loss: cfg.loss,
        max_grad_norm: cfg.max_grad_norm,
    };
    let gate = cfg.learning_starts.max(cfg.batch_size);
    let mut global_step: u64 = 0;
    let mut log = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        // A start that is already terminal would make an empty episode.
        let mut obs = dqn_env_reset(task, &mut rng);
        for _ in 0..16 {
            if !task.is_minimal_sufficient(&obs) {
                break;
            }
            obs = dqn_env_reset(task, &mut rng);
        }
        let mut result = DqnEpisodeResult {
            episode,
            steps_to_terminal: 0,
            final_blocks: obs.blocks,
            final_reward: 0.0,
            epsilon: epsilon_at(&sched, global_step),
            truncated: true,
        };
        for step in 1..=cfg.max_steps {
            let eps = epsilon_at(&sched, global_step);
            let state = task.features(&obs);
            let action = dqn_select_action(&net, &state, eps, &mut rng)?;
            let out = dqn_env_step(&obs, action, task);
            let next_potential = if out.done { 0.0 } else { task.potential(&out.next, cfg.shaping) };
            let shaped = next_potential - task.potential(&obs, cfg.shaping);
            buffer.push(Transition {
                state,
                action,
                reward: (out.reward - cfg.reward_offset).clamp(-cfg.reward_clip, cfg.reward_clip) + shaped,
                next_state: task.features(&out.next),
                terminal: out.done,
            })?;
            global_step += 1;
            if global_step % cfg.train_freq == 0 && buffer.len() >= gate && cfg.lr > 0.0 {
                dqn_update(&mut net, target.as_ref(), &mut opt, &buffer, &params, &mut rng)?;
            }
            if let Some(t) = target.as_mut() {
                if global_step % cfg.target_update_interval == 0 {
                    neural::soft_update(t, &net, cfg.tau)?;
                }
            }
            obs = out.next;
            result.steps_to_terminal = step;
            result.final_blocks = obs.blocks;
            result.final_reward = out.reward;
            result.epsilon = eps;
            if out.done {
                result.truncated = false;
                break;
            }
        }
        log.push(result);
    }
    Ok((DqnModel::new(net, task.clone()), log))
}
