//! Power agent.
//!
//! The state is every user's power and granted blocks. An action nudges all
//! powers at once; blocks then come from a [`BlockSource`] (the trained
//! bandwidth agent, or a fixed equal split for the power-only baseline) and
//! are trimmed to the bandwidth budget. The reward is the served count less
//! a penalty for overrunning the power budget.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{is_served, rate_for_blocks, LinkState};
use crate::dqn::DqnModel;
use crate::error::{invalid, Error, Result};
use crate::neural::{self, Activation, Matrix, Mlp, Optimizer, OptimizerKind};
use crate::rl::{NoiseKind, NoiseProcess, ReplayBuffer, Transition};
use crate::scenario::Scenario;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub train_freq: u64,
    pub learning_starts: usize,
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub noise_sigma: f64,
    pub noise: NoiseKind,
    /// Largest per-step power change of one user, as a fraction of `P_t`.
    pub delta_max_fraction: f64,
    /// Reward lost per `P_t` of power overrun.
    pub penalty_weight: f64,
    /// Multiplies rewards before they enter the replay buffer.
    pub reward_scale: f64,
    pub episodes: usize,
    /// Fixed episode length; there is no natural terminal state.
    pub steps_per_episode: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            buffer_size: 1_000_000,
            batch_size: 256,
            gamma: 0.99,
            train_freq: 1,
            learning_starts: 100,
            tau: 0.005,
            hidden: vec![64, 64],
            noise_sigma: 0.1,
            noise: NoiseKind::Gaussian,
            delta_max_fraction: 0.002,
            penalty_weight: 10.0,
            reward_scale: 1.0,
            episodes: 300,
            steps_per_episode: 200,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.actor_lr >= 0.0
            && self.critic_lr >= 0.0
            && self.buffer_size > 0
            && self.batch_size > 0
            && (0.0..=1.0).contains(&self.gamma)
            && self.train_freq > 0
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.noise_sigma >= 0.0
            && self.delta_max_fraction > 0.0
            && self.penalty_weight >= 0.0
            && self.reward_scale > 0.0
            && self.episodes > 0
            && self.steps_per_episode > 0;
        if !ok {
            return Err(Error::Config("ddpg hyperparameters out of range".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("ddpg hidden sizes must be positive".into()));
        }
        NoiseProcess::new(self.noise_sigma, self.noise).map(|_| ())
    }
}

/// Where per-user block requests come from.
#[derive(Debug, Clone, Copy)]
pub enum BlockSource<'a> {
    Dqn(&'a DqnModel),
    /// The same count for every user, whatever its power.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgObservation {
    pub powers: Vec<f64>,
    pub blocks: Vec<usize>,
}

/// Result of trimming requests to the bandwidth budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetOutcome {
    pub granted: Vec<usize>,
    pub admitted: Vec<bool>,
    pub n_s: usize,
}

/// Admits users cheapest first (ties by index) while the budget lasts.
/// Saturated users, whose requests would not serve them, are never
/// admitted. `n_s` counts admitted users.
pub fn apply_bandwidth_budget(requested: &[usize], saturated: &[bool], n_blocks: usize) -> Result<BudgetOutcome> {
    if requested.len() != saturated.len() {
        return Err(Error::ShapeMismatch {
            expected: requested.len(),
            got: saturated.len(),
        });
    }
    let mut order: Vec<usize> = (0..requested.len()).filter(|&i| !saturated[i]).collect();
    order.sort_by_key(|&i| (requested[i], i));
    let mut granted = vec![0; requested.len()];
    let mut admitted = vec![false; requested.len()];
    let mut used = 0;
    for i in order {
        if used + requested[i] > n_blocks {
            break;
        }
        used += requested[i];
        granted[i] = requested[i];
        admitted[i] = true;
    }
    let n_s = admitted.iter().filter(|&&a| a).count();
    Ok(BudgetOutcome { granted, admitted, n_s })
}

/// A fully evaluated point of the power environment.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgState {
    pub obs: DdpgObservation,
    pub served: Vec<bool>,
    pub n_s: usize,
    pub penalty: f64,
    pub reward: f64,
}

impl DdpgState {
    pub fn sum_power(&self) -> f64 {
        self.obs.powers.iter().sum()
    }

    pub fn sum_blocks(&self) -> usize {
        self.obs.blocks.iter().sum()
    }
}

/// The population environment. Channels use expected gains.
#[derive(Debug, Clone)]
pub struct DdpgEnv<'a> {
    pub scenario: &'a Scenario,
    pub source: BlockSource<'a>,
    links: Vec<LinkState>,
    pub p_max: f64,
    pub delta_max: f64,
    pub penalty_weight: f64,
}

impl<'a> DdpgEnv<'a> {
    pub fn new(scenario: &'a Scenario, source: BlockSource<'a>, cfg: &DdpgConfig) -> Result<Self> {
        scenario.validate()?;
        if let BlockSource::Dqn(m) = source {
            let t = &m.task;
            let same = t.uav_height_m == scenario.uav_height_m
                && t.constants == scenario.constants
                && t.block_hz == scenario.budgets.block_hz
                && scenario.users.iter().all(|u| u.rate_threshold_bps == t.rate_threshold_bps);
            if !same {
                return Err(invalid("the bandwidth model was trained for a different scenario"));
            }
        }
        let p_t = scenario.budgets.total_power;
        let links = scenario
            .users
            .iter()
            .map(|u| LinkState::expected_at(u.id, u.x, u.y, scenario.uav_height_m, &scenario.constants))
            .collect();
        Ok(DdpgEnv {
            scenario,
            source,
            links,
            p_max: p_t,
            delta_max: cfg.delta_max_fraction * p_t,
            penalty_weight: cfg.penalty_weight,
        })
    }

    pub fn n_users(&self) -> usize {
        self.links.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_users()
    }

    /// Blocks, service flags, served count and reward at a power vector.
    pub fn evaluate(&self, powers: Vec<f64>) -> Result<DdpgState> {
        let n = self.n_users();
        if powers.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: powers.len(),
            });
        }
        let s = self.scenario;
        let (requested, saturated): (Vec<usize>, Vec<bool>) = match self.source {
            BlockSource::Dqn(model) => {
                let mut req = Vec::with_capacity(n);
                let mut sat = Vec::with_capacity(n);
                for (u, &p) in s.users.iter().zip(&powers) {
                    let d = model.allocate_blocks(p, u.x, u.y)?;
                    req.push(d.blocks);
                    sat.push(d.saturated);
                }
                (req, sat)
            }
            BlockSource::Fixed(b) => (vec![b; n], vec![false; n]),
        };
        let budget = apply_bandwidth_budget(&requested, &saturated, s.budgets.n_blocks)?;
        let served: Vec<bool> = (0..n)
            .map(|i| {
                budget.granted[i] > 0 && {
                    let r = rate_for_blocks(&self.links[i], powers[i], budget.granted[i], s.budgets.block_hz, &s.constants);
                    is_served(r, s.users[i].rate_threshold_bps)
                }
            })
            .collect();
        let n_s = served.iter().filter(|&&x| x).count();
        let p_t = s.budgets.total_power;
        let overrun = (powers.iter().sum::<f64>() - p_t).max(0.0);
        let penalty = self.penalty_weight * overrun / p_t;
        Ok(DdpgState {
            obs: DdpgObservation {
                powers,
                blocks: budget.granted,
            },
            served,
            n_s,
            penalty,
            reward: n_s as f64 - penalty,
        })
    }

    /// Network input: powers by `P_t`, blocks by the block budget.
    pub fn features(&self, obs: &DdpgObservation) -> Vec<f64> {
        let p_t = self.scenario.budgets.total_power;
        let nb = self.scenario.budgets.n_blocks as f64;
        obs.powers
            .iter()
            .map(|p| p / p_t)
            .chain(obs.blocks.iter().map(|&b| b as f64 / nb))
            .collect()
    }
}

/// Equal power split, blocks from the source trimmed to the budget.
pub fn ddpg_env_reset(env: &DdpgEnv) -> Result<DdpgState> {
    let n = env.n_users();
    env.evaluate(vec![env.scenario.budgets.total_power / n as f64; n])
}

/// Applies `action` (each component in `[−1, 1]`) as a power change of at
/// most `delta_max` per user.
pub fn ddpg_env_step(env: &DdpgEnv, obs: &DdpgObservation, action: &[f64]) -> Result<DdpgState> {
    if action.len() != obs.powers.len() {
        return Err(Error::ShapeMismatch {
            expected: obs.powers.len(),
            got: action.len(),
        });
    }
    let powers = obs
        .powers
        .iter()
        .zip(action)
        .map(|(p, a)| (p + a.clamp(-1.0, 1.0) * env.delta_max).clamp(0.0, env.p_max))
        .collect();
    env.evaluate(powers)
}

/// Online and target copies of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
}

impl ActorCritic {
    /// Actor `2N → hidden → N` with a tanh head; critic `3N → hidden → 1`.
    pub fn new(n_users: usize, hidden: &[usize], rng_seed: u64) -> Result<Self> {
        let build = |n_in: usize, n_out: usize, head: Activation, salt: u64| {
            let mut sizes = vec![n_in];
            sizes.extend_from_slice(hidden);
            sizes.push(n_out);
            let mut acts = vec![Activation::Relu; hidden.len()];
            acts.push(head);
            neural::mlp_init(&sizes, &acts, seed::derive(rng_seed, salt))
        };
        let actor = build(2 * n_users, n_users, Activation::Tanh, 1)?;
        let critic = build(3 * n_users, 1, Activation::Linear, 2)?;
        Ok(ActorCritic {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn n_users(&self) -> usize {
        self.actor.output_dim()
    }

    /// Writes the four networks after a `uav-alloc-ddpg 1` header.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "uav-alloc-ddpg 1")?;
        for net in [&self.actor, &self.critic, &self.actor_target, &self.critic_target] {
            neural::save_mlp(net, &mut w)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != "uav-alloc-ddpg 1" {
            return Err(Error::Format("not a uav-alloc DDPG model".into()));
        }
        let actor = neural::load_mlp(&mut r)?;
        let critic = neural::load_mlp(&mut r)?;
        let actor_target = neural::load_mlp(&mut r)?;
        let critic_target = neural::load_mlp(&mut r)?;
        let n = actor.output_dim();
        let fits = actor.input_dim() == 2 * n
            && critic.input_dim() == 3 * n
            && critic.output_dim() == 1
            && actor_target.input_dim() == actor.input_dim()
            && actor_target.output_dim() == n
            && critic_target.input_dim() == critic.input_dim()
            && critic_target.output_dim() == 1;
        if !fits {
            return Err(Error::Format("actor and critic shapes do not agree".into()));
        }
        Ok(ActorCritic {
            actor,
            critic,
            actor_target,
            critic_target,
        })
    }
}

/// Actor output plus exploration noise, clamped to `[−1, 1]`.
pub fn ddpg_select_action<R: rand::Rng + ?Sized>(
    ac: &ActorCritic,
    features: &[f64],
    noise: &mut NoiseProcess,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = ac.actor.forward(features)?;
    let n = noise.sample(a.len(), rng);
    for (x, e) in a.iter_mut().zip(n) {
        *x = (*x + e).clamp(-1.0, 1.0);
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy)]
pub struct DdpgUpdateParams {
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
}

/// One critic step, one actor step and a soft refresh of both targets.
/// Returns the critic loss and the mean `Q(s, μ(s))` before the actor step.
pub fn ddpg_update<R: rand::Rng + ?Sized>(
    ac: &mut ActorCritic,
    actor_opt: &mut Optimizer,
    critic_opt: &mut Optimizer,
    buffer: &ReplayBuffer<Vec<f64>>,
    params: &DdpgUpdateParams,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let batch = buffer.sample_minibatch(params.batch_size, rng)?;
    let w = batch.len() as f64;
    let states = Matrix::from_rows(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
    let actions = Matrix::from_rows(&batch.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?;

    let targets: Vec<f64> = if params.gamma == 0.0 {
        batch.iter().map(|t| t.reward).collect()
    } else {
        let next = Matrix::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
        let next_actions = ac.actor_target.forward_batch(&next)?;
        let q_next = ac.critic_target.forward_batch(&next.hcat(&next_actions)?)?;
        batch
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if t.terminal {
                    t.reward
                } else {
                    t.reward + params.gamma * q_next.row(j)[0]
                }
            })
            .collect()
    };

    let tape = ac.critic.forward_tape(&states.hcat(&actions)?)?;
    let q = tape.output();
    let mut upstream = Matrix::zeros(q.rows, 1);
    let mut critic_loss = 0.0;
    for (j, y) in targets.iter().enumerate() {
        let err = q.row(j)[0] - y;
        critic_loss += err * err;
        upstream.row_mut(j)[0] = 2.0 * err / w;
    }
    critic_loss /= w;
    if !critic_loss.is_finite() {
        return Err(Error::Divergence(format!("critic loss became {critic_loss}")));
    }
    let (grads, _) = ac.critic.backward(&tape, &upstream)?;
    critic_opt.step(&mut ac.critic, &grads)?;

    // Ascend Q(s, μ(s)): push −1/W through the critic to the action inputs,
    // then through the actor.
    let actor_tape = ac.actor.forward_tape(&states)?;
    let mu = actor_tape.output();
    let q_tape = ac.critic.forward_tape(&states.hcat(mu)?)?;
    let objective = q_tape.output().data.iter().sum::<f64>() / w;
    let mut up = Matrix::zeros(q_tape.output().rows, 1);
    up.data.iter_mut().for_each(|g| *g = -1.0 / w);
    let (_, d_input) = ac.critic.backward(&q_tape, &up)?;
    let d_action = d_input.columns(states.cols, mu.cols);
    let (actor_grads, _) = ac.actor.backward(&actor_tape, &d_action)?;
    actor_opt.step(&mut ac.actor, &actor_grads)?;

    neural::soft_update(&mut ac.critic_target, &ac.critic, params.tau)?;
    neural::soft_update(&mut ac.actor_target, &ac.actor, params.tau)?;
    Ok((critic_loss, objective))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgStepLog {
    pub episode: usize,
    pub step: usize,
    pub n_s: usize,
    pub sum_power: f64,
    pub sum_blocks: usize,
    pub penalty: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgEpisodeLog {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub final_n_s: usize,
    /// Most users served by any power-feasible state of the episode.
    pub best_feasible_n_s: usize,
    pub mean_critic_loss: f64,
    pub updates: usize,
}

#[derive(Debug, Clone)]
pub struct DdpgTraining {
    pub model: ActorCritic,
    pub steps: Vec<DdpgStepLog>,
    pub episodes: Vec<DdpgEpisodeLog>,
}

/// Whether the total power stays within budget, up to rounding.
pub fn power_feasible(state: &DdpgState, total_power: f64) -> bool {
    state.sum_power() <= total_power * (1.0 + 1e-9)
}

/// Trains actor and critic on `env`. Updates start once the buffer holds
/// `max(learning_starts, batch_size)` transitions and run every
/// `train_freq` steps. Episode cuts are time limits, so every transition
/// bootstraps.
pub fn ddpg_train(env: &DdpgEnv, cfg: &DdpgConfig, rng_seed: u64, tag: u64) -> Result<DdpgTraining> {
    cfg.validate()?;
    let n = env.n_users();
    let mut rng = seed::rng_for(rng_seed, tag);
    let mut ac = ActorCritic::new(n, &cfg.hidden, seed::derive(rng_seed, tag))?;
    let mut actor_opt = Optimizer::new(OptimizerKind::Adam, &ac.actor, cfg.actor_lr);
    let mut critic_opt = Optimizer::new(OptimizerKind::Adam, &ac.critic, cfg.critic_lr);
    let mut noise = NoiseProcess::new(cfg.noise_sigma, cfg.noise)?;
    let mut buffer: ReplayBuffer<Vec<f64>> = ReplayBuffer::new(cfg.buffer_size)?;
    let params = DdpgUpdateParams {
        batch_size: cfg.batch_size,
        gamma: cfg.gamma,
        tau: cfg.tau,
    };
    let gate = cfg.learning_starts.max(cfg.batch_size);
    let p_t = env.scenario.budgets.total_power;
    let start = ddpg_env_reset(env)?;
    let mut global_step: u64 = 0;
    let mut steps = Vec::with_capacity(cfg.episodes * cfg.steps_per_episode);
    let mut episodes = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        noise.reset();
        let mut state = start.clone();
        let mut cumulative = 0.0;
        let mut best = if power_feasible(&state, p_t) { state.n_s } else { 0 };
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        for step in 1..=cfg.steps_per_episode {
            let features = env.features(&state.obs);
            let action = ddpg_select_action(&ac, &features, &mut noise, &mut rng)?;
            let next = ddpg_env_step(env, &state.obs, &action)?;
            buffer.push(Transition {
                state: features,
                action,
                reward: next.reward * cfg.reward_scale,
                next_state: env.features(&next.obs),
                terminal: false,
            })?;
            global_step += 1;
            if global_step % cfg.train_freq == 0 && buffer.len() >= gate {
                let (loss, _) = ddpg_update(&mut ac, &mut actor_opt, &mut critic_opt, &buffer, &params, &mut rng)?;
                loss_sum += loss;
                updates += 1;
            }
            cumulative += next.reward;
            if power_feasible(&next, p_t) {
                best = best.max(next.n_s);
            }
            steps.push(DdpgStepLog {
                episode,
                step,
                n_s: next.n_s,
                sum_power: next.sum_power(),
                sum_blocks: next.sum_blocks(),
                penalty: next.penalty,
                reward: next.reward,
            });
            state = next;
        }
        episodes.push(DdpgEpisodeLog {
            episode,
            cumulative_reward: cumulative,
            final_n_s: state.n_s,
            best_feasible_n_s: best,
            mean_critic_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            updates,
        });
    }
    Ok(DdpgTraining {
        model: ac,
        steps,
        episodes,
    })
}

/// Noise-free rollout from the reset state; the reset state comes first.
pub fn greedy_rollout(env: &DdpgEnv, ac: &ActorCritic, steps: usize) -> Result<Vec<DdpgState>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = ddpg_env_reset(env)?;
    for _ in 0..steps {
        let a = ac.actor.forward(&env.features(&state.obs))?;
        let next = ddpg_env_step(env, &state.obs, &a)?;
        out.push(std::mem::replace(&mut state, next));
    }
    out.push(state);
    Ok(out)
}

/// First index from which every trailing-window mean stays within
/// `rel_tol` of the final window's mean. `None` for a series shorter than
/// the window.
pub fn convergence_index(values: &[f64], window: usize, rel_tol: f64) -> Option<usize> {
    if window == 0 || values.len() < window {
        return None;
    }
    let means: Vec<f64> = values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    let last = *means.last().expect("at least one window");
    let tol = rel_tol * last.abs().max(1e-12);
    let mut first = means.len() - 1;
    for (i, m) in means.iter().enumerate().rev() {
        if (m - last).abs() > tol {
            break;
        }
        first = i;
    }
    Some(first + window - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Budgets, EnvConstants, GroundUser};

    fn scenario(n: usize, p_t: f64, n_blocks: usize, thr: f64) -> Scenario {
        let users = (0..n)
            .map(|i| GroundUser {
                id: i,
                x: 20.0 * i as f64,
                y: 0.0,
                rate_threshold_bps: thr,
            })
            .collect();
        Scenario::new(
            200.0,
            200.0,
            users,
            EnvConstants::default(),
            Budgets::from_blocks(p_t, n_blocks, 1600.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn budget_admits_cheapest_first() {
        let b = apply_bandwidth_budget(&[300, 300, 300, 300], &[false; 4], 1000).unwrap();
        assert_eq!(b.granted, vec![300, 300, 300, 0]);
        assert_eq!(b.n_s, 3);
        let b = apply_bandwidth_budget(&[50, 10, 30], &[false; 3], 45).unwrap();
        assert_eq!(b.granted, vec![0, 10, 30]);
        let b = apply_bandwidth_budget(&[5, 5], &[false; 2], 100).unwrap();
        assert_eq!(b.n_s, 2);
        let b = apply_bandwidth_budget(&[101, 200], &[false; 2], 100).unwrap();
        assert_eq!((b.granted, b.n_s), (vec![0, 0], 0));
        let b = apply_bandwidth_budget(&[1, 1], &[true, false], 100).unwrap();
        assert_eq!((b.granted, b.n_s), (vec![0, 1], 1));
    }

    #[test]
    fn reset_is_equal_split() {
        let s = scenario(4, 1.0, 40, 1e6);
        let env = DdpgEnv::new(&s, BlockSource::Fixed(10), &DdpgConfig::default()).unwrap();
        let st = ddpg_env_reset(&env).unwrap();
        assert!(st.obs.powers.iter().all(|&p| p == 0.25));
        assert_eq!(st.sum_blocks(), 40);
        assert_eq!(st, ddpg_env_reset(&env).unwrap());
    }

    #[test]
    fn zero_action_keeps_powers() {
        let s = scenario(3, 1.0, 30, 1e6);
        let env = DdpgEnv::new(&s, BlockSource::Fixed(10), &DdpgConfig::default()).unwrap();
        let st = ddpg_env_reset(&env).unwrap();
        let next = ddpg_env_step(&env, &st.obs, &[0.0; 3]).unwrap();
        assert_eq!(next.obs.powers, st.obs.powers);
    }

    #[test]
    fn overrun_penalty() {
        let s = scenario(2, 1.0, 20, 1e6);
        let env = DdpgEnv::new(&s, BlockSource::Fixed(10), &DdpgConfig::default()).unwrap();
        let st = env.evaluate(vec![0.6, 0.6]).unwrap();
        assert!((st.penalty - 2.0).abs() < 1e-12);
        assert!((st.reward - (st.n_s as f64 - 2.0)).abs() < 1e-12);
        assert_eq!(env.evaluate(vec![0.5, 0.5]).unwrap().penalty, 0.0);
    }

    #[test]
    fn served_count_matches_direct_rates() {
        let s = scenario(3, 1e-3, 60, 1.5e5);
        let env = DdpgEnv::new(&s, BlockSource::Fixed(20), &DdpgConfig::default()).unwrap();
        let powers = vec![1e-4, 5e-7, 3e-4];
        let st = env.evaluate(powers.clone()).unwrap();
        let direct = (0..3)
            .filter(|&i| {
                let u = &s.users[i];
                let link = LinkState::expected_at(i, u.x, u.y, s.uav_height_m, &s.constants);
                rate_for_blocks(&link, powers[i], 20, 1600.0, &s.constants) >= 1.5e5
            })
            .count();
        assert_eq!(st.n_s, direct);
        assert!(st.n_s >= 1 && st.n_s < 3, "{}", st.n_s);
    }

    #[test]
    fn selected_actions_are_bounded() {
        let ac = ActorCritic::new(3, &[8], 4).unwrap();
        let mut rng = seed::rng(1);
        let f = vec![0.3; 6];
        let mut quiet = NoiseProcess::gaussian(0.0).unwrap();
        let a = ddpg_select_action(&ac, &f, &mut quiet, &mut rng).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, ddpg_select_action(&ac, &f, &mut quiet, &mut rng).unwrap());
        let mut loud = NoiseProcess::gaussian(100.0).unwrap();
        for _ in 0..50 {
            let a = ddpg_select_action(&ac, &f, &mut loud, &mut rng).unwrap();
            assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
            assert!(a.iter().any(|x| x.abs() == 1.0));
        }
    }

    fn filled_buffer(n: usize, reward: f64) -> ReplayBuffer<Vec<f64>> {
        let mut b = ReplayBuffer::new(100).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..40 {
            use rand::Rng as _;
            let s: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            b.push(Transition {
                next_state: s.clone(),
                state: s,
                action: a,
                reward,
                terminal: false,
            })
            .unwrap();
        }
        b
    }

    #[test]
    fn gamma_zero_regresses_on_reward() {
        let mut ac = ActorCritic::new(2, &[16], 9).unwrap();
        let mut a_opt = Optimizer::new(OptimizerKind::Adam, &ac.actor, 0.0);
        let mut c_opt = Optimizer::new(OptimizerKind::Adam, &ac.critic, 1e-2);
        let buffer = filled_buffer(2, 3.0);
        let p = DdpgUpdateParams {
            batch_size: 16,
            gamma: 0.0,
            tau: 0.005,
        };
        let mut rng = seed::rng(4);
        let first = ddpg_update(&mut ac, &mut a_opt, &mut c_opt, &buffer, &p, &mut rng).unwrap().0;
        let mut last = first;
        for _ in 0..2000 {
            last = ddpg_update(&mut ac, &mut a_opt, &mut c_opt, &buffer, &p, &mut rng).unwrap().0;
        }
        assert!(last < 1e-3 * first, "{first} -> {last}");
    }

    #[test]
    fn constant_critic_leaves_actor_alone() {
        let mut ac = ActorCritic::new(2, &[8], 2).unwrap();
        // A critic whose weights are all zero has zero action gradient.
        for l in &mut ac.critic.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let actor_before = ac.actor.clone();
        let mut a_opt = Optimizer::new(OptimizerKind::Adam, &ac.actor, 1e-2);
        let mut c_opt = Optimizer::new(OptimizerKind::Sgd, &ac.critic, 0.0);
        let buffer = filled_buffer(2, 1.0);
        let p = DdpgUpdateParams {
            batch_size: 8,
            gamma: 0.9,
            tau: 0.005,
        };
        ddpg_update(&mut ac, &mut a_opt, &mut c_opt, &buffer, &p, &mut seed::rng(1)).unwrap();
        assert_eq!(ac.actor, actor_before);
    }

    #[test]
    fn targets_track_by_tau() {
        let mut ac = ActorCritic::new(2, &[8], 5).unwrap();
        let before = ac.critic_target.clone();
        let mut a_opt = Optimizer::new(OptimizerKind::Adam, &ac.actor, 1e-3);
        let mut c_opt = Optimizer::new(OptimizerKind::Adam, &ac.critic, 1e-3);
        let buffer = filled_buffer(2, 1.0);
        let p = DdpgUpdateParams {
            batch_size: 8,
            gamma: 0.9,
            tau: 0.005,
        };
        ddpg_update(&mut ac, &mut a_opt, &mut c_opt, &buffer, &p, &mut seed::rng(1)).unwrap();
        let (t0, o, t1) = (&before.layers[0].weights, &ac.critic.layers[0].weights, &ac.critic_target.layers[0].weights);
        for i in 0..t0.len() {
            let want = t0[i] + 0.005 * (o[i] - t0[i]);
            assert!((t1[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn no_update_before_learning_starts() {
        let s = scenario(2, 1.0, 20, 1e6);
        let env = DdpgEnv::new(&s, BlockSource::Fixed(10), &DdpgConfig::default()).unwrap();
        let cfg = DdpgConfig {
            batch_size: 8,
            learning_starts: 100,
            episodes: 1,
            steps_per_episode: 99,
            ..DdpgConfig::default()
        };
        let t = ddpg_train(&env, &cfg, 1, seed::tag::DDPG).unwrap();
        assert_eq!(t.episodes[0].updates, 0);
        assert_eq!(t.model, ActorCritic::new(2, &cfg.hidden, seed::derive(1, seed::tag::DDPG)).unwrap());
        let cfg = DdpgConfig {
            steps_per_episode: 101,
            ..cfg
        };
        let t = ddpg_train(&env, &cfg, 1, seed::tag::DDPG).unwrap();
        assert_eq!(t.episodes[0].updates, 2);
    }

    #[test]
    fn model_round_trip() {
        let ac = ActorCritic::new(3, &[5, 4], 8).unwrap();
        let mut buf = Vec::new();
        ac.save(&mut buf).unwrap();
        assert_eq!(ActorCritic::load(buf.as_slice()).unwrap(), ac);
        assert!(ActorCritic::load(&b"uav-alloc-dqn 1\n"[..]).is_err());
    }

    #[test]
    fn convergence_index_finds_plateau() {
        let v = [0.0, 1.0, 2.0, 5.0, 5.0, 5.0, 5.0];
        assert_eq!(convergence_index(&v, 2, 0.01), Some(4));
        assert_eq!(convergence_index(&[1.0; 5], 2, 0.01), Some(1));
        assert_eq!(convergence_index(&[1.0], 2, 0.01), None);
    }
}
