//! Comparison schemes and an exhaustive optimizer for small instances.

use crate::allocator::{best_of_rollouts, evaluate_allocation, Allocation, JointSolution};
use crate::channel::{minimal_blocks_scan, LinkState};
use crate::ddpg::{ddpg_env_reset, ddpg_train, BlockSource, DdpgConfig, DdpgEnv, DdpgTraining};
use crate::dqn::DqnModel;
use crate::error::{invalid, Error, Result};
use crate::scenario::Scenario;
use crate::seed;

/// Largest population the exhaustive search accepts.
pub const MAX_ORACLE_USERS: usize = 6;
/// Largest power grid the exhaustive search accepts.
pub const MAX_ORACLE_GRID: usize = 21;

fn equal_blocks(s: &Scenario) -> usize {
    s.budgets.n_blocks / s.n_users()
}

/// `P_t/N` power and `⌊n_blocks/N⌋` blocks for everyone.
pub fn equal_allocation(s: &Scenario) -> Result<Allocation> {
    let n = s.n_users();
    if n == 0 {
        return Err(invalid("no users"));
    }
    evaluate_allocation(s, &vec![s.budgets.total_power / n as f64; n], &vec![equal_blocks(s); n])
}

/// Equal power, blocks from the bandwidth agent trimmed to the budget.
pub fn dqn_only(s: &Scenario, dqn: &DqnModel) -> Result<Allocation> {
    let env = DdpgEnv::new(s, BlockSource::Dqn(dqn), &DdpgConfig::default())?;
    let st = ddpg_env_reset(&env)?;
    evaluate_allocation(s, &st.obs.powers, &st.obs.blocks)
}

/// Trains a power agent over fixed equal blocks and returns its best
/// feasible greedy state with the training record.
pub fn ddpg_only(s: &Scenario, cfg: &DdpgConfig, rng_seed: u64) -> Result<(JointSolution, DdpgTraining)> {
    let env = DdpgEnv::new(s, BlockSource::Fixed(equal_blocks(s)), cfg)?;
    let training = ddpg_train(&env, cfg, rng_seed, seed::tag::DDPG_ONLY)?;
    let sol = best_of_rollouts(s, &env, &training.model, cfg.steps_per_episode, 1)?;
    Ok((sol, training))
}

/// Exhaustive search over which users to serve and, for each, a power level
/// `k·P_t/(grid−1)`. Each served user takes the fewest blocks that serve it
/// at its level, from a linear scan. Maximizes the served count, then
/// minimizes total power.
pub fn brute_force(s: &Scenario, power_grid: usize, max_users: usize) -> Result<Allocation> {
    let n = s.n_users();
    if max_users > MAX_ORACLE_USERS || n > max_users {
        return Err(Error::TooLarge(format!(
            "{n} users, limit {}",
            max_users.min(MAX_ORACLE_USERS)
        )));
    }
    if !(2..=MAX_ORACLE_GRID).contains(&power_grid) {
        return Err(Error::TooLarge(format!("power grid {power_grid} outside 2..={MAX_ORACLE_GRID}")));
    }
    let top = power_grid - 1;
    let level = |k: usize| s.budgets.total_power * k as f64 / top as f64;
    // need[i][k]: blocks user i needs at level k, if any budget suffices.
    let need: Vec<Vec<Option<usize>>> = s
        .users
        .iter()
        .map(|u| {
            let link = LinkState::expected_at(u.id, u.x, u.y, s.uav_height_m, &s.constants);
            (0..=top)
                .map(|k| {
                    if k == 0 {
                        None
                    } else {
                        minimal_blocks_scan(
                            &link,
                            level(k),
                            u.rate_threshold_bps,
                            s.budgets.block_hz,
                            s.budgets.n_blocks,
                            &s.constants,
                        )
                    }
                })
                .collect()
        })
        .collect();

    let mut search = Search {
        need: &need,
        n_blocks: s.budgets.n_blocks,
        levels: vec![0; n],
        blocks: vec![0; n],
        best: None,
    };
    search.dfs(0, 0, 0, 0, top);
    let (_, _, levels, blocks) = search.best.expect("serving nobody is always a candidate");
    let powers: Vec<f64> = levels.iter().map(|&k| level(k)).collect();
    evaluate_allocation(s, &powers, &blocks)
}

struct Search<'a> {
    need: &'a [Vec<Option<usize>>],
    n_blocks: usize,
    levels: Vec<usize>,
    blocks: Vec<usize>,
    /// (served, total level, levels, blocks)
    best: Option<(usize, usize, Vec<usize>, Vec<usize>)>,
}

impl Search<'_> {
    fn dfs(&mut self, i: usize, served: usize, used_levels: usize, used_blocks: usize, top: usize) {
        let n = self.need.len();
        if let Some((bs, bl, _, _)) = &self.best {
            // Even serving everyone left cannot win.
            if served + (n - i) < *bs || (served + (n - i) == *bs && used_levels >= *bl) {
                return;
            }
        }
        if i == n {
            let better = match &self.best {
                None => true,
                Some((bs, bl, _, _)) => served > *bs || (served == *bs && used_levels < *bl),
            };
            if better {
                self.best = Some((served, used_levels, self.levels.clone(), self.blocks.clone()));
            }
            return;
        }
        // Cheapest levels first, so good incumbents appear early.
        for k in 1..=top - used_levels {
            if let Some(b) = self.need[i][k] {
                if used_blocks + b <= self.n_blocks {
                    self.levels[i] = k;
                    self.blocks[i] = b;
                    self.dfs(i + 1, served + 1, used_levels + k, used_blocks + b, top);
                }
            }
        }
        self.levels[i] = 0;
        self.blocks[i] = 0;
        self.dfs(i + 1, served, used_levels, used_blocks, top);
    }
}
