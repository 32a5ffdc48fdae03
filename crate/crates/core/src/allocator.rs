//! Final allocations: constraint checking and the joint solver.

use std::fmt;

use serde::Serialize;

use crate::channel::{is_served, rate_for_blocks, LinkState};
use crate::ddpg::{greedy_rollout, ActorCritic, BlockSource, DdpgConfig, DdpgEnv};
use crate::dqn::DqnModel;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Constraints of the allocation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Constraint {
    /// Every user counted as served meets its rate.
    RateRequirement,
    /// Total power within budget.
    PowerBudget,
    /// Total blocks within budget.
    BandwidthBudget,
    /// Served count is a whole number of users.
    IntegerCount,
    PowerNonNegative,
    BlocksNonNegative,
}

impl Constraint {
    pub fn code(self) -> &'static str {
        match self {
            Constraint::RateRequirement => "C1",
            Constraint::PowerBudget => "C2",
            Constraint::BandwidthBudget => "C3",
            Constraint::IntegerCount => "C4",
            Constraint::PowerNonNegative => "C5",
            Constraint::BlocksNonNegative => "C6",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.constraint.code(), self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub powers: Vec<f64>,
    pub blocks: Vec<usize>,
    pub rates_bps: Vec<f64>,
    pub served: Vec<bool>,
    pub n_s: usize,
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl Allocation {
    pub fn sum_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn sum_blocks(&self) -> usize {
        self.blocks.iter().sum()
    }
}

/// Relative slack on the power budget, for sums of rounded shares.
pub const POWER_TOLERANCE: f64 = 1e-9;

/// Rates under expected gains, service flags and a constraint report.
/// A user is served when it holds blocks and meets its threshold.
pub fn evaluate_allocation(s: &Scenario, powers: &[f64], blocks: &[usize]) -> Result<Allocation> {
    let n = s.n_users();
    for len in [powers.len(), blocks.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, got: len });
        }
    }
    let mut violations = Vec::new();
    let mut rates = Vec::with_capacity(n);
    let mut served = Vec::with_capacity(n);
    for (i, u) in s.users.iter().enumerate() {
        let p = powers[i];
        if !(p >= 0.0 && p.is_finite()) {
            violations.push(Violation {
                constraint: Constraint::PowerNonNegative,
                detail: format!("user {i} has power {p}"),
            });
            rates.push(0.0);
            served.push(false);
            continue;
        }
        let link = LinkState::expected_at(i, u.x, u.y, s.uav_height_m, &s.constants);
        let r = rate_for_blocks(&link, p, blocks[i], s.budgets.block_hz, &s.constants);
        rates.push(r);
        served.push(blocks[i] > 0 && is_served(r, u.rate_threshold_bps));
    }
    let total_p: f64 = powers.iter().sum();
    let p_t = s.budgets.total_power;
    if total_p > p_t * (1.0 + POWER_TOLERANCE) {
        violations.push(Violation {
            constraint: Constraint::PowerBudget,
            detail: format!("total power {total_p} exceeds {p_t}"),
        });
    }
    let total_b: usize = blocks.iter().sum();
    if total_b > s.budgets.n_blocks {
        violations.push(Violation {
            constraint: Constraint::BandwidthBudget,
            detail: format!("{total_b} blocks exceed {}", s.budgets.n_blocks),
        });
    }
    let n_s = served.iter().filter(|&&x| x).count();
    Ok(Allocation {
        powers: powers.to_vec(),
        blocks: blocks.to_vec(),
        rates_bps: rates,
        served,
        n_s,
        feasible: violations.is_empty(),
        violations,
    })
}

/// Zero power and zero blocks everywhere; always feasible.
pub fn zero_allocation(s: &Scenario) -> Result<Allocation> {
    let n = s.n_users();
    evaluate_allocation(s, &vec![0.0; n], &vec![0; n])
}

/// Strictly better: more users served, then less total power.
pub fn better(a: &Allocation, b: &Allocation) -> bool {
    a.n_s > b.n_s || (a.n_s == b.n_s && a.sum_power() < b.sum_power())
}

#[derive(Debug, Clone)]
pub struct JointSolution {
    /// Best feasible visited state.
    pub best: Allocation,
    /// Where the last rollout ended, feasible or not.
    pub final_state: Allocation,
    /// Set when no visited state was feasible and `best` is the zero
    /// allocation.
    pub diagnostic: Option<String>,
}

/// Noise-free rollouts of the power policy with bandwidth from the DQN.
/// Every visited state, the start included, is a candidate.
pub fn solve_joint(
    s: &Scenario,
    dqn: &DqnModel,
    ac: &ActorCritic,
    cfg: &DdpgConfig,
    eval_episodes: usize,
) -> Result<JointSolution> {
    let env = DdpgEnv::new(s, BlockSource::Dqn(dqn), cfg)?;
    best_of_rollouts(s, &env, ac, cfg.steps_per_episode, eval_episodes)
}

pub(crate) fn best_of_rollouts(
    s: &Scenario,
    env: &DdpgEnv,
    ac: &ActorCritic,
    steps: usize,
    episodes: usize,
) -> Result<JointSolution> {
    let mut best: Option<Allocation> = None;
    let mut final_state = None;
    // The environment is deterministic, so repeated rollouts coincide;
    // they are kept for parity with stochastic channel modes.
    for _ in 0..episodes.max(1) {
        let states = greedy_rollout(env, ac, steps)?;
        for st in &states {
            let a = evaluate_allocation(s, &st.obs.powers, &st.obs.blocks)?;
            if a.feasible && best.as_ref().is_none_or(|b| better(&a, b)) {
                best = Some(a);
            }
        }
        let last = states.last().expect("rollout includes its start");
        final_state = Some(evaluate_allocation(s, &last.obs.powers, &last.obs.blocks)?);
    }
    let final_state = final_state.expect("at least one rollout");
    Ok(match best {
        Some(best) => JointSolution {
            best,
            final_state,
            diagnostic: None,
        },
        None => JointSolution {
            best: zero_allocation(s)?,
            final_state,
            diagnostic: Some("no visited state met the budgets".into()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Budgets, EnvConstants, GroundUser};

    fn scenario() -> Scenario {
        let users = (0..3)
            .map(|i| GroundUser {
                id: i,
                x: 50.0 * i as f64,
                y: 10.0,
                rate_threshold_bps: 1e5,
            })
            .collect();
        Scenario::new(
            200.0,
            200.0,
            users,
            EnvConstants::default(),
            Budgets::from_blocks(1e-3, 60, 1600.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_allocation_is_feasible() {
        let a = zero_allocation(&scenario()).unwrap();
        assert!(a.feasible);
        assert_eq!(a.n_s, 0);
    }

    #[test]
    fn power_overrun_names_c2() {
        let s = scenario();
        let p = 1.001e-3 / 3.0;
        let a = evaluate_allocation(&s, &[p; 3], &[20; 3]).unwrap();
        assert!(!a.feasible);
        assert_eq!(a.violations.len(), 1);
        assert_eq!(a.violations[0].constraint, Constraint::PowerBudget);
        assert!(a.violations[0].to_string().starts_with("C2"));
    }

    #[test]
    fn bandwidth_and_sign_violations() {
        let s = scenario();
        let a = evaluate_allocation(&s, &[1e-4; 3], &[30, 30, 1]).unwrap();
        assert_eq!(a.violations[0].constraint, Constraint::BandwidthBudget);
        let a = evaluate_allocation(&s, &[-1e-4, 1e-4, 1e-4], &[1; 3]).unwrap();
        assert_eq!(a.violations[0].constraint, Constraint::PowerNonNegative);
        assert!(evaluate_allocation(&s, &[0.0; 2], &[0; 3]).is_err());
    }

    #[test]
    fn served_matches_direct_rates() {
        let s = scenario();
        let powers = [3e-4, 1e-6, 3e-4];
        let blocks = [20, 20, 0];
        let a = evaluate_allocation(&s, &powers, &blocks).unwrap();
        for i in 0..3 {
            let u = &s.users[i];
            let link = LinkState::expected_at(i, u.x, u.y, 200.0, &s.constants);
            let r = rate_for_blocks(&link, powers[i], blocks[i], 1600.0, &s.constants);
            assert_eq!(a.rates_bps[i], r);
            assert_eq!(a.served[i], blocks[i] > 0 && r >= 1e5);
        }
        assert_eq!(a.served, vec![true, false, false]);
        assert_eq!(a, evaluate_allocation(&s, &powers, &blocks).unwrap());
    }
}
