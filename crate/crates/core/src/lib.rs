//! Resource allocation for a single hovering UAV serving ground users.
//!
//! A DQN learns the smallest number of bandwidth blocks that serves one user
//! at a given power; a DDPG agent nudges every user's power and asks the DQN
//! how much bandwidth each one then needs, maximizing the number of users
//! whose Shannon rate meets its threshold within the power and bandwidth
//! budgets. Baselines and a brute-force oracle sit alongside for comparison.

pub mod allocator;
pub mod baselines;
pub mod channel;
pub mod ddpg;
pub mod dqn;
pub mod error;
pub mod harness;
pub mod neural;
pub mod rl;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/scenario.md")]
    mod scenario {}
    #[doc = include_str!("../../../book/src/bandwidth-agent.md")]
    mod bandwidth_agent {}
    #[doc = include_str!("../../../book/src/power-agent.md")]
    mod power_agent {}
    #[doc = include_str!("../../../book/src/allocation.md")]
    mod allocation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
