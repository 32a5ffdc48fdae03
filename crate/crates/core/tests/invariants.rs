//! Property tests for the invariants the components promise.

use proptest::prelude::*;
use uav_alloc::allocator::evaluate_allocation;
use uav_alloc::channel::{los_probability, rate_bps, LinkState};
use uav_alloc::ddpg::{apply_bandwidth_budget, ddpg_env_reset, ddpg_env_step, ActorCritic, BlockSource, DdpgConfig, DdpgEnv};
use uav_alloc::harness::{ExperimentConfig, Scale};
use uav_alloc::neural::{load_mlp, mlp_init, save_mlp, soft_update, Activation, Mlp};
use uav_alloc::rl::{ReplayBuffer, Transition};
use uav_alloc::scenario::EnvConstants;

fn flat(net: &Mlp) -> impl Iterator<Item = f64> + '_ {
    net.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied())
}

fn tr(k: usize) -> Transition<usize> {
    Transition {
        state: vec![k as f64],
        action: k % 2,
        reward: k as f64,
        next_state: vec![k as f64 + 1.0],
        terminal: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_keeps_the_newest_in_order(cap in 1usize..40, pushes in 0usize..120) {
        let mut b = ReplayBuffer::new(cap).unwrap();
        for k in 0..pushes {
            b.push(tr(k)).unwrap();
        }
        prop_assert_eq!(b.len(), pushes.min(cap));
        let kept: Vec<f64> = b.iter().map(|t| t.reward).collect();
        let want: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|k| k as f64).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn soft_update_is_a_convex_blend(seed_a in 0u64..1000, seed_b in 0u64..1000, tau in 0.001f64..=1.0) {
        let acts = [Activation::Relu, Activation::Linear];
        let online = mlp_init(&[3, 4, 2], &acts, seed_a).unwrap();
        let mut target = mlp_init(&[3, 4, 2], &acts, seed_b).unwrap();
        let before = target.clone();
        soft_update(&mut target, &online, tau).unwrap();
        for ((t, o), b) in flat(&target).zip(flat(&online)).zip(flat(&before)) {
            prop_assert!((t - (tau * o + (1.0 - tau) * b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn mlp_text_round_trip_is_exact(seed in 0u64..10_000, hidden in 1usize..9) {
        let net = mlp_init(&[2, hidden, 3], &[Activation::Tanh, Activation::Linear], seed).unwrap();
        let mut buf = Vec::new();
        save_mlp(&net, &mut buf).unwrap();
        prop_assert_eq!(load_mlp(&buf[..]).unwrap(), net);
    }

    #[test]
    fn budget_never_overdraws(req in prop::collection::vec(0usize..80, 1..12), cap in 0usize..300, sat_mask in any::<u16>()) {
        let sat: Vec<bool> = (0..req.len()).map(|i| sat_mask >> i & 1 == 1).collect();
        let out = apply_bandwidth_budget(&req, &sat, cap).unwrap();
        prop_assert!(out.granted.iter().sum::<usize>() <= cap);
        prop_assert_eq!(out.n_s, out.admitted.iter().filter(|a| **a).count());
        for i in 0..req.len() {
            if out.admitted[i] {
                prop_assert!(!sat[i]);
                prop_assert_eq!(out.granted[i], req[i]);
            } else {
                prop_assert_eq!(out.granted[i], 0);
            }
        }
    }

    #[test]
    fn los_probability_is_a_probability_rising_with_elevation(a in 0.0f64..1.5707, b in 0.0f64..1.5707) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (p_lo, p_hi) = (los_probability(lo, 0.136, 11.95), los_probability(hi, 0.136, 11.95));
        prop_assert!((0.0..=1.0).contains(&p_lo) && (0.0..=1.0).contains(&p_hi));
        prop_assert!(p_lo <= p_hi);
    }

    #[test]
    fn rate_grows_with_power_and_bandwidth(p in 1e-6f64..1.0, b in 1e3f64..1e6, x in -200.0f64..200.0) {
        let env = EnvConstants::default();
        let link = LinkState::expected_at(0, x, 0.0, 200.0, &env);
        let r = rate_bps(&link, p, b, &env);
        prop_assert!(r > 0.0);
        prop_assert!(rate_bps(&link, 2.0 * p, b, &env) >= r);
        prop_assert!(rate_bps(&link, p, 2.0 * b, &env) >= r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn power_steps_stay_in_bounds_and_states_are_consistent(
        layout in 0u64..50,
        actions in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 10), 1..6),
    ) {
        let cfg = ExperimentConfig::preset(Scale::Desk);
        let s = cfg.scenario.build(layout).unwrap();
        let ddpg = DdpgConfig::default();
        let env = DdpgEnv::new(&s, BlockSource::Fixed(s.budgets.n_blocks / s.n_users()), &ddpg).unwrap();
        let mut state = ddpg_env_reset(&env).unwrap();
        for a in &actions {
            let next = ddpg_env_step(&env, &state.obs, a).unwrap();
            for (i, (p, q)) in next.obs.powers.iter().zip(&state.obs.powers).enumerate() {
                prop_assert!((0.0..=env.p_max).contains(p), "user {i} power {p}");
                prop_assert!((p - q).abs() <= env.delta_max * (1.0 + 1e-12));
            }
            prop_assert!(next.sum_blocks() <= s.budgets.n_blocks);
            prop_assert_eq!(next.n_s, next.served.iter().filter(|x| **x).count());
            // The allocator agrees with the environment on who is served.
            let a = evaluate_allocation(&s, &next.obs.powers, &next.obs.blocks).unwrap();
            prop_assert_eq!(&a.served, &next.served);
            state = next;
        }
    }

    #[test]
    fn actor_critic_round_trip(n in 1usize..6, seed in 0u64..1000) {
        let ac = ActorCritic::new(n, &[8, 8], seed).unwrap();
        let mut buf = Vec::new();
        ac.save(&mut buf).unwrap();
        prop_assert_eq!(ActorCritic::load(&buf[..]).unwrap(), ac);
    }
}
