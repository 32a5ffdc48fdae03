//! Air-to-ground channel.
//!
//! A link is LoS with probability `p_los(θ)` and NLoS otherwise. The LoS
//! power gain is Rician (non-central χ² with mean `μ` and Rice factor `K`),
//! the NLoS gain is exponential with mean `μ`. The effective SNR mixes the
//! two link SNRs by their probabilities and the rate is Shannon capacity over
//! the allocated bandwidth:
//!
//! ```text
//! p_los    = 1 / (1 + C·exp(−B·(θ·180/π − C)))
//! snr_los  = P·g·d^(−α_los)  / (b·σ²)
//! snr_nlos = P·k·d^(−α_nlos) / (b·σ²)
//! snr_eff  = p_los·snr_los + (1 − p_los)·snr_nlos
//! rate     = b·log2(1 + snr_eff)
//! ```

use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{invalid, Result};
use crate::scenario::{geometry_at, EnvConstants, Scenario};
use crate::seed;

/// How the small-scale fading gains of a link are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingMode {
    /// Both gains replaced by their common mean `μ`; deterministic.
    ExpectedGain,
    /// Gains drawn from their distributions with the given seed.
    Sampled(u64),
}

/// Probability of a line-of-sight link at elevation `theta` (radians).
pub fn los_probability(theta: f64, env_b: f64, env_c: f64) -> f64 {
    let degrees = theta.to_degrees();
    1.0 / (1.0 + env_c * (-env_b * (degrees - env_c)).exp())
}

/// Rician power gain with mean `mu`: `μ/(K+1)·|√K + z|²`, `z` complex normal
/// with unit total variance.
pub fn sample_gain_los<R: rand::Rng + ?Sized>(mu: f64, rice_k: f64, rng: &mut R) -> f64 {
    let zr: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    let zi: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    let re = rice_k.sqrt() + zr;
    mu / (rice_k + 1.0) * (re * re + zi * zi)
}

/// Rayleigh power gain: exponential with mean `mu`.
pub fn sample_gain_nlos<R: rand::Rng + ?Sized>(mu: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mu).expect("mean gain must be positive").sample(rng)
}

/// Everything needed to evaluate one user's link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub user: usize,
    pub distance: f64,
    pub elevation: f64,
    pub p_los: f64,
    pub gain_los: f64,
    pub gain_nlos: f64,
}

impl LinkState {
    /// Link to a ground point with both gains at their mean.
    pub fn expected_at(user: usize, x: f64, y: f64, height: f64, env: &EnvConstants) -> Self {
        let g = geometry_at(x, y, height);
        LinkState {
            user,
            distance: g.distance,
            elevation: g.elevation,
            p_los: los_probability(g.elevation, env.env_b, env.env_c),
            gain_los: env.mean_gain,
            gain_nlos: env.mean_gain,
        }
    }

    /// Replaces the mean gains by one Rician and one exponential draw.
    pub fn resample<R: rand::Rng + ?Sized>(mut self, env: &EnvConstants, rng: &mut R) -> Self {
        self.gain_los = sample_gain_los(env.mean_gain, env.rice_k, rng);
        self.gain_nlos = sample_gain_nlos(env.mean_gain, rng);
        self
    }
}

/// Links of every user in the scenario.
pub fn realize(scenario: &Scenario, mode: FadingMode) -> Vec<LinkState> {
    let env = &scenario.constants;
    let expected = scenario
        .users
        .iter()
        .map(|u| LinkState::expected_at(u.id, u.x, u.y, scenario.uav_height_m, env));
    match mode {
        FadingMode::ExpectedGain => expected.collect(),
        FadingMode::Sampled(s) => {
            let mut rng = seed::rng_for(s, seed::tag::FADING);
            expected.map(|l| l.resample(env, &mut rng)).collect()
        }
    }
}

/// Per-link SNRs `(snr_los, snr_nlos)` for power `p` over `b` Hz.
pub fn snr_components(p: f64, b: f64, link: &LinkState, env: &EnvConstants) -> Result<(f64, f64)> {
    if !(b > 0.0) {
        return Err(invalid(format!("SNR needs positive bandwidth, got {b} Hz")));
    }
    if !(p >= 0.0) {
        return Err(invalid(format!("negative transmit power {p}")));
    }
    let noise = b * env.noise_psd;
    let los = p * link.gain_los * link.distance.powf(-env.pathloss_los) / noise;
    let nlos = p * link.gain_nlos * link.distance.powf(-env.pathloss_nlos) / noise;
    Ok((los, nlos))
}

pub fn effective_snr(link: &LinkState, p: f64, b: f64, env: &EnvConstants) -> Result<f64> {
    let (los, nlos) = snr_components(p, b, link, env)?;
    Ok(link.p_los * los + (1.0 - link.p_los) * nlos)
}

/// Shannon rate in bit/s. Zero bandwidth (an unserved user) gives zero.
pub fn rate_bps(link: &LinkState, p: f64, b: f64, env: &EnvConstants) -> f64 {
    if b <= 0.0 || p <= 0.0 {
        return 0.0;
    }
    let snr = effective_snr(link, p, b, env).expect("positive bandwidth and power");
    b * (1.0 + snr).log2()
}

pub fn rate_for_blocks(link: &LinkState, p: f64, blocks: usize, block_hz: f64, env: &EnvConstants) -> f64 {
    rate_bps(link, p, blocks as f64 * block_hz, env)
}

/// Served iff the rate meets the requirement (inclusive).
pub fn is_served(rate: f64, threshold: f64) -> bool {
    rate >= threshold
}

/// Fewest blocks at which the link meets `threshold`, by linear scan over
/// `1..=max_blocks`. `None` when even `max_blocks` falls short.
///
/// The rate `n·w·log2(1 + S/n)` is increasing in `n`, so the first hit is
/// the minimal sufficient allocation.
pub fn minimal_blocks_scan(
    link: &LinkState,
    p: f64,
    threshold: f64,
    block_hz: f64,
    max_blocks: usize,
    env: &EnvConstants,
) -> Option<usize> {
    (1..=max_blocks).find(|&n| is_served(rate_for_blocks(link, p, n, block_hz, env), threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn centre_link(h: f64) -> LinkState {
        LinkState::expected_at(0, 0.0, 0.0, h, &EnvConstants::default())
    }

    #[test]
    fn los_probability_limits() {
        // Overhead UAV is almost surely LoS but not exactly: C·e^(−B(90−C)) ≈ 2.9e-4.
        assert!(rel(los_probability(FRAC_PI_2, 0.136, 11.95), 0.999_706_713_922_249_9) < 1e-9);
        assert!(rel(los_probability(1e-300, 0.136, 11.95), 0.016_207_653_459_802_42) < 1e-9);
        assert_eq!(los_probability(0.3, 0.136, 0.0), 1.0);
    }

    #[test]
    fn los_probability_increases_with_elevation() {
        let mut last = 0.0;
        for k in 1..=90 {
            let p = los_probability((k as f64).to_radians(), 0.136, 11.95);
            assert!(p > last && p < 1.0);
            last = p;
        }
    }

    #[test]
    fn zero_power_zero_snr() {
        let env = EnvConstants::default();
        assert_eq!(snr_components(0.0, 1.6e5, &centre_link(400.0), &env).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn snr_golden_value() {
        let env = EnvConstants::default();
        let (los, nlos) = snr_components(0.02, 1.6e5, &centre_link(400.0), &env).unwrap();
        assert!(rel(los, 195.3125) < 1e-12);
        assert!(rel(nlos, 0.488_281_25) < 1e-12);
    }

    #[test]
    fn snr_scales_inversely_with_bandwidth() {
        let env = EnvConstants::default();
        let link = centre_link(400.0);
        let (a, b) = snr_components(0.02, 1e5, &link, &env).unwrap();
        let (c, d) = snr_components(0.02, 2e5, &link, &env).unwrap();
        assert_eq!(a, 2.0 * c);
        assert_eq!(b, 2.0 * d);
    }

    #[test]
    fn zero_bandwidth_snr_is_an_error() {
        let env = EnvConstants::default();
        assert!(snr_components(0.02, 0.0, &centre_link(400.0), &env).is_err());
        assert!(effective_snr(&centre_link(400.0), 0.02, 0.0, &env).is_err());
    }

    #[test]
    fn effective_snr_mixing() {
        let env = EnvConstants::default();
        let mut link = centre_link(400.0);
        link.p_los = 1.0;
        let (los, nlos) = snr_components(0.02, 1.6e5, &link, &env).unwrap();
        assert_eq!(effective_snr(&link, 0.02, 1.6e5, &env).unwrap(), los);
        link.p_los = 0.0;
        assert_eq!(effective_snr(&link, 0.02, 1.6e5, &env).unwrap(), nlos);
        // 0.5·10 + 0.5·2 = 6, arranged through the gains.
        let scale = 1.6e5 * env.noise_psd;
        link.p_los = 0.5;
        link.gain_los = 10.0 * scale * link.distance.powf(env.pathloss_los);
        link.gain_nlos = 2.0 * scale * link.distance.powf(env.pathloss_nlos);
        assert!(rel(effective_snr(&link, 1.0, 1.6e5, &env).unwrap(), 6.0) < 1e-12);
    }

    #[test]
    fn rate_edge_cases() {
        let env = EnvConstants::default();
        let link = centre_link(400.0);
        assert_eq!(rate_bps(&link, 0.02, 0.0, &env), 0.0);
        assert_eq!(rate_bps(&link, 0.0, 1.6e5, &env), 0.0);
        // Pick a power that gives SNR_eff = 1 over 1 kHz.
        let unit = 1.0 / effective_snr(&link, 1.0, 1000.0, &env).unwrap();
        assert!(rel(rate_bps(&link, unit, 1000.0, &env), 1000.0) < 1e-12);
    }

    #[test]
    fn rate_increases_with_power() {
        let env = EnvConstants::default();
        let link = LinkState::expected_at(0, 120.0, -40.0, 400.0, &env);
        let mut last = 0.0;
        for k in 1..100 {
            let r = rate_bps(&link, k as f64 * 1e-3, 1.6e5, &env);
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn served_is_inclusive() {
        assert!(is_served(1e6, 1e6));
        assert!(!is_served(0.999e6, 1e6));
        assert!(is_served(1.2187e6, 1e6));
    }

    #[test]
    fn expected_gain_rate_is_bitwise_repeatable() {
        let env = EnvConstants::default();
        let link = LinkState::expected_at(0, 55.0, 13.0, 300.0, &env);
        let a = rate_bps(&link, 0.013, 4.8e4, &env);
        let b = rate_bps(&link, 0.013, 4.8e4, &env);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn minimal_blocks_centre_user() {
        // Cross-checked with a 50-digit scan: 79 blocks give 1.0055e6 bps, 78 fall short.
        let env = EnvConstants::default();
        let n = minimal_blocks_scan(&centre_link(400.0), 0.02, 1e6, 1600.0, 1000, &env);
        assert_eq!(n, Some(79));
        assert_eq!(minimal_blocks_scan(&centre_link(400.0), 0.0, 1e6, 1600.0, 1000, &env), None);
    }

    #[test]
    fn rician_with_zero_k_is_exponential() {
        // With K = 0 the Rician power reduces to μ·|z|², an exponential of mean μ.
        let mut rng = seed::rng(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_gain_los(0.5, 0.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let below_median = draws.iter().filter(|&&g| g < 0.5 * std::f64::consts::LN_2).count();
        assert!((mean - 0.5).abs() < 0.005);
        assert!((below_median as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn exponential_median_and_second_moment() {
        let mut rng = seed::rng(5);
        let n = 1_000_000;
        let mut below = 0usize;
        let mut m2 = 0.0;
        for _ in 0..n {
            let g = sample_gain_nlos(2.0, &mut rng);
            if g < 2.0 * std::f64::consts::LN_2 {
                below += 1;
            }
            m2 += g * g;
        }
        assert!((below as f64 / n as f64 - 0.5).abs() < 0.002);
        assert!(rel(m2 / n as f64, 8.0) < 0.03);
    }

    #[test]
    fn sampled_realization_is_seeded() {
        use crate::scenario::{generate_users, Budgets, Thresholds};
        let users = generate_users(5, 200.0, &Thresholds::Uniform(1e6), 1).unwrap();
        let s = Scenario::new(200.0, 400.0, users, EnvConstants::default(), Budgets::new(1.0, 1.6e6, 1600.0).unwrap())
            .unwrap();
        assert_eq!(realize(&s, FadingMode::Sampled(3)), realize(&s, FadingMode::Sampled(3)));
        assert_ne!(realize(&s, FadingMode::Sampled(3)), realize(&s, FadingMode::Sampled(4)));
        assert!(realize(&s, FadingMode::ExpectedGain).iter().all(|l| l.gain_los == 0.5 && l.gain_nlos == 0.5));
    }
}
