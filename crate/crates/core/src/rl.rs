//! Replay storage, minibatch sampling and exploration schedules shared by
//! both agents.

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Lets the buffer check action shapes: discrete actions have none.
pub trait ActionShape {
    fn dim(&self) -> Option<usize>;
}

impl ActionShape for usize {
    fn dim(&self) -> Option<usize> {
        None
    }
}

impl ActionShape for Vec<f64> {
    fn dim(&self) -> Option<usize> {
        Some(self.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<A> {
    pub state: Vec<f64>,
    pub action: A,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for genuine terminal states; time-limit cuts bootstrap.
    pub terminal: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<A> {
    capacity: usize,
    items: VecDeque<Transition<A>>,
    shape: Option<(usize, Option<usize>)>,
}

impl<A: ActionShape + Clone> ReplayBuffer<A> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::new(),
            shape: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<A>> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition<A>) -> Result<()> {
        if t.state.len() != t.next_state.len() {
            return Err(Error::ShapeMismatch {
                expected: t.state.len(),
                got: t.next_state.len(),
            });
        }
        if !t.reward.is_finite() {
            return Err(invalid("transition reward must be finite"));
        }
        let shape = (t.state.len(), t.action.dim());
        match self.shape {
            None => self.shape = Some(shape),
            Some((s, _)) if s != shape.0 => {
                return Err(Error::ShapeMismatch {
                    expected: s,
                    got: shape.0,
                })
            }
            Some((_, a)) if a != shape.1 => {
                return Err(Error::ShapeMismatch {
                    expected: a.unwrap_or(0),
                    got: shape.1.unwrap_or(0),
                })
            }
            _ => {}
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// `w` uniform draws with replacement. Fails with [`Error::NotReady`]
    /// when the buffer holds fewer than `w` transitions.
    pub fn sample_minibatch<R: rand::Rng + ?Sized>(&self, w: usize, rng: &mut R) -> Result<Vec<&Transition<A>>> {
        if w == 0 {
            return Err(invalid("minibatch size must be positive"));
        }
        if self.items.len() < w {
            return Err(Error::NotReady {
                need: w,
                have: self.items.len(),
            });
        }
        let n = self.items.len();
        Ok((0..w).map(|_| &self.items[rng.random_range(0..n)]).collect())
    }
}

/// Linear ε decay, clamped after the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_horizon: u64,
}

impl EpsilonSchedule {
    pub fn new(eps_start: f64, eps_end: f64, decay_horizon: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps_start) || !(0.0..=eps_start).contains(&eps_end) {
            return Err(invalid(format!(
                "need 1 >= eps_start >= eps_end >= 0, got {eps_start} and {eps_end}"
            )));
        }
        Ok(EpsilonSchedule {
            eps_start,
            eps_end,
            decay_horizon,
        })
    }
}

pub fn epsilon_at(sched: &EpsilonSchedule, step: u64) -> f64 {
    if step >= sched.decay_horizon {
        return sched.eps_end;
    }
    let frac = step as f64 / sched.decay_horizon as f64;
    sched.eps_start + frac * (sched.eps_end - sched.eps_start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Discretized Ornstein-Uhlenbeck with reversion rate `theta` per step.
    OrnsteinUhlenbeck { theta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcess {
    pub sigma: f64,
    pub kind: NoiseKind,
    state: Vec<f64>,
}

impl NoiseProcess {
    pub fn new(sigma: f64, kind: NoiseKind) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(invalid(format!("noise sigma must be >= 0, got {sigma}")));
        }
        if let NoiseKind::OrnsteinUhlenbeck { theta } = kind {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(invalid(format!("OU theta must lie in (0, 1], got {theta}")));
            }
        }
        Ok(NoiseProcess {
            sigma,
            kind,
            state: Vec::new(),
        })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(sigma, NoiseKind::Gaussian)
    }

    /// Restarts the OU state at zero; no-op for Gaussian noise.
    pub fn reset(&mut self) {
        self.state.clear();
    }

    pub fn sample<R: rand::Rng + ?Sized>(&mut self, dim: usize, rng: &mut R) -> Vec<f64> {
        if self.sigma == 0.0 {
            return vec![0.0; dim];
        }
        match self.kind {
            NoiseKind::Gaussian => (0..dim)
                .map(|_| self.sigma * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect(),
            NoiseKind::OrnsteinUhlenbeck { theta } => {
                if self.state.len() != dim {
                    self.state = vec![0.0; dim];
                }
                for x in &mut self.state {
                    let z: f64 = StandardNormal.sample(rng);
                    *x += -theta * *x + self.sigma * z;
                }
                self.state.clone()
            }
        }
    }
}

/// Free-function form of [`NoiseProcess::sample`].
pub fn noise_sample<R: rand::Rng + ?Sized>(n: &mut NoiseProcess, dim: usize, rng: &mut R) -> Vec<f64> {
    n.sample(dim, rng)
}

/// Σ γ^k r_k, the discounted return of a reward sequence.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn t(id: f64) -> Transition<usize> {
        Transition {
            state: vec![id],
            action: 0,
            reward: id,
            next_state: vec![id],
            terminal: false,
        }
    }

    #[test]
    fn ring_keeps_newest() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for i in 1..=3 {
            b.push(t(i as f64)).unwrap();
        }
        let kept: Vec<f64> = b.iter().map(|x| x.reward).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn empty_buffer_is_not_ready() {
        let b: ReplayBuffer<usize> = ReplayBuffer::new(4).unwrap();
        let mut rng = seed::rng(1);
        assert!(matches!(b.sample_minibatch(1, &mut rng), Err(Error::NotReady { .. })));
    }

    #[test]
    fn single_item_is_repeated() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(t(7.0)).unwrap();
        let mut rng = seed::rng(1);
        let batch = b.sample_minibatch(1, &mut rng).unwrap();
        assert_eq!(batch[0].reward, 7.0);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(t(i as f64)).unwrap();
        }
        let draw = |s| -> Vec<f64> {
            let mut rng = seed::rng(s);
            b.sample_minibatch(32, &mut rng).unwrap().iter().map(|x| x.reward).collect()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(t(1.0)).unwrap();
        let bad = Transition {
            state: vec![1.0, 2.0],
            action: 0,
            reward: 0.0,
            next_state: vec![1.0, 2.0],
            terminal: false,
        };
        assert!(b.push(bad).is_err());
        let mut c: ReplayBuffer<Vec<f64>> = ReplayBuffer::new(4).unwrap();
        let mk = |a: Vec<f64>| Transition {
            state: vec![0.0],
            action: a,
            reward: 0.0,
            next_state: vec![0.0],
            terminal: false,
        };
        c.push(mk(vec![0.0, 0.0])).unwrap();
        assert!(c.push(mk(vec![0.0])).is_err());
    }

    #[test]
    fn epsilon_schedule_points() {
        let s = EpsilonSchedule::new(1.0, 0.05, 1000).unwrap();
        assert_eq!(epsilon_at(&s, 0), 1.0);
        assert_eq!(epsilon_at(&s, 1000), 0.05);
        assert_eq!(epsilon_at(&s, 5000), 0.05);
        assert!((epsilon_at(&s, 500) - 0.525).abs() < 1e-15);
        assert!(EpsilonSchedule::new(0.1, 0.2, 10).is_err());
    }

    #[test]
    fn zero_sigma_is_silent() {
        let mut rng = seed::rng(2);
        let mut n = NoiseProcess::gaussian(0.0).unwrap();
        assert_eq!(n.sample(3, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn gaussian_noise_scale() {
        let mut rng = seed::rng(5);
        let mut n = NoiseProcess::gaussian(0.1).unwrap();
        let xs = n.sample(1_000_000, &mut rng);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.001);
    }

    #[test]
    fn ou_autocorrelation_decays_geometrically() {
        // Stationary AR(1) x' = (1-θ)x + σz has lag-k autocorrelation (1-θ)^k.
        let theta = 0.5;
        let mut rng = seed::rng(11);
        let mut n = NoiseProcess::new(1.0, NoiseKind::OrnsteinUhlenbeck { theta }).unwrap();
        let xs: Vec<f64> = (0..200_000).map(|_| n.sample(1, &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        for k in 1..=3 {
            let cov: f64 = xs.windows(k + 1).map(|w| (w[0] - mean) * (w[k] - mean)).sum();
            let rho = cov / var;
            assert!((rho - (1.0 - theta).powi(k as i32)).abs() < 0.02, "lag {k}: {rho}");
        }
    }

    #[test]
    fn discounting() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(discounted_return(&[2.0, 5.0], 0.0), 2.0);
    }
}
