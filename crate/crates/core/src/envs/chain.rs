use alloc::vec;
use alloc::vec::Vec;

use super::Dynamics;
use crate::oracle::TabularMdp;
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    /// Probability that a step to the right slips into the pit.
    pub slip_prob: f64,
    pub goal_reward: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            slip_prob: 0.2,
            goal_reward: 1.0,
        }
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.slip_prob) || !self.goal_reward.is_finite() {
            return Err(Error::Config("slip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Seven discrete states observed one-hot: a corridor `0..=4` starting at
/// `0`, the goal `5` and an absorbing error pit `6`. The 1-D action is
/// thresholded at zero: non-negative moves right and risks slipping into the
/// pit, negative moves left safely.
#[derive(Debug, Clone)]
pub struct RiskyChain {
    params: ChainParams,
    low: [f64; 1],
    high: [f64; 1],
}

impl RiskyChain {
    pub const N_STATES: usize = 7;
    pub const GOAL: usize = 5;
    pub const PIT: usize = 6;
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;

    pub fn new(params: ChainParams) -> Self {
        Self {
            params,
            low: [-1.0],
            high: [1.0],
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn discrete_action(action: &[f64]) -> usize {
        if action[0] >= 0.0 {
            Self::RIGHT
        } else {
            Self::LEFT
        }
    }

    pub fn one_hot(index: usize) -> Vec<f64> {
        let mut v = vec![0.0; Self::N_STATES];
        v[index] = 1.0;
        v
    }

    pub fn index_of(state: &[f64]) -> usize {
        state.iter().position(|&x| x == 1.0).unwrap_or(0)
    }

    /// Outcomes `(next, probability, reward, cost)` of a discrete action.
    fn outcomes(&self, s: usize, a: usize) -> Vec<(usize, f64, f64, f64)> {
        if s == Self::GOAL || s == Self::PIT {
            return vec![(s, 1.0, 0.0, 0.0)];
        }
        if a == Self::LEFT {
            return vec![(s.saturating_sub(1), 1.0, 0.0, 0.0)];
        }
        let reward = if s + 1 == Self::GOAL { self.params.goal_reward } else { 0.0 };
        vec![(s + 1, 1.0 - self.params.slip_prob, reward, 0.0), (Self::PIT, self.params.slip_prob, 0.0, 1.0)]
    }

    /// The same process as an enumerable tabular MDP.
    pub fn tabular(&self, gamma: f64, horizon: usize) -> TabularMdp {
        let (n, m) = (Self::N_STATES, 2);
        let mut mdp = TabularMdp::new(n, m, gamma, horizon);
        for s in 0..n {
            for a in 0..m {
                for (next, p, r, c) in self.outcomes(s, a) {
                    mdp.add_outcome(s, a, next, p, r, c);
                }
            }
        }
        mdp.terminal[Self::GOAL] = true;
        mdp.terminal[Self::PIT] = true;
        mdp.error[Self::PIT] = true;
        mdp
    }
}

impl Dynamics for RiskyChain {
    fn state_dim(&self) -> usize {
        Self::N_STATES
    }

    fn action_low(&self) -> &[f64] {
        &self.low
    }

    fn action_high(&self) -> &[f64] {
        &self.high
    }

    fn initial_state(&self, _rng: &mut Rng) -> Vec<f64> {
        Self::one_hot(0)
    }

    fn transition(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> (Vec<f64>, f64, bool) {
        let u = rng.uniform();
        let outcomes = self.outcomes(Self::index_of(s), Self::discrete_action(a));
        let mut acc = 0.0;
        let mut chosen = outcomes[outcomes.len() - 1];
        for o in &outcomes {
            acc += o.1;
            if u < acc {
                chosen = *o;
                break;
            }
        }
        let next = chosen.0;
        (Self::one_hot(next), chosen.2, next == Self::GOAL || next == Self::PIT)
    }

    fn violations(&self, _s: &[f64], _a: &[f64], next: &[f64], out: &mut Vec<bool>) {
        out.push(Self::index_of(next) == Self::PIT);
    }

    fn state_bound(&self) -> f64 {
        1.0
    }

    fn reward_range(&self) -> (f64, f64) {
        let g = self.params.goal_reward;
        (g.min(0.0), g.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvKind};

    #[test]
    fn reset_is_state_zero() {
        let mut env = EnvConfig::new(EnvKind::RiskyChain).build().unwrap();
        assert_eq!(env.reset(&mut Rng::new(0)), RiskyChain::one_hot(0));
    }

    #[test]
    fn slip_frequency_matches_probability() {
        let mut env = EnvConfig::new(EnvKind::RiskyChain).build().unwrap();
        let mut rng = Rng::new(2024);
        env.reset(&mut rng);
        let n = 100_000;
        let mut slips = 0.0;
        for _ in 0..n {
            let r = env.step(&[1.0], &mut rng).unwrap();
            slips += r.constraint_cost;
            if r.done() {
                env.reset(&mut rng);
            }
        }
        let freq = slips / n as f64;
        assert!((freq - 0.2).abs() < 0.004, "{freq}");
    }

    #[test]
    fn tabular_rows_are_distributions() {
        let chain = RiskyChain::new(ChainParams::default());
        let mdp = chain.tabular(1.0, 20);
        mdp.validate().unwrap();
    }

    #[test]
    fn left_never_fails() {
        let mut env = EnvConfig::new(EnvKind::RiskyChain).build().unwrap();
        let mut rng = Rng::new(1);
        env.reset(&mut rng);
        for _ in 0..20 {
            let r = env.step(&[-0.3], &mut rng).unwrap();
            assert_eq!(r.constraint_cost, 0.0);
            assert_eq!(r.next_state, RiskyChain::one_hot(0));
        }
    }
}
