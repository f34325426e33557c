//! Constrained environments emitting a task reward and a binary
//! constraint-violation signal on every step.

mod chain;
mod hazard;
mod pendulum;

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use chain::{ChainParams, RiskyChain};
pub use hazard::{HazardParams, HazardPoint2D};
pub use pendulum::{ConstrainedPendulum, PendulumParams};

use crate::error::check_dim;
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// 1.0 when the step violated the constraint, else 0.0.
    pub constraint_cost: f64,
    /// Entered a terminal state; the only flag that masks bootstrapping.
    pub terminated: bool,
    /// Hit the time limit.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// How several constraint predicates combine into one cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    /// Violating any single constraint fires the signal.
    #[default]
    Any,
    /// Only violating every constraint at once fires the signal.
    All,
}

impl FromStr for ConstraintMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(Self::Any),
            "all" => Ok(Self::All),
            other => Err(Error::Config(alloc::format!("unknown constraint mode `{other}`"))),
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Any => "any",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    HazardPoint2D,
    ConstrainedPendulum,
    RiskyChain,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::HazardPoint2D => "hazard_point2d",
            Self::ConstrainedPendulum => "constrained_pendulum",
            Self::RiskyChain => "risky_chain",
        }
    }

    pub fn default_horizon(self) -> usize {
        match self {
            Self::HazardPoint2D | Self::ConstrainedPendulum => 200,
            Self::RiskyChain => 20,
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hazard_point2d" => Ok(Self::HazardPoint2D),
            "constrained_pendulum" => Ok(Self::ConstrainedPendulum),
            "risky_chain" => Ok(Self::RiskyChain),
            other => Err(Error::Config(alloc::format!("unknown environment `{other}`"))),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub horizon: usize,
    pub gamma: f64,
    pub constraint_mode: ConstraintMode,
    pub hazard: HazardParams,
    pub pendulum: PendulumParams,
    pub chain: ChainParams,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            horizon: kind.default_horizon(),
            gamma: 0.99,
            constraint_mode: ConstraintMode::Any,
            hazard: HazardParams::default(),
            pendulum: PendulumParams::default(),
            chain: ChainParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".to_string()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(alloc::format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        match self.kind {
            EnvKind::HazardPoint2D => self.hazard.validate(),
            EnvKind::ConstrainedPendulum => self.pendulum.validate(),
            EnvKind::RiskyChain => self.chain.validate(),
        }
    }

    pub fn build(&self) -> Result<Env> {
        self.validate()?;
        let model = match self.kind {
            EnvKind::HazardPoint2D => Model::Hazard(HazardPoint2D::new(self.hazard.clone())),
            EnvKind::ConstrainedPendulum => Model::Pendulum(ConstrainedPendulum::new(self.pendulum.clone())),
            EnvKind::RiskyChain => Model::Chain(RiskyChain::new(self.chain.clone())),
        };
        Ok(Env {
            model,
            horizon: self.horizon,
            mode: self.constraint_mode,
            state: None,
            t: 0,
        })
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::new(EnvKind::HazardPoint2D)
    }
}

/// Dynamics of one environment family. `Env` adds episode bookkeeping.
pub(crate) trait Dynamics {
    fn state_dim(&self) -> usize;
    fn action_low(&self) -> &[f64];
    fn action_high(&self) -> &[f64];
    fn initial_state(&self, rng: &mut Rng) -> Vec<f64>;
    /// Next state, reward and whether the next state is terminal.
    fn transition(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> (Vec<f64>, f64, bool);
    /// One flag per active constraint, `true` when violated.
    fn violations(&self, state: &[f64], action: &[f64], next_state: &[f64], out: &mut Vec<bool>);
    fn state_bound(&self) -> f64;
    fn reward_range(&self) -> (f64, f64);
}

#[derive(Debug, Clone)]
enum Model {
    Hazard(HazardPoint2D),
    Pendulum(ConstrainedPendulum),
    Chain(RiskyChain),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            Model::Hazard($m) => $body,
            Model::Pendulum($m) => $body,
            Model::Chain($m) => $body,
        }
    };
}

/// An environment instance with its episode state.
#[derive(Debug, Clone)]
pub struct Env {
    model: Model,
    horizon: usize,
    mode: ConstraintMode,
    state: Option<Vec<f64>>,
    t: usize,
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match &self.model {
            Model::Hazard(_) => EnvKind::HazardPoint2D,
            Model::Pendulum(_) => EnvKind::ConstrainedPendulum,
            Model::Chain(_) => EnvKind::RiskyChain,
        }
    }

    pub fn state_dim(&self) -> usize {
        dispatch!(&self.model, m => Dynamics::state_dim(m))
    }

    pub fn action_dim(&self) -> usize {
        self.action_low().len()
    }

    pub fn action_low(&self) -> &[f64] {
        dispatch!(&self.model, m => Dynamics::action_low(m))
    }

    pub fn action_high(&self) -> &[f64] {
        dispatch!(&self.model, m => Dynamics::action_high(m))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Upper bound on the Euclidean norm of any state.
    pub fn state_bound(&self) -> f64 {
        dispatch!(&self.model, m => Dynamics::state_bound(m))
    }

    /// Closed interval containing every per-step reward.
    pub fn reward_range(&self) -> (f64, f64) {
        dispatch!(&self.model, m => Dynamics::reward_range(m))
    }

    pub fn state(&self) -> Option<&[f64]> {
        self.state.as_deref()
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn as_chain(&self) -> Option<&RiskyChain> {
        match &self.model {
            Model::Chain(c) => Some(c),
            _ => None,
        }
    }

    pub fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        let s = dispatch!(&self.model, m => Dynamics::initial_state(m, rng));
        self.state = Some(s.clone());
        self.t = 0;
        s
    }

    pub fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepResult> {
        let state = self.state.take().ok_or(Error::EpisodeFinished)?;
        check_dim("env action", self.action_dim(), action.len())?;
        let (next_state, reward, terminated) = dispatch!(&self.model, m => Dynamics::transition(m, &state, action, rng));
        let constraint_cost = self.constraint_violated(&state, action, &next_state);
        self.t += 1;
        let truncated = !terminated && self.t >= self.horizon;
        if !(terminated || truncated) {
            self.state = Some(next_state.clone());
        }
        Ok(StepResult {
            next_state,
            reward,
            constraint_cost,
            terminated,
            truncated,
        })
    }

    /// The constraint signal for one transition: 1.0 or 0.0.
    pub fn constraint_violated(&self, state: &[f64], action: &[f64], next_state: &[f64]) -> f64 {
        let mut flags = Vec::new();
        dispatch!(&self.model, m => Dynamics::violations(m, state, action, next_state, &mut flags));
        let fired = match self.mode {
            ConstraintMode::Any => flags.iter().any(|&f| f),
            ConstraintMode::All => !flags.is_empty() && flags.iter().all(|&f| f),
        };
        if fired {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Actor, UniformActor};

    fn rollout(env: &mut Env, seed: u64, steps: usize) -> Vec<StepResult> {
        let mut rng = Rng::new(seed);
        let actor = UniformActor {
            low: env.action_low().to_vec(),
            high: env.action_high().to_vec(),
        };
        let mut out = Vec::new();
        let mut s = env.reset(&mut rng);
        for _ in 0..steps {
            let a = actor.select(&s, &mut rng).unwrap();
            let r = env.step(&a, &mut rng).unwrap();
            s = if r.done() { env.reset(&mut rng) } else { r.next_state.clone() };
            out.push(r);
        }
        out
    }

    #[test]
    fn trajectories_are_bounded_binary_and_reproducible() {
        for kind in [EnvKind::HazardPoint2D, EnvKind::ConstrainedPendulum, EnvKind::RiskyChain] {
            let mut env = EnvConfig::new(kind).build().unwrap();
            let a = rollout(&mut env, 3, 3000);
            let b = rollout(&mut env, 3, 3000);
            assert_eq!(a, b, "{kind}");
            let (lo, hi) = env.reward_range();
            for r in &a {
                assert!(r.constraint_cost == 0.0 || r.constraint_cost == 1.0);
                assert!(r.reward >= lo && r.reward <= hi, "{kind}: {}", r.reward);
                let norm = r.next_state.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm <= env.state_bound() + 1e-12, "{kind}: {norm}");
            }
        }
    }

    #[test]
    fn step_after_termination_is_usage_error() {
        let mut env = EnvConfig::new(EnvKind::RiskyChain).build().unwrap();
        let mut rng = Rng::new(0);
        assert_eq!(env.step(&[0.5], &mut rng), Err(Error::EpisodeFinished));
        env.reset(&mut rng);
        loop {
            let r = env.step(&[-0.5], &mut rng).unwrap();
            if r.done() {
                assert!(r.truncated && !r.terminated);
                break;
            }
        }
        assert_eq!(env.step(&[0.5], &mut rng), Err(Error::EpisodeFinished));
    }

    #[test]
    fn horizon_truncates() {
        let mut cfg = EnvConfig::new(EnvKind::ConstrainedPendulum);
        cfg.horizon = 7;
        let mut env = cfg.build().unwrap();
        let mut rng = Rng::new(1);
        env.reset(&mut rng);
        for t in 1..=7 {
            let r = env.step(&[0.0], &mut rng).unwrap();
            assert_eq!(r.truncated, t == 7);
            assert!(!r.terminated);
        }
    }

    #[test]
    fn validation() {
        let mut cfg = EnvConfig::new(EnvKind::HazardPoint2D);
        cfg.gamma = 1.5;
        assert!(cfg.build().is_err());
        cfg.gamma = 1.0;
        cfg.horizon = 0;
        assert!(cfg.build().is_err());
    }

    #[test]
    fn names_round_trip() {
        for kind in [EnvKind::HazardPoint2D, EnvKind::ConstrainedPendulum, EnvKind::RiskyChain] {
            assert_eq!(kind.name().parse::<EnvKind>().unwrap(), kind);
        }
        assert!("walker".parse::<EnvKind>().is_err());
        assert_eq!("all".parse::<ConstraintMode>().unwrap(), ConstraintMode::All);
    }
}
