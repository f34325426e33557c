//! Agent-side soft actor-critic pieces: twin critics with target copies,
//! the soft Bellman target and residual, the actor loss, the entropy
//! temperature and Polyak averaging. [`SacAgent`] wires them into a plain
//! SAC learner.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::check_dim;
use crate::numerics::{polyak, Adam, AdamConfig, Mlp};
use crate::policy::{ActionSource, Noise, SampleGrad, SquashedGaussianPolicy};
use crate::replay::Transition;
use crate::{Error, Result, Rng};

pub(crate) fn concat(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + action.len());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    x
}

/// Which per-transition signal a Bellman target bootstraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Reward,
    ConstraintCost,
}

impl Signal {
    pub fn of(self, t: &Transition) -> f64 {
        match self {
            Self::Reward => t.reward,
            Self::ConstraintCost => t.constraint_cost,
        }
    }
}

/// Two Q heads over `state ++ action` and their slow target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
}

impl TwinCritic {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, rng)?;
        let q2 = Mlp::new(&sizes, rng)?;
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            online: [q1, q2],
        })
    }

    pub fn from_heads(q1: Mlp, q2: Mlp) -> Result<Self> {
        check_dim("twin critic outputs", 1, q1.output_dim())?;
        if q1.sizes() != q2.sizes() {
            return Err(Error::Config("twin critic heads must share an architecture".into()));
        }
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            online: [q1, q2],
        })
    }

    pub fn q(&self, state: &[f64], action: &[f64]) -> Result<[f64; 2]> {
        let x = concat(state, action);
        Ok([self.online[0].forward(&x)?[0], self.online[1].forward(&x)?[0]])
    }

    pub fn min_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let [a, b] = self.q(state, action)?;
        Ok(a.min(b))
    }

    pub fn target_min_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let x = concat(state, action);
        Ok(self.target[0].forward(&x)?[0].min(self.target[1].forward(&x)?[0]))
    }

    pub fn update_targets(&mut self, tau: f64) {
        for h in 0..2 {
            polyak_update(&self.online[h], &mut self.target[h], tau);
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(online: &Mlp, target: &mut Mlp, tau: f64) {
    polyak(online.params(), target.params_mut(), tau);
}

/// Soft Bellman targets
/// `y = s + gamma (1 - terminated) (min Q_target(s', a') - alpha ln pi(a'|s'))`
/// with `a' ~ pi(.|s')` drawn from `noise` and `s` the chosen signal.
pub fn soft_target<P: ActionSource + ?Sized>(
    batch: &[Transition],
    signal: Signal,
    policy: &P,
    critic: &TwinCritic,
    alpha: f64,
    gamma: f64,
    noise: &Noise,
) -> Result<Vec<f64>> {
    check_dim("soft target noise", batch.len(), noise.rows())?;
    let mut y = Vec::with_capacity(batch.len());
    for (i, t) in batch.iter().enumerate() {
        let r = signal.of(t);
        let value = if t.terminated {
            r
        } else {
            let (a_next, log_prob) = policy.act(&t.next_state, noise.row(i))?;
            r + gamma * (critic.target_min_q(&t.next_state, &a_next)? - alpha * log_prob)
        };
        if !value.is_finite() {
            return Err(Error::Divergence { loss: "soft target" });
        }
        y.push(value);
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub value: f64,
    pub grads: [Vec<f64>; 2],
}

/// Mean over batch and both heads of `(Q - y)^2 / 2`. Gradients reach the
/// online heads only.
pub fn critic_loss(batch: &[Transition], critic: &TwinCritic, y: &[f64]) -> Result<CriticLoss> {
    check_dim("critic targets", batch.len(), y.len())?;
    let n = batch.len() as f64;
    let mut grads = [vec![0.0; critic.online[0].num_params()], vec![0.0; critic.online[1].num_params()]];
    let mut value = 0.0;
    for (t, &target) in batch.iter().zip(y) {
        let x = concat(&t.state, &t.action);
        for h in 0..2 {
            let tape = critic.online[h].forward_tape(&x)?;
            let err = tape.output()[0] - target;
            value += 0.25 * err * err / n;
            critic.online[h].backward(&tape, &[0.5 * err / n], &mut grads[h])?;
        }
    }
    Ok(CriticLoss { value, grads })
}

/// A critic seen from the actor: the batch-mean value of `(state, action)`
/// pairs and its derivative with respect to every action.
pub trait BatchCritic {
    fn mean_value_and_grad(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// Per-pair value and action-gradient of `min(Q1, Q2)`.
pub(crate) fn min_head_values(critic: &TwinCritic, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut values = Vec::with_capacity(states.len());
    let mut grads = Vec::with_capacity(states.len());
    let mut scratch = [vec![0.0; critic.online[0].num_params()], vec![0.0; critic.online[1].num_params()]];
    let state_dim = states.first().map_or(0, |s| s.len());
    for (s, a) in states.iter().zip(actions) {
        let x = concat(s, a);
        let t0 = critic.online[0].forward_tape(&x)?;
        let t1 = critic.online[1].forward_tape(&x)?;
        let (h, tape) = if t0.output()[0] <= t1.output()[0] { (0, t0) } else { (1, t1) };
        values.push(tape.output()[0]);
        let dx = critic.online[h].backward(&tape, &[1.0], &mut scratch[h])?;
        grads.push(dx[state_dim..].to_vec());
    }
    Ok((values, grads))
}

/// The smaller of the two online heads.
#[derive(Debug, Clone, Copy)]
pub struct MinTwin<'a>(pub &'a TwinCritic);

impl BatchCritic for MinTwin<'_> {
    fn mean_value_and_grad(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (values, mut grads) = min_head_values(self.0, states, actions)?;
        let n = values.len() as f64;
        for g in &mut grads {
            g.iter_mut().for_each(|x| *x /= n);
        }
        Ok((values.iter().sum::<f64>() / n, grads))
    }
}

/// Extra per-sample term added to an actor loss: given a state and the
/// pre-squash sample, returns its value and derivative with respect to the
/// pre-squash sample.
pub type SampleTerm<'a> = &'a dyn Fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>;

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// `mean[alpha ln pi(a|s) - Q(s, a) + extra(s, a)]` over reparameterised
/// samples `a ~ pi(.|s)`; gradients flow into the policy only.
pub fn actor_loss<C: BatchCritic + ?Sized>(
    states: &[&[f64]],
    policy: &SquashedGaussianPolicy,
    critic: &C,
    alpha: f64,
    noise: &Noise,
    extra: Option<SampleTerm<'_>>,
) -> Result<ActorLoss> {
    check_dim("actor noise", states.len(), noise.rows())?;
    let n = states.len() as f64;
    let mut tapes = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        tapes.push(policy.rsample(s, noise.row(i))?);
    }
    let actions: Vec<Vec<f64>> = tapes.iter().map(|t| t.sample.action.clone()).collect();
    let (q_mean, q_grads) = critic.mean_value_and_grad(states, &actions)?;

    let mut value = -q_mean;
    let mut grad = vec![0.0; policy.num_params()];
    let mut log_probs = Vec::with_capacity(states.len());
    for (i, tape) in tapes.iter().enumerate() {
        let lp = tape.sample.log_prob;
        log_probs.push(lp);
        value += alpha * lp / n;
        let d_action: Vec<f64> = q_grads[i].iter().map(|g| -g).collect();
        let extra_grad = match extra {
            Some(term) => {
                let (v, mut g) = term(states[i], &tape.sample.pre_squash)?;
                value += v / n;
                g.iter_mut().for_each(|x| *x /= n);
                Some(g)
            }
            None => None,
        };
        policy.backward(
            tape,
            SampleGrad {
                action: &d_action,
                log_prob: alpha / n,
                pre_squash: extra_grad.as_deref(),
            },
            &mut grad,
        )?;
    }
    Ok(ActorLoss { value, grad, log_probs })
}

/// Actor loss against the agent's twin critic.
pub fn base_policy_loss(
    states: &[&[f64]],
    policy: &SquashedGaussianPolicy,
    critic: &TwinCritic,
    alpha: f64,
    noise: &Noise,
) -> Result<ActorLoss> {
    actor_loss(states, policy, &MinTwin(critic), alpha, noise, None)
}

/// A learned temperature stored as its logarithm, driven toward a target by
/// Adam on `J = ln(value) * (measured - target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Temperature {
    pub log_value: f64,
    pub target: f64,
    opt: Adam,
}

/// Entropy temperature alpha with target entropy.
pub type EntropyTemp = Temperature;

impl Temperature {
    pub fn new(initial: f64, target: f64, learning_rate: f64) -> Result<Self> {
        if !(initial > 0.0) {
            return Err(Error::Config("temperatures must start positive".into()));
        }
        Ok(Self {
            log_value: initial.ln(),
            target,
            opt: Adam::new(1, AdamConfig::with_learning_rate(learning_rate)),
        })
    }

    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    pub fn step(&mut self, grad: f64, loss: &'static str) -> Result<()> {
        let mut p = [self.log_value];
        self.opt.step(&mut p, &[grad], loss)?;
        self.log_value = p[0];
        Ok(())
    }
}

/// `J(alpha) = ln(alpha) * mean(-ln pi - target_entropy)`; returns the value
/// and `dJ/d ln(alpha)`.
pub fn alpha_loss(log_probs: &[f64], temp: &EntropyTemp) -> (f64, f64) {
    let grad = log_probs.iter().map(|lp| -lp - temp.target).sum::<f64>() / log_probs.len() as f64;
    (temp.log_value * grad, grad)
}

/// Batch-level learning statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_alpha: f64,
    pub init_alpha: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            lr_alpha: 3e-4,
            init_alpha: 1.0,
            target_entropy: None,
        }
    }
}

/// Plain soft actor-critic: twin critics, tanh-Gaussian actor, learned alpha.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub policy: SquashedGaussianPolicy,
    pub critic: TwinCritic,
    pub temp: EntropyTemp,
    opt_q: [Adam; 2],
    opt_pi: Adam,
}

impl SacAgent {
    /// The policy is initialised before the critic from the same `rng`.
    pub fn new(state_dim: usize, low: &[f64], high: &[f64], config: SacConfig, rng: &mut Rng) -> Result<Self> {
        let policy = SquashedGaussianPolicy::new(state_dim, &config.hidden, low, high, rng)?;
        let critic = TwinCritic::new(state_dim, low.len(), &config.hidden, rng)?;
        let target = config.target_entropy.unwrap_or(-(low.len() as f64));
        let q_cfg = AdamConfig::with_learning_rate(config.lr_q);
        Ok(Self {
            temp: Temperature::new(config.init_alpha, target, config.lr_alpha)?,
            opt_q: [Adam::new(critic.online[0].num_params(), q_cfg), Adam::new(critic.online[1].num_params(), q_cfg)],
            opt_pi: Adam::new(policy.num_params(), AdamConfig::with_learning_rate(config.lr_pi)),
            policy,
            critic,
            config,
        })
    }

    /// One gradient step on each of critic, actor and alpha, then the target
    /// update. Draws three noise blocks from `rng` in that order.
    pub fn update(&mut self, batch: &[Transition], rng: &mut Rng) -> Result<SacStats> {
        let d = self.policy.action_dim();
        let n = batch.len();
        let alpha = self.temp.value();

        let noise = Noise::draw(rng, n, d);
        let y = soft_target(batch, Signal::Reward, &self.policy, &self.critic, alpha, self.config.gamma, &noise)?;
        let cl = critic_loss(batch, &self.critic, &y)?;
        for h in 0..2 {
            self.opt_q[h].step(self.critic.online[h].params_mut(), &cl.grads[h], "agent critic")?;
        }

        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let noise = Noise::draw(rng, n, d);
        let al = base_policy_loss(&states, &self.policy, &self.critic, alpha, &noise)?;
        self.opt_pi.step(self.policy.params_mut(), &al.grad, "agent actor")?;

        let noise = Noise::draw(rng, n, d);
        let log_probs = states
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(self.policy.sample_with_noise(s, noise.row(i))?.log_prob))
            .collect::<Result<Vec<f64>>>()?;
        let (alpha_value, alpha_grad) = alpha_loss(&log_probs, &self.temp);
        self.temp.step(alpha_grad, "alpha")?;

        self.critic.update_targets(self.config.tau);
        Ok(SacStats {
            critic_loss: cl.value,
            actor_loss: al.value,
            alpha_loss: alpha_value,
            alpha: self.temp.value(),
        })
    }
}
