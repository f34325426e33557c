//! The training loop. Each gradient step samples one batch and, by default,
//! updates the adversary block (risk critic, adversary policy, beta, risk
//! targets) before the agent block (critic, policy with repulsion, alpha,
//! targets). Both blocks see the policies as they were at the start of the
//! step through frozen snapshots.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::adversary::{
    adversary_policy_loss, beta_loss, cons_critic_loss, quantile_critic_loss, BetaTemp, CvarCritic, MsdCritic, QuantileCritic, QuantileMean, Variant,
};
use crate::envs::{Env, EnvConfig};
use crate::numerics::{Adam, AdamConfig};
use crate::policy::{kl_estimate, Actor, Deterministic, Noise, SquashedGaussianPolicy, Stochastic};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{actor_loss, alpha_loss, critic_loss, soft_target, ActorLoss, BatchCritic, EntropyTemp, MinTwin, Signal, Temperature, TwinCritic};
use crate::{Error, Result, Rng};

/// Independent random streams of one run, all derived from its seed.
pub mod stream {
    pub const ENV: u64 = 0;
    pub const ACTION: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const AGENT: u64 = 3;
    pub const ADVERSARY: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const AGENT_INIT: u64 = 6;
    pub const ADVERSARY_INIT: u64 = 7;
    pub const METRICS: u64 = 8;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub variant: Variant,
    pub seed: u64,
    pub total_steps: usize,
    /// Uniformly random environment steps before any update.
    pub warmup_steps: usize,
    pub batch_size: usize,
    /// Gradient steps per update round.
    pub updates_per_step: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    pub tau: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_alpha: f64,
    pub lr_beta: f64,
    pub init_alpha: f64,
    pub init_beta: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    /// KL target for beta; defaults to 1 per action dimension.
    pub adversary_target: Option<f64>,
    /// Holds beta constant instead of learning it.
    pub beta_fixed: Option<f64>,
    pub hidden: Vec<usize>,
    pub n_quantiles: usize,
    pub huber_kappa: f64,
    pub lambda_msd: f64,
    pub lambda_cvar: f64,
    /// `+1` uses the mean-deviation value as written, `-1` negates it.
    pub risk_seeking_sign: f64,
    pub buffer_capacity: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub max_states_per_eval: usize,
    pub adversary_first: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            variant: Variant::Cons,
            seed: 0,
            total_steps: 30_000,
            warmup_steps: 1_000,
            batch_size: 256,
            updates_per_step: 1,
            update_every: 1,
            tau: 0.005,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            lr_alpha: 3e-4,
            lr_beta: 3e-4,
            init_alpha: 1.0,
            init_beta: 1.0,
            target_entropy: None,
            adversary_target: None,
            beta_fixed: None,
            hidden: vec![64, 64],
            n_quantiles: 25,
            huber_kappa: 1.0,
            lambda_msd: -1.0,
            lambda_cvar: 0.25,
            risk_seeking_sign: 1.0,
            buffer_capacity: 100_000,
            eval_interval: 1_000,
            eval_episodes: 5,
            max_states_per_eval: 512,
            adversary_first: true,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!("{name} must be positive, got {x}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.batch_size == 0 || self.warmup_steps < self.batch_size {
            return Err(Error::Config("warmup_steps must be at least batch_size, which must be positive".into()));
        }
        if self.variant == Variant::Msd && self.batch_size < 2 {
            return Err(Error::Config("the msd variant needs batch_size >= 2".into()));
        }
        if self.eval_interval == 0 || self.updates_per_step == 0 || self.update_every == 0 {
            return Err(Error::Config("eval_interval, updates_per_step and update_every must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(alloc::format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        for (name, x) in [
            ("lr_q", self.lr_q),
            ("lr_pi", self.lr_pi),
            ("lr_alpha", self.lr_alpha),
            ("lr_beta", self.lr_beta),
            ("init_alpha", self.init_alpha),
            ("init_beta", self.init_beta),
            ("huber_kappa", self.huber_kappa),
        ] {
            positive(name, x)?;
        }
        if let Some(b) = self.beta_fixed {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config("beta_fixed must be non-negative".into()));
            }
        }
        if self.n_quantiles < 2 {
            return Err(Error::Config("n_quantiles must be at least 2".into()));
        }
        if !(self.lambda_cvar > 0.0 && self.lambda_cvar <= 1.0) {
            return Err(Error::Config("lambda_cvar must lie in (0, 1]".into()));
        }
        if self.risk_seeking_sign != 1.0 && self.risk_seeking_sign != -1.0 {
            return Err(Error::Config("risk_seeking_sign must be 1 or -1".into()));
        }
        if !self.lambda_msd.is_finite() {
            return Err(Error::Config("lambda_msd must be finite".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config("buffer_capacity must be at least batch_size".into()));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.env.gamma
    }
}

/// The agent's value model: twin critics, or a quantile critic in the CVaR
/// variant.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentCritic {
    Twin(TwinCritic),
    Quantile(QuantileCritic),
}

impl BatchCritic for AgentCritic {
    fn mean_value_and_grad(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        match self {
            Self::Twin(c) => MinTwin(c).mean_value_and_grad(states, actions),
            Self::Quantile(c) => QuantileMean(c).mean_value_and_grad(states, actions),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: SquashedGaussianPolicy,
    pub critic: AgentCritic,
    pub alpha: EntropyTemp,
    opt_pi: Adam,
    opt_critic: Vec<Adam>,
}

#[derive(Debug, Clone)]
pub struct Adversary {
    pub policy: SquashedGaussianPolicy,
    /// Constraint-cost critic, present in the `cons` variant only.
    pub critic: Option<TwinCritic>,
    pub beta: BetaTemp,
    opt_pi: Adam,
    opt_critic: Vec<Adam>,
}

/// Everything a gradient step changes.
#[derive(Debug, Clone)]
pub struct Learners {
    pub agent: Agent,
    pub adversary: Option<Adversary>,
    variant: Variant,
    beta_fixed: Option<f64>,
}

/// One update within a gradient step, in the order performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    AdversaryCritic,
    AdversaryPolicy,
    Beta,
    AdversaryTargets,
    AgentCritic,
    AgentPolicy,
    Alpha,
    AgentTargets,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub adversary_critic_loss: f64,
    pub adversary_actor_loss: f64,
    pub beta_loss: f64,
    pub kl: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn adams(nets: &[usize], lr: f64) -> Vec<Adam> {
    nets.iter().map(|&n| Adam::new(n, AdamConfig::with_learning_rate(lr))).collect()
}

impl Learners {
    /// Agent networks come from the agent-init stream (policy first), the
    /// adversary's from its own stream, so the agent's initialisation does
    /// not depend on the variant's adversary.
    pub fn new(config: &TrainConfig, state_dim: usize, low: &[f64], high: &[f64]) -> Result<Self> {
        let d = low.len();
        let mut rng = Rng::with_stream(config.seed, stream::AGENT_INIT);
        let policy = SquashedGaussianPolicy::new(state_dim, &config.hidden, low, high, &mut rng)?;
        let critic = if config.variant.quantile_agent() {
            AgentCritic::Quantile(QuantileCritic::new(state_dim, d, &config.hidden, config.n_quantiles, &mut rng)?)
        } else {
            AgentCritic::Twin(TwinCritic::new(state_dim, d, &config.hidden, &mut rng)?)
        };
        let opt_critic = match &critic {
            AgentCritic::Twin(c) => adams(&[c.online[0].num_params(), c.online[1].num_params()], config.lr_q),
            AgentCritic::Quantile(c) => adams(&[c.online.num_params()], config.lr_q),
        };
        let agent = Agent {
            alpha: Temperature::new(config.init_alpha, config.target_entropy.unwrap_or(-(d as f64)), config.lr_alpha)?,
            opt_pi: Adam::new(policy.num_params(), AdamConfig::with_learning_rate(config.lr_pi)),
            opt_critic,
            policy,
            critic,
        };

        let adversary = if config.variant.has_adversary() {
            let mut rng = Rng::with_stream(config.seed, stream::ADVERSARY_INIT);
            let policy = SquashedGaussianPolicy::new(state_dim, &config.hidden, low, high, &mut rng)?;
            let critic = if config.variant == Variant::Cons {
                Some(TwinCritic::new(state_dim, d, &config.hidden, &mut rng)?)
            } else {
                None
            };
            let opt_critic = critic
                .as_ref()
                .map(|c| adams(&[c.online[0].num_params(), c.online[1].num_params()], config.lr_q))
                .unwrap_or_default();
            Some(Adversary {
                beta: Temperature::new(config.init_beta, config.adversary_target.unwrap_or(d as f64), config.lr_beta)?,
                opt_pi: Adam::new(policy.num_params(), AdamConfig::with_learning_rate(config.lr_pi)),
                opt_critic,
                policy,
                critic,
            })
        } else {
            None
        };
        Ok(Self {
            agent,
            adversary,
            variant: config.variant,
            beta_fixed: config.beta_fixed,
        })
    }

    /// Current repulsion coefficient; zero without an adversary.
    pub fn beta(&self) -> f64 {
        match (&self.adversary, self.beta_fixed) {
            (None, _) => 0.0,
            (Some(_), Some(b)) => b,
            (Some(a), None) => a.beta.value(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.agent.alpha.value()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

/// Agent actor loss with repulsion from the adversary:
/// `mean[alpha ln pi_theta(a|s) - Q(s, a) - beta (ln pi_theta_old(a|s) - ln pi_omega_old(a|s))]`
/// where the snapshots are frozen and only the sampled action carries
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn repulsive_policy_loss<C: BatchCritic + ?Sized>(
    states: &[&[f64]],
    policy: &SquashedGaussianPolicy,
    critic: &C,
    theta_old: &SquashedGaussianPolicy,
    omega_old: &SquashedGaussianPolicy,
    alpha: f64,
    beta: f64,
    noise: &Noise,
) -> Result<ActorLoss> {
    let repulsion = |s: &[f64], u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (lp_theta, g_theta) = theta_old.log_prob_pre_squash(s, u)?;
        let (lp_omega, g_omega) = omega_old.log_prob_pre_squash(s, u)?;
        let grad = g_theta.iter().zip(&g_omega).map(|(a, b)| -beta * (a - b)).collect();
        Ok((-beta * (lp_theta - lp_omega), grad))
    };
    actor_loss(states, policy, critic, alpha, noise, Some(&repulsion))
}

fn check_finite(value: f64, loss: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { loss })
    }
}

/// Random streams consumed by gradient steps.
#[derive(Debug, Clone)]
pub struct UpdateRngs {
    pub replay: Rng,
    pub agent: Rng,
    pub adversary: Rng,
}

impl UpdateRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            replay: Rng::with_stream(seed, stream::REPLAY),
            agent: Rng::with_stream(seed, stream::AGENT),
            adversary: Rng::with_stream(seed, stream::ADVERSARY),
        }
    }
}

type Observer<'a> = Option<&'a mut dyn FnMut(Update, &Learners)>;

fn notify(observer: &mut Observer<'_>, update: Update, learners: &Learners) {
    if let Some(f) = observer.as_mut() {
        f(update, learners);
    }
}

/// One gradient step on a single batch drawn from `buffer`.
pub fn train_step(learners: &mut Learners, buffer: &ReplayBuffer, config: &TrainConfig, rngs: &mut UpdateRngs) -> Result<StepStats> {
    train_step_observed(learners, buffer, config, rngs, None)
}

/// [`train_step`] calling `observer` after every individual update.
pub fn train_step_observed(
    learners: &mut Learners,
    buffer: &ReplayBuffer,
    config: &TrainConfig,
    rngs: &mut UpdateRngs,
    mut observer: Observer<'_>,
) -> Result<StepStats> {
    let batch = buffer.sample_batch(config.batch_size, &mut rngs.replay)?;
    let theta_old = learners.agent.policy.clone();
    let omega_old = learners.adversary.as_ref().map(|a| a.policy.clone());
    let mut stats = StepStats::default();
    if config.adversary_first {
        adversary_block(learners, &batch, config, &mut rngs.adversary, &mut stats, &mut observer)?;
        agent_block(learners, &batch, config, &theta_old, omega_old.as_ref(), &mut rngs.agent, &mut stats, &mut observer)?;
    } else {
        agent_block(learners, &batch, config, &theta_old, omega_old.as_ref(), &mut rngs.agent, &mut stats, &mut observer)?;
        adversary_block(learners, &batch, config, &mut rngs.adversary, &mut stats, &mut observer)?;
    }
    stats.alpha = learners.alpha();
    stats.beta = learners.beta();
    Ok(stats)
}

fn adversary_block(
    learners: &mut Learners,
    batch: &[Transition],
    config: &TrainConfig,
    rng: &mut Rng,
    stats: &mut StepStats,
    observer: &mut Observer<'_>,
) -> Result<()> {
    let Some(adv) = learners.adversary.as_mut() else {
        return Ok(());
    };
    let agent = &learners.agent;
    let (n, d) = (batch.len(), adv.policy.action_dim());
    let alpha = agent.alpha.value();
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();

    if let Some(critic) = adv.critic.as_mut() {
        let noise = Noise::draw(rng, n, d);
        let l = cons_critic_loss(batch, critic, &adv.policy, alpha, config.gamma(), &noise)?;
        check_finite(l.value, "adversary critic")?;
        for h in 0..2 {
            adv.opt_critic[h].step(critic.online[h].params_mut(), &l.grads[h], "adversary critic")?;
        }
        stats.adversary_critic_loss = l.value;
        notify(observer, Update::AdversaryCritic, learners);
    }

    let adv = learners.adversary.as_mut().expect("adversary present");
    let agent = &learners.agent;
    let noise = Noise::draw(rng, n, d);
    let l = match (config.variant, &adv.critic, &agent.critic) {
        (Variant::Cons, Some(c), _) => adversary_policy_loss(&states, &adv.policy, &MinTwin(c), alpha, &noise)?,
        (Variant::Msd, _, AgentCritic::Twin(c)) => adversary_policy_loss(
            &states,
            &adv.policy,
            &MsdCritic {
                critic: c,
                lambda: config.lambda_msd,
                sign: config.risk_seeking_sign,
            },
            alpha,
            &noise,
        )?,
        (Variant::Cvar, _, AgentCritic::Quantile(c)) => adversary_policy_loss(
            &states,
            &adv.policy,
            &CvarCritic {
                critic: c,
                lambda: config.lambda_cvar,
            },
            alpha,
            &noise,
        )?,
        _ => return Err(Error::Config("adversary critic does not match the variant".into())),
    };
    check_finite(l.value, "adversary actor")?;
    adv.opt_pi.step(adv.policy.params_mut(), &l.grad, "adversary actor")?;
    stats.adversary_actor_loss = l.value;
    notify(observer, Update::AdversaryPolicy, learners);

    let adv = learners.adversary.as_mut().expect("adversary present");
    if learners.beta_fixed.is_none() {
        let kl = kl_estimate(&learners.agent.policy, &adv.policy, &states, rng, 1)?;
        check_finite(kl, "beta")?;
        let (value, grad) = beta_loss(kl, &adv.beta);
        adv.beta.step(grad, "beta")?;
        stats.kl = kl;
        stats.beta_loss = value;
        notify(observer, Update::Beta, learners);
    }

    let adv = learners.adversary.as_mut().expect("adversary present");
    if let Some(critic) = adv.critic.as_mut() {
        critic.update_targets(config.tau);
        notify(observer, Update::AdversaryTargets, learners);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn agent_block(
    learners: &mut Learners,
    batch: &[Transition],
    config: &TrainConfig,
    theta_old: &SquashedGaussianPolicy,
    omega_old: Option<&SquashedGaussianPolicy>,
    rng: &mut Rng,
    stats: &mut StepStats,
    observer: &mut Observer<'_>,
) -> Result<()> {
    let beta = learners.beta();
    let agent = &mut learners.agent;
    let (n, d) = (batch.len(), agent.policy.action_dim());
    let alpha = agent.alpha.value();
    let gamma = config.gamma();

    let noise = Noise::draw(rng, n, d);
    match &mut agent.critic {
        AgentCritic::Twin(critic) => {
            let y = soft_target(batch, Signal::Reward, &agent.policy, critic, alpha, gamma, &noise)?;
            let l = critic_loss(batch, critic, &y)?;
            check_finite(l.value, "agent critic")?;
            for h in 0..2 {
                agent.opt_critic[h].step(critic.online[h].params_mut(), &l.grads[h], "agent critic")?;
            }
            stats.critic_loss = l.value;
        }
        AgentCritic::Quantile(critic) => {
            let l = quantile_critic_loss(batch, critic, &agent.policy, alpha, gamma, config.huber_kappa, &noise)?;
            check_finite(l.value, "quantile critic")?;
            agent.opt_critic[0].step(critic.online.params_mut(), &l.grad, "quantile critic")?;
            stats.critic_loss = l.value;
        }
    }
    notify(observer, Update::AgentCritic, learners);

    let agent = &mut learners.agent;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let noise = Noise::draw(rng, n, d);
    let l = match omega_old {
        Some(omega_old) => repulsive_policy_loss(&states, &agent.policy, &agent.critic, theta_old, omega_old, alpha, beta, &noise)?,
        None => actor_loss(&states, &agent.policy, &agent.critic, alpha, &noise, None)?,
    };
    check_finite(l.value, "agent actor")?;
    agent.opt_pi.step(agent.policy.params_mut(), &l.grad, "agent actor")?;
    stats.actor_loss = l.value;
    notify(observer, Update::AgentPolicy, learners);

    let agent = &mut learners.agent;
    let noise = Noise::draw(rng, n, d);
    let log_probs = states
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(agent.policy.sample_with_noise(s, noise.row(i))?.log_prob))
        .collect::<Result<Vec<f64>>>()?;
    let (value, grad) = alpha_loss(&log_probs, &agent.alpha);
    check_finite(value, "alpha")?;
    agent.alpha.step(grad, "alpha")?;
    stats.alpha_loss = value;
    notify(observer, Update::Alpha, learners);

    let agent = &mut learners.agent;
    match &mut agent.critic {
        AgentCritic::Twin(c) => c.update_targets(config.tau),
        AgentCritic::Quantile(c) => c.update_targets(config.tau),
    }
    notify(observer, Update::AgentTargets, learners);
    Ok(())
}

/// Outcome of a batch of evaluation episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalResult {
    /// Undiscounted return of each episode.
    pub returns: Vec<f64>,
    /// Total constraint violations over all episodes.
    pub failures: f64,
    /// Every state visited, initial states included.
    pub states: Vec<Vec<f64>>,
}

impl EvalResult {
    /// No episodes were run.
    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn mean_return(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.returns.iter().sum::<f64>() / self.returns.len() as f64)
    }

    /// Population standard deviation of the returns.
    pub fn std_return(&self) -> Option<f64> {
        let m = self.mean_return()?;
        Some((self.returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / self.returns.len() as f64).sqrt())
    }
}

/// Runs `episodes` full episodes of `actor` in `env`.
pub fn evaluate<A: Actor + ?Sized>(actor: &A, env: &mut Env, episodes: usize, rng: &mut Rng) -> Result<EvalResult> {
    let mut out = EvalResult::default();
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut total = 0.0;
        loop {
            out.states.push(state.clone());
            let action = actor.select(&state, rng)?;
            let step = env.step(&action, rng)?;
            total += step.reward;
            out.failures += step.constraint_cost;
            let done = step.done();
            state = step.next_state;
            if done {
                break;
            }
        }
        out.returns.push(total);
    }
    Ok(out)
}

/// One evaluation point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub cum_failures: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kl_estimate: f64,
}

/// A visited state recorded at an evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub step: usize,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    pub fn final_failures(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_failures)
    }
}

/// Evenly spaced subsample of at most `max` items.
fn subsample<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|k| items[k * items.len() / max].clone()).collect()
}

/// Stepwise driver of a full run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub learners: Learners,
    pub buffer: ReplayBuffer,
    env: Env,
    eval_env: Env,
    env_rng: Rng,
    action_rng: Rng,
    eval_rng: Rng,
    metrics_rng: Rng,
    update_rngs: UpdateRngs,
    state: Vec<f64>,
    steps: usize,
    gradient_steps: usize,
    cum_failures: f64,
    rows: Vec<MetricsRow>,
    states: Vec<StateRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut env = config.env.build()?;
        let eval_env = config.env.build()?;
        let learners = Learners::new(&config, env.state_dim(), env.action_low(), env.action_high())?;
        let mut env_rng = Rng::with_stream(config.seed, stream::ENV);
        let state = env.reset(&mut env_rng);
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            action_rng: Rng::with_stream(config.seed, stream::ACTION),
            eval_rng: Rng::with_stream(config.seed, stream::EVAL),
            metrics_rng: Rng::with_stream(config.seed, stream::METRICS),
            update_rngs: UpdateRngs::new(config.seed),
            learners,
            env,
            eval_env,
            env_rng,
            state,
            steps: 0,
            gradient_steps: 0,
            cum_failures: 0.0,
            rows: Vec::new(),
            states: Vec::new(),
            config,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn gradient_steps(&self) -> usize {
        self.gradient_steps
    }

    pub fn cum_failures(&self) -> f64 {
        self.cum_failures
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn states(&self) -> &[StateRecord] {
        &self.states
    }

    /// One environment step, then any gradient steps due. Returns the
    /// stored transition.
    pub fn env_step(&mut self) -> Result<Transition> {
        let action = if self.steps < self.config.warmup_steps {
            let (low, high) = (self.env.action_low(), self.env.action_high());
            low.iter().zip(high).map(|(&l, &h)| self.action_rng.uniform_range(l, h)).collect()
        } else {
            Stochastic(&self.learners.agent.policy).select(&self.state, &mut self.action_rng)?
        };
        let step = self.env.step(&action, &mut self.env_rng)?;
        self.steps += 1;
        self.cum_failures += step.constraint_cost;
        let transition = Transition {
            state: core::mem::take(&mut self.state),
            action,
            reward: step.reward,
            constraint_cost: step.constraint_cost,
            next_state: step.next_state.clone(),
            terminated: step.terminated,
        };
        self.buffer.push(transition.clone());
        self.state = if step.done() { self.env.reset(&mut self.env_rng) } else { step.next_state };

        if self.steps >= self.config.warmup_steps && self.steps % self.config.update_every == 0 {
            for _ in 0..self.config.updates_per_step {
                train_step(&mut self.learners, &self.buffer, &self.config, &mut self.update_rngs)?;
                self.gradient_steps += 1;
            }
        }
        Ok(transition)
    }

    /// Evaluates the deterministic policy now and records a metrics row.
    pub fn evaluate_now(&mut self) -> Result<MetricsRow> {
        let result = evaluate(
            &Deterministic(&self.learners.agent.policy),
            &mut self.eval_env,
            self.config.eval_episodes,
            &mut self.eval_rng,
        )?;
        let visited = subsample(&result.states, self.config.max_states_per_eval);
        let kl = match &self.learners.adversary {
            Some(adv) if !visited.is_empty() => kl_estimate(&self.learners.agent.policy, &adv.policy, &visited, &mut self.metrics_rng, 1)?,
            _ => f64::NAN,
        };
        let row = MetricsRow {
            step: self.steps,
            eval_return_mean: result.mean_return().unwrap_or(f64::NAN),
            eval_return_std: result.std_return().unwrap_or(f64::NAN),
            cum_failures: self.cum_failures,
            alpha: self.learners.alpha(),
            beta: self.learners.beta(),
            kl_estimate: kl,
        };
        self.states.extend(visited.into_iter().map(|state| StateRecord { step: self.steps, state }));
        self.rows.push(row);
        Ok(row)
    }

    /// Runs to `total_steps` with an evaluation at step 0 and every
    /// `eval_interval` steps.
    pub fn run(&mut self) -> Result<RunMetrics> {
        if self.rows.is_empty() {
            self.evaluate_now()?;
        }
        while self.steps < self.config.total_steps {
            self.env_step()?;
            if self.steps % self.config.eval_interval == 0 {
                self.evaluate_now()?;
            }
        }
        Ok(RunMetrics {
            seed: self.config.seed,
            rows: self.rows.clone(),
        })
    }
}

/// Builds and runs a trainer to completion.
pub fn run_training(config: TrainConfig) -> Result<(RunMetrics, Trainer)> {
    let mut trainer = Trainer::new(config)?;
    let metrics = trainer.run()?;
    Ok((metrics, trainer))
}
