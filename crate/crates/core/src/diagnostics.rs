//! Self-checks run by the command-line tool and the acceptance tests:
//! finite-difference checks of every learning loss, the tabular oracle
//! checks, and small training experiments.

use alloc::vec;
use alloc::vec::Vec;

use crate::adversary::{
    adversary_policy_loss, beta_loss, Variant, cons_critic_loss, cvar_q, msd_q, quantile_critic_loss, quantile_midpoints, BetaTemp, CvarCritic, MsdCritic,
    QuantileCritic,
};
use crate::numerics::{grad_check, Adam, AdamConfig, GradCheckReport};
use crate::envs::{EnvConfig, EnvKind, RiskyChain};
use crate::oracle::{
    check_maxent_equivalence, repulsion_identity, return_distribution, soft_value_iteration, two_state_mdp, PolicyTable, TabularMdp,
};
use crate::policy::{kl_estimate, Actor, Noise, SquashedGaussianPolicy, Stochastic, UniformActor};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{alpha_loss, base_policy_loss, critic_loss, soft_target, EntropyTemp, MinTwin, SacAgent, SacConfig, Signal, TwinCritic};
use crate::trainer::{evaluate, repulsive_policy_loss, stream, train_step, Agent, AgentCritic, Learners, TrainConfig, Trainer, UpdateRngs};
use crate::{Result, Rng};

/// Relative-error bound every loss gradient must meet.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

const STATE_DIM: usize = 3;
const ACTION_DIM: usize = 2;
const BATCH: usize = 6;
const HIDDEN: [usize; 2] = [8, 8];

struct Fixture {
    batch: Vec<Transition>,
    states: Vec<Vec<f64>>,
    theta: SquashedGaussianPolicy,
    omega: SquashedGaussianPolicy,
    critic: TwinCritic,
    noise: Noise,
    alpha: f64,
}

impl Fixture {
    fn new(rng: &mut Rng) -> Result<Self> {
        let low = [-1.0, -2.0];
        let high = [1.0, 0.5];
        let batch: Vec<Transition> = (0..BATCH)
            .map(|k| Transition {
                state: (0..STATE_DIM).map(|_| rng.normal()).collect(),
                action: low.iter().zip(&high).map(|(&l, &h)| rng.uniform_range(l, h)).collect(),
                reward: rng.normal(),
                constraint_cost: (k % 2) as f64,
                next_state: (0..STATE_DIM).map(|_| rng.normal()).collect(),
                terminated: k == BATCH - 1,
            })
            .collect();
        Ok(Self {
            states: batch.iter().map(|t| t.state.clone()).collect(),
            theta: SquashedGaussianPolicy::new(STATE_DIM, &HIDDEN, &low, &high, rng)?,
            omega: SquashedGaussianPolicy::new(STATE_DIM, &HIDDEN, &low, &high, rng)?,
            critic: TwinCritic::new(STATE_DIM, ACTION_DIM, &HIDDEN, rng)?,
            noise: Noise::draw(rng, BATCH, ACTION_DIM),
            alpha: 0.3,
            batch,
        })
    }

    fn state_refs(&self) -> Vec<&[f64]> {
        self.states.iter().map(|s| s.as_slice()).collect()
    }
}

fn joined(c: &TwinCritic) -> Vec<f64> {
    let mut p = c.online[0].params().to_vec();
    p.extend_from_slice(c.online[1].params());
    p
}

fn with_joined(c: &TwinCritic, p: &[f64]) -> TwinCritic {
    let mut c = c.clone();
    let n = c.online[0].num_params();
    c.online[0].params_mut().copy_from_slice(&p[..n]);
    c.online[1].params_mut().copy_from_slice(&p[n..]);
    c
}

fn with_params(pi: &SquashedGaussianPolicy, p: &[f64]) -> SquashedGaussianPolicy {
    let mut pi = pi.clone();
    pi.params_mut().copy_from_slice(p);
    pi
}

fn unwrap_or_nan(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}

/// Quantile critic whose residuals stay clear of the Huber loss's kinks so
/// central differences are exact to rounding.
fn smooth_quantile_fixture(fx: &Fixture, rng: &mut Rng) -> Result<QuantileCritic> {
    let n = 5;
    loop {
        let qc = QuantileCritic::new(STATE_DIM, ACTION_DIM, &HIDDEN, n, rng)?;
        let mut margin = f64::INFINITY;
        for (b, t) in fx.batch.iter().enumerate() {
            let z = qc.quantiles(&t.state, &t.action)?;
            let targets: Vec<f64> = if t.terminated {
                vec![t.reward; n]
            } else {
                let s = fx.theta.sample_with_noise(&t.next_state, fx.noise.row(b))?;
                qc.target_quantiles(&t.next_state, &s.action)?
                    .into_iter()
                    .map(|zt| t.reward + 0.9 * (zt - fx.alpha * s.log_prob))
                    .collect()
            };
            for zi in &z {
                for y in &targets {
                    let u = (y - zi).abs();
                    margin = margin.min(u).min((u - 1.0).abs());
                }
            }
        }
        if margin > 1e-3 {
            return Ok(qc);
        }
    }
}

/// Finite-difference checks of every loss against its analytic gradient
/// under frozen noise.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradEntry>> {
    let mut rng = Rng::new(seed);
    let fx = Fixture::new(&mut rng)?;
    let states = fx.state_refs();
    let gamma = 0.9;
    let tol = GRAD_TOLERANCE;
    let mut out = Vec::new();

    let y = soft_target(&fx.batch, Signal::Reward, &fx.theta, &fx.critic, fx.alpha, gamma, &fx.noise)?;
    let l = critic_loss(&fx.batch, &fx.critic, &y)?;
    let analytic: Vec<f64> = l.grads.concat();
    out.push(GradEntry {
        name: "agent critic",
        report: grad_check(
            |p| unwrap_or_nan(critic_loss(&fx.batch, &with_joined(&fx.critic, p), &y).map(|l| l.value)),
            &joined(&fx.critic),
            &analytic,
            tol,
        ),
    });

    let l = base_policy_loss(&states, &fx.theta, &fx.critic, fx.alpha, &fx.noise)?;
    out.push(GradEntry {
        name: "agent actor",
        report: grad_check(
            |p| unwrap_or_nan(base_policy_loss(&states, &with_params(&fx.theta, p), &fx.critic, fx.alpha, &fx.noise).map(|l| l.value)),
            fx.theta.params(),
            &l.grad,
            tol,
        ),
    });

    let beta = 0.7;
    let theta_old = fx.theta.clone();
    let critic = MinTwin(&fx.critic);
    let l = repulsive_policy_loss(&states, &fx.theta, &critic, &theta_old, &fx.omega, fx.alpha, beta, &fx.noise)?;
    out.push(GradEntry {
        name: "agent actor with repulsion",
        report: grad_check(
            |p| {
                unwrap_or_nan(
                    repulsive_policy_loss(&states, &with_params(&fx.theta, p), &critic, &theta_old, &fx.omega, fx.alpha, beta, &fx.noise).map(|l| l.value),
                )
            },
            fx.theta.params(),
            &l.grad,
            tol,
        ),
    });

    let cons = TwinCritic::new(STATE_DIM, ACTION_DIM, &HIDDEN, &mut rng)?;
    let l = cons_critic_loss(&fx.batch, &cons, &fx.omega, fx.alpha, gamma, &fx.noise)?;
    let analytic: Vec<f64> = l.grads.concat();
    // targets come from the target heads, which the perturbation leaves alone
    out.push(GradEntry {
        name: "constraint critic",
        report: grad_check(
            |p| unwrap_or_nan(cons_critic_loss(&fx.batch, &with_joined(&cons, p), &fx.omega, fx.alpha, gamma, &fx.noise).map(|l| l.value)),
            &joined(&cons),
            &analytic,
            tol,
        ),
    });

    let l = adversary_policy_loss(&states, &fx.omega, &MinTwin(&cons), fx.alpha, &fx.noise)?;
    out.push(GradEntry {
        name: "adversary actor (cons)",
        report: grad_check(
            |p| unwrap_or_nan(adversary_policy_loss(&states, &with_params(&fx.omega, p), &MinTwin(&cons), fx.alpha, &fx.noise).map(|l| l.value)),
            fx.omega.params(),
            &l.grad,
            tol,
        ),
    });

    let msd = MsdCritic {
        critic: &fx.critic,
        lambda: -1.0,
        sign: 1.0,
    };
    let l = adversary_policy_loss(&states, &fx.omega, &msd, fx.alpha, &fx.noise)?;
    out.push(GradEntry {
        name: "adversary actor (msd)",
        report: grad_check(
            |p| unwrap_or_nan(adversary_policy_loss(&states, &with_params(&fx.omega, p), &msd, fx.alpha, &fx.noise).map(|l| l.value)),
            fx.omega.params(),
            &l.grad,
            tol,
        ),
    });

    let qc = smooth_quantile_fixture(&fx, &mut rng)?;
    let cvar = CvarCritic { critic: &qc, lambda: 0.3 };
    let l = adversary_policy_loss(&states, &fx.omega, &cvar, fx.alpha, &fx.noise)?;
    out.push(GradEntry {
        name: "adversary actor (cvar)",
        report: grad_check(
            |p| unwrap_or_nan(adversary_policy_loss(&states, &with_params(&fx.omega, p), &cvar, fx.alpha, &fx.noise).map(|l| l.value)),
            fx.omega.params(),
            &l.grad,
            tol,
        ),
    });

    let l = quantile_critic_loss(&fx.batch, &qc, &fx.theta, fx.alpha, gamma, 1.0, &fx.noise)?;
    out.push(GradEntry {
        name: "quantile critic",
        report: grad_check(
            |p| {
                let mut q = qc.clone();
                q.online.params_mut().copy_from_slice(p);
                unwrap_or_nan(quantile_critic_loss(&fx.batch, &q, &fx.theta, fx.alpha, gamma, 1.0, &fx.noise).map(|l| l.value))
            },
            qc.online.params(),
            &l.grad,
            tol,
        ),
    });

    let log_probs: Vec<f64> = (0..BATCH).map(|_| rng.normal()).collect();
    let temp = EntropyTemp::new(0.4, -(ACTION_DIM as f64), 3e-4)?;
    let (_, g) = alpha_loss(&log_probs, &temp);
    out.push(GradEntry {
        name: "alpha",
        report: grad_check(
            |p| {
                let mut t = temp.clone();
                t.log_value = p[0];
                alpha_loss(&log_probs, &t).0
            },
            &[temp.log_value],
            &[g],
            tol,
        ),
    });

    let temp = BetaTemp::new(0.8, ACTION_DIM as f64, 3e-4)?;
    let kl = 0.37;
    let (_, g) = beta_loss(kl, &temp);
    out.push(GradEntry {
        name: "beta",
        report: grad_check(
            |p| {
                let mut t = temp.clone();
                t.log_value = p[0];
                beta_loss(kl, &t).0
            },
            &[temp.log_value],
            &[g],
            tol,
        ),
    });
    Ok(out)
}

/// A named numeric check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub value: f64,
    pub passed: bool,
}

fn line(name: &'static str, value: f64, passed: bool) -> CheckLine {
    CheckLine { name, value, passed }
}

/// Tabular and closed-form checks of the risk and entropy machinery.
pub fn oracle_suite() -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();

    let mut mdp = TabularMdp::new(1, 1, 0.9, 0);
    mdp.add_outcome(0, 0, 0, 1.0, 1.0, 0.0);
    let q = soft_value_iteration(&mdp, 1.0, 1e-12)?.q.values[0];
    out.push(line("soft value iteration geometric series (|Q - 10|)", (q - 10.0).abs(), (q - 10.0).abs() < 1e-9));

    let report = check_maxent_equivalence(&two_state_mdp(0.9), 1.0, 51)?;
    out.push(line("boltzmann policy vs 51x51 grid (margin)", report.margin, report.margin >= -1e-3));

    let r = repulsion_identity([1.0, -0.5], [0.3, 0.9], 0.4, 0.7, [0.8, 0.2], 101);
    out.push(line("repulsion loss equals objective up to a constant (spread)", r.identity_spread, r.identity_spread < 1e-12));

    let z = [-3.0, 1.0, 2.0, 7.0];
    let v = cvar_q(&z, 0.25)?;
    out.push(line("cvar of four atoms at 0.25 (|Q + Z0|)", (v + z[0]).abs(), v == -z[0]));

    let mut worst: f64 = 0.0;
    for lambda in [0.1, 0.25, 0.5, 1.0] {
        for n in [4, 25] {
            worst = worst.max((cvar_q(&vec![2.5; n], lambda)? + 2.5).abs());
        }
    }
    out.push(line("cvar of a constant (max |Q + c|)", worst, worst < 1e-12));

    let m = msd_q(&[0.0, 2.0], -1.0, 1.0)?;
    let err = (m[0] + 1.0).abs().max((m[1] - 1.0).abs());
    out.push(line("mean-deviation value of {0, 2} (max error)", err, err < 1e-15));

    let mids = quantile_midpoints(4);
    out.push(line("quantile midpoints of four atoms", mids[0], mids == [0.125, 0.375, 0.625, 0.875]));
    Ok(out)
}

/// Replays a run's interaction loop with a standalone [`SacAgent`] on the
/// same random streams and compares every agent parameter with the
/// trainer's after each environment step. Returns the first step at which
/// they differ bitwise, or `None` if they never do within `total_steps`.
pub fn sac_reduction(config: &TrainConfig) -> Result<Option<usize>> {
    let c = config;
    let mut trainer = Trainer::new(c.clone())?;
    let mut env = c.env.build()?;
    let sac = SacConfig {
        hidden: c.hidden.clone(),
        gamma: c.env.gamma,
        tau: c.tau,
        lr_q: c.lr_q,
        lr_pi: c.lr_pi,
        lr_alpha: c.lr_alpha,
        init_alpha: c.init_alpha,
        target_entropy: c.target_entropy,
    };
    let mut agent = SacAgent::new(
        env.state_dim(),
        env.action_low(),
        env.action_high(),
        sac,
        &mut Rng::with_stream(c.seed, stream::AGENT_INIT),
    )?;
    let mut buffer = ReplayBuffer::new(c.buffer_capacity)?;
    let mut env_rng = Rng::with_stream(c.seed, stream::ENV);
    let mut action_rng = Rng::with_stream(c.seed, stream::ACTION);
    let mut replay_rng = Rng::with_stream(c.seed, stream::REPLAY);
    let mut agent_rng = Rng::with_stream(c.seed, stream::AGENT);
    let mut state = env.reset(&mut env_rng);

    for step in 0..=c.total_steps {
        if step > 0 {
            let action: Vec<f64> = if step - 1 < c.warmup_steps {
                let bounds: Vec<(f64, f64)> = env.action_low().iter().copied().zip(env.action_high().iter().copied()).collect();
                bounds.into_iter().map(|(l, h)| action_rng.uniform_range(l, h)).collect()
            } else {
                Stochastic(&agent.policy).select(&state, &mut action_rng)?
            };
            let r = env.step(&action, &mut env_rng)?;
            buffer.push(Transition {
                state: core::mem::take(&mut state),
                action,
                reward: r.reward,
                constraint_cost: r.constraint_cost,
                next_state: r.next_state.clone(),
                terminated: r.terminated,
            });
            state = if r.done() { env.reset(&mut env_rng) } else { r.next_state };
            if step >= c.warmup_steps && step % c.update_every == 0 {
                for _ in 0..c.updates_per_step {
                    let batch = buffer.sample_batch(c.batch_size, &mut replay_rng)?;
                    agent.update(&batch, &mut agent_rng)?;
                }
            }
            trainer.env_step()?;
        }
        if !same_agent(&trainer.learners.agent, &agent) {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_agent(a: &Agent, sac: &SacAgent) -> bool {
    let AgentCritic::Twin(critic) = &a.critic else {
        return false;
    };
    same_bits(a.policy.params(), sac.policy.params())
        && (0..2).all(|h| {
            same_bits(critic.online[h].params(), sac.critic.online[h].params())
                && same_bits(critic.target[h].params(), sac.critic.target[h].params())
        })
        && a.alpha.log_value.to_bits() == sac.temp.log_value.to_bits()
}

/// Trains the agent of a `cons` run for `updates` gradient steps on
/// batches from a uniformly explored buffer, with repulsion coefficient
/// `beta` held fixed and the adversary frozen at its initialisation.
/// Returns the estimated KL(agent || adversary) over the buffer's states.
pub fn repulsion_kl(config: &TrainConfig, beta: f64, updates: usize, explore_steps: usize) -> Result<f64> {
    let mut c = config.clone();
    c.variant = Variant::Cons;
    c.beta_fixed = Some(beta);
    c.validate()?;
    let mut env = c.env.build()?;
    let mut learners = Learners::new(&c, env.state_dim(), env.action_low(), env.action_high())?;
    let frozen = learners.adversary.clone();

    let mut buffer = ReplayBuffer::new(explore_steps.max(c.batch_size))?;
    let mut env_rng = Rng::with_stream(c.seed, stream::ENV);
    let mut action_rng = Rng::with_stream(c.seed, stream::ACTION);
    let mut state = env.reset(&mut env_rng);
    let explorer = UniformActor { low: env.action_low().to_vec(), high: env.action_high().to_vec() };
    while buffer.len() < explore_steps.max(c.batch_size) {
        let action = explorer.select(&state, &mut action_rng)?;
        let r = env.step(&action, &mut env_rng)?;
        buffer.push(Transition {
            state: core::mem::take(&mut state),
            action,
            reward: r.reward,
            constraint_cost: r.constraint_cost,
            next_state: r.next_state.clone(),
            terminated: r.terminated,
        });
        state = if r.done() { env.reset(&mut env_rng) } else { r.next_state };
    }

    let mut rngs = UpdateRngs::new(c.seed);
    for _ in 0..updates {
        train_step(&mut learners, &buffer, &c, &mut rngs)?;
        learners.adversary.clone_from(&frozen);
    }
    let states: Vec<&[f64]> = buffer.iter().map(|t| t.state.as_slice()).collect();
    let adversary = frozen.as_ref().map(|a| &a.policy).ok_or(crate::Error::Config("cons run without adversary".into()))?;
    let mut rng = Rng::with_stream(c.seed, stream::METRICS);
    kl_estimate(&learners.agent.policy, adversary, &states, &mut rng, 4)
}

/// Acts right with a fixed probability, left otherwise.
#[derive(Debug, Clone, Copy)]
pub struct ChainPolicy {
    pub right_prob: f64,
}

impl Actor for ChainPolicy {
    fn select(&self, _state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(vec![if rng.uniform() < self.right_prob { 0.5 } else { -0.5 }])
    }
}

/// Simulated failure frequency of a fixed policy against the exact
/// absorption probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyCheck {
    pub frequency: f64,
    pub exact: f64,
    pub standard_error: f64,
    pub passed: bool,
}

/// Evaluates [`ChainPolicy`] on RiskyChain for `episodes` episodes and
/// compares the fraction that end in the pit with the enumerated
/// probability, allowing three binomial standard errors.
pub fn chain_failure_check(right_prob: f64, episodes: usize, seed: u64) -> Result<FrequencyCheck> {
    let config = EnvConfig::new(EnvKind::RiskyChain);
    let mut env = config.build()?;
    let chain = env.as_chain().ok_or(crate::Error::Config("not a chain".into()))?.clone();
    let mdp = chain.tabular(1.0, config.horizon);
    let policy = PolicyTable {
        n_actions: 2,
        probs: (0..RiskyChain::N_STATES).flat_map(|_| [1.0 - right_prob, right_prob]).collect(),
    };
    let exact = return_distribution(&mdp, &policy)?.error_probability;
    let result = evaluate(&ChainPolicy { right_prob }, &mut env, episodes, &mut Rng::with_stream(seed, stream::EVAL))?;
    let frequency = result.failures / episodes as f64;
    let standard_error = (exact * (1.0 - exact) / episodes as f64).sqrt();
    Ok(FrequencyCheck {
        frequency,
        exact,
        standard_error,
        passed: (frequency - exact).abs() <= 3.0 * standard_error,
    })
}

/// Critic training on a single-state continuing MDP with reward 1 and no
/// entropy bonus, whose soft value is `1 / (1 - gamma)`. Actions come from a
/// randomly initialised policy with fresh noise every update. Returns the
/// mean and the largest deviation from that mean of the critic's minimum
/// head over a batch of policy actions after `updates` updates.
pub fn soft_fixed_point(gamma: f64, updates: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let policy = SquashedGaussianPolicy::new(1, &[8], &[-1.0], &[1.0], &mut rng)?;
    let mut critic = TwinCritic::new(1, 1, &[16], &mut rng)?;
    let lr = AdamConfig::with_learning_rate(3e-3);
    let mut opts = [Adam::new(critic.online[0].num_params(), lr), Adam::new(critic.online[1].num_params(), lr)];
    let n = 16;
    for _ in 0..updates {
        let actions = Noise::draw(&mut rng, n, 1);
        let batch: Vec<Transition> = (0..n)
            .map(|i| {
                Ok(Transition {
                    state: vec![0.0],
                    action: policy.sample_with_noise(&[0.0], actions.row(i))?.action,
                    reward: 1.0,
                    constraint_cost: 0.0,
                    next_state: vec![0.0],
                    terminated: false,
                })
            })
            .collect::<Result<_>>()?;
        let noise = Noise::draw(&mut rng, n, 1);
        let y = soft_target(&batch, Signal::Reward, &policy, &critic, 0.0, gamma, &noise)?;
        let loss = critic_loss(&batch, &critic, &y)?;
        for h in 0..2 {
            opts[h].step(critic.online[h].params_mut(), &loss.grads[h], "fixed point critic")?;
        }
        critic.update_targets(0.05);
    }
    let noise = Noise::draw(&mut rng, 64, 1);
    let values = (0..64)
        .map(|i| critic.min_q(&[0.0], &policy.sample_with_noise(&[0.0], noise.row(i))?.action))
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let spread = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    Ok((mean, spread))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_gradient_checks() {
        for e in gradient_suite(11).unwrap() {
            assert!(e.report.passed, "{}: {:?}", e.name, e.report);
        }
    }

    #[test]
    fn gradient_suite_covers_all_losses() {
        let names: Vec<_> = gradient_suite(1).unwrap().into_iter().map(|e| e.name).collect();
        assert_eq!(names.len(), 10);
    }

    #[test]
    fn oracle_checks_pass() {
        for c in oracle_suite().unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}
