//! The adversary's critics and losses. Each variant defines its own value
//! `Q_psi` whose maximisation makes the adversary seek constraint
//! violations or poor outcomes:
//!
//! * `cons`: a twin critic on the constraint-cost signal,
//! * `msd`: the agent's critic shifted by `lambda` population standard
//!   deviations over the batch,
//! * `cvar`: minus the lower-tail CVaR of the agent's quantile critic.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::check_dim;
use crate::numerics::{polyak, Mlp};
use crate::policy::{ActionSource, Noise, SquashedGaussianPolicy};
use crate::replay::Transition;
use crate::sac::{actor_loss, concat, critic_loss, min_head_values, soft_target, ActorLoss, BatchCritic, CriticLoss, Signal, Temperature, TwinCritic};
use crate::{Error, Result, Rng};

/// Learner configuration. `Sac` has no adversary at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    Sac,
    #[default]
    Cons,
    Msd,
    Cvar,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sac, Variant::Cons, Variant::Msd, Variant::Cvar];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sac => "sac",
            Self::Cons => "cons",
            Self::Msd => "msd",
            Self::Cvar => "cvar",
        }
    }

    pub fn has_adversary(self) -> bool {
        self != Self::Sac
    }

    /// The agent learns a quantile critic instead of a twin critic.
    pub fn quantile_agent(self) -> bool {
        self == Self::Cvar
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown variant `{s}` (expected sac, cons, msd or cvar)")))
    }
}

/// Interaction coefficient beta.
pub type BetaTemp = Temperature;

/// `J(beta) = ln(beta) * (kl - target)`; returns the value and
/// `dJ/d ln(beta)`.
pub fn beta_loss(kl: f64, temp: &BetaTemp) -> (f64, f64) {
    let grad = kl - temp.target;
    (temp.log_value * grad, grad)
}

/// Twin critic on the constraint-cost signal, bootstrapped with the
/// adversary's own next actions and the shared entropy temperature.
pub fn cons_critic_loss<P: ActionSource + ?Sized>(
    batch: &[Transition],
    critic: &TwinCritic,
    adversary: &P,
    alpha: f64,
    gamma: f64,
    noise: &Noise,
) -> Result<CriticLoss> {
    let y = soft_target(batch, Signal::ConstraintCost, adversary, critic, alpha, gamma, noise)?;
    critic_loss(batch, critic, &y)
}

/// `Q_psi_i = sign * (q_i + lambda * sd(q))` with the population standard
/// deviation over the batch.
pub fn msd_q(q_values: &[f64], lambda: f64, sign: f64) -> Result<Vec<f64>> {
    if q_values.len() < 2 {
        return Err(Error::TooFewSamples(q_values.len()));
    }
    let sd = population_sd(q_values);
    Ok(q_values.iter().map(|q| sign * (q + lambda * sd)).collect())
}

fn population_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Mean-shifted-deviation value over the agent's twin critic.
#[derive(Debug, Clone, Copy)]
pub struct MsdCritic<'a> {
    pub critic: &'a TwinCritic,
    pub lambda: f64,
    pub sign: f64,
}

impl BatchCritic for MsdCritic<'_> {
    fn mean_value_and_grad(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (q, mut grads) = min_head_values(self.critic, states, actions)?;
        let psi = msd_q(&q, self.lambda, self.sign)?;
        let n = q.len() as f64;
        let mean = q.iter().sum::<f64>() / n;
        let sd = population_sd(&q);
        for (j, g) in grads.iter_mut().enumerate() {
            let spread = if sd > 1e-12 { self.lambda * (q[j] - mean) / (n * sd) } else { 0.0 };
            let dq = self.sign * (1.0 / n + spread);
            g.iter_mut().for_each(|x| *x *= dq);
        }
        Ok((psi.iter().sum::<f64>() / n, grads))
    }
}

/// Fractions `0 = tau_0 < ... < tau_N = 1` of an `n`-atom quantile critic.
pub fn quantile_fractions(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Midpoints `(tau_i + tau_{i+1}) / 2`.
pub fn quantile_midpoints(n: usize) -> Vec<f64> {
    (0..n).map(|i| (2 * i + 1) as f64 / (2 * n) as f64).collect()
}

/// Weight of each atom in the lower-tail CVaR at level `lambda`: the
/// increment of `g(tau) = min(tau / lambda, 1)` across the atom's interval.
/// The weights sum to one.
pub fn cvar_weights(n: usize, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config("cvar level must lie in (0, 1]".into()));
    }
    let g = |tau: f64| (tau / lambda).min(1.0);
    let taus = quantile_fractions(n);
    Ok(taus.windows(2).map(|w| g(w[1]) - g(w[0])).collect())
}

/// `Q_psi = -CVaR_lambda` of a quantile estimate.
pub fn cvar_q(quantiles: &[f64], lambda: f64) -> Result<f64> {
    let w = cvar_weights(quantiles.len(), lambda)?;
    Ok(-w.iter().zip(quantiles).map(|(w, z)| w * z).sum::<f64>())
}

/// `N` quantiles of the return of `(state, action)` and a target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCritic {
    pub online: Mlp,
    pub target: Mlp,
}

impl QuantileCritic {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], n_quantiles: usize, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_quantiles);
        let online = Mlp::new(&sizes, rng)?;
        Ok(Self {
            target: online.clone(),
            online,
        })
    }

    pub fn from_net(net: Mlp) -> Self {
        Self {
            target: net.clone(),
            online: net,
        }
    }

    pub fn n_quantiles(&self) -> usize {
        self.online.output_dim()
    }

    pub fn quantiles(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(&concat(state, action))
    }

    pub fn target_quantiles(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.target.forward(&concat(state, action))
    }

    /// Expected return, the mean of the atoms.
    pub fn mean_q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let z = self.quantiles(state, action)?;
        Ok(z.iter().sum::<f64>() / z.len() as f64)
    }

    pub fn update_targets(&mut self, tau: f64) {
        polyak(self.online.params(), self.target.params_mut(), tau);
    }

    /// Per-pair `sum_i w_i Z_i(s, a)` and its action gradient.
    fn weighted(&self, states: &[&[f64]], actions: &[Vec<f64>], weights: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut scratch = vec![0.0; self.online.num_params()];
        let mut values = Vec::with_capacity(states.len());
        let mut grads = Vec::with_capacity(states.len());
        for (s, a) in states.iter().zip(actions) {
            let tape = self.online.forward_tape(&concat(s, a))?;
            values.push(tape.output().iter().zip(weights).map(|(z, w)| z * w).sum());
            let dx = self.online.backward(&tape, weights, &mut scratch)?;
            grads.push(dx[s.len()..].to_vec());
        }
        Ok((values, grads))
    }
}

fn batch_mean(values: Vec<f64>, mut grads: Vec<Vec<f64>>, scale: f64) -> (f64, Vec<Vec<f64>>) {
    let n = values.len() as f64;
    for g in &mut grads {
        g.iter_mut().for_each(|x| *x *= scale / n);
    }
    (scale * values.iter().sum::<f64>() / n, grads)
}

/// The quantile critic's expected return, used as the agent's Q.
#[derive(Debug, Clone, Copy)]
pub struct QuantileMean<'a>(pub &'a QuantileCritic);

impl BatchCritic for QuantileMean<'_> {
    fn mean_value_and_grad(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = self.0.n_quantiles();
        let (v, g) = self.0.weighted(states, actions, &vec![1.0 / n as f64; n])?;
        Ok(batch_mean(v, g, 1.0))
    }
}

/// `Q_psi = -CVaR_lambda` over the agent's quantile critic.
#[derive(Debug, Clone, Copy)]
pub struct CvarCritic<'a> {
    pub critic: &'a QuantileCritic,
    pub lambda: f64,
}

impl BatchCritic for CvarCritic<'_> {
    fn mean_value_and_grad(&self, states: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let w = cvar_weights(self.critic.n_quantiles(), self.lambda)?;
        let (v, g) = self.critic.weighted(states, actions, &w)?;
        Ok(batch_mean(v, g, -1.0))
    }
}

/// Quantile Huber penalty `|tau - 1{u < 0}| H_kappa(u) / kappa` and its
/// derivative with respect to `u`.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> (f64, f64) {
    let weight = if u < 0.0 { (tau - 1.0).abs() } else { tau };
    let (h, dh) = if u.abs() <= kappa {
        (0.5 * u * u, u)
    } else {
        (kappa * (u.abs() - 0.5 * kappa), kappa * u.signum())
    };
    (weight * h / kappa, weight * dh / kappa)
}

#[derive(Debug, Clone)]
pub struct QuantileLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Distributional soft Bellman residual. Target atoms are
/// `r + gamma (1 - terminated) (Zbar_j(s', a') - alpha ln pi(a'|s'))`; the
/// loss averages the quantile Huber penalty over the batch and all
/// (prediction, target) atom pairs.
pub fn quantile_critic_loss<P: ActionSource + ?Sized>(
    batch: &[Transition],
    critic: &QuantileCritic,
    policy: &P,
    alpha: f64,
    gamma: f64,
    kappa: f64,
    noise: &Noise,
) -> Result<QuantileLoss> {
    check_dim("quantile noise", batch.len(), noise.rows())?;
    let n = critic.n_quantiles();
    let midpoints = quantile_midpoints(n);
    let scale = 1.0 / (batch.len() * n * n) as f64;
    let mut grad = vec![0.0; critic.online.num_params()];
    let mut value = 0.0;
    let mut d_out = vec![0.0; n];
    for (b, t) in batch.iter().enumerate() {
        let targets = if t.terminated {
            vec![t.reward; n]
        } else {
            let (a_next, lp) = policy.act(&t.next_state, noise.row(b))?;
            critic
                .target_quantiles(&t.next_state, &a_next)?
                .into_iter()
                .map(|z| t.reward + gamma * (z - alpha * lp))
                .collect()
        };
        if targets.iter().any(|z| !z.is_finite()) {
            return Err(Error::Divergence { loss: "quantile target" });
        }
        let tape = critic.online.forward_tape(&concat(&t.state, &t.action))?;
        for (i, (&z, &tau)) in tape.output().iter().zip(&midpoints).enumerate() {
            d_out[i] = 0.0;
            for &target in &targets {
                let (rho, drho) = quantile_huber(target - z, tau, kappa);
                value += scale * rho;
                d_out[i] -= scale * drho;
            }
        }
        critic.online.backward(&tape, &d_out, &mut grad)?;
    }
    Ok(QuantileLoss { value, grad })
}

/// `mean[alpha ln pi_omega(a|s) - Q_psi(s, a)]`.
pub fn adversary_policy_loss<C: BatchCritic + ?Sized>(
    states: &[&[f64]],
    adversary: &SquashedGaussianPolicy,
    critic: &C,
    alpha: f64,
    noise: &Noise,
) -> Result<ActorLoss> {
    actor_loss(states, adversary, critic, alpha, noise, None)
}

impl fmt::Display for QuantileCritic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QuantileCritic({} atoms, sizes {:?})", self.n_quantiles(), self.online.sizes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Adam, AdamConfig};
    use crate::policy::ActionSource;
    use crate::Rng;
    use proptest::prelude::*;

    struct Still(usize);

    impl ActionSource for Still {
        fn action_dim(&self) -> usize {
            self.0
        }
        fn act(&self, _s: &[f64], _n: &[f64]) -> Result<(Vec<f64>, f64)> {
            Ok((vec![0.0; self.0], 0.0))
        }
    }

    fn tr(reward: f64, cost: f64, terminated: bool) -> Transition {
        Transition {
            state: vec![0.3],
            action: vec![0.1],
            reward,
            constraint_cost: cost,
            next_state: vec![0.4],
            terminated,
        }
    }

    fn constant_net(inputs: usize, outputs: &[f64]) -> Mlp {
        let mut m = Mlp::zeros(&[inputs, outputs.len()]).unwrap();
        let n = m.num_params();
        m.params_mut()[n - outputs.len()..].copy_from_slice(outputs);
        m
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("tqc".parse::<Variant>().is_err());
        assert!(!Variant::Sac.has_adversary());
        assert!(Variant::Cvar.quantile_agent());
    }

    #[test]
    fn msd_examples() {
        assert_eq!(msd_q(&[0.0, 2.0], -1.0, 1.0).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(msd_q(&[3.0, 3.0, 3.0], -1.0, 1.0).unwrap(), vec![3.0; 3]);
        assert_eq!(msd_q(&[0.5, -2.0, 4.0], 0.0, 1.0).unwrap(), vec![0.5, -2.0, 4.0]);
        assert_eq!(msd_q(&[0.0, 2.0], -1.0, -1.0).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(msd_q(&[1.0], -1.0, 1.0), Err(Error::TooFewSamples(1))));
    }

    proptest! {
        #[test]
        fn msd_shift_invariance(q in proptest::collection::vec(-50.0f64..50.0, 2..40), c in -100.0f64..100.0, lambda in -2.0f64..2.0) {
            let base = msd_q(&q, lambda, 1.0).unwrap();
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            let moved = msd_q(&shifted, lambda, 1.0).unwrap();
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((b - a - c).abs() < 1e-9);
            }
        }

        #[test]
        fn cvar_monotone_below_cutoff(
            z in proptest::collection::vec(-10.0f64..10.0, 2..30),
            lambda in 0.05f64..1.0,
            pick in 0usize..1000,
            delta in 0.0f64..5.0,
        ) {
            let n = z.len();
            let i = pick % n;
            let before = cvar_q(&z, lambda).unwrap();
            let mut lowered = z.clone();
            lowered[i] -= delta;
            let after = cvar_q(&lowered, lambda).unwrap();
            prop_assert!(after >= before - 1e-12);
            if i as f64 / n as f64 >= lambda {
                prop_assert_eq!(after, before);
            }
        }

        #[test]
        fn cvar_weights_sum_to_one(n in 1usize..60, lambda in 0.01f64..1.0) {
            let w = cvar_weights(n, lambda).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn cvar_examples() {
        let z = [-1.5, 0.25, 3.0, 8.0];
        assert_eq!(cvar_q(&z, 0.25).unwrap(), -z[0]);
        for lambda in [0.1, 0.25, 0.5, 1.0] {
            for n in [2, 4, 25] {
                assert!((cvar_q(&vec![4.2; n], lambda).unwrap() + 4.2).abs() < 1e-12);
            }
        }
        let mean = z.iter().sum::<f64>() / 4.0;
        assert!((cvar_q(&z, 1.0).unwrap() + mean).abs() < 1e-12);
        assert!(cvar_q(&z, 0.0).is_err());
        assert!(cvar_q(&z, 1.5).is_err());
    }

    #[test]
    fn fractions_and_midpoints() {
        let t = quantile_fractions(4);
        assert_eq!(t, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(quantile_midpoints(4), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn huber_pieces_join() {
        let kappa = 1.0;
        let (a, da) = quantile_huber(kappa, 0.3, kappa);
        let (b, db) = quantile_huber(kappa + 1e-9, 0.3, kappa);
        assert!((a - b).abs() < 1e-9 && (da - db).abs() < 1e-8);
        assert_eq!(quantile_huber(-2.0, 0.3, kappa), (0.7 * 1.5, -0.7));
        assert_eq!(quantile_huber(0.5, 0.3, kappa), (0.3 * 0.125, 0.3 * 0.5));
    }

    #[test]
    fn quantile_loss_zero_at_target() {
        let critic = QuantileCritic::from_net(constant_net(2, &[0.7; 4]));
        let batch = vec![tr(0.7, 0.0, true); 3];
        let l = quantile_critic_loss(&batch, &critic, &Still(1), 0.2, 0.9, 1.0, &Noise::zeros(3, 1)).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn quantile_loss_gradient() {
        let mut rng = Rng::new(3);
        let critic = QuantileCritic::new(1, 1, &[6], 4, &mut rng).unwrap();
        let batch = [tr(0.9, 0.0, false), tr(-0.4, 1.0, true), tr(0.1, 0.0, false)];
        let noise = Noise::zeros(3, 1);
        let l = quantile_critic_loss(&batch, &critic, &Still(1), 0.2, 0.9, 1.0, &noise).unwrap();
        let loss = |p: &[f64]| {
            let mut c = critic.clone();
            c.online.params_mut().copy_from_slice(p);
            quantile_critic_loss(&batch, &c, &Still(1), 0.2, 0.9, 1.0, &noise).unwrap().value
        };
        let r = grad_check(loss, critic.online.params(), &l.grad, 1e-3);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn quantiles_collapse_on_deterministic_return() {
        let mut rng = Rng::new(4);
        let mut critic = QuantileCritic::new(1, 1, &[16], 8, &mut rng).unwrap();
        let mut opt = Adam::new(critic.online.num_params(), AdamConfig::with_learning_rate(3e-3));
        let batch = vec![tr(1.5, 0.0, true); 16];
        let noise = Noise::zeros(16, 1);
        for _ in 0..3000 {
            let l = quantile_critic_loss(&batch, &critic, &Still(1), 0.2, 0.9, 1.0, &noise).unwrap();
            opt.step(critic.online.params_mut(), &l.grad, "q").unwrap();
            critic.update_targets(0.05);
        }
        let z = critic.quantiles(&[0.3], &[0.1]).unwrap();
        assert!(z.iter().all(|q| (q - 1.5).abs() < 0.05), "{z:?}");
    }

    #[test]
    fn cons_targets() {
        let zero = TwinCritic::from_heads(constant_net(2, &[0.0]), constant_net(2, &[0.0])).unwrap();
        let mut critic = zero.clone();
        critic.online[0] = constant_net(2, &[0.6]);
        critic.online[1] = constant_net(2, &[-0.2]);
        let policy = crate::policy::test_support::constant_policy(1, &[0.0], &[0.0], &[-1.0], &[1.0]);
        let batch = vec![tr(0.0, 0.0, true); 2];
        let l = cons_critic_loss(&batch, &critic, &policy, 0.0, 0.9, &Noise::zeros(2, 1)).unwrap();
        assert!((l.value - 0.5 * (0.5 * 0.36 + 0.5 * 0.04)).abs() < 1e-15);

        let y = soft_target(&[tr(0.0, 1.0, true)], Signal::ConstraintCost, &Still(1), &zero, 0.5, 0.9, &Noise::zeros(1, 1)).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn cons_critic_settles_at_zero_without_violations() {
        let mut rng = Rng::new(5);
        let mut critic = TwinCritic::new(1, 1, &[16], &mut rng).unwrap();
        for h in 0..2 {
            let last = critic.online[h].num_params() - 1;
            critic.online[h].params_mut()[last] += 2.0;
        }
        let mut opts = [
            Adam::new(critic.online[0].num_params(), AdamConfig::with_learning_rate(3e-3)),
            Adam::new(critic.online[1].num_params(), AdamConfig::with_learning_rate(3e-3)),
        ];
        let batch: Vec<Transition> = (0..16).map(|k| tr(1.0, 0.0, k % 5 == 0)).collect();
        let noise = Noise::zeros(16, 1);
        for _ in 0..3000 {
            let l = cons_critic_loss(&batch, &critic, &Still(1), 0.0, 0.9, &noise).unwrap();
            for h in 0..2 {
                opts[h].step(critic.online[h].params_mut(), &l.grads[h], "q").unwrap();
            }
            critic.update_targets(0.05);
        }
        let q = critic.q(&[0.3], &[0.1]).unwrap();
        assert!(q.iter().all(|v| v.abs() < 0.05), "{q:?}");
    }

    /// `Q(s, a) = -|a|^2`.
    struct Bowl;

    impl BatchCritic for Bowl {
        fn mean_value_and_grad(&self, _s: &[&[f64]], actions: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
            let n = actions.len() as f64;
            let v = -actions.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n;
            let g = actions.iter().map(|a| a.iter().map(|x| -2.0 * x / n).collect()).collect();
            Ok((v, g))
        }
    }

    #[test]
    fn adversary_finds_the_maximiser() {
        let mut rng = Rng::new(6);
        let mut policy = SquashedGaussianPolicy::new(1, &[16], &[-1.0, -1.0], &[1.0, 1.0], &mut rng).unwrap();
        // push the initial mean off centre
        let n = policy.num_params();
        policy.params_mut()[n - 4] += 0.8;
        let mut opt = Adam::new(policy.num_params(), AdamConfig::with_learning_rate(3e-3));
        let state = [0.5];
        let states = vec![&state[..]; 32];
        for _ in 0..2000 {
            let noise = Noise::draw(&mut rng, 32, 2);
            let l = adversary_policy_loss(&states, &policy, &Bowl, 0.005, &noise).unwrap();
            opt.step(policy.params_mut(), &l.grad, "adv").unwrap();
        }
        let mut total = 0.0;
        for _ in 0..1000 {
            let a = policy.sample_action(&state, &mut rng).unwrap().action;
            total += a.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        assert!(total / 1000.0 < 0.1, "{}", total / 1000.0);
    }

    #[test]
    fn zero_risk_value_and_temperature_give_zero_loss() {
        let mut rng = Rng::new(7);
        let policy = SquashedGaussianPolicy::new(2, &[4], &[-1.0], &[1.0], &mut rng).unwrap();
        let zero = TwinCritic::from_heads(constant_net(3, &[0.0]), constant_net(3, &[0.0])).unwrap();
        let states: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let l = adversary_policy_loss(&refs, &policy, &crate::sac::MinTwin(&zero), 0.0, &Noise::draw(&mut rng, 4, 1)).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn beta_signs() {
        let temp = BetaTemp::new(1.0, 2.0, 1e-2).unwrap();
        assert_eq!(beta_loss(2.0, &temp).1, 0.0);
        let (_, g) = beta_loss(0.5, &temp);
        assert!(g < 0.0);
        let mut t = temp.clone();
        t.step(g, "beta").unwrap();
        assert!(t.value() > temp.value());
        let (_, g) = beta_loss(3.5, &temp);
        let mut t = temp.clone();
        t.step(g, "beta").unwrap();
        assert!(t.value() < temp.value());
        let loss = |p: &[f64]| {
            let mut t = temp.clone();
            t.log_value = p[0];
            beta_loss(0.5, &t).0
        };
        assert!(grad_check(loss, &[temp.log_value], &[beta_loss(0.5, &temp).1], 1e-6).passed);
    }

    #[test]
    fn msd_and_cvar_action_gradients() {
        let mut rng = Rng::new(8);
        let twin = TwinCritic::new(2, 2, &[6], &mut rng).unwrap();
        let qc = QuantileCritic::new(2, 2, &[6], 6, &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let actions: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]).collect();
        let critics: [&dyn BatchCritic; 3] = [
            &MsdCritic { critic: &twin, lambda: -1.0, sign: 1.0 },
            &CvarCritic { critic: &qc, lambda: 0.4 },
            &QuantileMean(&qc),
        ];
        for critic in critics {
            let (_, g) = critic.mean_value_and_grad(&refs, &actions).unwrap();
            let flat: Vec<f64> = actions.concat();
            let analytic: Vec<f64> = g.concat();
            let loss = |p: &[f64]| {
                let acts: Vec<Vec<f64>> = p.chunks(2).map(|c| c.to_vec()).collect();
                critic.mean_value_and_grad(&refs, &acts).unwrap().0
            };
            let r = grad_check(loss, &flat, &analytic, 1e-5);
            assert!(r.passed, "{r:?}");
        }
    }
}
