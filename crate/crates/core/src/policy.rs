//! Tanh-squashed diagonal Gaussian policies.
//!
//! A trunk network maps a state to a mean and a log standard deviation per
//! action dimension. Samples are drawn as `u = mean + std * noise` and
//! squashed into the action box with `tanh`; densities carry the exact
//! log-Jacobian of the squash so they stay normalised on the open box.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::check_dim;
use crate::numerics::{Mlp, Tape};
use crate::{Error, Result, Rng};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Pre-squash values are clamped to this magnitude so that `tanh` never
/// rounds to the interval end and every emitted action is strictly interior.
pub const PRE_SQUASH_LIMIT: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const LN_2: f64 = core::f64::consts::LN_2;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (LN_2 - a - softplus(-2.0 * a))
}

/// Something that can propose an action and its log-density for a state given
/// pre-drawn standard normal noise. Used wherever an action is needed without
/// differentiating through it (bootstrap targets).
pub trait ActionSource {
    fn action_dim(&self) -> usize;
    fn act(&self, state: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)>;
}

/// Something that picks actions to execute in an environment.
pub trait Actor {
    fn select(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Standard normal draw behind this sample.
    pub noise: Vec<f64>,
    pub pre_squash: Vec<f64>,
}

/// Everything needed to push gradients from a sampled action back into the
/// trunk parameters.
#[derive(Debug, Clone)]
pub struct PolicyTape {
    tape: Tape,
    pub sample: ActionSample,
    mean: Vec<f64>,
    log_std: Vec<f64>,
    log_std_active: Vec<bool>,
    pre_squash_active: Vec<bool>,
}

/// Upstream derivatives of a scalar loss with respect to one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrad<'a> {
    pub action: &'a [f64],
    pub log_prob: f64,
    /// Extra derivative with respect to the pre-squash value, for terms that
    /// are functions of the sample but not of this policy's density.
    pub pre_squash: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    trunk: Mlp,
    scale: Vec<f64>,
    offset: Vec<f64>,
    log_std_min: f64,
    log_std_max: f64,
}

impl SquashedGaussianPolicy {
    pub fn new(state_dim: usize, hidden: &[usize], low: &[f64], high: &[f64], rng: &mut Rng) -> Result<Self> {
        check_dim("action bounds", low.len(), high.len())?;
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(state_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(2 * low.len());
        Self::from_trunk(Mlp::new(&sizes, rng)?, low, high)
    }

    pub fn from_trunk(trunk: Mlp, low: &[f64], high: &[f64]) -> Result<Self> {
        check_dim("action bounds", low.len(), high.len())?;
        check_dim("policy trunk output", 2 * low.len(), trunk.output_dim())?;
        if low.is_empty() || low.iter().zip(high).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config("action bounds must be finite with low < high".into()));
        }
        Ok(Self {
            trunk,
            scale: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
            offset: low.iter().zip(high).map(|(l, h)| 0.5 * (h + l)).collect(),
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        })
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn params(&self) -> &[f64] {
        self.trunk.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.trunk.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params()
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn low(&self) -> Vec<f64> {
        self.offset.iter().zip(&self.scale).map(|(o, s)| o - s).collect()
    }

    pub fn high(&self) -> Vec<f64> {
        self.offset.iter().zip(&self.scale).map(|(o, s)| o + s).collect()
    }

    /// Mean and clamped log standard deviation of the pre-squash Gaussian.
    pub fn distribution(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.trunk.forward(state)?;
        let d = self.scale.len();
        let mean = out[..d].to_vec();
        let log_std = out[d..].iter().map(|&l| l.clamp(self.log_std_min, self.log_std_max)).collect();
        check_finite(&out)?;
        Ok((mean, log_std))
    }

    /// Squashed mean, used for deterministic evaluation.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.distribution(state)?;
        Ok(mean
            .iter()
            .enumerate()
            .map(|(i, &m)| self.offset[i] + self.scale[i] * m.clamp(-PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT).tanh())
            .collect())
    }

    pub fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<ActionSample> {
        let mut noise = vec![0.0; self.action_dim()];
        rng.fill_normal(&mut noise);
        self.sample_with_noise(state, &noise)
    }

    pub fn sample_with_noise(&self, state: &[f64], noise: &[f64]) -> Result<ActionSample> {
        Ok(self.rsample(state, noise)?.sample)
    }

    /// Reparameterised sample that keeps the trunk activations for
    /// [`Self::backward`].
    pub fn rsample(&self, state: &[f64], noise: &[f64]) -> Result<PolicyTape> {
        let d = self.action_dim();
        check_dim("policy noise", d, noise.len())?;
        let tape = self.trunk.forward_tape(state)?;
        let out = tape.output();
        check_finite(out)?;
        let mut mean = Vec::with_capacity(d);
        let mut log_std = Vec::with_capacity(d);
        let mut log_std_active = Vec::with_capacity(d);
        let mut pre_squash = Vec::with_capacity(d);
        let mut pre_squash_active = Vec::with_capacity(d);
        let mut action = Vec::with_capacity(d);
        let mut log_prob = 0.0;
        for i in 0..d {
            let raw = out[d + i];
            let ls = raw.clamp(self.log_std_min, self.log_std_max);
            let u_free = out[i] + ls.exp() * noise[i];
            let u = u_free.clamp(-PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT);
            log_prob += self.log_density_1d(i, u, out[i], ls);
            mean.push(out[i]);
            log_std.push(ls);
            log_std_active.push(raw == ls);
            pre_squash.push(u);
            pre_squash_active.push(u == u_free);
            action.push(self.offset[i] + self.scale[i] * u.tanh());
        }
        Ok(PolicyTape {
            tape,
            sample: ActionSample {
                action,
                log_prob,
                noise: noise.to_vec(),
                pre_squash,
            },
            mean,
            log_std,
            log_std_active,
            pre_squash_active,
        })
    }

    fn log_density_1d(&self, i: usize, u: f64, mean: f64, log_std: f64) -> f64 {
        let z = (u - mean) * (-log_std).exp();
        -0.5 * z * z - log_std - HALF_LN_2PI - self.scale[i].ln() - log_one_minus_tanh_sq(u)
    }

    /// Log-density of the action `offset + scale * tanh(u)`, together with
    /// its derivative with respect to `u`. This policy's parameters are held
    /// fixed.
    pub fn log_prob_pre_squash(&self, state: &[f64], pre_squash: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("pre-squash action", self.action_dim(), pre_squash.len())?;
        let (mean, log_std) = self.distribution(state)?;
        let mut lp = 0.0;
        let mut grad = Vec::with_capacity(pre_squash.len());
        for i in 0..pre_squash.len() {
            let u = pre_squash[i];
            lp += self.log_density_1d(i, u, mean[i], log_std[i]);
            let inv_std = (-log_std[i]).exp();
            grad.push(-(u - mean[i]) * inv_std * inv_std + 2.0 * u.tanh());
        }
        Ok((lp, grad))
    }

    /// Exact log-density of an action strictly inside the action box.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_dim("action", self.action_dim(), action.len())?;
        let mut u = Vec::with_capacity(action.len());
        for (i, &a) in action.iter().enumerate() {
            let y = (a - self.offset[i]) / self.scale[i];
            if !(y.abs() < 1.0) {
                return Err(Error::Boundary { index: i, value: a });
            }
            u.push(y.atanh());
        }
        Ok(self.log_prob_pre_squash(state, &u)?.0)
    }

    /// Accumulates into `param_grad` the trunk gradient of a loss whose
    /// derivatives with respect to this sample are given by `upstream`.
    pub fn backward(&self, tape: &PolicyTape, upstream: SampleGrad<'_>, param_grad: &mut [f64]) -> Result<()> {
        let d = self.action_dim();
        check_dim("action gradient", d, upstream.action.len())?;
        let mut out_grad = vec![0.0; 2 * d];
        for i in 0..d {
            let u = tape.sample.pre_squash[i];
            let y = u.tanh();
            let std = tape.log_std[i].exp();
            let z = (u - tape.mean[i]) / std;
            let mut d_u = upstream.action[i] * self.scale[i] * (1.0 - y * y)
                + upstream.log_prob * (-z / std + 2.0 * y);
            if let Some(extra) = upstream.pre_squash {
                d_u += extra[i];
            }
            let mut d_mean = upstream.log_prob * z / std;
            let mut d_log_std = upstream.log_prob * (z * z - 1.0);
            if tape.pre_squash_active[i] {
                d_mean += d_u;
                d_log_std += d_u * std * tape.sample.noise[i];
            }
            out_grad[i] = d_mean;
            out_grad[d + i] = if tape.log_std_active[i] { d_log_std } else { 0.0 };
        }
        self.trunk.backward(&tape.tape, &out_grad, param_grad)?;
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { loss: "policy trunk" })
    }
}

impl ActionSource for SquashedGaussianPolicy {
    fn action_dim(&self) -> usize {
        self.scale.len()
    }

    fn act(&self, state: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        let s = self.sample_with_noise(state, noise)?;
        Ok((s.action, s.log_prob))
    }
}

impl SquashedGaussianPolicy {
    pub fn action_dim(&self) -> usize {
        self.scale.len()
    }
}

/// Acts with the squashed mean.
#[derive(Debug, Clone, Copy)]
pub struct Deterministic<'a>(pub &'a SquashedGaussianPolicy);

impl Actor for Deterministic<'_> {
    fn select(&self, state: &[f64], _rng: &mut Rng) -> Result<Vec<f64>> {
        self.0.mean_action(state)
    }
}

/// Acts by sampling from the policy.
#[derive(Debug, Clone, Copy)]
pub struct Stochastic<'a>(pub &'a SquashedGaussianPolicy);

impl Actor for Stochastic<'_> {
    fn select(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.0.sample_action(state, rng)?.action)
    }
}

/// Uniform actions over a box, ignoring the state.
#[derive(Debug, Clone)]
pub struct UniformActor {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Actor for UniformActor {
    fn select(&self, _state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.low.iter().zip(&self.high).map(|(&l, &h)| rng.uniform_range(l, h)).collect())
    }
}

/// Monte-Carlo estimate of `E_s KL(pi_a(.|s) || pi_b(.|s))` from
/// `n_samples` draws of `pi_a` per state. Single terms may be negative.
///
/// Both log-densities are taken at the unclamped pre-squash draw. The tanh
/// Jacobian is common to both and cancels, so this is the log-ratio of the
/// squashed densities even where a sample would be clamped.
pub fn kl_estimate<S: AsRef<[f64]>>(
    pi_a: &SquashedGaussianPolicy,
    pi_b: &SquashedGaussianPolicy,
    states: &[S],
    rng: &mut Rng,
    n_samples: usize,
) -> Result<f64> {
    check_dim("kl action spaces", pi_a.action_dim(), pi_b.action_dim())?;
    check_dim("kl state spaces", pi_a.state_dim(), pi_b.state_dim())?;
    if states.is_empty() || n_samples == 0 {
        return Ok(0.0);
    }
    let mut noise = vec![0.0; pi_a.action_dim()];
    let mut total = 0.0;
    for s in states {
        let s = s.as_ref();
        let (mean_a, log_std_a) = pi_a.distribution(s)?;
        let (mean_b, log_std_b) = pi_b.distribution(s)?;
        for _ in 0..n_samples {
            rng.fill_normal(&mut noise);
            for i in 0..noise.len() {
                let u = mean_a[i] + log_std_a[i].exp() * noise[i];
                let z = (u - mean_b[i]) * (-log_std_b[i]).exp();
                total += -0.5 * noise[i] * noise[i] - log_std_a[i] + 0.5 * z * z + log_std_b[i];
            }
        }
    }
    Ok(total / (states.len() * n_samples) as f64)
}



/// Standard normal draws for a batch, one row per sample. Passing the same
/// `Noise` twice freezes the sampling so losses become deterministic
/// functions of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    dim: usize,
    values: Vec<f64>,
}

impl Noise {
    pub fn draw(rng: &mut Rng, rows: usize, dim: usize) -> Self {
        let mut values = vec![0.0; rows * dim];
        rng.fill_normal(&mut values);
        Self { dim, values }
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}
