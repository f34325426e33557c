use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::{Euclid, Float};

use super::Dynamics;
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    /// Angular speed above which the constraint fires (strictly greater).
    pub omega_max: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            omega_max: 4.0,
            max_torque: 2.0,
            max_speed: 8.0,
            dt: 0.05,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.omega_max, self.max_torque, self.max_speed, self.dt, self.gravity, self.mass, self.length];
        if all.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("pendulum parameters must be positive".into()));
        }
        Ok(())
    }
}

fn wrap_angle(theta: f64) -> f64 {
    Euclid::rem_euclid(&(theta + PI), &(2.0 * PI)) - PI
}

/// Torque-limited swing-up. State `(cos th, sin th, th_dot)`; the constraint
/// bounds the angular speed and never ends the episode, so violations
/// accumulate over an episode.
#[derive(Debug, Clone)]
pub struct ConstrainedPendulum {
    params: PendulumParams,
    low: [f64; 1],
    high: [f64; 1],
}

impl ConstrainedPendulum {
    pub fn new(params: PendulumParams) -> Self {
        let t = params.max_torque;
        Self {
            params,
            low: [-t],
            high: [t],
        }
    }
}

impl Dynamics for ConstrainedPendulum {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_low(&self) -> &[f64] {
        &self.low
    }

    fn action_high(&self) -> &[f64] {
        &self.high
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        let theta = rng.uniform_range(-PI, PI);
        let omega = rng.uniform_range(-1.0, 1.0);
        vec![theta.cos(), theta.sin(), omega]
    }

    fn transition(&self, s: &[f64], a: &[f64], _rng: &mut Rng) -> (Vec<f64>, f64, bool) {
        let p = &self.params;
        let theta = s[1].atan2(s[0]);
        let omega = s[2];
        let u = a[0].clamp(-p.max_torque, p.max_torque);
        let cost = wrap_angle(theta).powi(2) + 0.1 * omega * omega + 0.001 * u * u;
        let accel = 3.0 * p.gravity / (2.0 * p.length) * theta.sin() + 3.0 / (p.mass * p.length * p.length) * u;
        let omega_next = (omega + accel * p.dt).clamp(-p.max_speed, p.max_speed);
        let theta_next = theta + omega_next * p.dt;
        (vec![theta_next.cos(), theta_next.sin(), omega_next], -cost, false)
    }

    fn violations(&self, _s: &[f64], _a: &[f64], next: &[f64], out: &mut Vec<bool>) {
        out.push(next[2].abs() > self.params.omega_max);
    }

    fn state_bound(&self) -> f64 {
        (1.0 + self.params.max_speed * self.params.max_speed).sqrt()
    }

    fn reward_range(&self) -> (f64, f64) {
        let p = &self.params;
        (-(PI * PI + 0.1 * p.max_speed * p.max_speed + 0.001 * p.max_torque * p.max_torque), 0.0)
    }
}
