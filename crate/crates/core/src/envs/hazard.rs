use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use super::Dynamics;
use crate::{Error, Result, Rng};

/// Geometry of the point-mass navigation task. The hazard disk sits across
/// the straight line from start to goal, slightly off-centre, so the short
/// route grazes it and the safe route detours.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardParams {
    pub start: [f64; 2],
    pub start_jitter: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub goal_bonus: f64,
    pub hazard_center: [f64; 2],
    pub hazard_radius: f64,
    /// Reward is `-distance_cost * |p - goal|` per step.
    pub distance_cost: f64,
    /// Speed above which a second constraint fires; 0 disables it.
    pub speed_limit: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub dt: f64,
    /// Half-width of the square arena.
    pub arena: f64,
}

impl Default for HazardParams {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0],
            start_jitter: 0.05,
            goal: [2.0, 0.0],
            goal_radius: 0.2,
            goal_bonus: 10.0,
            hazard_center: [1.0, 0.1],
            hazard_radius: 0.35,
            distance_cost: 0.1,
            speed_limit: 0.0,
            max_speed: 1.0,
            max_accel: 2.0,
            dt: 0.1,
            arena: 3.0,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl HazardParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.goal_radius,
            self.hazard_radius,
            self.max_speed,
            self.max_accel,
            self.dt,
            self.arena,
        ];
        if positive.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("hazard geometry needs positive radii, speeds, dt and arena".into()));
        }
        if self.speed_limit < 0.0 || self.distance_cost < 0.0 || self.start_jitter < 0.0 {
            return Err(Error::Config("hazard speed_limit, distance_cost and jitter must be non-negative".into()));
        }
        let reach = self.start_jitter * core::f64::consts::SQRT_2;
        if dist(self.start, self.hazard_center) <= self.hazard_radius + reach {
            return Err(Error::Config("hazard start region overlaps the hazard".into()));
        }
        let inside = |p: [f64; 2]| p.iter().all(|c| c.abs() + reach <= self.arena);
        if !inside(self.start) || !inside(self.goal) {
            return Err(Error::Config("hazard start and goal must lie inside the arena".into()));
        }
        Ok(())
    }
}

/// Point mass in the plane: state `(x, y, vx, vy)`, action a bounded 2-D
/// acceleration. Entering the hazard disk is an error state and ends the
/// episode; entering the goal disk pays a bonus and ends the episode.
#[derive(Debug, Clone)]
pub struct HazardPoint2D {
    params: HazardParams,
    low: [f64; 2],
    high: [f64; 2],
}

impl HazardPoint2D {
    pub fn new(params: HazardParams) -> Self {
        Self {
            params,
            low: [-1.0; 2],
            high: [1.0; 2],
        }
    }

    pub fn params(&self) -> &HazardParams {
        &self.params
    }

    pub fn in_hazard(&self, state: &[f64]) -> bool {
        dist([state[0], state[1]], self.params.hazard_center) < self.params.hazard_radius
    }

    pub fn in_goal(&self, state: &[f64]) -> bool {
        dist([state[0], state[1]], self.params.goal) < self.params.goal_radius
    }
}

impl Dynamics for HazardPoint2D {
    fn state_dim(&self) -> usize {
        4
    }

    fn action_low(&self) -> &[f64] {
        &self.low
    }

    fn action_high(&self) -> &[f64] {
        &self.high
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        let j = self.params.start_jitter;
        vec![
            self.params.start[0] + rng.uniform_range(-j, j),
            self.params.start[1] + rng.uniform_range(-j, j),
            0.0,
            0.0,
        ]
    }

    fn transition(&self, s: &[f64], a: &[f64], _rng: &mut Rng) -> (Vec<f64>, f64, bool) {
        let p = &self.params;
        let mut v = [
            s[2] + p.max_accel * a[0].clamp(-1.0, 1.0) * p.dt,
            s[3] + p.max_accel * a[1].clamp(-1.0, 1.0) * p.dt,
        ];
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > p.max_speed {
            v[0] *= p.max_speed / speed;
            v[1] *= p.max_speed / speed;
        }
        let mut next = vec![s[0] + v[0] * p.dt, s[1] + v[1] * p.dt, v[0], v[1]];
        for i in 0..2 {
            if next[i].abs() > p.arena {
                next[i] = next[i].clamp(-p.arena, p.arena);
                next[i + 2] = 0.0;
            }
        }
        let mut reward = -p.distance_cost * dist([next[0], next[1]], p.goal);
        let goal = self.in_goal(&next);
        if goal {
            reward += p.goal_bonus;
        }
        (next.clone(), reward, goal || self.in_hazard(&next))
    }

    fn violations(&self, _s: &[f64], _a: &[f64], next: &[f64], out: &mut Vec<bool>) {
        out.push(self.in_hazard(next));
        if self.params.speed_limit > 0.0 {
            out.push((next[2] * next[2] + next[3] * next[3]).sqrt() > self.params.speed_limit);
        }
    }

    fn state_bound(&self) -> f64 {
        (2.0 * self.params.arena * self.params.arena + self.params.max_speed * self.params.max_speed).sqrt()
    }

    fn reward_range(&self) -> (f64, f64) {
        let p = &self.params;
        let far = 2.0 * core::f64::consts::SQRT_2 * p.arena;
        (-p.distance_cost * far, p.goal_bonus.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use crate::envs::{EnvConfig, EnvKind};
    use crate::Rng;

    #[test]
    fn reset_is_outside_hazard_near_origin() {
        let mut env = EnvConfig::new(EnvKind::HazardPoint2D).build().unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let s = env.reset(&mut rng);
            assert!(s[0].abs() <= 0.05 && s[1].abs() <= 0.05);
            assert_eq!(env.constraint_violated(&s, &[0.0, 0.0], &s), 0.0);
        }
    }

    #[test]
    fn entering_hazard_terminates_with_cost() {
        let mut cfg = EnvConfig::new(EnvKind::HazardPoint2D);
        cfg.hazard.start_jitter = 0.0;
        let mut env = cfg.build().unwrap();
        let mut rng = Rng::new(0);
        env.reset(&mut rng);
        let mut failures = 0.0;
        loop {
            let r = env.step(&[1.0, 0.1], &mut rng).unwrap();
            failures += r.constraint_cost;
            if r.done() {
                assert!(r.terminated);
                assert_eq!(r.constraint_cost, 1.0);
                break;
            }
        }
        assert_eq!(failures, 1.0);
    }

    #[test]
    fn predicate_is_strict() {
        let env = EnvConfig::new(EnvKind::HazardPoint2D).build().unwrap();
        let s = [0.0, 0.0, 0.0, 0.0];
        let centre = [1.0, 0.1, 0.0, 0.0];
        let on_rim = [1.0 + 0.35, 0.1, 0.0, 0.0];
        let outside = [1.0 + 0.36, 0.1, 0.0, 0.0];
        assert_eq!(env.constraint_violated(&s, &[0.0, 0.0], &centre), 1.0);
        assert_eq!(env.constraint_violated(&s, &[0.0, 0.0], &on_rim), 0.0);
        assert_eq!(env.constraint_violated(&s, &[0.0, 0.0], &outside), 0.0);
    }

    #[test]
    fn standing_still_is_safe() {
        let mut env = EnvConfig::new(EnvKind::HazardPoint2D).build().unwrap();
        let mut rng = Rng::new(1);
        env.reset(&mut rng);
        for _ in 0..200 {
            let r = env.step(&[0.0, 0.0], &mut rng).unwrap();
            assert_eq!(r.constraint_cost, 0.0);
            if r.done() {
                assert!(r.truncated);
            }
        }
    }

    #[test]
    fn any_versus_all_with_speed_limit() {
        let mut cfg = EnvConfig::new(EnvKind::HazardPoint2D);
        cfg.hazard.speed_limit = 0.5;
        let s = [0.0; 4];
        let fast_in_hazard = [1.0, 0.1, 0.9, 0.0];
        let slow_in_hazard = [1.0, 0.1, 0.1, 0.0];
        let any = cfg.build().unwrap();
        assert_eq!(any.constraint_violated(&s, &[0.0, 0.0], &slow_in_hazard), 1.0);
        cfg.constraint_mode = crate::envs::ConstraintMode::All;
        let all = cfg.build().unwrap();
        assert_eq!(all.constraint_violated(&s, &[0.0, 0.0], &slow_in_hazard), 0.0);
        assert_eq!(all.constraint_violated(&s, &[0.0, 0.0], &fast_in_hazard), 1.0);
    }

    #[test]
    fn goal_entry_pays_bonus() {
        let mut cfg = EnvConfig::new(EnvKind::HazardPoint2D);
        cfg.hazard.start = [1.7, 0.0];
        cfg.hazard.start_jitter = 0.0;
        let mut env = cfg.build().unwrap();
        let mut rng = Rng::new(0);
        env.reset(&mut rng);
        let mut last = None;
        for _ in 0..50 {
            let r = env.step(&[1.0, 0.0], &mut rng).unwrap();
            let done = r.done();
            last = Some(r);
            if done {
                break;
            }
        }
        let r = last.unwrap();
        assert!(r.terminated);
        assert_eq!(r.constraint_cost, 0.0);
        assert!(r.reward > 9.0);
    }
}
