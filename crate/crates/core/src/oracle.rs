//! Exact small-scale references: soft value iteration, Boltzmann policies,
//! enumerated return distributions and risk functionals on tabular MDPs.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    pub cost: f64,
}

/// Finite MDP with per-transition rewards and constraint costs. Terminal
/// states end trajectories and have zero value; error states make up the
/// region whose entry probability is the subspace risk.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    outcomes: Vec<Vec<Outcome>>,
    pub terminal: Vec<bool>,
    pub error: Vec<bool>,
    pub initial: usize,
    pub gamma: f64,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64, horizon: usize) -> Self {
        Self {
            n_states,
            n_actions,
            outcomes: vec![Vec::new(); n_states * n_actions],
            terminal: vec![false; n_states],
            error: vec![false; n_states],
            initial: 0,
            gamma,
            horizon,
        }
    }

    pub fn add_outcome(&mut self, s: usize, a: usize, next: usize, prob: f64, reward: f64, cost: f64) {
        if prob > 0.0 {
            self.outcomes[s * self.n_actions + a].push(Outcome { next, prob, reward, cost });
        }
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.outcomes[s * self.n_actions + a]
    }

    /// `P[s, a, next]`.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.outcomes(s, a).iter().filter(|o| o.next == next).map(|o| o.prob).sum()
    }

    /// `R[s, a]`, the expected one-step reward.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.outcomes(s, a).iter().map(|o| o.prob * o.reward).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Config("tabular MDP needs states and actions".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || self.initial >= self.n_states {
            return Err(Error::Config("tabular MDP gamma or initial state out of range".into()));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.outcomes(s, a);
                let total: f64 = row.iter().map(|o| o.prob).sum();
                if (total - 1.0).abs() > 1e-12 || row.iter().any(|o| o.next >= self.n_states || !o.reward.is_finite()) {
                    return Err(Error::Config(alloc::format!("transition row ({s}, {a}) is not a distribution")));
                }
            }
        }
        Ok(())
    }
}

/// Dense `n_states x n_actions` table of action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.values.len() / self.n_actions
    }
}

/// Row-stochastic `n_states x n_actions` table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }
}

/// `alpha * ln sum exp(q / alpha)`, computed around the maximum.
pub fn soft_max(q: &[f64], alpha: f64) -> f64 {
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + alpha * q.iter().map(|&x| ((x - m) / alpha).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct SoftViResult {
    pub q: QTable,
    pub iterations: usize,
    /// Max-norm change of Q per sweep.
    pub residuals: Vec<f64>,
}

pub const SOFT_VI_MAX_ITERS: usize = 200_000;

/// Iterates `Q(s,a) = sum_s' P (r + gamma V(s'))` with the soft value
/// `V(s) = alpha ln sum_a' exp(Q(s,a')/alpha)` and `V = 0` on terminal
/// states. With `gamma < 1` it runs to `tolerance`; with `gamma = 1` it runs
/// exactly `horizon` sweeps.
pub fn soft_value_iteration(mdp: &TabularMdp, alpha: f64, tolerance: f64) -> Result<SoftViResult> {
    mdp.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::Config("soft value iteration needs alpha > 0".into()));
    }
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let finite = mdp.gamma >= 1.0;
    let cap = if finite { mdp.horizon } else { SOFT_VI_MAX_ITERS };
    let mut q = vec![0.0; n * m];
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    for it in 0..cap {
        for s in 0..n {
            v[s] = if mdp.terminal[s] { 0.0 } else { soft_max(&q[s * m..(s + 1) * m], alpha) };
        }
        let mut delta: f64 = 0.0;
        for s in 0..n {
            for a in 0..m {
                let new = if mdp.terminal[s] {
                    0.0
                } else {
                    mdp.outcomes(s, a).iter().map(|o| o.prob * (o.reward + mdp.gamma * v[o.next])).sum()
                };
                delta = delta.max((new - q[s * m + a]).abs());
                q[s * m + a] = new;
            }
        }
        residuals.push(delta);
        if !finite && delta < tolerance {
            return Ok(SoftViResult {
                q: QTable { n_actions: m, values: q },
                iterations: it + 1,
                residuals,
            });
        }
    }
    if finite {
        return Ok(SoftViResult {
            q: QTable { n_actions: m, values: q },
            iterations: cap,
            residuals,
        });
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// `pi(a|s) = exp(Q(s,a)/alpha) / Z(s)`.
pub fn boltzmann_policy(q: &QTable, alpha: f64) -> PolicyTable {
    let m = q.n_actions;
    let mut probs = Vec::with_capacity(q.values.len());
    for s in 0..q.n_states() {
        let row = q.row(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = row.iter().map(|&x| ((x - max) / alpha).exp()).collect();
        let z: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / z));
    }
    PolicyTable { n_actions: m, probs }
}

/// Soft value `V(s) = sum_a pi (r - alpha ln pi + gamma sum P V)` of a fixed
/// policy, solved exactly. Needs `gamma < 1` or every non-terminal state to
/// reach a terminal one.
pub fn soft_policy_value(mdp: &TabularMdp, policy: &PolicyTable, alpha: f64) -> Result<Vec<f64>> {
    let n = mdp.n_states;
    // (I - gamma P_pi) V = r_pi
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s * n + s] = 1.0;
        if mdp.terminal[s] {
            continue;
        }
        for (act, &p) in policy.row(s).iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            b[s] += p * (mdp.expected_reward(s, act) - alpha * p.ln());
            for o in mdp.outcomes(s, act) {
                a[s * n + o.next] -= mdp.gamma * p * o.prob;
            }
        }
    }
    solve_dense(&mut a, &mut b, n)?;
    Ok(b)
}

// Gaussian elimination with partial pivoting; the solution overwrites `b`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
            .unwrap();
        if a[pivot * n + col].abs() < 1e-14 {
            return Err(Error::Config("policy evaluation system is singular".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    Ok(())
}

/// Exact distribution of undiscounted trajectory returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistribution {
    /// `(return, probability)` sorted by return, equal returns merged.
    pub atoms: Vec<(f64, f64)>,
    /// Probability that the trajectory enters an error state.
    pub error_probability: f64,
    /// Expected summed constraint cost.
    pub expected_cost: f64,
}

impl ReturnDistribution {
    pub fn total_probability(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(r, p)| r * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().map(|(r, p)| p * (r - m).powi(2)).sum()
    }

    /// Expectation of the lowest `lambda` fraction of outcomes; `lambda = 0`
    /// gives the smallest atom.
    pub fn cvar(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return self.atoms.first().map(|a| a.0).unwrap_or(0.0);
        }
        let mut mass = 0.0;
        let mut acc = 0.0;
        for &(r, p) in &self.atoms {
            let take = p.min(lambda - mass);
            if take <= 0.0 {
                break;
            }
            acc += take * r;
            mass += take;
        }
        acc / mass
    }
}

pub const ENUMERATION_CAP: usize = 1 << 22;

/// Enumerates every trajectory of at most `horizon` steps from the initial
/// state, stopping early at terminal states.
pub fn return_distribution(mdp: &TabularMdp, policy: &PolicyTable) -> Result<ReturnDistribution> {
    mdp.validate()?;
    struct Walk<'a> {
        mdp: &'a TabularMdp,
        policy: &'a PolicyTable,
        atoms: Vec<(f64, f64)>,
        error: f64,
        cost: f64,
        branches: usize,
    }
    impl Walk<'_> {
        fn go(&mut self, s: usize, depth: usize, prob: f64, ret: f64, cost: f64, hit: bool) -> Result<()> {
            self.branches += 1;
            if self.branches > ENUMERATION_CAP {
                return Err(Error::EnumerationCap(ENUMERATION_CAP));
            }
            if depth == self.mdp.horizon || self.mdp.terminal[s] {
                self.atoms.push((ret, prob));
                self.cost += prob * cost;
                if hit {
                    self.error += prob;
                }
                return Ok(());
            }
            for (a, &pa) in self.policy.row(s).iter().enumerate() {
                if pa <= 0.0 {
                    continue;
                }
                for o in self.mdp.outcomes(s, a) {
                    let p = prob * pa * o.prob;
                    self.go(o.next, depth + 1, p, ret + o.reward, cost + o.cost, hit || self.mdp.error[o.next])?;
                }
            }
            Ok(())
        }
    }
    let mut walk = Walk {
        mdp,
        policy,
        atoms: Vec::new(),
        error: 0.0,
        cost: 0.0,
        branches: 0,
    };
    walk.go(mdp.initial, 0, 1.0, 0.0, 0.0, mdp.error[mdp.initial])?;
    let mut atoms = walk.atoms;
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (r, p) in atoms {
        match merged.last_mut() {
            Some(last) if (last.0 - r).abs() <= 1e-12 => last.1 += p,
            _ => merged.push((r, p)),
        }
    }
    Ok(ReturnDistribution {
        atoms: merged,
        error_probability: walk.error,
        expected_cost: walk.cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntReport {
    /// Soft value of the Boltzmann policy per state.
    pub boltzmann_value: Vec<f64>,
    /// Best soft value found on the grid, per state.
    pub best_grid_value: Vec<f64>,
    /// `min_s (boltzmann - best grid)`; non-negative up to grid resolution.
    pub margin: f64,
    pub grid_policies: usize,
    /// Grid policy attaining the largest soft value at the initial state.
    pub best_grid_policy: PolicyTable,
}

pub const GRID_CAP: usize = 1 << 20;

/// Checks that the Boltzmann policy of the soft-VI fixed point maximises the
/// entropy-regularised value against every policy on a grid over the simplex
/// (`resolution` points per state, two-action MDPs only).
pub fn check_maxent_equivalence(mdp: &TabularMdp, alpha: f64, resolution: usize) -> Result<MaxEntReport> {
    if mdp.n_actions != 2 || resolution < 2 {
        return Err(Error::Config("grid check supports two actions and resolution >= 2".into()));
    }
    let n = mdp.n_states;
    let total = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(resolution)).filter(|&t| t <= GRID_CAP);
    let total = total.ok_or(Error::EnumerationCap(GRID_CAP))?;

    let vi = soft_value_iteration(mdp, alpha, 1e-12)?;
    let pi = boltzmann_policy(&vi.q, alpha);
    let boltzmann_value = soft_policy_value(mdp, &pi, alpha)?;

    let mut best = vec![f64::NEG_INFINITY; n];
    let mut best_policy = PolicyTable::uniform(n, 2);
    let mut grid = PolicyTable::uniform(n, 2);
    for index in 0..total {
        let mut k = index;
        for s in 0..n {
            let p = (k % resolution) as f64 / (resolution - 1) as f64;
            k /= resolution;
            grid.probs[2 * s] = p;
            grid.probs[2 * s + 1] = 1.0 - p;
        }
        let v = soft_policy_value(mdp, &grid, alpha)?;
        if v[mdp.initial] > best[mdp.initial] {
            best_policy = grid.clone();
        }
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
    }
    let margin = (0..n).map(|s| boltzmann_value[s] - best[s]).fold(f64::INFINITY, f64::min);
    Ok(MaxEntReport {
        boltzmann_value,
        best_grid_value: best,
        margin,
        grid_policies: total,
        best_grid_policy: best_policy,
    })
}

/// Identity behind the repulsion form of the agent loss, on a single-state
/// two-action problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RepulsionReport {
    /// Spread over the grid of `agent objective + loss` with the adversary at
    /// its Boltzmann optimum; zero when the loss is the objective up to a
    /// constant.
    pub identity_spread: f64,
    /// Range over the grid of `agent objective + loss` for a non-optimal
    /// adversary policy. Reported only.
    pub suboptimal_gap_range: (f64, f64),
}

/// Compares the agent objective
/// `E[Q_agent] + a0 H(pi) - b0 (E_pi[Q_adv] + a0 H(pi_adv))`
/// with the actor loss `E_pi[a ln pi - Q_agent - b (ln pi - ln pi_adv)]`,
/// `a = a0 (1 + b0)`, `b = a0 b0`, over a grid of agent policies.
pub fn repulsion_identity(
    q_agent: [f64; 2],
    q_adv: [f64; 2],
    alpha0: f64,
    beta0: f64,
    suboptimal_adv: [f64; 2],
    resolution: usize,
) -> RepulsionReport {
    let alpha = alpha0 * (1.0 + beta0);
    let beta = alpha0 * beta0;
    let xlnx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let entropy = |pi: [f64; 2]| -(xlnx(pi[0]) + xlnx(pi[1]));
    let z = (q_adv[0] / alpha0).exp() + (q_adv[1] / alpha0).exp();
    let adv_opt = [(q_adv[0] / alpha0).exp() / z, (q_adv[1] / alpha0).exp() / z];

    let combined = |pi: [f64; 2], adv: [f64; 2]| {
        let objective = pi[0] * q_agent[0] + pi[1] * q_agent[1] + alpha0 * entropy(pi)
            - beta0 * (pi[0] * q_adv[0] + pi[1] * q_adv[1] + alpha0 * entropy(adv));
        let loss: f64 = (0..2)
            .filter(|&a| pi[a] > 0.0)
            .map(|a| pi[a] * (alpha * pi[a].ln() - q_agent[a] - beta * (pi[a].ln() - adv[a].ln())))
            .sum();
        objective + loss
    };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut gap_lo = f64::INFINITY;
    let mut gap_hi = f64::NEG_INFINITY;
    // interior points only: ln pi_adv is finite there and the loss is smooth
    for k in 1..resolution {
        let p = k as f64 / resolution as f64;
        let pi = [p, 1.0 - p];
        let c = combined(pi, adv_opt);
        lo = lo.min(c);
        hi = hi.max(c);
        let g = combined(pi, suboptimal_adv);
        gap_lo = gap_lo.min(g);
        gap_hi = gap_hi.max(g);
    }
    RepulsionReport {
        identity_spread: hi - lo,
        suboptimal_gap_range: (gap_lo, gap_hi),
    }
}

/// Two-state, two-action discounted MDP used by the equivalence checks.
pub fn two_state_mdp(gamma: f64) -> TabularMdp {
    let mut mdp = TabularMdp::new(2, 2, gamma, 0);
    mdp.add_outcome(0, 0, 0, 0.7, 1.0, 0.0);
    mdp.add_outcome(0, 0, 1, 0.3, 1.0, 0.0);
    mdp.add_outcome(0, 1, 1, 0.9, 0.0, 0.0);
    mdp.add_outcome(0, 1, 0, 0.1, 0.0, 0.0);
    mdp.add_outcome(1, 0, 0, 1.0, -0.5, 0.0);
    mdp.add_outcome(1, 1, 1, 0.6, 2.0, 0.0);
    mdp.add_outcome(1, 1, 0, 0.4, 2.0, 0.0);
    mdp
}
