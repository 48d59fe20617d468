//! Dense tabular MDPs, the Bellman optimality operator, value iteration and
//! iterative policy evaluation.
//!
//! Tables are stored row-major and flattened: `transition[(s * A + a) * S + s']`
//! and `reward[s * A + a]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a probability row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default tolerance for policy evaluation.
pub const DEFAULT_EVAL_TOL: f64 = 1e-12;

/// Hard cap on sweeps for tolerance-driven iterations.
pub const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpJson", into = "MdpJson")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

/// A single failed invariant reported by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    NonFiniteProbability { state: usize, action: usize, next: usize },
    RewardOutOfRange { state: usize, action: usize, value: f64 },
    Discount { gamma: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "P[{state}][{action}] sums to {sum}, expected 1")
            }
            Violation::NegativeProbability { state, action, next, value } => {
                write!(f, "P[{state}][{action}][{next}] = {value} is negative")
            }
            Violation::NonFiniteProbability { state, action, next } => {
                write!(f, "P[{state}][{action}][{next}] is not finite")
            }
            Violation::RewardOutOfRange { state, action, value } => write!(
                f,
                "R[{state}][{action}] = {value} violates the bounded-reward assumption 0 <= R <= 1"
            ),
            Violation::Discount { gamma } => write!(f, "gamma = {gamma} is outside [0, 1)"),
        }
    }
}

impl TabularMdp {
    /// Builds an MDP checking only table dimensions. Use [`validate_mdp`] to
    /// inspect the probabilistic invariants, or [`TabularMdp::new`] to enforce them.
    pub fn from_raw(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::DimensionMismatch(format!(
                "n_states and n_actions must be positive (got {n_states}, {n_actions})"
            )));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        Ok(Self { n_states, n_actions, gamma, transition, reward })
    }

    /// Builds an MDP and rejects it if any invariant fails.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self::from_raw(n_states, n_actions, gamma, transition, reward)?;
        let violations = validate_mdp(&mdp);
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(violations))
        }
    }

    /// Builds a validated MDP from nested `[s][a][s']` and `[s][a]` tables.
    pub fn from_nested(transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>], gamma: f64) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if reward.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "reward has {} state rows, transition has {n_states}",
                reward.len()
            )));
        }
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "transition[{s}] has {} actions, expected {n_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "transition[{s}][{a}] has {} entries, expected {n_states}",
                        row.len()
                    )));
                }
                flat_p.extend_from_slice(row);
            }
        }
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "reward[{s}] has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            flat_r.extend_from_slice(row);
        }
        Self::new(n_states, n_actions, gamma, flat_p, flat_r)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same tables under a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, gamma, self.transition.clone(), self.reward.clone())
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect()
    }

    pub fn reward_nested(&self) -> Vec<Vec<f64>> {
        self.reward.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }
}

/// Lists every violated invariant; empty iff the MDP is well formed.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(0.0..1.0).contains(&mdp.gamma) {
        out.push(Violation::Discount { gamma: mdp.gamma });
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.row(s, a);
            let mut finite = true;
            for (next, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    finite = false;
                    out.push(Violation::NonFiniteProbability { state: s, action: a, next });
                } else if p < 0.0 {
                    out.push(Violation::NegativeProbability { state: s, action: a, next, value: p });
                }
            }
            if finite {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation::RowSum { state: s, action: a, sum });
                }
            }
            let r = mdp.r(s, a);
            if !(0.0..=1.0).contains(&r) {
                out.push(Violation::RewardOutOfRange { state: s, action: a, value: r });
            }
        }
    }
    out
}

/// Wire format: nested arrays, row-major `[s][a][s']` and `[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpJson {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpJson> for TabularMdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        let mdp = TabularMdp::from_nested(&j.transition, &j.reward, j.gamma)?;
        if mdp.n_states != j.n_states || mdp.n_actions != j.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "declared {}x{} but tables are {}x{}",
                j.n_states, j.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(mdp)
    }
}

impl From<TabularMdp> for MdpJson {
    fn from(m: TabularMdp) -> Self {
        MdpJson {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transition: m.transition_nested(),
            reward: m.reward_nested(),
        }
    }
}

/// Deterministic or stochastic stationary policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyTable {
    Deterministic { choice: Vec<usize> },
    /// `probs[s * n_actions + a]`.
    Stochastic { n_actions: usize, probs: Vec<f64> },
}

impl PolicyTable {
    pub fn deterministic(choice: Vec<usize>) -> Self {
        PolicyTable::Deterministic { choice }
    }

    pub fn stochastic(n_actions: usize, probs: Vec<f64>) -> Self {
        PolicyTable::Stochastic { n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        match self {
            PolicyTable::Deterministic { choice } => choice.len(),
            PolicyTable::Stochastic { n_actions, probs } => probs.len() / (*n_actions).max(1),
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match self {
            PolicyTable::Deterministic { choice } => f64::from(u8::from(choice[s] == a)),
            PolicyTable::Stochastic { n_actions, probs } => probs[s * n_actions + a],
        }
    }

    /// Dense per-state probability rows over `n_actions` actions.
    pub fn to_rows(&self, n_actions: usize) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|s| (0..n_actions).map(|a| self.prob(s, a)).collect())
            .collect()
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        match self {
            PolicyTable::Deterministic { choice } => {
                if choice.len() != n_states {
                    return Err(Error::InvalidPolicy(format!(
                        "policy covers {} states, expected {n_states}",
                        choice.len()
                    )));
                }
                if let Some((s, &a)) = choice.iter().enumerate().find(|(_, &a)| a >= n_actions) {
                    return Err(Error::InvalidPolicy(format!(
                        "state {s} selects action {a}, but only {n_actions} exist"
                    )));
                }
            }
            PolicyTable::Stochastic { n_actions: na, probs } => {
                if *na != n_actions || probs.len() != n_states * n_actions {
                    return Err(Error::InvalidPolicy(format!(
                        "stochastic policy has shape {}x{na}, expected {n_states}x{n_actions}",
                        probs.len() / (*na).max(1)
                    )));
                }
                for (s, row) in probs.chunks(n_actions).enumerate() {
                    if row.iter().any(|&p| !(p >= 0.0)) {
                        return Err(Error::InvalidPolicy(format!("state {s} has a negative probability")));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::InvalidPolicy(format!("state {s} row sums to {sum}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Action values, state values and solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub n_actions: usize,
    /// `q[s * n_actions + a]`.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations_used: usize,
    /// Sup-norm of the last update.
    pub residual: f64,
}

impl ValueTables {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            q: vec![0.0; n_states * n_actions],
            v: vec![0.0; n_states],
            iterations_used: 0,
            residual: 0.0,
        }
    }

    /// Tables holding `q` everywhere, with `v = max_a q`.
    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_actions,
            q: vec![value; n_states * n_actions],
            v: vec![value; n_states],
            iterations_used: 0,
            residual: 0.0,
        }
    }

    /// Wraps an action-value table; `v` is set to the row maxima.
    pub fn from_q(n_actions: usize, q: Vec<f64>) -> Self {
        let v = q.chunks(n_actions).map(row_max).collect();
        Self { n_actions, q, v, iterations_used: 0, residual: 0.0 }
    }

    #[inline]
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn n_states(&self) -> usize {
        self.v.len()
    }
}

/// Stopping rule for [`value_iteration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Exactly `T` sweeps from the zero initialisation.
    Iterations(usize),
    /// Sweep until the sup-norm residual drops below the tolerance.
    Tolerance(f64),
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the first maximal entry.
pub fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn sup_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// One application of the optimality operator: `q_out = T q_in`. Returns the
/// sup-norm change.
fn bellman_sweep(mdp: &TabularMdp, q_in: &[f64], v_in: &mut [f64], q_out: &mut [f64]) -> f64 {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    for (s, v) in v_in.iter_mut().enumerate() {
        *v = row_max(&q_in[s * na..(s + 1) * na]);
    }
    let mut residual: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let idx = s * na + a;
            let expected: f64 = mdp.row(s, a).iter().zip(v_in.iter()).map(|(p, v)| p * v).sum();
            let updated = mdp.reward[idx] + mdp.gamma * expected;
            residual = residual.max((updated - q_in[idx]).abs());
            q_out[idx] = updated;
        }
    }
    residual
}

fn check_dims(mdp: &TabularMdp, q: &ValueTables) -> Result<()> {
    if q.n_actions != mdp.n_actions || q.q.len() != mdp.n_states * mdp.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "value table is {}x{}, MDP is {}x{}",
            q.q.len() / q.n_actions.max(1),
            q.n_actions,
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// Applies the Bellman optimality operator once.
pub fn bellman_optimal_update(mdp: &TabularMdp, q: &ValueTables) -> Result<ValueTables> {
    check_dims(mdp, q)?;
    let mut v = vec![0.0; mdp.n_states];
    let mut out = vec![0.0; q.q.len()];
    let residual = bellman_sweep(mdp, &q.q, &mut v, &mut out);
    let mut next = ValueTables::from_q(mdp.n_actions, out);
    next.iterations_used = q.iterations_used + 1;
    next.residual = residual;
    Ok(next)
}

/// Greedy deterministic policy; ties go to the lowest action index.
pub fn greedy_policy(values: &ValueTables) -> PolicyTable {
    let choice = values.q.chunks(values.n_actions).map(argmax_first).collect();
    PolicyTable::deterministic(choice)
}

/// Value iteration from `Q = 0`, returning the final tables and the greedy policy.
pub fn value_iteration(mdp: &TabularMdp, stop: StopRule) -> Result<(ValueTables, PolicyTable)> {
    let (max_sweeps, tol) = match stop {
        StopRule::Iterations(t) => (t, None),
        StopRule::Tolerance(eps) => {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("VI tolerance must be positive, got {eps}")));
            }
            (MAX_SWEEPS, Some(eps))
        }
    };
    let size = mdp.n_states * mdp.n_actions;
    let mut q = vec![0.0; size];
    let mut scratch = vec![0.0; size];
    let mut v = vec![0.0; mdp.n_states];
    let mut residual = 0.0;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        residual = bellman_sweep(mdp, &q, &mut v, &mut scratch);
        std::mem::swap(&mut q, &mut scratch);
        sweeps += 1;
        if tol.is_some_and(|eps| residual < eps) {
            break;
        }
    }
    let mut tables = ValueTables::from_q(mdp.n_actions, q);
    tables.iterations_used = sweeps;
    tables.residual = residual;
    let policy = greedy_policy(&tables);
    Ok((tables, policy))
}

/// Successive-approximation evaluation of `policy` until the sup-norm change of
/// `V` drops below `tolerance`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &PolicyTable, tolerance: f64) -> Result<ValueTables> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!("evaluation tolerance must be positive, got {tolerance}")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    policy.validate(ns, na)?;

    // Policy-averaged kernel and reward.
    let mut p_pi = vec![0.0; ns * ns];
    let mut r_pi = vec![0.0; ns];
    for s in 0..ns {
        let target = &mut p_pi[s * ns..(s + 1) * ns];
        let mut add = |a: usize, w: f64| {
            r_pi[s] += w * mdp.r(s, a);
            for (t, p) in target.iter_mut().zip(mdp.row(s, a)) {
                *t += w * p;
            }
        };
        match policy {
            PolicyTable::Deterministic { choice } => add(choice[s], 1.0),
            PolicyTable::Stochastic { probs, .. } => {
                for (a, &w) in probs[s * na..(s + 1) * na].iter().enumerate() {
                    if w > 0.0 {
                        add(a, w);
                    }
                }
            }
        }
    }

    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while residual >= tolerance && sweeps < MAX_SWEEPS {
        residual = 0.0;
        for s in 0..ns {
            let ev: f64 = p_pi[s * ns..(s + 1) * ns].iter().zip(&v).map(|(p, x)| p * x).sum();
            next[s] = r_pi[s] + mdp.gamma * ev;
            residual = residual.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        sweeps += 1;
    }

    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp.row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            q[s * na + a] = mdp.r(s, a) + mdp.gamma * ev;
        }
    }
    Ok(ValueTables { n_actions: na, q, v, iterations_used: sweeps, residual })
}
