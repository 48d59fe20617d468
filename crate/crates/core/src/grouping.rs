//! Action groupings, the induced grouped MDP, policy lifting and the minimal
//! deviation factors of the linear decomposition
//!
//! ```text
//! P(.|s,a) = (1 - b(s,a)) P1(.|s,g(a)) + b(s,a) P2(.|s,a)
//! R(s,a)   = (1 - c(s,a)) R1(s,g(a))   + c(s,a) R2(s,a)
//! ```
//!
//! The smallest feasible `max b` is `1 - min_{s,h} sum_{s'} min_{a in h} P(s'|s,a)`
//! and the smallest `max c` is the largest within-group reward range.
//! [`decomposition_witness`] builds tables attaining both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TabularMdp, ROW_SUM_TOL};

/// Slack used when checking the summed lower-bound constraint.
pub const CERTIFICATE_TOL: f64 = 1e-12;

/// Surjective map from actions to groups `0..n_groups`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GroupingJson", into = "GroupingJson")]
pub struct GroupingFunction {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// Position of each action inside its group's member list.
    position: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupingJson {
    pub assignment: Vec<usize>,
}

impl TryFrom<GroupingJson> for GroupingFunction {
    type Error = Error;
    fn try_from(j: GroupingJson) -> Result<Self> {
        GroupingFunction::new(j.assignment)
    }
}

impl From<GroupingFunction> for GroupingJson {
    fn from(g: GroupingFunction) -> Self {
        GroupingJson { assignment: g.assignment }
    }
}

impl GroupingFunction {
    /// Groups must be numbered `0..n_groups` without gaps.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::InvalidGrouping("assignment is empty".into()));
        }
        let n_groups = assignment.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_groups];
        let mut position = vec![0; assignment.len()];
        for (a, &h) in assignment.iter().enumerate() {
            position[a] = members[h].len();
            members[h].push(a);
        }
        if let Some(h) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidGrouping(format!("group {h} has no actions")));
        }
        Ok(Self { assignment, members, position })
    }

    /// Every action in its own group.
    pub fn singleton(n_actions: usize) -> Self {
        Self::new((0..n_actions).collect()).expect("non-empty action set")
    }

    /// All actions in one group.
    pub fn single_group(n_actions: usize) -> Self {
        Self::new(vec![0; n_actions]).expect("non-empty action set")
    }

    /// Consecutive blocks of `n_actions / n_groups` actions; the last group
    /// absorbs the remainder.
    pub fn contiguous(n_actions: usize, n_groups: usize) -> Result<Self> {
        if n_groups == 0 || n_groups > n_actions {
            return Err(Error::InvalidGrouping(format!(
                "cannot split {n_actions} actions into {n_groups} groups"
            )));
        }
        let size = n_actions / n_groups;
        Self::new((0..n_actions).map(|a| (a / size).min(n_groups - 1)).collect())
    }

    /// Merges groups `0..n_groups` into `n_buckets` runs of adjacent groups.
    pub fn coarsen(&self, n_buckets: usize) -> Result<Self> {
        let g = self.n_groups();
        if n_buckets == 0 || n_buckets > g {
            return Err(Error::InvalidGrouping(format!("cannot merge {g} groups into {n_buckets}")));
        }
        Self::new(self.assignment.iter().map(|&h| h * n_buckets / g).collect())
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn n_actions(&self) -> usize {
        self.assignment.len()
    }

    #[inline]
    pub fn group_of(&self, a: usize) -> usize {
        self.assignment[a]
    }

    pub fn members(&self, h: usize) -> &[usize] {
        &self.members[h]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// True when every group of `self` lies inside a single group of `coarser`.
    pub fn refines(&self, coarser: &GroupingFunction) -> bool {
        self.n_actions() == coarser.n_actions()
            && self
                .members
                .iter()
                .all(|m| m.iter().all(|&a| coarser.group_of(a) == coarser.group_of(m[0])))
    }

    pub fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_actions() != mdp.n_actions() {
            return Err(Error::DimensionMismatch(format!(
                "grouping covers {} actions, MDP has {}",
                self.n_actions(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Lower-level policy: one distribution per group over that group's members,
/// aligned with [`GroupingFunction::members`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerPolicy {
    rows: Vec<Vec<f64>>,
}

impl InnerPolicy {
    pub fn uniform(g: &GroupingFunction) -> Self {
        let rows = (0..g.n_groups())
            .map(|h| {
                let n = g.members(h).len();
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self { rows }
    }

    /// Always plays `actions[h]` in group `h`.
    pub fn point_mass(g: &GroupingFunction, actions: &[usize]) -> Result<Self> {
        if actions.len() != g.n_groups() {
            return Err(Error::InvalidPolicy(format!(
                "{} actions given for {} groups",
                actions.len(),
                g.n_groups()
            )));
        }
        let mut rows = Vec::with_capacity(actions.len());
        for (h, &a) in actions.iter().enumerate() {
            if a >= g.n_actions() || g.group_of(a) != h {
                return Err(Error::InvalidPolicy(format!("action {a} is not a member of group {h}")));
            }
            let mut row = vec![0.0; g.members(h).len()];
            row[g.position[a]] = 1.0;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn from_rows(g: &GroupingFunction, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != g.n_groups() {
            return Err(Error::InvalidPolicy(format!("{} rows for {} groups", rows.len(), g.n_groups())));
        }
        for (h, row) in rows.iter().enumerate() {
            if row.len() != g.members(h).len() {
                return Err(Error::InvalidPolicy(format!(
                    "group {h} has {} members but {} probabilities",
                    g.members(h).len(),
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("group {h} has a negative probability")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPolicy(format!("group {h} row sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.rows[h]
    }

    /// `pi_i(a | g(a))`.
    pub fn action_prob(&self, g: &GroupingFunction, a: usize) -> f64 {
        self.rows[g.group_of(a)][g.position[a]]
    }

    fn check(&self, g: &GroupingFunction) -> Result<()> {
        let shapes_match = self.rows.len() == g.n_groups()
            && self.rows.iter().enumerate().all(|(h, r)| r.len() == g.members(h).len());
        if shapes_match {
            Ok(())
        } else {
            Err(Error::InvalidPolicy("inner policy does not match the grouping".into()))
        }
    }
}

/// MDP over (state, group) pairs with the inner policy averaged in.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedMdp {
    mdp: TabularMdp,
}

impl GroupedMdp {
    pub fn n_groups(&self) -> usize {
        self.mdp.n_actions()
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn into_mdp(self) -> TabularMdp {
        self.mdp
    }
}

/// `P_G(.|s,h) = E_{a ~ pi_i(.|h)} P(.|s,a)` and likewise for rewards.
pub fn build_grouped_mdp(mdp: &TabularMdp, g: &GroupingFunction, inner: &InnerPolicy) -> Result<GroupedMdp> {
    g.check_mdp(mdp)?;
    inner.check(g)?;
    let (ns, ng) = (mdp.n_states(), g.n_groups());
    let mut p = vec![0.0; ns * ng * ns];
    let mut r = vec![0.0; ns * ng];
    for s in 0..ns {
        for h in 0..ng {
            let out = &mut p[(s * ng + h) * ns..(s * ng + h + 1) * ns];
            let mut reward = 0.0;
            for (&a, &w) in g.members(h).iter().zip(inner.row(h)) {
                if w == 0.0 {
                    continue;
                }
                reward += w * mdp.r(s, a);
                for (o, x) in out.iter_mut().zip(mdp.row(s, a)) {
                    *o += w * x;
                }
            }
            r[s * ng + h] = reward.clamp(0.0, 1.0);
        }
    }
    Ok(GroupedMdp { mdp: TabularMdp::new(ns, ng, mdp.gamma(), p, r)? })
}

/// Composes an outer policy over groups with the inner policy:
/// `pi(a|s) = pi_o(g(a)|s) * pi_i(a|g(a))`.
pub fn lift_policy(outer: &PolicyTable, inner: &InnerPolicy, g: &GroupingFunction) -> Result<PolicyTable> {
    inner.check(g)?;
    let ns = outer.n_states();
    outer.validate(ns, g.n_groups())?;
    let na = g.n_actions();
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            probs[s * na + a] = outer.prob(s, g.group_of(a)) * inner.action_prob(g, a);
        }
    }
    Ok(PolicyTable::stochastic(na, probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationFactors {
    pub beta_p_star: f64,
    pub beta_r_star: f64,
}

/// `1 - sum_{s'} min_{a in h} P(s'|s,a)` for every `(s, h)`, indexed `s * |g| + h`.
pub fn beta_p_by_group(mdp: &TabularMdp, g: &GroupingFunction) -> Result<Vec<f64>> {
    g.check_mdp(mdp)?;
    let ns = mdp.n_states();
    let mut out = Vec::with_capacity(ns * g.n_groups());
    let mut mins = vec![0.0; ns];
    for s in 0..ns {
        for h in 0..g.n_groups() {
            group_row_minimum(mdp, g, s, h, &mut mins);
            out.push((1.0 - mins.iter().sum::<f64>()).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Within-group reward range for every `(s, h)`, indexed `s * |g| + h`.
pub fn beta_r_by_group(mdp: &TabularMdp, g: &GroupingFunction) -> Result<Vec<f64>> {
    g.check_mdp(mdp)?;
    let mut out = Vec::with_capacity(mdp.n_states() * g.n_groups());
    for s in 0..mdp.n_states() {
        for h in 0..g.n_groups() {
            let (lo, hi) = reward_range(mdp, g, s, h);
            out.push(hi - lo);
        }
    }
    Ok(out)
}

pub fn beta_p_star(mdp: &TabularMdp, g: &GroupingFunction) -> Result<f64> {
    Ok(beta_p_by_group(mdp, g)?.into_iter().fold(0.0, f64::max))
}

pub fn beta_r_star(mdp: &TabularMdp, g: &GroupingFunction) -> Result<f64> {
    Ok(beta_r_by_group(mdp, g)?.into_iter().fold(0.0, f64::max))
}

pub fn deviation_factors(mdp: &TabularMdp, g: &GroupingFunction) -> Result<DeviationFactors> {
    Ok(DeviationFactors { beta_p_star: beta_p_star(mdp, g)?, beta_r_star: beta_r_star(mdp, g)? })
}

fn group_row_minimum(mdp: &TabularMdp, g: &GroupingFunction, s: usize, h: usize, out: &mut [f64]) {
    out.fill(f64::INFINITY);
    for &a in g.members(h) {
        for (m, &p) in out.iter_mut().zip(mdp.row(s, a)) {
            *m = m.min(p);
        }
    }
}

fn reward_range(mdp: &TabularMdp, g: &GroupingFunction, s: usize, h: usize) -> (f64, f64) {
    g.members(h)
        .iter()
        .map(|&a| mdp.r(s, a))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// Explicit decomposition tables certifying that the deviation factors are
/// attainable. Per-pair factors are chosen as small as the shared `P1`/`R1`
/// allow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionWitness {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_groups: usize,
    pub beta_p: f64,
    pub beta_r: f64,
    /// `p1[(s * |g| + h) * S + s']`.
    pub p1: Vec<f64>,
    /// `p2[(s * A + a) * S + s']`.
    pub p2: Vec<f64>,
    /// `r1[s * |g| + h]`.
    pub r1: Vec<f64>,
    /// `r2[s * A + a]`.
    pub r2: Vec<f64>,
    pub per_pair_beta_p: Vec<f64>,
    pub per_pair_beta_r: Vec<f64>,
}

impl DecompositionWitness {
    pub fn p1_row(&self, s: usize, h: usize) -> &[f64] {
        let start = (s * self.n_groups + h) * self.n_states;
        &self.p1[start..start + self.n_states]
    }

    pub fn p2_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p2[start..start + self.n_states]
    }

    /// Largest entrywise error of the transition decomposition.
    pub fn transition_residual(&self, mdp: &TabularMdp, g: &GroupingFunction) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let b = self.per_pair_beta_p[s * self.n_actions + a];
                let p1 = self.p1_row(s, g.group_of(a));
                let p2 = self.p2_row(s, a);
                for (next, &p) in mdp.row(s, a).iter().enumerate() {
                    let rebuilt = (1.0 - b) * p1[next] + b * p2[next];
                    worst = worst.max((rebuilt - p).abs());
                }
            }
        }
        worst
    }

    /// Largest error of the reward decomposition.
    pub fn reward_residual(&self, mdp: &TabularMdp, g: &GroupingFunction) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let idx = s * self.n_actions + a;
                let c = self.per_pair_beta_r[idx];
                let rebuilt = (1.0 - c) * self.r1[s * self.n_groups + g.group_of(a)] + c * self.r2[idx];
                worst = worst.max((rebuilt - mdp.r(s, a)).abs());
            }
        }
        worst
    }

    /// Checks that `p1`/`p2` rows are distributions, rewards lie in `[0, 1]`
    /// and per-pair factors stay within `[0, beta]`; `tol` is the slack allowed.
    pub fn is_well_formed(&self, tol: f64) -> bool {
        let dist_ok = |rows: &[f64]| {
            rows.chunks(self.n_states)
                .all(|r| r.iter().all(|&x| x >= -tol) && (r.iter().sum::<f64>() - 1.0).abs() <= tol)
        };
        let unit = |x: f64| (-tol..=1.0 + tol).contains(&x);
        dist_ok(&self.p1)
            && dist_ok(&self.p2)
            && self.r1.iter().all(|&x| unit(x))
            && self.r2.iter().all(|&x| unit(x))
            && self.per_pair_beta_p.iter().all(|&b| (-tol..=self.beta_p + tol).contains(&b))
            && self.per_pair_beta_r.iter().all(|&b| (-tol..=self.beta_r + tol).contains(&b))
    }
}

/// Constructs a witness at `beta_p = beta_p_star`, `beta_r = beta_r_star`.
pub fn decomposition_witness(mdp: &TabularMdp, g: &GroupingFunction) -> Result<DecompositionWitness> {
    g.check_mdp(mdp)?;
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), g.n_groups());
    let mut w = DecompositionWitness {
        n_states: ns,
        n_actions: na,
        n_groups: ng,
        beta_p: 0.0,
        beta_r: 0.0,
        p1: vec![0.0; ns * ng * ns],
        p2: vec![0.0; ns * na * ns],
        r1: vec![0.0; ns * ng],
        r2: vec![0.0; ns * na],
        per_pair_beta_p: vec![0.0; ns * na],
        per_pair_beta_r: vec![0.0; ns * na],
    };

    let mut mins = vec![0.0; ns];
    for s in 0..ns {
        for h in 0..ng {
            // Transitions: P1 is the normalised row-wise minimum.
            group_row_minimum(mdp, g, s, h, &mut mins);
            let mass: f64 = mins.iter().sum();
            let beta_sh = (1.0 - mass).clamp(0.0, 1.0);
            w.beta_p = w.beta_p.max(beta_sh);
            let p1 = &mut w.p1[(s * ng + h) * ns..(s * ng + h + 1) * ns];
            if mass > 0.0 {
                for (o, &m) in p1.iter_mut().zip(&mins) {
                    *o = m / mass;
                }
            } else {
                p1.fill(1.0 / ns as f64);
            }
            let p1 = p1.to_vec();
            for &a in g.members(h) {
                let row = mdp.row(s, a);
                // Largest weight on P1 that keeps P2 nonnegative.
                let keep = row
                    .iter()
                    .zip(&p1)
                    .filter(|(_, &q)| q > 0.0)
                    .map(|(&p, &q)| p / q)
                    .fold(f64::INFINITY, f64::min)
                    .min(1.0);
                let mut b = (1.0 - keep).clamp(0.0, 1.0);
                // Rounding noise, not a real deviation; dividing by it would blow up P2.
                if b <= CERTIFICATE_TOL {
                    b = 0.0;
                }
                w.per_pair_beta_p[s * na + a] = b;
                let p2 = &mut w.p2[(s * na + a) * ns..(s * na + a + 1) * ns];
                if b > 0.0 {
                    for ((o, &p), &q) in p2.iter_mut().zip(row).zip(&p1) {
                        *o = ((p - (1.0 - b) * q) / b).max(0.0);
                    }
                } else {
                    p2.copy_from_slice(row);
                }
            }

            // Rewards: R1 sits at min / (1 - range) so that R2 in {0, 1}
            // reproduces both extremes.
            let (lo, hi) = reward_range(mdp, g, s, h);
            let range = hi - lo;
            w.beta_r = w.beta_r.max(range);
            let r1 = if range < 1.0 { (lo / (1.0 - range)).clamp(0.0, 1.0) } else { 0.0 };
            w.r1[s * ng + h] = r1;
            for &a in g.members(h) {
                let idx = s * na + a;
                let d = mdp.r(s, a) - r1;
                let (c, r2) = if d > 0.0 && r1 < 1.0 {
                    (d / (1.0 - r1), 1.0)
                } else if d < 0.0 && r1 > 0.0 {
                    (-d / r1, 0.0)
                } else {
                    (0.0, r1)
                };
                w.per_pair_beta_r[idx] = c.min(range);
                w.r2[idx] = r2;
            }
        }
    }
    Ok(w)
}

/// Necessary condition for any decomposition at level `beta`:
/// `(1 - beta) P1(s'|s,h) <= min_a P(s'|s,a)` summed over `s'` gives
/// `sum_{s'} min_a P(s'|s,a) >= 1 - beta` for every `(s, h)`.
pub fn transition_decomposition_admissible(mdp: &TabularMdp, g: &GroupingFunction, beta: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&beta) {
        return Ok(false);
    }
    Ok(beta_p_by_group(mdp, g)?.iter().all(|&b| b <= beta + CERTIFICATE_TOL))
}

/// Necessary condition for a reward decomposition at level `beta`: every
/// within-group reward range is at most `beta`.
pub fn reward_decomposition_admissible(mdp: &TabularMdp, g: &GroupingFunction, beta: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&beta) {
        return Ok(false);
    }
    Ok(beta_r_by_group(mdp, g)?.iter().all(|&b| b <= beta + CERTIFICATE_TOL))
}
