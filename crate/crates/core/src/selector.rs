//! Grouping selection: exact selection from true deviation factors, and the
//! practical variant that estimates them from a few sampled actions per group.
//! Sample size `K` and iteration count `T` are chosen per candidate by
//! exhaustive search over a grid.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{eps_perf_vi, prop1_gap_bound, resource_costs, BoundBreakdown, BoundInputs, Prop1Inputs, ResourceCosts};
use crate::error::{Error, Result};
use crate::estimation::{draw_counts, SampleMode};
use crate::grouping::{deviation_factors, GroupingFunction};
use crate::mdp::TabularMdp;
use crate::rng::{RngSpec, StreamDomain};

/// User-supplied scoring rule `f(loss bound, sample cost, compute cost)`.
pub type UtilityFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum UtilityKind {
    /// `a1 * eps_perf + a2 * K + a3 * C_comp`, all weights negative.
    WeightedSum([f64; 3]),
    Custom(UtilityFn),
}

impl fmt::Debug for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityKind::WeightedSum(a) => f.debug_tuple("WeightedSum").field(a).finish(),
            UtilityKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "UtilityJson", into = "UtilityJson")]
pub struct UtilityConfig {
    kind: UtilityKind,
    lipschitz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityJson {
    WeightedSum { alpha: [f64; 3], lipschitz: f64 },
}

impl TryFrom<UtilityJson> for UtilityConfig {
    type Error = Error;

    fn try_from(j: UtilityJson) -> Result<Self> {
        match j {
            UtilityJson::WeightedSum { alpha, lipschitz } => UtilityConfig::weighted_sum(alpha, lipschitz),
        }
    }
}

impl From<UtilityConfig> for UtilityJson {
    fn from(u: UtilityConfig) -> Self {
        match u.kind {
            UtilityKind::WeightedSum(alpha) => UtilityJson::WeightedSum { alpha, lipschitz: u.lipschitz },
            // Closures have no JSON form; serialising one is a caller bug.
            UtilityKind::Custom(_) => panic!("custom utility hooks cannot be serialised"),
        }
    }
}

impl UtilityConfig {
    pub fn weighted_sum(alpha: [f64; 3], lipschitz: f64) -> Result<Self> {
        if alpha.iter().any(|&a| !(a < 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument(format!("utility weights must be finite and negative, got {alpha:?}")));
        }
        Self::check_lipschitz(lipschitz)?;
        Ok(Self { kind: UtilityKind::WeightedSum(alpha), lipschitz })
    }

    /// Arbitrary scoring rule. It should decrease in each argument.
    pub fn custom(f: UtilityFn, lipschitz: f64) -> Result<Self> {
        Self::check_lipschitz(lipschitz)?;
        Ok(Self { kind: UtilityKind::Custom(f), lipschitz })
    }

    fn check_lipschitz(l: f64) -> Result<()> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidArgument(format!("Lipschitz constant must be positive, got {l}")));
        }
        Ok(())
    }

    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, eps_perf: f64, costs: ResourceCosts) -> f64 {
        let (y, z) = (costs.c_samp as f64, costs.c_comp as f64);
        match &self.kind {
            UtilityKind::WeightedSum([a1, a2, a3]) => a1 * eps_perf + a2 * y + a3 * z,
            UtilityKind::Custom(f) => f(eps_perf, y, z),
        }
    }
}

/// Candidate grouping functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct FeasibleSet {
    candidates: Vec<GroupingFunction>,
}

impl FeasibleSet {
    pub fn new(candidates: Vec<GroupingFunction>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyFeasibleSet);
        }
        let n = candidates[0].n_actions();
        if let Some(bad) = candidates.iter().position(|g| g.n_actions() != n) {
            return Err(Error::InvalidGrouping(format!(
                "candidate {bad} covers {} actions, candidate 0 covers {n}",
                candidates[bad].n_actions()
            )));
        }
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[GroupingFunction] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        self.candidates.iter().try_for_each(|g| g.check_mdp(mdp))
    }
}

impl TryFrom<Vec<Vec<usize>>> for FeasibleSet {
    type Error = Error;

    fn try_from(v: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(v.into_iter().map(GroupingFunction::new).collect::<Result<_>>()?)
    }
}

impl From<FeasibleSet> for Vec<Vec<usize>> {
    fn from(f: FeasibleSet) -> Self {
        f.candidates.iter().map(|g| g.assignment().to_vec()).collect()
    }
}

/// Candidate `(K, T)` values searched by [`optimize_resources`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceGrid {
    pub k_values: Vec<u64>,
    pub t_values: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<u64>,
}

impl ResourceGrid {
    pub fn new(k_values: Vec<u64>, t_values: Vec<u64>) -> Result<Self> {
        let grid = Self { k_values, t_values, k_max: None, t_max: None };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_caps(mut self, k_max: Option<u64>, t_max: Option<u64>) -> Result<Self> {
        self.k_max = k_max;
        self.t_max = t_max;
        self.validate()?;
        Ok(self)
    }

    /// `K` in `10^lo ..= 10^hi`, one value per decade.
    pub fn decades(lo: u32, hi: u32, t_values: Vec<u64>) -> Result<Self> {
        Self::new((lo..=hi).map(|e| 10u64.pow(e)).collect(), t_values)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("K", &self.k_values), ("T", &self.t_values)] {
            if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "{name} grid must be nonempty, positive and strictly ascending"
                )));
            }
        }
        if self.ks().next().is_none() || self.ts().next().is_none() {
            return Err(Error::InvalidArgument("resource caps exclude every grid value".into()));
        }
        Ok(())
    }

    fn ks(&self) -> impl Iterator<Item = u64> + '_ {
        self.k_values.iter().copied().filter(|&k| self.k_max.is_none_or(|m| k <= m))
    }

    fn ts(&self) -> impl Iterator<Item = u64> + '_ {
        self.t_values.iter().copied().filter(|&t| self.t_max.is_none_or(|m| t <= m))
    }

    pub fn n_cells(&self) -> usize {
        self.ks().count() * self.ts().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceChoice {
    pub k: u64,
    pub t: u64,
    pub utility: f64,
    pub costs: ResourceCosts,
    pub breakdown: BoundBreakdown,
}

/// Grid maximiser of `f(eps_perf(K, T), K, C_comp(T))` for fixed deviation
/// factors. Ties go to the smaller `K`, then the smaller `T`; NaN utilities
/// never win.
pub fn optimize_resources(utility: &UtilityConfig, grid: &ResourceGrid, base: &BoundInputs) -> Result<ResourceChoice> {
    grid.validate()?;
    let mut best: Option<ResourceChoice> = None;
    for k in grid.ks() {
        for t in grid.ts() {
            let breakdown = eps_perf_vi(&BoundInputs { k, t, ..*base })?;
            let costs = resource_costs(base.n_states, base.n_groups, k, t);
            let u = utility.eval(breakdown.eps_perf, costs);
            let better = match &best {
                None => true,
                Some(b) => u > b.utility || (b.utility.is_nan() && !u.is_nan()),
            };
            if better {
                best = Some(ResourceChoice { k, t, utility: u, costs, breakdown });
            }
        }
    }
    Ok(best.expect("validated grid is nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub index: usize,
    pub n_groups: usize,
    pub beta_p_star: f64,
    pub beta_r_star: f64,
    pub k_star: u64,
    pub t_star: u64,
    pub utility: f64,
    pub costs: ResourceCosts,
    pub breakdown: BoundBreakdown,
    /// Sampled actions per group (practical selection only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_actions: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop1_gap: Option<f64>,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub best_index: usize,
    pub mode: SelectionMode,
    pub candidates: Vec<CandidateReport>,
    /// Largest per-candidate gap bound, when deviation inputs were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop1_gap: Option<f64>,
}

impl SelectionResult {
    pub fn best(&self) -> &CandidateReport {
        &self.candidates[self.best_index]
    }

    pub fn utilities(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.utility).collect()
    }
}

/// Argmax with ties to fewer groups, then lower index.
fn pick_best(candidates: &[CandidateReport]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        let wins = c.utility > b.utility
            || (c.utility == b.utility && c.n_groups < b.n_groups)
            || (b.utility.is_nan() && !c.utility.is_nan());
        if wins {
            best = i;
        }
    }
    best
}

fn candidate_report(
    index: usize,
    n_states: usize,
    n_groups: usize,
    beta: (f64, f64),
    utility: &UtilityConfig,
    grid: &ResourceGrid,
    gamma: f64,
    delta: f64,
) -> Result<CandidateReport> {
    let base = BoundInputs {
        beta_p_star: beta.0,
        beta_r_star: beta.1,
        n_states,
        n_groups,
        k: 1,
        t: 1,
        gamma,
        delta,
        eps_opt_override: None,
    };
    let choice = optimize_resources(utility, grid, &base)?;
    Ok(CandidateReport {
        index,
        n_groups,
        beta_p_star: beta.0,
        beta_r_star: beta.1,
        k_star: choice.k,
        t_star: choice.t,
        utility: choice.utility,
        costs: choice.costs,
        breakdown: choice.breakdown,
        sampled_actions: None,
        prop1_gap: None,
        wall_time_ms: 0.0,
    })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Selection with the true deviation factors of every candidate.
pub fn select_grouping_exact(
    mdp: &TabularMdp,
    set: &FeasibleSet,
    utility: &UtilityConfig,
    grid: &ResourceGrid,
    gamma: f64,
    delta: f64,
) -> Result<SelectionResult> {
    if set.is_empty() {
        return Err(Error::EmptyFeasibleSet);
    }
    set.check_mdp(mdp)?;
    let mut candidates = Vec::with_capacity(set.len());
    for (i, g) in set.candidates().iter().enumerate() {
        let start = Instant::now();
        let f = deviation_factors(mdp, g)?;
        let mut rep =
            candidate_report(i, mdp.n_states(), g.n_groups(), (f.beta_p_star, f.beta_r_star), utility, grid, gamma, delta)?;
        rep.wall_time_ms = elapsed_ms(start);
        candidates.push(rep);
    }
    Ok(SelectionResult { best_index: pick_best(&candidates), mode: SelectionMode::Exact, candidates, prop1_gap: None })
}

/// Generative access to individual `(state, action)` pairs.
pub trait ActionSampler {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reward(&self, s: usize, a: usize) -> f64;
    /// Empirical next-state distribution from `k` draws at `(s, a)`.
    fn estimate_row(&self, s: usize, a: usize, k: u64, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Sampler backed by a known MDP; [`SampleMode::Exact`] returns true rows.
#[derive(Debug, Clone, Copy)]
pub struct GenerativeModel<'a> {
    pub mdp: &'a TabularMdp,
    pub mode: SampleMode,
}

impl<'a> GenerativeModel<'a> {
    pub fn new(mdp: &'a TabularMdp) -> Self {
        Self { mdp, mode: SampleMode::Generative }
    }

    pub fn exact(mdp: &'a TabularMdp) -> Self {
        Self { mdp, mode: SampleMode::Exact }
    }
}

impl ActionSampler for GenerativeModel<'_> {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reward(&self, s: usize, a: usize) -> f64 {
        self.mdp.r(s, a)
    }

    fn estimate_row(&self, s: usize, a: usize, k: u64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let row = self.mdp.row(s, a);
        match self.mode {
            SampleMode::Exact => row.to_vec(),
            SampleMode::Generative => draw_counts(row, k, rng).into_iter().map(|c| c as f64 / k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedFactors {
    pub beta_p_star: f64,
    pub beta_r_star: f64,
    /// Sorted sampled actions of each group.
    pub subsets: Vec<Vec<usize>>,
    /// Draws per sampled `(state, action)` pair.
    pub per_pair: u64,
}

impl EstimatedFactors {
    pub fn n_sampled_actions(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }
}

/// Deviation factors from `m_per_group` actions per group, drawn uniformly
/// without replacement, each probed `floor(k1 / (S |A_bar|))` times. The
/// reward factor ranges over sampled pairs only.
pub fn estimate_deviation_factors(
    sampler: &dyn ActionSampler,
    g: &GroupingFunction,
    m_per_group: usize,
    k1: u64,
    rng: &RngSpec,
) -> Result<EstimatedFactors> {
    if g.n_actions() != sampler.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "grouping covers {} actions, sampler has {}",
            g.n_actions(),
            sampler.n_actions()
        )));
    }
    let min_size = (0..g.n_groups()).map(|h| g.members(h).len()).min().unwrap_or(0);
    if m_per_group == 0 || m_per_group > min_size {
        return Err(Error::InvalidArgument(format!(
            "m_per_group = {m_per_group} must lie in [1, {min_size}] (smallest group size)"
        )));
    }
    let ns = sampler.n_states();
    let na = sampler.n_actions();
    let n_sampled = m_per_group * g.n_groups();
    let per_pair = k1 / (ns * n_sampled) as u64;
    if per_pair == 0 {
        return Err(Error::InvalidArgument(format!(
            "K1 = {k1} leaves no samples for {} sampled state-action pairs",
            ns * n_sampled
        )));
    }

    let subsets: Vec<Vec<usize>> = (0..g.n_groups())
        .map(|h| {
            let members = g.members(h);
            let mut stream = rng.substream(StreamDomain::ActionSubsets, h as u64);
            let mut picked: Vec<usize> = index::sample(&mut stream, members.len(), m_per_group).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| members[i]).collect()
        })
        .collect();

    let mut beta_p: f64 = 0.0;
    let mut beta_r: f64 = 0.0;
    let mut mins = vec![0.0; ns];
    for s in 0..ns {
        for subset in &subsets {
            mins.fill(f64::INFINITY);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &a in subset {
                let mut stream = rng.substream(StreamDomain::ActionProbes, (s * na + a) as u64);
                let row = sampler.estimate_row(s, a, per_pair, &mut stream);
                for (m, p) in mins.iter_mut().zip(row) {
                    *m = m.min(p);
                }
                let r = sampler.reward(s, a);
                lo = lo.min(r);
                hi = hi.max(r);
            }
            beta_p = beta_p.max((1.0 - mins.iter().sum::<f64>()).clamp(0.0, 1.0));
            beta_r = beta_r.max(hi - lo);
        }
    }
    Ok(EstimatedFactors { beta_p_star: beta_p, beta_r_star: beta_r, subsets, per_pair })
}

/// Options of [`select_grouping_practical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticalOptions {
    pub m_per_group: usize,
    pub k1: u64,
    pub gamma: f64,
    pub delta: f64,
    /// True `(eta_p, eta_r)` of the model, enabling the gap bound report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<(f64, f64)>,
}

/// Selection with deviation factors estimated by
/// [`estimate_deviation_factors`]. Subsets and probes use fixed substreams, so
/// candidates share sampling randomness. Candidates whose smallest group has
/// fewer than `m_per_group` actions sample that many instead.
pub fn select_grouping_practical(
    sampler: &dyn ActionSampler,
    set: &FeasibleSet,
    utility: &UtilityConfig,
    grid: &ResourceGrid,
    opts: &PracticalOptions,
    rng: &RngSpec,
) -> Result<SelectionResult> {
    if set.is_empty() {
        return Err(Error::EmptyFeasibleSet);
    }
    let mut candidates = Vec::with_capacity(set.len());
    for (i, g) in set.candidates().iter().enumerate() {
        let start = Instant::now();
        let smallest = (0..g.n_groups()).map(|h| g.members(h).len()).min().unwrap_or(1);
        let est = estimate_deviation_factors(sampler, g, opts.m_per_group.min(smallest), opts.k1, rng)?;
        let mut rep = candidate_report(
            i,
            sampler.n_states(),
            g.n_groups(),
            (est.beta_p_star, est.beta_r_star),
            utility,
            grid,
            opts.gamma,
            opts.delta,
        )?;
        if let Some((eta_p, eta_r)) = opts.eta {
            rep.prop1_gap = Some(prop1_gap_bound(&Prop1Inputs {
                lipschitz: utility.lipschitz(),
                eta_p,
                eta_r,
                n_sampled_actions: est.n_sampled_actions(),
                k1: opts.k1,
                n_states: sampler.n_states(),
                gamma: opts.gamma,
                delta: opts.delta,
            })?);
        }
        rep.sampled_actions = Some(est.subsets);
        rep.wall_time_ms = elapsed_ms(start);
        candidates.push(rep);
    }
    let prop1_gap = opts.eta.map(|_| candidates.iter().filter_map(|c| c.prop1_gap).fold(0.0, f64::max));
    Ok(SelectionResult { best_index: pick_best(&candidates), mode: SelectionMode::Estimated, candidates, prop1_gap })
}
