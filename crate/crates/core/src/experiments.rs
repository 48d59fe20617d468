//! Single-trial runners shared by the command-line harness and the tests.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::{eps_perf_vi, BoundBreakdown, BoundInputs};
use crate::error::Result;
use crate::estimation::{loss_against, run_pipeline_on, LossReport, SampleBudget, SampleMode};
use crate::grouping::{build_grouped_mdp, deviation_factors, DeviationFactors, GroupedMdp, GroupingFunction, InnerPolicy};
use crate::mdp::{StopRule, TabularMdp, DEFAULT_EVAL_TOL};
use crate::rng::RngSpec;

/// A grouping prepared once and reused across trials.
#[derive(Debug, Clone)]
pub struct PreparedGrouping {
    pub grouping: GroupingFunction,
    pub inner: InnerPolicy,
    pub grouped: GroupedMdp,
    pub factors: DeviationFactors,
}

impl PreparedGrouping {
    pub fn new(mdp: &TabularMdp, grouping: GroupingFunction, inner: InnerPolicy) -> Result<Self> {
        let grouped = build_grouped_mdp(mdp, &grouping, &inner)?;
        let factors = deviation_factors(mdp, &grouping)?;
        Ok(Self { grouping, inner, grouped, factors })
    }

    /// Uniform inner policy.
    pub fn uniform(mdp: &TabularMdp, grouping: GroupingFunction) -> Result<Self> {
        let inner = InnerPolicy::uniform(&grouping);
        Self::new(mdp, grouping, inner)
    }

    /// Every action on its own: the ungrouped pipeline.
    pub fn flat(mdp: &TabularMdp) -> Result<Self> {
        Self::uniform(mdp, GroupingFunction::singleton(mdp.n_actions()))
    }

    pub fn n_groups(&self) -> usize {
        self.grouping.n_groups()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub groups: usize,
    pub k_total: u64,
    pub k_prime: u64,
    pub t: u64,
    pub loss: LossReport,
    pub bounds: BoundBreakdown,
    pub wall_ms: f64,
}

impl TrialOutcome {
    pub fn covered(&self) -> bool {
        self.loss.sup <= self.bounds.eps_perf
    }
}

/// One estimate-plan-lift run with `K'` samples per (state, group) and `T`
/// value-iteration sweeps, scored against precomputed optimal values.
pub fn pipeline_trial(
    mdp: &TabularMdp,
    v_star: &[f64],
    prepared: &PreparedGrouping,
    k_prime: u64,
    t: u64,
    delta: f64,
    seed: u64,
) -> Result<TrialOutcome> {
    let start = Instant::now();
    let budget = SampleBudget::per_pair(k_prime)?;
    let out = run_pipeline_on(
        &prepared.grouped,
        &prepared.grouping,
        &prepared.inner,
        budget,
        StopRule::Iterations(t as usize),
        &RngSpec::new(seed),
        SampleMode::Generative,
    )?;
    let loss = loss_against(v_star, mdp, &out.lifted, DEFAULT_EVAL_TOL)?;
    let k_total = budget.total(mdp.n_states(), prepared.n_groups());
    let bounds = eps_perf_vi(&BoundInputs {
        beta_p_star: prepared.factors.beta_p_star,
        beta_r_star: prepared.factors.beta_r_star,
        n_states: mdp.n_states(),
        n_groups: prepared.n_groups(),
        k: k_total,
        t,
        gamma: mdp.gamma(),
        delta,
        eps_opt_override: None,
    })?;
    Ok(TrialOutcome {
        groups: prepared.n_groups(),
        k_total,
        k_prime,
        t,
        loss,
        bounds,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
