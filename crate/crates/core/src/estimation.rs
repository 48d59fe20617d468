//! Generative-model estimation of the grouped MDP and the end-to-end pipeline:
//! sample `K'` next states per (state, group), plan on the empirical model for
//! `T` sweeps, lift the greedy group policy back to actions.
//!
//! Rewards are deterministic and are copied from the grouped MDP rather than
//! sampled.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{build_grouped_mdp, lift_policy, GroupedMdp, GroupingFunction, InnerPolicy};
use crate::mdp::{evaluate_policy, value_iteration, PolicyTable, StopRule, TabularMdp, ValueTables};
use crate::rng::{RngSpec, StreamDomain};

/// Samples per (state, group) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBudget {
    pub per_pair: u64,
}

impl SampleBudget {
    pub fn per_pair(per_pair: u64) -> Result<Self> {
        if per_pair == 0 {
            return Err(Error::InvalidArgument("K' must be at least 1".into()));
        }
        Ok(Self { per_pair })
    }

    /// Splits a total budget `K` evenly, `K' = floor(K / (S |g|))`.
    pub fn from_total(total: u64, n_states: usize, n_groups: usize) -> Result<Self> {
        let pairs = (n_states * n_groups) as u64;
        Self::per_pair(total / pairs.max(1))
    }

    /// `K = S |g| K'`.
    pub fn total(&self, n_states: usize, n_groups: usize) -> u64 {
        (n_states * n_groups) as u64 * self.per_pair
    }
}

/// How next-state rows are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// i.i.d. draws from the generative model.
    #[default]
    Generative,
    /// Copy the true rows (noise-free oracle).
    Exact,
}

/// Multinomial next-state counts for `n` i.i.d. draws from `row`, generated
/// as a chain of conditional binomials.
pub fn draw_counts<R: Rng + ?Sized>(row: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; row.len()];
    let mut remaining = n;
    let mut mass_left: f64 = row.iter().sum();
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (i, &p) in row.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            counts[i] = remaining;
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let cond = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 1.0 };
        let c = if cond >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, cond).expect("probability in [0, 1]").sample(rng)
        };
        counts[i] = c;
        remaining -= c;
        mass_left -= p;
    }
    counts
}

/// Empirical grouped MDP `P_hat(s'|s,h) = count / K'`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGroupedMdp {
    mdp: TabularMdp,
    /// `counts[(s * |g| + h) * S + s']`; absent for the exact oracle.
    counts: Option<Vec<u64>>,
    per_pair: u64,
}

impl EmpiricalGroupedMdp {
    /// Builds the estimate from raw counts. Every (state, group) row must hold
    /// exactly `per_pair` observations.
    pub fn from_counts(gmdp: &GroupedMdp, counts: Vec<u64>, per_pair: u64) -> Result<Self> {
        let base = gmdp.mdp();
        let (ns, ng) = (base.n_states(), base.n_actions());
        if counts.len() != ns * ng * ns {
            return Err(Error::DimensionMismatch(format!(
                "count table has {} entries, expected {}",
                counts.len(),
                ns * ng * ns
            )));
        }
        if per_pair == 0 {
            return Err(Error::InvalidArgument("K' must be at least 1".into()));
        }
        for (pair, row) in counts.chunks(ns).enumerate() {
            let tally: u64 = row.iter().sum();
            if tally != per_pair {
                return Err(Error::InvalidArgument(format!(
                    "pair {pair} has {tally} observations, expected {per_pair}"
                )));
            }
        }
        let k = per_pair as f64;
        let p = counts.iter().map(|&c| c as f64 / k).collect();
        let mdp = TabularMdp::new(ns, ng, base.gamma(), p, base.reward().to_vec())?;
        Ok(Self { mdp, counts: Some(counts), per_pair })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn per_pair(&self) -> u64 {
        self.per_pair
    }

    /// Observations recorded for pair `(s, h)`.
    pub fn tally(&self, s: usize, h: usize) -> u64 {
        match &self.counts {
            Some(c) => {
                let ns = self.mdp.n_states();
                let start = (s * self.mdp.n_actions() + h) * ns;
                c[start..start + ns].iter().sum()
            }
            None => self.per_pair,
        }
    }

    /// Largest entrywise deviation from a reference kernel of the same shape.
    pub fn max_abs_error(&self, reference: &TabularMdp) -> f64 {
        crate::mdp::sup_norm_diff(self.mdp.transition(), reference.transition())
    }
}

/// Draws `K'` next states for every (state, group) pair. Pair `(s, h)` uses
/// substream `s * |g| + h`, so the result is independent of evaluation order.
pub fn sample_generative(
    gmdp: &GroupedMdp,
    budget: SampleBudget,
    rng: &RngSpec,
    mode: SampleMode,
) -> Result<EmpiricalGroupedMdp> {
    if budget.per_pair == 0 {
        return Err(Error::InvalidArgument("K' must be at least 1".into()));
    }
    let base = gmdp.mdp();
    match mode {
        SampleMode::Exact => Ok(EmpiricalGroupedMdp { mdp: base.clone(), counts: None, per_pair: budget.per_pair }),
        SampleMode::Generative => {
            let (ns, ng) = (base.n_states(), base.n_actions());
            let mut counts = Vec::with_capacity(ns * ng * ns);
            for s in 0..ns {
                for h in 0..ng {
                    let mut stream = rng.substream(StreamDomain::GroupedTransitions, (s * ng + h) as u64);
                    counts.extend(draw_counts(base.row(s, h), budget.per_pair, &mut stream));
                }
            }
            EmpiricalGroupedMdp::from_counts(gmdp, counts, budget.per_pair)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Output policy over the original actions.
    pub lifted: PolicyTable,
    /// Greedy policy over groups on the empirical MDP.
    pub outer: PolicyTable,
    pub empirical: EmpiricalGroupedMdp,
    pub values: ValueTables,
}

/// Builds the grouped MDP, estimates it, plans on the estimate and lifts the
/// resulting group policy back to actions.
pub fn run_pipeline(
    mdp: &TabularMdp,
    g: &GroupingFunction,
    inner: &InnerPolicy,
    budget: SampleBudget,
    planning: StopRule,
    rng: &RngSpec,
    mode: SampleMode,
) -> Result<PipelineOutput> {
    let gmdp = build_grouped_mdp(mdp, g, inner)?;
    run_pipeline_on(&gmdp, g, inner, budget, planning, rng, mode)
}

/// [`run_pipeline`] with a prebuilt grouped MDP, for repeated trials.
pub fn run_pipeline_on(
    gmdp: &GroupedMdp,
    g: &GroupingFunction,
    inner: &InnerPolicy,
    budget: SampleBudget,
    planning: StopRule,
    rng: &RngSpec,
    mode: SampleMode,
) -> Result<PipelineOutput> {
    let empirical = sample_generative(gmdp, budget, rng, mode)?;
    let (values, outer) = value_iteration(empirical.mdp(), planning)?;
    let lifted = lift_policy(&outer, inner, g)?;
    Ok(PipelineOutput { lifted, outer, empirical, values })
}

/// Sup-norm and per-state gap between the optimal values and a policy's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sup: f64,
    pub per_state: Vec<f64>,
}

/// Optimal state values by tolerance-driven value iteration.
pub fn optimal_values(mdp: &TabularMdp, tolerance: f64) -> Result<Vec<f64>> {
    Ok(value_iteration(mdp, StopRule::Tolerance(tolerance))?.0.v)
}

/// Loss of `policy` against precomputed optimal values; negative gaps (solver
/// noise) are clamped to zero.
pub fn loss_against(v_star: &[f64], mdp: &TabularMdp, policy: &PolicyTable, tolerance: f64) -> Result<LossReport> {
    if v_star.len() != mdp.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "{} optimal values for {} states",
            v_star.len(),
            mdp.n_states()
        )));
    }
    let v_pi = evaluate_policy(mdp, policy, tolerance)?.v;
    let per_state: Vec<f64> = v_star.iter().zip(&v_pi).map(|(a, b)| (a - b).max(0.0)).collect();
    let sup = per_state.iter().copied().fold(0.0, f64::max);
    Ok(LossReport { sup, per_state })
}

/// `||V* - V^pi||_inf` with both sides solved to `tolerance`.
pub fn measure_loss(mdp: &TabularMdp, policy: &PolicyTable, tolerance: f64) -> Result<f64> {
    let v_star = optimal_values(mdp, tolerance)?;
    Ok(loss_against(&v_star, mdp, policy, tolerance)?.sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::GroupingFunction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coin_gmdp() -> (TabularMdp, GroupedMdp, GroupingFunction) {
        let mdp = TabularMdp::from_nested(
            &[vec![vec![0.5, 0.5], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.5, 0.5]]],
            &[vec![0.2, 0.4], vec![0.6, 0.8]],
            0.9,
        )
        .unwrap();
        let g = GroupingFunction::singleton(2);
        let gm = build_grouped_mdp(&mdp, &g, &InnerPolicy::uniform(&g)).unwrap();
        (mdp, gm, g)
    }

    #[test]
    fn counts_always_sum_to_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [0u64, 1, 7, 1000] {
            let c = draw_counts(&[0.1, 0.0, 0.6, 0.3, 0.0], n, &mut rng);
            assert_eq!(c.iter().sum::<u64>(), n);
            assert_eq!(c[1], 0);
            assert_eq!(c[4], 0);
        }
    }

    #[test]
    fn point_mass_rows_are_recovered_exactly() {
        let (_, gm, _) = coin_gmdp();
        for k in [1, 3, 50] {
            let emp = sample_generative(&gm, SampleBudget::per_pair(k).unwrap(), &RngSpec::new(9), SampleMode::Generative)
                .unwrap();
            assert_eq!(emp.mdp().row(0, 1), &[1.0, 0.0]);
            assert_eq!(emp.mdp().row(1, 0), &[0.0, 1.0]);
            assert_eq!(emp.tally(0, 0), k);
        }
    }

    #[test]
    fn counts_divide_by_budget() {
        let (_, gm, _) = coin_gmdp();
        let counts = vec![3, 2, 5, 0, 0, 5, 1, 4];
        let emp = EmpiricalGroupedMdp::from_counts(&gm, counts, 5).unwrap();
        assert_eq!(emp.mdp().p(0, 0, 0), 0.6);
        assert_eq!(emp.mdp().p(1, 1, 1), 0.8);
        assert!(EmpiricalGroupedMdp::from_counts(&gm, vec![3, 1, 5, 0, 0, 5, 1, 4], 5).is_err());
    }

    #[test]
    fn rewards_are_copied_not_sampled() {
        let (_, gm, _) = coin_gmdp();
        let emp = sample_generative(&gm, SampleBudget::per_pair(2).unwrap(), &RngSpec::new(3), SampleMode::Generative)
            .unwrap();
        assert_eq!(emp.mdp().reward(), gm.mdp().reward());
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(SampleBudget::per_pair(0).is_err());
        assert!(SampleBudget::from_total(9, 5, 2).is_err());
        assert_eq!(SampleBudget::from_total(100, 5, 2).unwrap().per_pair, 10);
        assert_eq!(SampleBudget::per_pair(10).unwrap().total(5, 2), 100);
    }

    #[test]
    fn exact_mode_copies_the_kernel() {
        let (_, gm, _) = coin_gmdp();
        let emp = sample_generative(&gm, SampleBudget::per_pair(1).unwrap(), &RngSpec::new(0), SampleMode::Exact).unwrap();
        assert_eq!(emp.mdp(), gm.mdp());
        assert!(emp.counts().is_none());
    }

    #[test]
    fn loss_of_optimal_policy_is_zero() {
        let (mdp, _, _) = coin_gmdp();
        let (_, pi) = value_iteration(&mdp, StopRule::Tolerance(1e-12)).unwrap();
        assert!(measure_loss(&mdp, &pi, 1e-12).unwrap() <= 1e-11);
    }

    #[test]
    fn random_policy_loss_is_nonnegative() {
        let (mdp, _, _) = coin_gmdp();
        let pi = PolicyTable::stochastic(2, vec![0.3, 0.7, 0.9, 0.1]);
        let rep = loss_against(&optimal_values(&mdp, 1e-12).unwrap(), &mdp, &pi, 1e-12).unwrap();
        assert!(rep.sup >= 0.0);
        assert!(rep.per_state.iter().all(|&x| x >= 0.0));
    }
}
