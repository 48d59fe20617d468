//! Experiment runners behind `gmdp run`.

use std::path::Path;
use std::time::Instant;

use grouped_mdp::bounds::{eps_approx, BoundBreakdown, BoundInputs};
use grouped_mdp::envs::{build_tightness_mdp, TightnessConfig};
use grouped_mdp::estimation::{loss_against, optimal_values, SampleBudget};
use grouped_mdp::experiments::{pipeline_trial, PreparedGrouping};
use grouped_mdp::grouping::lift_policy;
use grouped_mdp::mdp::DEFAULT_EVAL_TOL;
use grouped_mdp::rng::trial_seed;
use grouped_mdp::selector::{
    select_grouping_exact, select_grouping_practical, FeasibleSet, GenerativeModel, PracticalOptions,
    SelectionResult,
};
use grouped_mdp::{GroupingFunction, PolicyTable, RngSpec, TabularMdp};
use rayon::prelude::*;

use crate::config::{
    BoundValidity, BuiltEnv, EnvSpec, ExperimentConfig, GroupingVsFlat, SampleSweep, SelectMode, SelectionDemo,
    TightnessSurface,
};
use crate::error::{CliError, CliResult};
use crate::output::{join_states, Row};

const VALUE_TOL: f64 = 1e-12;

/// A (grouping, K', T) cell whose trials share the optimal values.
struct Setting {
    label: String,
    prepared: usize,
    k_prime: u64,
    t: u64,
    utility: Option<f64>,
    betas: Option<(f64, f64)>,
}

struct TrialPlan<'a> {
    experiment: &'static str,
    mdp: &'a TabularMdp,
    v_star: Vec<f64>,
    prepared: Vec<PreparedGrouping>,
    settings: Vec<Setting>,
    n_trials: u32,
    delta: f64,
    seed: u64,
}

impl TrialPlan<'_> {
    fn execute(&self) -> CliResult<Vec<Row>> {
        let jobs: Vec<(u32, u32)> =
            (0..self.settings.len() as u32).flat_map(|s| (0..self.n_trials).map(move |i| (s, i))).collect();
        jobs.par_iter()
            .map(|&(si, trial)| {
                let st = &self.settings[si as usize];
                let seed = trial_seed(self.seed, si, trial);
                let out = pipeline_trial(
                    self.mdp,
                    &self.v_star,
                    &self.prepared[st.prepared],
                    st.k_prime,
                    st.t,
                    self.delta,
                    seed,
                )
                .map_err(|e| CliError::Runtime(format!("setting {si} trial {trial}: {e}")))?;
                let mut row = Row::from_trial(self.experiment, si, trial, seed, &st.label, &out);
                row.utility = st.utility;
                if let Some((bp, br)) = st.betas {
                    row.beta_p = Some(bp);
                    row.beta_r = Some(br);
                }
                Ok(row)
            })
            .collect()
    }
}

fn invalid(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::input_in(path, msg)
}

fn build_env(path: &Path, env: &EnvSpec) -> CliResult<BuiltEnv> {
    env.build().map_err(|e| invalid(path, e))
}

fn optimal(mdp: &TabularMdp) -> CliResult<Vec<f64>> {
    optimal_values(mdp, VALUE_TOL).map_err(|e| CliError::Runtime(e.to_string()))
}

fn check_trials(path: &Path, n_trials: u32, k_primes: &[u64], t: u64) -> CliResult<()> {
    if n_trials == 0 {
        return Err(invalid(path, "n_trials must be at least 1"));
    }
    if k_primes.contains(&0) {
        return Err(invalid(path, "k_prime values must be at least 1"));
    }
    if t == 0 {
        return Err(invalid(path, "t must be at least 1"));
    }
    Ok(())
}

/// Runs `cfg` on a pool of `threads` workers. Rows come back sorted by
/// (setting, trial).
pub fn run_experiment(path: &Path, cfg: &ExperimentConfig, threads: usize) -> CliResult<Vec<Row>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match cfg {
        ExperimentConfig::GroupingVsFlat(c) => grouping_vs_flat(path, c),
        ExperimentConfig::SampleSweep(c) => sample_sweep(path, c),
        ExperimentConfig::TightnessSurface(c) => tightness_surface(path, c),
        ExperimentConfig::BoundValidity(c) => bound_validity(path, c),
        ExperimentConfig::SelectionDemo(c) => selection_demo(path, c),
    })
}

fn grouping_vs_flat(path: &Path, c: &GroupingVsFlat) -> CliResult<Vec<Row>> {
    check_trials(path, c.n_trials, &c.k_prime, c.t)?;
    let env = build_env(path, &c.env)?;
    let grouped = PreparedGrouping::new(&env.mdp, env.grouping.clone(), env.inner.clone()).map_err(|e| invalid(path, e))?;
    let flat = PreparedGrouping::flat(&env.mdp).map_err(|e| invalid(path, e))?;
    let mut settings = Vec::new();
    for &k_prime in &c.k_prime {
        for (label, prepared) in [("grouped", 0), ("flat", 1)] {
            settings.push(Setting { label: label.into(), prepared, k_prime, t: c.t, utility: None, betas: None });
        }
    }
    TrialPlan {
        experiment: "grouping_vs_flat",
        mdp: &env.mdp,
        v_star: optimal(&env.mdp)?,
        prepared: vec![grouped, flat],
        settings,
        n_trials: c.n_trials,
        delta: c.delta,
        seed: c.seed,
    }
    .execute()
}

/// Grouping with `n` groups: the natural one, a coarsening of it, no grouping
/// at all, or contiguous blocks otherwise.
fn grouping_with(env: &BuiltEnv, n: usize) -> grouped_mdp::Result<GroupingFunction> {
    let na = env.mdp.n_actions();
    let natural = env.grouping.n_groups();
    if n == na {
        Ok(GroupingFunction::singleton(na))
    } else if n == natural {
        Ok(env.grouping.clone())
    } else if n < natural {
        env.grouping.coarsen(n)
    } else {
        GroupingFunction::contiguous(na, n)
    }
}

fn sample_sweep(path: &Path, c: &SampleSweep) -> CliResult<Vec<Row>> {
    check_trials(path, c.n_trials, &[1], c.t)?;
    if c.group_counts.is_empty() || c.k_total.is_empty() {
        return Err(invalid(path, "group_counts and k_total must be nonempty"));
    }
    let env = build_env(path, &c.env)?;
    let ns = env.mdp.n_states();
    let mut prepared = Vec::new();
    let mut settings = Vec::new();
    for (gi, &n) in c.group_counts.iter().enumerate() {
        let g = grouping_with(&env, n).map_err(|e| invalid(path, e))?;
        let p = if n == env.grouping.n_groups() {
            PreparedGrouping::new(&env.mdp, g, env.inner.clone())
        } else {
            PreparedGrouping::uniform(&env.mdp, g)
        };
        prepared.push(p.map_err(|e| invalid(path, e))?);
        for &k in &c.k_total {
            let budget = SampleBudget::from_total(k, ns, n).map_err(|e| invalid(path, format!("K = {k}, {n} groups: {e}")))?;
            settings.push(Setting {
                label: format!("g{n}"),
                prepared: gi,
                k_prime: budget.per_pair,
                t: c.t,
                utility: None,
                betas: None,
            });
        }
    }
    TrialPlan {
        experiment: "sample_sweep",
        mdp: &env.mdp,
        v_star: optimal(&env.mdp)?,
        prepared,
        settings,
        n_trials: c.n_trials,
        delta: c.delta,
        seed: c.seed,
    }
    .execute()
}

fn bound_validity(path: &Path, c: &BoundValidity) -> CliResult<Vec<Row>> {
    check_trials(path, c.n_trials, &c.k_prime, c.t)?;
    let env = build_env(path, &c.env)?;
    let prepared = PreparedGrouping::new(&env.mdp, env.grouping.clone(), env.inner.clone()).map_err(|e| invalid(path, e))?;
    let settings = c
        .k_prime
        .iter()
        .map(|&k_prime| Setting { label: "grouped".into(), prepared: 0, k_prime, t: c.t, utility: None, betas: None })
        .collect();
    TrialPlan {
        experiment: "bound_validity",
        mdp: &env.mdp,
        v_star: optimal(&env.mdp)?,
        prepared: vec![prepared],
        settings,
        n_trials: c.n_trials,
        delta: c.delta,
        seed: c.seed,
    }
    .execute()
}

/// Exact planning on the tightness example: no sampling, converged planning.
/// `eps_perf` is `eps_approx` and `gap` is `|eps_approx / 2 - loss|`.
fn tightness_surface(path: &Path, c: &TightnessSurface) -> CliResult<Vec<Row>> {
    if c.beta_p.is_empty() || c.beta_r.is_empty() {
        return Err(invalid(path, "beta_p and beta_r grids must be nonempty"));
    }
    let cells: Vec<(f64, f64)> = c.beta_p.iter().flat_map(|&p| c.beta_r.iter().map(move |&r| (p, r))).collect();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, &(bp, br))| {
            let start = Instant::now();
            let inst = build_tightness_mdp(TightnessConfig { beta_p: bp, beta_r: br, gamma: c.gamma })
                .map_err(|e| invalid(path, e))?;
            let outer = PolicyTable::deterministic(vec![0; inst.mdp.n_states()]);
            let lifted = lift_policy(&outer, &inst.inner, &inst.grouping).map_err(|e| CliError::Runtime(e.to_string()))?;
            let v_star = optimal(&inst.mdp)?;
            let loss = loss_against(&v_star, &inst.mdp, &lifted, DEFAULT_EVAL_TOL)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let approx = eps_approx(bp, br, c.gamma).map_err(|e| invalid(path, e))?;
            Ok(Row {
                experiment: "tightness_surface".into(),
                trial: 0,
                groups: 1,
                k: 0,
                k_prime: 0,
                t: 0,
                loss_sup: loss.sup,
                eps_perf: approx,
                eps_approx: approx,
                eps_samp: 0.0,
                eps_alg: 0.0,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                setting: i as u32,
                seed: None,
                label: Some("tightness".into()),
                loss_per_state: Some(join_states(&loss.per_state)),
                covered: Some(loss.sup <= approx),
                beta_p: Some(bp),
                beta_r: Some(br),
                gamma: Some(c.gamma),
                gap: Some((approx / 2.0 - loss.sup).abs()),
                utility: None,
            })
        })
        .collect()
}

/// Runs either selector on `mdp`.
pub fn select(
    mdp: &TabularMdp,
    set: &FeasibleSet,
    utility: &grouped_mdp::selector::UtilityConfig,
    grid: &grouped_mdp::selector::ResourceGrid,
    mode: SelectMode,
    opts: &PracticalOptions,
    seed: u64,
) -> grouped_mdp::Result<SelectionResult> {
    match mode {
        SelectMode::Exact => select_grouping_exact(mdp, set, utility, grid, opts.gamma, opts.delta),
        SelectMode::Practical => {
            select_grouping_practical(&GenerativeModel::new(mdp), set, utility, grid, opts, &RngSpec::new(seed))
        }
    }
}

/// Selects a grouping, then runs every candidate's pipeline at its chosen
/// `(K, T)`. `K' = max(1, floor(K / (S |g|)))`.
fn selection_demo(path: &Path, c: &SelectionDemo) -> CliResult<Vec<Row>> {
    check_trials(path, c.n_trials, &[1], 1)?;
    let env = build_env(path, &c.env)?;
    let set = match &c.feasible {
        Some(s) => s.clone(),
        None => FeasibleSet::new(env.feasible.clone()).map_err(|e| invalid(path, e))?,
    };
    set.check_mdp(&env.mdp).map_err(|e| invalid(path, e))?;
    let opts = PracticalOptions {
        m_per_group: c.m_per_group,
        k1: c.k1,
        gamma: env.mdp.gamma(),
        delta: c.delta,
        eta: None,
    };
    let result = select(&env.mdp, &set, &c.utility, &c.grid, c.mode, &opts, c.seed).map_err(|e| invalid(path, e))?;
    let ns = env.mdp.n_states();
    let mut prepared = Vec::new();
    let mut settings = Vec::new();
    for (g, rep) in set.candidates().iter().zip(&result.candidates) {
        prepared.push(PreparedGrouping::uniform(&env.mdp, g.clone()).map_err(|e| invalid(path, e))?);
        let label = if rep.index == result.best_index { "best" } else { "candidate" };
        settings.push(Setting {
            label: label.into(),
            prepared: rep.index,
            k_prime: (rep.k_star / (ns * rep.n_groups) as u64).max(1),
            t: rep.t_star,
            utility: Some(rep.utility),
            betas: Some((rep.beta_p_star, rep.beta_r_star)),
        });
    }
    TrialPlan {
        experiment: "selection_demo",
        mdp: &env.mdp,
        v_star: optimal(&env.mdp)?,
        prepared,
        settings,
        n_trials: c.n_trials,
        delta: c.delta,
        seed: c.seed,
    }
    .execute()
}

/// Bound breakdown for a given MDP, grouping and total budget.
pub fn bounds_for(
    mdp: &TabularMdp,
    g: &GroupingFunction,
    k: u64,
    t: u64,
    gamma: f64,
    delta: f64,
) -> grouped_mdp::Result<BoundBreakdown> {
    let f = grouped_mdp::grouping::deviation_factors(mdp, g)?;
    grouped_mdp::bounds::eps_perf_vi(&BoundInputs {
        beta_p_star: f.beta_p_star,
        beta_r_star: f.beta_r_star,
        n_states: mdp.n_states(),
        n_groups: g.n_groups(),
        k,
        t,
        gamma,
        delta,
        eps_opt_override: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use grouped_mdp::bounds::tightness_gap;

    #[test]
    fn tightness_gap_matches_closed_form() {
        let cfg = TightnessSurface { gamma: 0.5, beta_p: vec![0.0, 0.2, 0.7], beta_r: vec![0.0, 0.1, 1.0] };
        let rows = tightness_surface(Path::new("t.json"), &cfg).unwrap();
        assert_eq!(rows.len(), 9);
        for r in rows {
            let want = tightness_gap(r.beta_p.unwrap(), r.beta_r.unwrap(), 0.5);
            assert!((r.gap.unwrap() - want).abs() < 1e-9, "{} vs {want}", r.gap.unwrap());
        }
    }
}
