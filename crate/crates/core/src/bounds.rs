//! Closed-form performance-loss bounds and resource costs.
//!
//! The loss of the grouped pipeline splits into an approximation term driven by
//! the deviation factors and an estimation term made of a sampling part and an
//! algorithmic part:
//!
//! ```text
//! eps_approx = 2 (beta_r / (1-g) + g beta_p / (1-g)^2)
//! eps_samp   = 20 g sqrt(S|G| ln(8 S|G| / (delta (1-g))) / (K (1-g)^3))
//! eps_opt    = 2 g^T / (1-g)^2                 (value iteration, T sweeps)
//! eps_alg    = 4 eps_opt / (1-g)
//! eps_perf   = eps_approx + eps_samp + eps_alg
//! ```
//!
//! The sampling term is only guaranteed once
//! `K >= 648 S|G| ln(8 S|G| / (delta (1-g))) / (1-g)^2`; below that the
//! breakdown is still returned with `sample_size_ok = false`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Leading constant of the sample-size threshold.
pub const SAMPLE_THRESHOLD_CONST: f64 = 648.0;
/// Leading constant of the sampling term.
pub const SAMPLING_CONST: f64 = 20.0;

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `gamma^t` evaluated as `exp(t ln gamma)`; underflows cleanly to zero.
pub fn discount_power(gamma: f64, t: u64) -> f64 {
    if t == 0 {
        1.0
    } else if gamma == 0.0 {
        0.0
    } else {
        (t as f64 * gamma.ln()).exp()
    }
}

pub fn eps_approx(beta_p_star: f64, beta_r_star: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let h = 1.0 - gamma;
    Ok(2.0 * (beta_r_star / h + gamma * beta_p_star / (h * h)))
}

fn log_term(n_states: usize, n_groups: usize, gamma: f64, delta: f64) -> f64 {
    let sg = (n_states * n_groups) as f64;
    (8.0 * sg / (delta * (1.0 - gamma))).ln()
}

pub fn eps_samp(n_states: usize, n_groups: usize, k: u64, gamma: f64, delta: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_delta(delta)?;
    if k == 0 {
        return Err(Error::InvalidArgument("sample size K must be at least 1".into()));
    }
    let sg = (n_states * n_groups) as f64;
    let h = 1.0 - gamma;
    let inner = sg * log_term(n_states, n_groups, gamma, delta) / (k as f64 * h.powi(3));
    Ok(SAMPLING_CONST * gamma * inner.sqrt())
}

/// Value-iteration suboptimality on the estimated MDP after `t` sweeps.
pub fn eps_opt_vi(gamma: f64, t: u64) -> Result<f64> {
    check_gamma(gamma)?;
    let h = 1.0 - gamma;
    Ok(2.0 * discount_power(gamma, t) / (h * h))
}

/// Smallest total sample size for which the sampling term is guaranteed.
pub fn sample_size_threshold(n_states: usize, n_groups: usize, gamma: f64, delta: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_delta(delta)?;
    let sg = (n_states * n_groups) as f64;
    let h = 1.0 - gamma;
    Ok(SAMPLE_THRESHOLD_CONST * sg * log_term(n_states, n_groups, gamma, delta) / (h * h))
}

/// Inputs of [`eps_perf_vi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub beta_p_star: f64,
    pub beta_r_star: f64,
    pub n_states: usize,
    pub n_groups: usize,
    pub k: u64,
    pub t: u64,
    pub gamma: f64,
    pub delta: f64,
    /// Planner suboptimality on the estimated MDP; defaults to the VI bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_opt_override: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub eps_approx: f64,
    pub eps_samp: f64,
    pub eps_opt: f64,
    pub eps_alg: f64,
    pub eps_perf: f64,
    pub sample_size_ok: bool,
    pub inputs: BoundInputs,
}

pub fn eps_perf_vi(inputs: &BoundInputs) -> Result<BoundBreakdown> {
    let gamma = inputs.gamma;
    check_gamma(gamma)?;
    check_delta(inputs.delta)?;
    if inputs.t == 0 && inputs.eps_opt_override.is_none() {
        return Err(Error::InvalidArgument("iteration count T must be at least 1".into()));
    }
    if inputs.n_states == 0 || inputs.n_groups == 0 {
        return Err(Error::InvalidArgument("S and |g| must be positive".into()));
    }
    for (name, b) in [("beta_p_star", inputs.beta_p_star), ("beta_r_star", inputs.beta_r_star)] {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {b}")));
        }
    }
    let approx = eps_approx(inputs.beta_p_star, inputs.beta_r_star, gamma)?;
    let samp = eps_samp(inputs.n_states, inputs.n_groups, inputs.k, gamma, inputs.delta)?;
    let opt = match inputs.eps_opt_override {
        Some(e) if e >= 0.0 => e,
        Some(e) => return Err(Error::InvalidArgument(format!("eps_opt override must be >= 0, got {e}"))),
        None => eps_opt_vi(gamma, inputs.t)?,
    };
    let alg = 4.0 * opt / (1.0 - gamma);
    let threshold = sample_size_threshold(inputs.n_states, inputs.n_groups, gamma, inputs.delta)?;
    Ok(BoundBreakdown {
        eps_approx: approx,
        eps_samp: samp,
        eps_opt: opt,
        eps_alg: alg,
        eps_perf: approx + samp + alg,
        sample_size_ok: inputs.k as f64 >= threshold,
        inputs: *inputs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCosts {
    pub c_samp: u64,
    pub c_comp: u64,
}

/// Sample cost `K` and value-iteration cost `(S^2 |g| + 2 S |g|) T`
/// (saturating at `u64::MAX`).
pub fn resource_costs(n_states: usize, n_groups: usize, k: u64, t: u64) -> ResourceCosts {
    let s = n_states as u64;
    let g = n_groups as u64;
    let per_sweep = s.saturating_mul(s).saturating_mul(g).saturating_add(2u64.saturating_mul(s).saturating_mul(g));
    ResourceCosts { c_samp: k, c_comp: per_sweep.saturating_mul(t) }
}

/// Inputs of the practical-selection gap bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Inputs {
    pub lipschitz: f64,
    pub eta_p: f64,
    pub eta_r: f64,
    pub n_sampled_actions: usize,
    pub k1: u64,
    pub n_states: usize,
    pub gamma: f64,
    pub delta: f64,
}

/// Worst-case utility lost by selecting with sampled-action deviation factors:
/// an action-sampling part linear in `(eta_r, eta_p)` plus a probability
/// estimation part shrinking as `1 / sqrt(K1)`.
pub fn prop1_gap_bound(p: &Prop1Inputs) -> Result<f64> {
    check_gamma(p.gamma)?;
    check_delta(p.delta)?;
    if !(p.lipschitz > 0.0) || p.eta_p < 0.0 || p.eta_r < 0.0 || p.n_sampled_actions == 0 || p.k1 == 0 || p.n_states == 0
    {
        return Err(Error::InvalidArgument(format!("invalid gap-bound inputs {p:?}")));
    }
    let h = 1.0 - p.gamma;
    let s = p.n_states as f64;
    let sa = s * p.n_sampled_actions as f64;
    let action_sampling = 4.0 * p.lipschitz * p.eta_r / h + 4.0 * p.lipschitz * p.gamma * s * p.eta_p / (h * h);
    let estimation =
        4.0 * p.lipschitz * p.gamma * s / (h * h) * (sa * (2.0 * sa / p.delta).ln() / (2.0 * p.k1 as f64)).sqrt();
    Ok(action_sampling + estimation)
}

/// Exact loss of the always-`a0` grouped policy on the two-state tightness MDP:
/// `beta_r / (1 - (1-beta_p) g) + g beta_p / ((1 - (1-beta_p) g)(1-g))`.
pub fn tightness_loss(beta_p: f64, beta_r: f64, gamma: f64) -> f64 {
    let d = 1.0 - (1.0 - beta_p) * gamma;
    beta_r / d + gamma * beta_p / (d * (1.0 - gamma))
}

/// `|eps_approx / 2 - tightness_loss|` in its expanded form.
pub fn tightness_gap(beta_p: f64, beta_r: f64, gamma: f64) -> f64 {
    let d = 1.0 - (1.0 - beta_p) * gamma;
    let h = 1.0 - gamma;
    beta_p * beta_r * gamma / (h * d) + (beta_p * gamma).powi(2) / (h * h * d)
}

/// Region where the tightness gap is guaranteed to stay below `eps`.
pub fn tightness_condition_holds(beta_p: f64, beta_r: f64, gamma: f64, eps: f64) -> bool {
    let h = 1.0 - gamma;
    beta_p <= std::f64::consts::SQRT_2 * h * h * eps && beta_r <= h / (std::f64::consts::SQRT_2 * gamma)
}
