//! Downlink queue served by one of `A` users per slot.
//!
//! State is the queue length `0..S`. User `a` in group `h` has service rate
//! `mu = (1 - bt_p) mu1(h) + bt_p w_P(s, a)` and reward
//! `(1 - bt_r) R1(h) + bt_r w_R(s, a) - c(s)`, with `mu1(h) = (2h - 1) / G`,
//! `R1(h) = 1 - mu1(h)` (1-indexed `h`), `c(s) = (s - 1) / S` and Gaussian
//! perturbations. Rates and rewards are clipped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupingFunction;
use crate::mdp::TabularMdp;

use super::check_unit;

fn default_gamma() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownlinkConfig {
    #[serde(alias = "S")]
    pub n_states: usize,
    #[serde(alias = "A")]
    pub n_actions: usize,
    #[serde(alias = "G")]
    pub n_groups: usize,
    pub lambda: f64,
    pub beta_tilde_p: f64,
    pub beta_tilde_r: f64,
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl DownlinkConfig {
    /// Same perturbation scale for transitions and rewards.
    pub fn new(n_states: usize, n_actions: usize, n_groups: usize, lambda: f64, beta_tilde: f64, seed: u64) -> Self {
        Self {
            n_states,
            n_actions,
            n_groups,
            lambda,
            beta_tilde_p: beta_tilde,
            beta_tilde_r: beta_tilde,
            seed,
            gamma: default_gamma(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Downlink {
    pub mdp: TabularMdp,
    /// Contiguous grouping with `G` groups.
    pub grouping: GroupingFunction,
    /// Coarsenings of `grouping` to 1, 2, 5, 10, 20, 50, ... groups below `G`,
    /// then `grouping` itself and the singleton grouping.
    pub feasible: Vec<GroupingFunction>,
}

/// Service rate of group `h` (0-indexed) before perturbation.
pub fn base_rate(h: usize, n_groups: usize) -> f64 {
    (2.0 * (h + 1) as f64 - 1.0) / n_groups as f64
}

/// Reward of group `h` (0-indexed) before perturbation and penalty.
pub fn base_reward(h: usize, n_groups: usize) -> f64 {
    1.0 - base_rate(h, n_groups)
}

/// Queue penalty `(s - 1) / S` at state index `s`.
pub fn queue_penalty(s: usize, n_states: usize) -> f64 {
    (s as f64 - 1.0) / n_states as f64
}

fn group_counts(n_groups: usize) -> impl Iterator<Item = usize> {
    [1usize, 2, 5].into_iter().cycle().scan(1usize, |scale, m| {
        let v = m * *scale;
        if m == 5 {
            *scale *= 10;
        }
        Some(v)
    })
    .take_while(move |&v| v < n_groups)
}

pub fn build_downlink(cfg: &DownlinkConfig) -> Result<Downlink> {
    if cfg.n_states < 2 {
        return Err(Error::InvalidArgument(format!("downlink needs S >= 2, got {}", cfg.n_states)));
    }
    if cfg.n_groups == 0 || cfg.n_groups > cfg.n_actions {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= G <= A, got G = {}, A = {}",
            cfg.n_groups, cfg.n_actions
        )));
    }
    check_unit("lambda", cfg.lambda)?;
    check_unit("beta_tilde_p", cfg.beta_tilde_p)?;
    check_unit("beta_tilde_r", cfg.beta_tilde_r)?;
    let (ns, na, ng) = (cfg.n_states, cfg.n_actions, cfg.n_groups);
    let grouping = GroupingFunction::contiguous(na, ng)?;

    let draw = |stream: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        (0..ns * na).map(|_| rng.sample(StandardNormal)).collect()
    };
    let w_p = draw(0);
    let w_r = draw(1);

    let lambda = cfg.lambda;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let h = grouping.group_of(a);
            let i = s * na + a;
            let mu = ((1.0 - cfg.beta_tilde_p) * base_rate(h, ng) + cfg.beta_tilde_p * w_p[i]).clamp(0.0, 1.0);
            let r = (1.0 - cfg.beta_tilde_r) * base_reward(h, ng) + cfg.beta_tilde_r * w_r[i] - queue_penalty(s, ns);
            reward[i] = r.clamp(0.0, 1.0);

            let row = &mut transition[i * ns..(i + 1) * ns];
            let up = if s + 1 < ns { lambda * (1.0 - mu) } else { 0.0 };
            let down = if s > 0 { mu * (1.0 - lambda) } else { 0.0 };
            if s + 1 < ns {
                row[s + 1] = up;
            }
            if s > 0 {
                row[s - 1] = down;
            }
            row[s] = 1.0 - up - down;
        }
    }
    let mdp = TabularMdp::new(ns, na, cfg.gamma, transition, reward)?;

    let mut feasible: Vec<GroupingFunction> =
        group_counts(ng).map(|n| grouping.coarsen(n)).collect::<Result<_>>()?;
    feasible.push(grouping.clone());
    if ng < na {
        feasible.push(GroupingFunction::singleton(na));
    }
    Ok(Downlink { mdp, grouping, feasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::deviation_factors;

    #[test]
    fn base_rates() {
        assert!((base_rate(0, 10) - 0.1).abs() < 1e-15);
        assert!((base_reward(0, 10) - 0.9).abs() < 1e-15);
        assert!((base_rate(9, 10) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn unperturbed_grouping_is_lossless() {
        let d = build_downlink(&DownlinkConfig::new(5, 30, 6, 0.5, 0.0, 1)).unwrap();
        let f = deviation_factors(&d.mdp, &d.grouping).unwrap();
        assert_eq!(f.beta_p_star, 0.0);
        assert_eq!(f.beta_r_star, 0.0);
    }

    #[test]
    fn paper_sized_instance_is_valid() {
        let d = build_downlink(&DownlinkConfig::new(5, 1000, 10, 0.5, 0.01, 0)).unwrap();
        assert_eq!(d.mdp.n_actions(), 1000);
        let sizes: Vec<usize> = d.feasible.iter().map(|g| g.n_groups()).collect();
        assert_eq!(sizes, vec![1, 2, 5, 10, 1000]);
    }

    #[test]
    fn feasible_set_for_twenty_groups() {
        let d = build_downlink(&DownlinkConfig::new(5, 100, 20, 0.5, 0.001, 0)).unwrap();
        let sizes: Vec<usize> = d.feasible.iter().map(|g| g.n_groups()).collect();
        assert_eq!(sizes, vec![1, 2, 5, 10, 20, 100]);
        assert!(d.feasible.iter().all(|g| d.grouping.refines(g) || g.refines(&d.grouping)));
    }

    #[test]
    fn seed_changes_perturbations_only() {
        let a = build_downlink(&DownlinkConfig::new(4, 8, 2, 0.3, 0.1, 1)).unwrap();
        let b = build_downlink(&DownlinkConfig::new(4, 8, 2, 0.3, 0.1, 1)).unwrap();
        let c = build_downlink(&DownlinkConfig::new(4, 8, 2, 0.3, 0.1, 2)).unwrap();
        assert_eq!(a.mdp, b.mdp);
        assert_ne!(a.mdp, c.mdp);
    }

    #[test]
    fn config_accepts_short_names() {
        let c: DownlinkConfig = serde_json::from_str(
            r#"{"S":5,"A":100,"G":10,"lambda":0.5,"beta_tilde_p":0.01,"beta_tilde_r":0.01,"seed":3}"#,
        )
        .unwrap();
        assert_eq!(c.n_actions, 100);
        assert_eq!(c.gamma, 0.9);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(build_downlink(&DownlinkConfig::new(1, 10, 2, 0.5, 0.0, 0)).is_err());
        assert!(build_downlink(&DownlinkConfig::new(3, 10, 11, 0.5, 0.0, 0)).is_err());
        assert!(build_downlink(&DownlinkConfig::new(3, 10, 2, 1.5, 0.0, 0)).is_err());
    }
}
