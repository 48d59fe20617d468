//! Seeded random MDPs, optionally with near-duplicate actions inside groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupingFunction;
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomStructure {
    None,
    /// Contiguous groups whose actions stay within `eta_p` of each other
    /// entrywise in transition and within `eta_r` in reward.
    DuplicatedGroups { n_groups: usize, eta_p: f64, eta_r: f64 },
}

#[derive(Debug, Clone)]
pub struct RandomMdp {
    pub mdp: TabularMdp,
    pub grouping: Option<GroupingFunction>,
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Zero-sum perturbation of `base` with entries at most `eta / 2` in size and
/// nonnegative result.
fn perturb_row(rng: &mut ChaCha8Rng, base: &[f64], eta: f64) -> Vec<f64> {
    if eta == 0.0 {
        return base.to_vec();
    }
    let mut d: Vec<f64> = base.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|x| *x -= mean);
    let peak = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return base.to_vec();
    }
    let mut scale = eta / 2.0 / peak;
    for (p, x) in base.iter().zip(&d) {
        if *x < 0.0 {
            scale = scale.min(p / -x);
        }
    }
    let row: Vec<f64> = base.iter().zip(&d).map(|(p, x)| (p + scale * x).max(0.0)).collect();
    let total: f64 = row.iter().sum();
    row.into_iter().map(|x| x / total).collect()
}

pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    structure: RandomStructure,
) -> Result<RandomMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidArgument("random MDP needs positive dimensions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na) = (n_states, n_actions);
    match structure {
        RandomStructure::None => {
            let mut transition = Vec::with_capacity(ns * na * ns);
            for _ in 0..ns * na {
                transition.extend(random_row(&mut rng, ns));
            }
            let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
            Ok(RandomMdp { mdp: TabularMdp::new(ns, na, gamma, transition, reward)?, grouping: None })
        }
        RandomStructure::DuplicatedGroups { n_groups, eta_p, eta_r } => {
            for (name, x) in [("eta_p", eta_p), ("eta_r", eta_r)] {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {x}")));
                }
            }
            let g = GroupingFunction::contiguous(na, n_groups)?;
            let mut transition = vec![0.0; ns * na * ns];
            let mut reward = vec![0.0; ns * na];
            for s in 0..ns {
                for h in 0..n_groups {
                    let base_row = random_row(&mut rng, ns);
                    let base_r = rng.random::<f64>() * (1.0 - eta_r);
                    for &a in g.members(h) {
                        let row = perturb_row(&mut rng, &base_row, eta_p);
                        transition[(s * na + a) * ns..(s * na + a + 1) * ns].copy_from_slice(&row);
                        reward[s * na + a] = base_r + if eta_r > 0.0 { rng.random::<f64>() * eta_r } else { 0.0 };
                    }
                }
            }
            Ok(RandomMdp { mdp: TabularMdp::new(ns, na, gamma, transition, reward)?, grouping: Some(g) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::deviation_factors;

    #[test]
    fn deterministic_in_seed() {
        let a = random_mdp(4, 3, 0.9, 11, RandomStructure::None).unwrap();
        let b = random_mdp(4, 3, 0.9, 11, RandomStructure::None).unwrap();
        let c = random_mdp(4, 3, 0.9, 12, RandomStructure::None).unwrap();
        assert_eq!(a.mdp, b.mdp);
        assert_ne!(a.mdp, c.mdp);
    }

    #[test]
    fn exact_duplicates_are_lossless() {
        let r = random_mdp(5, 12, 0.5, 3, RandomStructure::DuplicatedGroups { n_groups: 4, eta_p: 0.0, eta_r: 0.0 })
            .unwrap();
        let f = deviation_factors(&r.mdp, r.grouping.as_ref().unwrap()).unwrap();
        // Rows are identical, so only the rounding of their sum remains.
        assert!(f.beta_p_star <= 1e-12);
        assert_eq!(f.beta_r_star, 0.0);
    }

    #[test]
    fn perturbations_respect_caps() {
        for seed in 0..20 {
            let r =
                random_mdp(6, 10, 0.5, seed, RandomStructure::DuplicatedGroups { n_groups: 3, eta_p: 0.04, eta_r: 0.05 })
                    .unwrap();
            let g = r.grouping.unwrap();
            let f = deviation_factors(&r.mdp, &g).unwrap();
            assert!(f.beta_r_star <= 0.05);
            for s in 0..6 {
                for h in 0..3 {
                    for &a in g.members(h) {
                        for &b in g.members(h) {
                            for (x, y) in r.mdp.row(s, a).iter().zip(r.mdp.row(s, b)) {
                                assert!((x - y).abs() <= 0.04 + 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }
}
