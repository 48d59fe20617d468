//! Two-state, two-action MDP on which the approximation bound is nearly tight.
//!
//! Both actions form one group and the inner policy always picks `a0`, so the
//! only grouped policy is "always `a0`", which is stuck at reward 0 in `s0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupingFunction, InnerPolicy};
use crate::mdp::TabularMdp;

use super::check_unit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessConfig {
    pub beta_p: f64,
    pub beta_r: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct TightnessInstance {
    pub mdp: TabularMdp,
    pub grouping: GroupingFunction,
    pub inner: InnerPolicy,
    /// Closed-form optimal values `[V*(s0), V*(s1)]`.
    pub v_star: [f64; 2],
    /// Closed-form values of the grouped policy.
    pub v_grouped: [f64; 2],
}

impl TightnessInstance {
    /// Closed-form loss per state.
    pub fn loss(&self) -> [f64; 2] {
        [self.v_star[0] - self.v_grouped[0], self.v_star[1] - self.v_grouped[1]]
    }
}

pub fn build_tightness_mdp(cfg: TightnessConfig) -> Result<TightnessInstance> {
    check_unit("beta_p", cfg.beta_p)?;
    check_unit("beta_r", cfg.beta_r)?;
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {}", cfg.gamma)));
    }
    let (bp, br, gamma) = (cfg.beta_p, cfg.beta_r, cfg.gamma);
    let transition = vec![
        vec![vec![1.0, 0.0], vec![1.0 - bp, bp]],
        vec![vec![bp, 1.0 - bp], vec![0.0, 1.0]],
    ];
    let reward = vec![vec![0.0, br], vec![1.0 - br, 1.0]];
    let mdp = TabularMdp::from_nested(&transition, &reward, gamma)?;
    let grouping = GroupingFunction::single_group(2);
    let inner = InnerPolicy::point_mass(&grouping, &[0])?;

    let d = 1.0 - gamma * (1.0 - bp);
    let v1_star = 1.0 / (1.0 - gamma);
    let v0_star = (br + gamma * bp * v1_star) / d;
    let v1_grouped = (1.0 - br) / d;
    Ok(TightnessInstance { mdp, grouping, inner, v_star: [v0_star, v1_star], v_grouped: [0.0, v1_grouped] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::tightness_loss;

    #[test]
    fn lossless_corner() {
        let t = build_tightness_mdp(TightnessConfig { beta_p: 0.0, beta_r: 0.0, gamma: 0.5 }).unwrap();
        assert_eq!(t.v_star[1], 2.0);
        assert_eq!(t.v_grouped[1], 2.0);
    }

    #[test]
    fn optimal_value_at_s0() {
        let t = build_tightness_mdp(TightnessConfig { beta_p: 0.2, beta_r: 0.1, gamma: 0.5 }).unwrap();
        // (0.1 + 0.5 * 0.2 * 2) / 0.6
        assert!((t.v_star[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn both_states_lose_the_same_amount() {
        for (bp, br) in [(0.0, 0.05), (0.07, 0.0), (0.1, 0.1), (0.5, 0.3)] {
            let t = build_tightness_mdp(TightnessConfig { beta_p: bp, beta_r: br, gamma: 0.5 }).unwrap();
            let want = tightness_loss(bp, br, 0.5);
            for l in t.loss() {
                assert!((l - want).abs() < 1e-12, "{bp} {br}: {l} vs {want}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(build_tightness_mdp(TightnessConfig { beta_p: 1.5, beta_r: 0.0, gamma: 0.5 }).is_err());
        assert!(build_tightness_mdp(TightnessConfig { beta_p: 0.0, beta_r: 0.0, gamma: 1.0 }).is_err());
    }
}
