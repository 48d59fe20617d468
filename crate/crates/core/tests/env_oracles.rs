use grouped_mdp::envs::{
    build_downlink, build_tightness_mdp, build_wireless_access, random_mdp, DownlinkConfig, RandomStructure,
    TightnessConfig, WirelessAccessConfig,
};
use grouped_mdp::grouping::{beta_p_star, deviation_factors};
use grouped_mdp::mdp::{evaluate_policy, validate_mdp, PolicyTable};

#[test]
fn constructors_produce_valid_models() {
    let d = build_downlink(&DownlinkConfig::new(5, 1000, 10, 0.5, 0.01, 0)).unwrap();
    assert!(validate_mdp(&d.mdp).is_empty());
    let w = build_wireless_access(&WirelessAccessConfig::new(2, 1, 0.3)).unwrap();
    assert!(validate_mdp(&w.mdp).is_empty());
    let r = random_mdp(7, 5, 0.9, 1, RandomStructure::None).unwrap();
    assert!(validate_mdp(&r.mdp).is_empty());
}

#[test]
fn tightness_closed_forms_match_policy_evaluation() {
    for i in 0..=10 {
        for j in 0..=10 {
            let cfg = TightnessConfig { beta_p: 0.1 * i as f64, beta_r: 0.1 * j as f64, gamma: 0.5 };
            let t = build_tightness_mdp(cfg).unwrap();
            let v0 = evaluate_policy(&t.mdp, &PolicyTable::deterministic(vec![0, 0]), 1e-13).unwrap().v;
            let vs = evaluate_policy(&t.mdp, &PolicyTable::deterministic(vec![1, 1]), 1e-13).unwrap().v;
            for s in 0..2 {
                assert!((v0[s] - t.v_grouped[s]).abs() <= 1e-9);
                assert!((vs[s] - t.v_star[s]).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn wireless_transition_factor_matches_exhaustive_oracle() {
    let w = build_wireless_access(&WirelessAccessConfig::new(2, 1, 0.3)).unwrap();
    let (m, g) = (&w.mdp, &w.grouping);
    let mut oracle: f64 = 0.0;
    for s in 0..m.n_states() {
        for h in 0..g.n_groups() {
            let mass: f64 = (0..m.n_states())
                .map(|next| g.members(h).iter().map(|&a| m.p(s, a, next)).fold(f64::INFINITY, f64::min))
                .sum();
            oracle = oracle.max(1.0 - mass);
        }
    }
    assert_eq!(beta_p_star(m, g).unwrap(), oracle.clamp(0.0, 1.0));
}

#[test]
fn wireless_collisions_are_identical_rows() {
    let w = build_wireless_access(&WirelessAccessConfig::new(3, 2, 0.6)).unwrap();
    let g = &w.grouping;
    let collide: Vec<usize> = (0..8).filter(|a: &usize| a.count_ones() >= 2).collect();
    for s in 0..w.mdp.n_states() {
        for &a in &collide {
            assert_eq!(w.mdp.row(s, a), w.mdp.row(s, collide[0]));
        }
    }
    assert!(collide.iter().all(|&a| g.group_of(a) == 1));
}

#[test]
fn random_reward_spread_is_capped() {
    let r = random_mdp(5, 9, 0.9, 4, RandomStructure::DuplicatedGroups { n_groups: 3, eta_p: 0.1, eta_r: 0.05 }).unwrap();
    assert!(deviation_factors(&r.mdp, r.grouping.as_ref().unwrap()).unwrap().beta_r_star <= 0.05);
}
