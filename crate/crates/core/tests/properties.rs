use grouped_mdp::envs::{random_mdp, RandomStructure};
use grouped_mdp::estimation::{sample_generative, SampleBudget, SampleMode};
use grouped_mdp::grouping::{
    build_grouped_mdp, decomposition_witness, deviation_factors, lift_policy, DeviationFactors,
};
use grouped_mdp::mdp::{bellman_optimal_update, evaluate_policy, sup_norm_diff, value_iteration, PolicyTable, StopRule, ValueTables};
use grouped_mdp::selector::{estimate_deviation_factors, GenerativeModel};
use grouped_mdp::{GroupingFunction, InnerPolicy, RngSpec, TabularMdp};
use proptest::prelude::*;

fn mdp_strategy() -> impl Strategy<Value = TabularMdp> {
    (1usize..=6, 1usize..=6, prop_oneof![Just(0.0), Just(0.5), Just(0.9), Just(0.99)], any::<u64>())
        .prop_map(|(s, a, gamma, seed)| random_mdp(s, a, gamma, seed, RandomStructure::None).unwrap().mdp)
}

fn grouping_for(n_actions: usize, labels: &[usize]) -> GroupingFunction {
    // Relabel arbitrary labels into a gap-free assignment.
    let mut seen = Vec::new();
    let assignment = (0..n_actions)
        .map(|a| {
            let l = labels[a % labels.len()];
            match seen.iter().position(|&x| x == l) {
                Some(i) => i,
                None => {
                    seen.push(l);
                    seen.len() - 1
                }
            }
        })
        .collect();
    GroupingFunction::new(assignment).unwrap()
}

fn q_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bellman_operator_is_a_gamma_contraction(
        (mdp, q1, q2) in mdp_strategy().prop_flat_map(|m| {
            let n = m.n_states() * m.n_actions();
            (Just(m), q_strategy(n), q_strategy(n))
        })
    ) {
        let na = mdp.n_actions();
        let t1 = bellman_optimal_update(&mdp, &ValueTables::from_q(na, q1.clone())).unwrap();
        let t2 = bellman_optimal_update(&mdp, &ValueTables::from_q(na, q2.clone())).unwrap();
        let lhs = sup_norm_diff(&t1.q, &t2.q);
        let rhs = mdp.gamma() * sup_norm_diff(&q1, &q2);
        prop_assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
    }

    #[test]
    fn value_iteration_from_zero_is_monotone(mdp in mdp_strategy(), t in 1usize..30) {
        let (a, _) = value_iteration(&mdp, StopRule::Iterations(t)).unwrap();
        let (b, _) = value_iteration(&mdp, StopRule::Iterations(t + 1)).unwrap();
        prop_assert!(a.q.iter().zip(&b.q).all(|(x, y)| x <= y));
        prop_assert!(b.q.iter().all(|&x| (0.0..=1.0 / (1.0 - mdp.gamma()) + 1e-9).contains(&x)));
    }

    #[test]
    fn optimal_policy_dominates_any_policy(mdp in mdp_strategy(), choice_seed in any::<u64>()) {
        let (opt, _) = value_iteration(&mdp, StopRule::Tolerance(1e-13)).unwrap();
        let choice = (0..mdp.n_states())
            .map(|s| (choice_seed.rotate_left(s as u32) as usize) % mdp.n_actions())
            .collect();
        let v = evaluate_policy(&mdp, &PolicyTable::deterministic(choice), 1e-13).unwrap().v;
        let slack = 1e-10 / (1.0 - mdp.gamma());
        prop_assert!(opt.v.iter().zip(&v).all(|(o, x)| *o >= x - slack));
    }

    #[test]
    fn refinement_never_increases_deviation(
        mdp in mdp_strategy(),
        labels in prop::collection::vec(0usize..4, 1..8),
        split in any::<u64>()
    ) {
        let coarse = grouping_for(mdp.n_actions(), &labels);
        // Split each coarse group by one pseudo-random bit per action.
        let fine_labels: Vec<usize> = (0..mdp.n_actions())
            .map(|a| 2 * coarse.group_of(a) + ((split >> (a % 64)) & 1) as usize)
            .collect();
        let fine = grouping_for(mdp.n_actions(), &fine_labels);
        let single = GroupingFunction::single_group(mdp.n_actions());
        let singleton = GroupingFunction::singleton(mdp.n_actions());
        prop_assert!(fine.refines(&coarse));
        let f = |g: &GroupingFunction| deviation_factors(&mdp, g).unwrap();
        let chain: Vec<DeviationFactors> = [&singleton, &fine, &coarse, &single].into_iter().map(f).collect();
        for w in chain.windows(2) {
            prop_assert!(w[0].beta_p_star <= w[1].beta_p_star + 1e-12);
            prop_assert!(w[0].beta_r_star <= w[1].beta_r_star);
        }
    }

    #[test]
    fn witness_reconstructs_the_model(mdp in mdp_strategy(), labels in prop::collection::vec(0usize..3, 1..8)) {
        let g = grouping_for(mdp.n_actions(), &labels);
        let w = decomposition_witness(&mdp, &g).unwrap();
        prop_assert!(w.transition_residual(&mdp, &g) <= 1e-10);
        prop_assert!(w.reward_residual(&mdp, &g) <= 1e-10);
        prop_assert!(w.is_well_formed(1e-10));
    }

    #[test]
    fn reward_factor_matches_pairwise_oracle(mdp in mdp_strategy(), labels in prop::collection::vec(0usize..3, 1..8)) {
        let g = grouping_for(mdp.n_actions(), &labels);
        let mut brute: f64 = 0.0;
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                for b in 0..mdp.n_actions() {
                    if g.group_of(a) == g.group_of(b) {
                        brute = brute.max(mdp.r(s, a) - mdp.r(s, b));
                    }
                }
            }
        }
        prop_assert_eq!(deviation_factors(&mdp, &g).unwrap().beta_r_star, brute);
    }

    #[test]
    fn lifted_policy_keeps_grouped_values(
        mdp in mdp_strategy(),
        labels in prop::collection::vec(0usize..3, 1..8),
        outer_seed in any::<u64>()
    ) {
        let g = grouping_for(mdp.n_actions(), &labels);
        let inner = InnerPolicy::uniform(&g);
        let gm = build_grouped_mdp(&mdp, &g, &inner).unwrap();
        let choice = (0..mdp.n_states()).map(|s| (outer_seed >> (s % 60)) as usize % g.n_groups()).collect();
        let outer = PolicyTable::deterministic(choice);
        let vg = evaluate_policy(gm.mdp(), &outer, 1e-13).unwrap().v;
        let vf = evaluate_policy(&mdp, &lift_policy(&outer, &inner, &g).unwrap(), 1e-13).unwrap().v;
        prop_assert!(sup_norm_diff(&vg, &vf) <= 1e-9);
    }

    #[test]
    fn sampled_factors_never_exceed_exact_ones(
        mdp in mdp_strategy(),
        labels in prop::collection::vec(0usize..2, 1..8),
        seed in any::<u64>()
    ) {
        let g = grouping_for(mdp.n_actions(), &labels);
        let m = (0..g.n_groups()).map(|h| g.members(h).len()).min().unwrap();
        let exact = deviation_factors(&mdp, &g).unwrap();
        let est = estimate_deviation_factors(&GenerativeModel::exact(&mdp), &g, m.min(2), 1 << 20, &RngSpec::new(seed)).unwrap();
        prop_assert!(est.beta_p_star <= exact.beta_p_star + 1e-12);
        prop_assert!(est.beta_r_star <= exact.beta_r_star);
        let sampled = estimate_deviation_factors(&GenerativeModel::new(&mdp), &g, m.min(2), 1 << 12, &RngSpec::new(seed)).unwrap();
        prop_assert!(sampled.beta_r_star <= exact.beta_r_star);
    }

    #[test]
    fn empirical_rows_are_count_ratios(mdp in mdp_strategy(), k in 1u64..200, seed in any::<u64>()) {
        let g = GroupingFunction::singleton(mdp.n_actions());
        let gm = build_grouped_mdp(&mdp, &g, &InnerPolicy::uniform(&g)).unwrap();
        let emp = sample_generative(&gm, SampleBudget::per_pair(k).unwrap(), &RngSpec::new(seed), SampleMode::Generative).unwrap();
        let counts = emp.counts().unwrap();
        for (p, c) in emp.mdp().transition().iter().zip(counts) {
            prop_assert_eq!(*p, *c as f64 / k as f64);
        }
        for row in counts.chunks(mdp.n_states()) {
            prop_assert_eq!(row.iter().sum::<u64>(), k);
        }
    }
}
