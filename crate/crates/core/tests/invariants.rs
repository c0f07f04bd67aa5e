use humeval_core::aggregation::{aggregate_instance, binarize_likert, likert_to_score, Combine};
use humeval_core::model::Usd;
use humeval_core::planner::{plan_budget, sample_eval_subset, BudgetTarget, PlanOptions};
use humeval_core::uncertainty::{bootstrap_ci, bootstrap_means};
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u8..5, 1..60).prop_map(|v| v.into_iter().map(|c| c as f64 * 0.25).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bootstrap_interval_brackets_the_mean(xs in scores(), seed in any::<u64>()) {
        let est = bootstrap_ci(&xs, 0.95, 1000, seed).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= est.ci_low && est.ci_low <= est.mean);
        prop_assert!(est.mean <= est.ci_high && est.ci_high <= hi);
        prop_assert_eq!(est, bootstrap_ci(&xs, 0.95, 1000, seed).unwrap());
    }

    #[test]
    fn bootstrap_ends_are_nearest_rank_quantiles(xs in scores(), seed in any::<u64>()) {
        let mut means = bootstrap_means(&xs, 2000, seed);
        means.sort_by(f64::total_cmp);
        let est = bootstrap_ci(&xs, 0.95, 2000, seed).unwrap();
        // ceil(0.025 * 2000) = 50 and ceil(0.975 * 2000) = 1950, 1-based.
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert_eq!(est.ci_low, means[49].min(mean));
        prop_assert_eq!(est.ci_high, means[1949].max(mean));
    }

    #[test]
    fn majority_vote_matches_counting(labels in prop::collection::vec(0u8..5, 1..9)) {
        let bin: Vec<f64> = labels.iter().map(|&l| binarize_likert(l).unwrap() as f64).collect();
        let agree = labels.iter().filter(|&&l| l >= 3).count() * 2;
        let expected = match agree.cmp(&labels.len()) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 0.5,
        };
        prop_assert_eq!(aggregate_instance(&bin, Combine::MajorityVote).unwrap(), expected);
        let mean = aggregate_instance(&labels.iter().map(|&l| likert_to_score(l).unwrap()).collect::<Vec<_>>(), Combine::Mean).unwrap();
        let oracle = labels.iter().map(|&l| l as f64).sum::<f64>() / (4.0 * labels.len() as f64);
        prop_assert!((mean - oracle).abs() < 1e-12);
    }

    #[test]
    fn se_plan_is_the_smallest_whole_batch_count(se in 0.005f64..0.2, k in 1usize..4, cents in 1u64..100) {
        let cost = Usd::from_micros(cents * 10_000);
        let opts = PlanOptions { labels_per_instance: k, ..PlanOptions::default() };
        let plan = plan_budget(cost, BudgetTarget::MaxSe(se), opts).unwrap();
        prop_assert_eq!(plan.n_instances % 20, 0);
        prop_assert!(plan.n_instances >= plan.n_required);
        prop_assert!(plan.n_instances < plan.n_required + 20);
        let labels = |n: usize| (n * k) as f64;
        prop_assert!(0.5 / labels(plan.n_required).sqrt() <= se * (1.0 + 1e-9));
        if plan.n_required > 1 {
            prop_assert!(0.5 / labels(plan.n_required - 1).sqrt() > se);
        }
        prop_assert_eq!(plan.total_cost.micros(), cost.micros() * (plan.n_instances * k) as u64);
    }

    #[test]
    fn budget_plan_never_overspends(dollars in 1u64..500, cents in 1u64..100) {
        let cost = Usd::from_micros(cents * 10_000);
        let budget = Usd::from_micros(dollars * 1_000_000);
        match plan_budget(cost, BudgetTarget::MaxCost(budget), PlanOptions::default()) {
            Ok(plan) => {
                prop_assert!(plan.total_cost <= budget);
                prop_assert!(plan.total_cost.micros() + 20 * cost.micros() > budget.micros());
            }
            Err(_) => prop_assert!(budget.micros() < 20 * cost.micros()),
        }
    }

    #[test]
    fn subsets_are_distinct_and_reproducible(n in 1usize..200, take in 0usize..200, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id-{i}")).collect();
        let take = take.min(n);
        let a = sample_eval_subset(&ids, take, seed).unwrap();
        prop_assert_eq!(a.len(), take);
        let unique: std::collections::BTreeSet<_> = a.iter().collect();
        prop_assert_eq!(unique.len(), take);
        prop_assert_eq!(a, sample_eval_subset(&ids, take, seed).unwrap());
    }
}
