use grouploss_core::simulate::{Distortion, RealisticSimulator};
use grouploss_core::{estimate, PartitionStrategy, Recalibration, RunConfig, ScoringRule, SimulatorSpec};
use proptest::prelude::*;

fn strategy() -> impl Strategy<Value = PartitionStrategy> {
    prop_oneof![
        Just(PartitionStrategy::Tree),
        Just(PartitionStrategy::BalancedStump),
        (1usize..5).prop_map(|k| PartitionStrategy::KMeans { k }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_is_internally_consistent(
        seed in 0u64..1000,
        n in 200usize..3000,
        n_bins in 1usize..20,
        region_ratio in 2usize..60,
        partition in strategy(),
        isotonic in any::<bool>(),
        logloss in any::<bool>(),
        distort in any::<bool>(),
    ) {
        let spec = SimulatorSpec::Realistic(RealisticSimulator {
            score_distortion: distort.then_some(Distortion::LogitScale(1.8)),
            ..RealisticSimulator::default()
        });
        let ds = spec.sample(n, seed).unwrap().to_dataset().unwrap();
        let config = RunConfig {
            rule: if logloss { ScoringRule::LOG_LOSS } else { ScoringRule::BRIER },
            n_bins,
            region_ratio,
            partition,
            recalibrate: if isotonic { Recalibration::Isotonic } else { Recalibration::None },
            seed,
            ..RunConfig::default()
        };
        let r = estimate(&ds, &config).unwrap();
        prop_assert_eq!(r.counts.n_train + r.counts.n_test, n);
        prop_assert_eq!(r.diagram.iter().map(|b| b.n_bin).sum::<usize>(), r.counts.n_test);
        prop_assert!((r.gl_lb - (r.gl_explained - r.gl_induced)).abs() < 1e-12);
        prop_assert_eq!(r.gl_lb_clipped, r.gl_lb.max(0.0));
        prop_assert_eq!(r.gl_explained_clipped, r.gl_explained.max(0.0));
        prop_assert!(r.gl_plugin >= 0.0, "plugin {} logloss {}", r.gl_plugin, logloss);
        prop_assert_eq!(r.flags.no_debiasing, logloss);
        prop_assert_eq!(r.bounds.is_some(), !logloss);
        for bin in &r.diagram {
            prop_assert_eq!(bin.regions.iter().map(|g| g.n_region).sum::<usize>(), bin.n_bin);
            for g in &bin.regions {
                prop_assert!(g.cp_lo <= g.mu_hat && g.mu_hat <= g.cp_hi);
                prop_assert_eq!(g.grayed, g.cp_lo <= bin.c_hat && bin.c_hat <= g.cp_hi);
            }
        }
        if let Some(b) = r.bounds {
            prop_assert!(b.induced_lower <= 0.0 && b.induced_lower <= b.induced_upper);
        }
    }
}
