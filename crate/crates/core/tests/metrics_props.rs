use eqcov::{evaluate, picp_gap, Band, BinPartition, GroupId, Interval, IntervalSet, Observation};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn case() -> impl Strategy<Value = (Vec<Observation>, Vec<IntervalSet>, usize)> {
    (2usize..5).prop_flat_map(|s| {
        prop::collection::vec(
            (
                0.0f64..=10.0,
                0usize..s,
                0.0f64..10.0,
                -3.0f64..3.0,
                0.0f64..4.0,
            ),
            1..80,
        )
        .prop_map(move |rows| {
            let mut obs = Vec::new();
            let mut preds = Vec::new();
            for (y, g, mid, lo_off, w) in rows {
                obs.push(Observation {
                    y,
                    group: GroupId(g),
                    band: Band {
                        lo: mid - 1.0,
                        mid,
                        hi: mid + 1.0,
                    },
                });
                let lo = (mid + lo_off).clamp(0.0, 10.0);
                preds.push(IntervalSet::from_pieces(
                    vec![Interval {
                        lo,
                        hi: (lo + w).min(10.0),
                    }],
                    mid,
                ));
            }
            (obs, preds, s)
        })
    })
}

proptest! {
    #[test]
    fn group_coverage_recombines_to_overall((obs, preds, s) in case()) {
        let part = BinPartition::from_bounds(vec![0.0, 3.0, 7.0, 10.0], vec![1, 1, 1]).unwrap();
        let r = evaluate(&obs, &preds, &part, s).unwrap();
        let weighted: f64 = r.per_group.iter().map(|g| g.n as f64 * g.picp).sum::<f64>() / r.n_test as f64;
        prop_assert!((weighted - r.picp).abs() <= 1e-12);
        prop_assert_eq!(r.recombined_picp(), r.picp);
        prop_assert!(r.rmse >= r.mae);
        prop_assert_eq!(r.bin_counts.iter().flatten().sum::<usize>(), r.n_test);
        prop_assert_eq!(r.bin_covered.iter().flatten().sum::<usize>(), r.covered);
    }

    #[test]
    fn gap_ignores_group_order(mut rates in prop::collection::vec(0.0f64..=1.0, 2..8), seed in any::<u64>()) {
        let g = picp_gap(&rates).unwrap();
        rates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(g, picp_gap(&rates).unwrap());
        prop_assert!(g >= 0.0);
    }

    #[test]
    fn gap_is_zero_only_for_equal_rates(rates in prop::collection::vec(0.0f64..=1.0, 2..8), same in any::<bool>()) {
        let rates = if same { vec![rates[0]; rates.len()] } else { rates };
        let all_equal = rates.iter().all(|&r| r == rates[0]);
        prop_assert_eq!(picp_gap(&rates).unwrap() == 0.0, all_equal);
    }
}
