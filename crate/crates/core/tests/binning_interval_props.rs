use eqcov::intervals::union_over_bins;
use eqcov::{cqr_score, equal_mass_bins, Band, BinPartition, IntervalSet, LabelDomain};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn domain() -> LabelDomain {
    LabelDomain::new(0.0, 24.0).unwrap()
}

/// Distinct labels on a fine grid, so no two coincide.
fn distinct_labels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0u32..24_000, 2..200)
        .prop_map(|s| s.into_iter().map(|v| v as f64 / 1000.0).collect::<Vec<_>>())
        .prop_shuffle()
}

fn partition() -> impl Strategy<Value = BinPartition> {
    (distinct_labels(), 1usize..6).prop_filter_map("too few labels", |(l, m)| {
        equal_mass_bins(&l, m, domain()).ok()
    })
}

fn band() -> impl Strategy<Value = Band> {
    (-5.0f64..29.0, 0.0f64..10.0).prop_map(|(lo, w)| Band::from_bounds(lo, lo + w).unwrap())
}

fn is_subset(a: &IntervalSet, b: &IntervalSet) -> bool {
    a.components()
        .iter()
        .all(|c| b.components().iter().any(|d| d.lo <= c.lo && c.hi <= d.hi))
}

proptest! {
    #[test]
    fn bins_tile_the_domain(p in partition(), y in 0.0f64..=24.0) {
        let b = p.bounds();
        prop_assert_eq!(b[0], 0.0);
        prop_assert_eq!(b[b.len() - 1], 24.0);
        prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
        let m = p.assign(y).unwrap();
        let (l, u) = p.edges(m);
        let last = m + 1 == p.len();
        prop_assert!(l <= y && (y < u || (last && y == u)));
        let holders = (0..p.len()).filter(|&j| { let (l, u) = p.edges(j); l <= y && (y < u || (j + 1 == p.len() && y == u)) }).count();
        prop_assert_eq!(holders, 1);
    }

    #[test]
    fn distinct_labels_give_equal_mass(labels in distinct_labels(), m in 1usize..8) {
        prop_assume!(labels.len() >= m);
        let p = equal_mass_bins(&labels, m, domain()).unwrap();
        let c = p.counts();
        prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1, "{:?}", c);
        prop_assert_eq!(c.iter().sum::<usize>(), labels.len());
        for (j, &count) in c.iter().enumerate() {
            let held = labels.iter().filter(|&&y| p.assign(y).unwrap() == j).count();
            prop_assert_eq!(held, count);
        }
    }

    #[test]
    fn bins_ignore_label_order(mut labels in distinct_labels(), m in 1usize..6, seed in any::<u64>(), probe in 0.0f64..=24.0) {
        prop_assume!(labels.len() >= m);
        let a = equal_mass_bins(&labels, m, domain()).unwrap();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = equal_mass_bins(&labels, m, domain()).unwrap();
        prop_assert_eq!(a.assign(probe).unwrap(), b.assign(probe).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn union_is_sorted_disjoint_and_in_domain(p in partition(), band in band(), rs in prop::collection::vec(-6.0f64..6.0, 5)) {
        let set = union_over_bins(&band, &rs[..p.len()], &p).unwrap();
        let c = set.components();
        prop_assert!(c.iter().all(|i| 0.0 <= i.lo && i.lo <= i.hi && i.hi <= 24.0));
        prop_assert!(c.windows(2).all(|w| w[0].hi < w[1].lo));
        prop_assert_eq!(set.is_fallback(), c.is_empty());
        if let Some(f) = set.fallback() {
            prop_assert!(domain().contains(f));
        }
        prop_assert!(set.total_width() <= set.hull_width() + 1e-12);
    }

    #[test]
    fn membership_matches_the_bin_score(p in partition(), band in band(), rs in prop::collection::vec(-6.0f64..6.0, 5), y in 0.0f64..=24.0) {
        prop_assume!(!p.bounds()[1..p.len()].contains(&y));
        let rs = &rs[..p.len()];
        let set = union_over_bins(&band, rs, &p).unwrap();
        prop_assume!(set.fallback() != Some(y));
        let m = p.assign(y).unwrap();
        prop_assert_eq!(set.contains(y), cqr_score(band.lo, band.hi, y).unwrap() <= rs[m]);
    }

    #[test]
    fn raising_a_threshold_never_shrinks(p in partition(), band in band(), rs in prop::collection::vec(-6.0f64..6.0, 5), bump in 0.0f64..5.0, which in 0usize..5) {
        let rs = rs[..p.len()].to_vec();
        let mut raised = rs.clone();
        raised[which % p.len()] += bump;
        let (a, b) = (union_over_bins(&band, &rs, &p).unwrap(), union_over_bins(&band, &raised, &p).unwrap());
        prop_assert!(is_subset(&a, &b));
        prop_assert!(a.total_width() <= b.total_width() + 1e-12);
    }
}
