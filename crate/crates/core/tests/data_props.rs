use std::collections::BTreeSet;

use eqcov::{
    generate_synthetic, read_dataset, split_dataset, write_dataset, Band, CsvSchema, Dataset,
    GroupId, GroupSet, LabelDomain, Record, SplitSpec, SyntheticSpec,
};
use proptest::prelude::*;

fn domain() -> LabelDomain {
    LabelDomain::new(0.0, 63.0).unwrap()
}

fn close_15(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-15 * a.abs().max(b.abs())
}

fn records() -> impl Strategy<Value = Vec<Record>> {
    (1usize..4).prop_flat_map(|d| {
        prop::collection::vec(
            (
                0.0f64..=63.0,
                0usize..3,
                prop::collection::vec(-1e6f64..1e6, d),
                -50.0f64..50.0,
                0.0f64..30.0,
            ),
            3..40,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (y, g, x, lo, w))| Record {
                    id: format!("r{i}"),
                    y,
                    group: GroupId(if i < 3 { i } else { g }),
                    features: x,
                    band: Some(Band::from_bounds(lo, lo + w).unwrap()),
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn csv_round_trip_keeps_values(recs in records()) {
        let ds = Dataset::new(recs, domain(), GroupSet::anonymous(3).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let mut schema = CsvSchema::new(domain());
        schema.group_count = Some(3);
        let back = read_dataset(buf.as_slice(), &schema).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.records().iter().zip(back.records()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.group, b.group);
            prop_assert!(close_15(a.y, b.y));
            for (x, z) in a.features.iter().zip(&b.features) {
                prop_assert!(close_15(*x, *z));
            }
            let (ba, bb) = (a.band.unwrap(), b.band.unwrap());
            prop_assert!(close_15(ba.lo, bb.lo) && close_15(ba.hi, bb.hi));
        }
    }

    #[test]
    fn split_parts_partition_the_records(n in 10usize..300, f0 in 0.0f64..0.6, f1 in 0.1f64..0.3, seed in any::<u64>()) {
        let spec = SyntheticSpec { n, ..SyntheticSpec::heteroscedastic(n, seed) };
        let ds = match generate_synthetic(&spec) {
            Ok(s) => s.dataset,
            Err(_) => return Ok(()),
        };
        let split = SplitSpec::new([f0, f1, 1.0 - f0 - f1], seed).unwrap();
        let Ok((a, b, c)) = split_dataset(&ds, &split) else { return Ok(()) };
        let ids = |d: &Dataset| d.records().iter().map(|r| r.id.clone()).collect::<BTreeSet<_>>();
        let (ia, ib, ic) = (ids(&a), ids(&b), ids(&c));
        prop_assert_eq!(ia.len() + ib.len() + ic.len(), ds.len());
        prop_assert!(ia.is_disjoint(&ib) && ia.is_disjoint(&ic) && ib.is_disjoint(&ic));
        let all: BTreeSet<String> = ia.union(&ib).chain(ic.iter()).cloned().collect();
        prop_assert_eq!(all, ids(&ds));
        let again = split_dataset(&ds, &split).unwrap();
        prop_assert_eq!(again, (a, b, c));
    }
}
