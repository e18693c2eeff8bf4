//! Overlap matrix and cleaning against a brute-force id loop.

mod oracle;

use mtsched_core::audit::{clean_registry, compute_overlap_matrix, DatasetSplits, Percentage};
use oracle::{brute_force_overlap as brute_force, check_overlap_fixture, dataset};
use proptest::prelude::*;

#[test]
fn fixture_matrix_matches_brute_force_and_cleans_to_zero() {
    check_overlap_fixture();
}

fn registry_strategy() -> impl Strategy<Value = Vec<DatasetSplits>> {
    // Small id universe so overlaps are frequent.
    let split = || prop::collection::vec(0u8..24, 0..12);
    prop::collection::vec((split(), split(), split()), 1..5).prop_map(|sets| {
        sets.into_iter()
            .enumerate()
            .map(|(i, (tr, va, te))| {
                let s = |v: Vec<u8>| v.into_iter().map(|x| format!("img{x}")).collect::<Vec<_>>();
                dataset(&format!("d{i}"), &s(tr), &s(va), &s(te))
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn matrix_equals_brute_force(reg in registry_strategy()) {
        let m = compute_overlap_matrix(&reg).unwrap();
        let truth = brute_force(&reg);
        for (r, row) in truth.iter().enumerate() {
            for (c, &(hits, total)) in row.iter().enumerate() {
                prop_assert_eq!(m.cells[r][c], Percentage { hits, total });
            }
        }
    }

    #[test]
    fn cleaning_invariants(reg in registry_strategy()) {
        let (clean, report) = clean_registry(&reg).unwrap();
        prop_assert!(compute_overlap_matrix(&clean).unwrap().is_all_zero());
        // Idempotent.
        let (again, second) = clean_registry(&clean).unwrap();
        prop_assert_eq!(&again, &clean);
        prop_assert_eq!(second.total_removed(), 0);
        for ((before, after), entry) in reg.iter().zip(&clean).zip(&report.entries) {
            // Test splits untouched, nothing added, counts conserved.
            prop_assert_eq!(&before.test, &after.test);
            prop_assert!(after.train.is_subset(&before.train));
            prop_assert!(after.val.is_subset(&before.val));
            prop_assert_eq!(entry.original, before.train_val().len());
            prop_assert_eq!(entry.original - entry.removed, after.train_val().len());
            prop_assert_eq!(entry.removed_train, before.train.len() - after.train.len());
            prop_assert_eq!(entry.removed_val, before.val.len() - after.val.len());
        }
    }
}
