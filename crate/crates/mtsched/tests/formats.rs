//! Round trips of the on-disk formats.

mod common;

use mtsched::config::ExperimentConfig;
use mtsched::splits_io::{parse_splits, render_splits};
use mtsched_core::audit::DatasetSplits;
use proptest::prelude::*;

fn id_set() -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[a-z0-9_./-]{1,12}", 0..10).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn splits_render_then_parse(train in id_set(), val in id_set(), test in id_set()) {
        fn r(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        let ds = DatasetSplits::with_ids("d", &r(&train), &r(&val), &r(&test));
        let text = render_splits(&ds);
        let back = parse_splits("d", &text, "d.splits").unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(render_splits(&back), text);
    }

    #[test]
    fn config_toml_round_trip(seed in any::<u64>(), max_iter in 1u64..10_000, delta in 1u64..64, dsg in any::<bool>()) {
        let mut cfg = common::small_config(seed, max_iter);
        cfg.scheduler.delta = delta;
        cfg.scheduler.dsg = dsg;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn shipped_configs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["headline.toml", "quick.toml"] {
        let cfg = ExperimentConfig::load(&dir.join(name)).unwrap();
        assert_eq!(cfg.tasks.len(), 4, "{name}");
        assert!(cfg.resolved_tasks().is_ok(), "{name}");
    }
}
