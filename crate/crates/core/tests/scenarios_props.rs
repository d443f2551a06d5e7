use hs_hierarchy::dynamics::DynamicsOptions;
use hs_hierarchy::hierarchy::Scenario;
use hs_hierarchy::scenarios::{
    build_partition, build_two_sphere, search_collision_sequence, verify_partition, CollisionSequenceTarget,
    ScenarioError, SearchOptions,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_partitions_pass_reverification(gap in 0.2f64..3.0, speed in 0.5f64..2.0, b in -0.8f64..0.8) {
        let s = build_two_sphere(gap, speed, b, 1.0).unwrap();
        let p = build_partition(&s).unwrap();
        prop_assert!(verify_partition(&s.initial, s.horizon, &p, &DynamicsOptions::default()).is_ok());
    }
}

#[test]
fn golden_partition_is_reproduced() {
    let s = Scenario::from_json(include_str!("../golden/three_sphere.json")).unwrap();
    let p = build_partition(&s).unwrap();
    assert_eq!(p.len(), 6);
    verify_partition(&s.initial, s.horizon, &p, &DynamicsOptions::default()).unwrap();
}

#[test]
fn search_is_reproducible() {
    let target = CollisionSequenceTarget::parse("1-2,2-3").unwrap();
    let opts = SearchOptions {
        budget: 40_000,
        ..SearchOptions::default()
    };
    let a = search_collision_sequence(&target, 11, &opts).unwrap();
    let b = search_collision_sequence(&target, 11, &opts).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn golden_search_reproduces_the_stored_file() {
    let target = CollisionSequenceTarget::parse("2-3,1-3,2-3,1-2").unwrap();
    let found = search_collision_sequence(&target, 4, &SearchOptions::default()).unwrap();
    let stored = Scenario::from_json(include_str!("../golden/three_sphere.json")).unwrap();
    assert_eq!(found, stored);
}

#[test]
fn alternating_two_pair_history_is_not_found_on_a_small_budget() {
    let target = CollisionSequenceTarget::parse("2-3,1-2,2-3,1-2").unwrap();
    let opts = SearchOptions {
        budget: 20_000,
        ..SearchOptions::default()
    };
    assert!(matches!(
        search_collision_sequence(&target, 0, &opts),
        Err(ScenarioError::NotFound { .. })
    ));
}
