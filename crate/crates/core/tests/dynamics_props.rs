mod common;

use hs_hierarchy::dynamics::{evolve, evolve_backward};
use hs_hierarchy::geometry::min_gap;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evolution_conserves_momentum_and_energy(seed in 0u64..100_000) {
        let c = common::random_scenario(seed, 10, 5.0);
        let (end, _) = evolve(&c, 5.0).unwrap();
        let speed: f64 = c.particles.iter().map(|p| p.velocity.norm()).sum();
        prop_assert!((end.total_momentum() - c.total_momentum()).norm() <= 1e-12 * speed);
        let e0 = c.kinetic_energy();
        prop_assert!((end.kinetic_energy() - e0).abs() <= 1e-12 * e0);
    }

    #[test]
    fn time_reversal_round_trip(seed in 0u64..100_000) {
        let c = common::random_scenario(seed, 10, 5.0);
        let (end, _) = evolve(&c, 5.0).unwrap();
        let (back, _) = evolve_backward(&end, 5.0).unwrap();
        for (a, b) in back.particles.iter().zip(&c.particles) {
            let err = (a.position - b.position).norm();
            prop_assert!(err <= 1e-8 * (1.0 + b.position.norm()), "error {err}");
        }
    }

    #[test]
    fn evolution_is_a_semigroup(seed in 0u64..100_000, split in 0.05f64..0.95) {
        let c = common::random_scenario(seed, 10, 5.0);
        let t1 = 5.0 * split;
        let (whole, _) = evolve(&c, 5.0).unwrap();
        let (mid, _) = evolve(&c, t1).unwrap();
        let Ok((composed, _)) = evolve(&mid, 5.0 - t1) else {
            // the split landed on a contact; nothing to compare
            return Ok(());
        };
        prop_assert!(whole.max_abs_diff(&composed) <= 1e-9);
    }

    #[test]
    fn spheres_never_overlap(seed in 0u64..100_000) {
        let c = common::random_scenario(seed, 10, 5.0);
        let (_, log) = evolve(&c, 5.0).unwrap();
        for i in 0..100 {
            let s = 5.0 * (i as f64 + 0.5) / 100.0;
            prop_assert!(min_gap(&log.state_at(s)) >= -1e-9 * c.epsilon);
        }
    }
}

#[test]
fn event_times_match_the_dense_stepping_oracle() {
    let mut checked = 0;
    for seed in 100..130 {
        let c = common::random_scenario(seed, 4, 5.0);
        let (_, log) = evolve(&c, 5.0).unwrap();
        let oracle = common::dense_stepping_events(&c, 5.0, 1e-3);
        assert_eq!(oracle.len(), log.events.len(), "seed {seed}");
        for (o, e) in oracle.iter().zip(&log.events) {
            assert_eq!((o.1, o.2), e.pair);
            assert!((o.0 - e.time).abs() <= 1e-8 * 5.0, "seed {seed}: {} vs {}", o.0, e.time);
        }
        checked += 1;
    }
    assert_eq!(checked, 30);
}
