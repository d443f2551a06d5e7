mod common;

use hs_hierarchy::dynamics::evolve;
use hs_hierarchy::empirical::{integrate, marginal, Observable};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn marginals_are_consistent_under_partial_summation(seed in 0u64..10_000, j in 1usize..3) {
        let c = common::random_scenario(seed, 10, 1.0);
        prop_assume!(j < c.len());
        let lower = marginal(&c, j).unwrap();
        let upper = marginal(&c, j + 1).unwrap().drop_last_slot();
        prop_assert!(lower.same_measure(&upper, 0.0));
        prop_assert!(lower.is_probability());
    }

    #[test]
    fn integrals_are_symmetric_under_slot_permutation(seed in 0u64..10_000) {
        let c = common::random_scenario(seed, 10, 1.0);
        let m = marginal(&c, 2).unwrap();
        let center: Vec<f64> = c.particles[0].coords().into_iter().chain(c.particles[1].coords()).collect();
        let phi = Observable::GaussianPacket { center, width_x: 1.0, width_v: 1.0 };
        let a = integrate(&m, &phi).unwrap();
        let b = integrate(&m, &phi.permuted(&[1, 0])).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn evolution_commutes_with_marginals(seed in 0u64..10_000, t in 0.1f64..5.0) {
        let c = common::random_scenario(seed, 10, 5.0);
        let (zt, _) = evolve(&c, t).unwrap();
        let direct = marginal(&zt, 1).unwrap();
        let pushed = marginal(&c, 1).unwrap().pushforward(|p| {
            let i = c.particles.iter().position(|q| q.coords() == p[..6]).unwrap();
            zt.particles[i].coords().to_vec()
        });
        prop_assert!(direct.same_measure(&pushed, 0.0));
    }
}
