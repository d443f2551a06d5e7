mod common;

use hs_hierarchy::flows::{ebf, ibf, iff_branches, BackwardFlowResult};
use hs_hierarchy::geometry::{Configuration, ParticleState};
use hs_hierarchy::trees::{enumerate_trees, NodeVariables, Sign, SignVector, Tree};
use proptest::prelude::*;
use rand::Rng;

const T: f64 = 1.0;

/// IBF sample with one root and signs read off the geometry.
fn ibf_sample(seed: u64, n: usize) -> (Tree, SignVector, Configuration, NodeVariables, BackwardFlowResult) {
    let mut rng = common::rng(seed);
    loop {
        let roots = Configuration {
            particles: vec![ParticleState::new(common::gauss3(&mut rng, 1.0), common::gauss3(&mut rng, 1.0))],
            epsilon: 0.5,
            allow_overlap: false,
        };
        let trees = enumerate_trees(1, n);
        let tree = trees[rng.random_range(0..trees.len())].clone();
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..T)).collect();
        times.sort_by(|a, b| b.total_cmp(a));
        let nodes = NodeVariables {
            times,
            omegas: (0..n).map(|_| common::gauss3(&mut rng, 1.0).normalized()).collect(),
            velocities: (0..n).map(|_| common::gauss3(&mut rng, 1.0)).collect(),
        };
        let Ok(probe) = ibf(&tree, &SignVector(vec![Sign::Plus; n]), &roots, &nodes, T) else { continue };
        if !probe.constraint_satisfied || probe.kernel_factors.iter().any(|b| b.abs() < 0.05) {
            continue;
        }
        let signs = SignVector(probe.kernel_factors.iter().map(|&b| Sign::of(b)).collect());
        let Ok(res) = ibf(&tree, &signs, &roots, &nodes, T) else { continue };
        if res.constraint_satisfied && res.sign_consistent {
            return (tree, signs, roots, nodes, res);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn particle_count_and_creation_geometry(seed in 0u64..100_000, n in 1usize..4) {
        let (tree, _, _, nodes, res) = ibf_sample(seed, n);
        prop_assert_eq!(res.segments.len(), n + 1);
        for (r, seg) in res.segments.iter().enumerate() {
            prop_assert_eq!(seg.start.len(), 1 + r);
            prop_assert_eq!(seg.end.len(), 1 + r);
        }
        for r in 1..=n {
            let seg = &res.segments[r];
            prop_assert_eq!(seg.upper, nodes.times[r - 1]);
            let gap = (seg.start[tree.created0(r)].position - seg.start[tree.progenitor0(r)].position).norm();
            prop_assert!((gap - 0.5).abs() <= 1e-12, "gap {gap}");
        }
    }

    #[test]
    fn ibf_without_recollisions_equals_ebf(seed in 0u64..100_000, n in 1usize..4) {
        let (tree, signs, roots, nodes, res) = ibf_sample(seed, n);
        prop_assume!(res.recollisions.is_empty());
        let e = ebf(&tree, &signs, &roots, &nodes, T).unwrap();
        let (a, b) = (res.terminal.unwrap(), e.terminal.unwrap());
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn iff_recovers_the_ibf_roots(seed in 0u64..100_000, n in 1usize..3) {
        let (tree, signs, roots, nodes, res) = ibf_sample(seed, n);
        let start = res.terminal.unwrap();
        let branches = iff_branches(&tree, &signs, &start, T).unwrap();
        let hit = branches.iter().any(|b| {
            b.endpoint.iter().zip(&roots.particles).all(|(p, q)| p.max_abs_diff(q) <= 1e-8)
                && b.creation_times.iter().zip(&nodes.times).all(|(s, u)| (s - u).abs() <= 1e-9)
        });
        prop_assert!(hit, "{} branches, none returns to the roots", branches.len());
    }
}
