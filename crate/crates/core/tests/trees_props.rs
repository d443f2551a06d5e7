use hs_hierarchy::empirical::falling_factorial;
use hs_hierarchy::trees::{alpha, enumerate_signs, enumerate_trees, tree_count, Tree};
use num_bigint::BigUint;
use proptest::prelude::*;

proptest! {
    #[test]
    fn enumerated_trees_respect_the_progenitor_bound(j in 1usize..5, n in 0usize..5) {
        prop_assume!(j + n <= 8);
        for t in enumerate_trees(j, n) {
            for (r, &k) in t.progenitors.iter().enumerate() {
                prop_assert!(k >= 1 && k <= j + r);
            }
            prop_assert!(Tree::new(j, t.progenitors.clone()).is_ok());
        }
    }

    #[test]
    fn alpha_is_the_falling_factorial(r in 0usize..8, n in 0usize..8, eps in 0.01f64..2.0) {
        let ff = if n > r { 0.0 } else { falling_factorial(r, n) as f64 };
        let got = alpha(r, n, eps) * eps.powi(-2 * n as i32);
        prop_assert!((got - ff).abs() <= 1e-12 * ff.max(1.0));
    }
}

#[test]
fn tree_count_matches_enumeration() {
    for j in 1..=8 {
        for n in 0..=8 - j {
            assert_eq!(tree_count(j, n), BigUint::from(enumerate_trees(j, n).len()), "j={j} n={n}");
        }
    }
}

#[test]
fn sign_vectors_cover_all_patterns() {
    let s = enumerate_signs(3);
    assert_eq!(s.len(), 8);
    let mut uniq: Vec<String> = s.iter().map(|v| v.to_string()).collect();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 8);
}
