use hs_hierarchy::geometry::{collision_kernel, contact_time, scatter, ParticleState, Vec3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3([a, b, c]))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("non-degenerate", |v| v.norm() > 1e-3).prop_map(|v| v.normalized())
}

proptest! {
    #[test]
    fn scatter_conserves_momentum_and_energy(vi in vec3(10.0), vk in vec3(10.0), w in unit()) {
        let (a, b) = scatter(vi, vk, w).unwrap();
        let p0 = vi + vk;
        let e0 = vi.norm2() + vk.norm2();
        prop_assert!((a + b - p0).norm() <= 1e-12 * (vi.norm() + vk.norm()).max(1.0));
        prop_assert!((a.norm2() + b.norm2() - e0).abs() <= 1e-12 * e0.max(1.0));
    }

    #[test]
    fn scatter_is_an_involution(vi in vec3(10.0), vk in vec3(10.0), w in unit()) {
        let (a, b) = scatter(vi, vk, w).unwrap();
        let (c, d) = scatter(a, b, w).unwrap();
        let scale = (vi.norm() + vk.norm()).max(1.0);
        prop_assert!(c.max_abs_diff(vi) <= 1e-12 * scale);
        prop_assert!(d.max_abs_diff(vk) <= 1e-12 * scale);
    }

    #[test]
    fn kernel_flips_sign_after_scatter(vi in vec3(10.0), vk in vec3(10.0), w in unit()) {
        let (a, b) = scatter(vi, vk, w).unwrap();
        let before = collision_kernel(w, vi - vk);
        let after = collision_kernel(w, a - b);
        prop_assert!((after + before).abs() <= 1e-12 * (vi - vk).norm().max(1.0));
    }

    #[test]
    fn contact_time_is_symmetric(xa in vec3(5.0), xb in vec3(5.0), va in vec3(2.0), vb in vec3(2.0)) {
        prop_assume!((xa - xb).norm() >= 1.0);
        let a = ParticleState::new(xa, va);
        let b = ParticleState::new(xb, vb);
        let ab = contact_time(&a, &b, 1.0).unwrap();
        let ba = contact_time(&b, &a, 1.0).unwrap();
        prop_assert_eq!(ab.is_some(), ba.is_some());
        if let (Some(s), Some(u)) = (ab, ba) {
            prop_assert!((s - u).abs() <= 1e-12 * s.max(1.0));
        }
    }
}

#[test]
fn head_on_contact_time_matches_closed_form() {
    let a = ParticleState::new(Vec3::ZERO, Vec3([1.0, 0.0, 0.0]));
    let b = ParticleState::new(Vec3([4.0, 0.0, 0.0]), Vec3([-1.0, 0.0, 0.0]));
    // gap of 3 closed at relative speed 2
    assert_eq!(contact_time(&a, &b, 1.0).unwrap(), Some(1.5));
}
