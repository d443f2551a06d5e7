//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hs_hierarchy::dynamics::{classify, evolve};
use hs_hierarchy::geometry::{Configuration, ParticleState, Vec3};
use hs_hierarchy::trees::{enumerate_trees, NodeVariables, Sign, SignVector, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss3(rng: &mut ChaCha8Rng, sd: f64) -> Vec3 {
    Vec3([
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    ])
}

/// Pathology-free scenario of 3 to 6 (or `sizes`) unit spheres in a box with at least
/// one and at most `max_events` collisions on `[0, horizon]`.
pub fn random_scenario(seed: u64, max_events: usize, horizon: f64) -> Configuration {
    random_scenario_sized(seed, 3..=6, max_events, horizon)
}

pub fn random_scenario_sized(
    seed: u64,
    sizes: std::ops::RangeInclusive<usize>,
    max_events: usize,
    horizon: f64,
) -> Configuration {
    let mut rng = rng(seed);
    loop {
        let n = rng.random_range(sizes.clone());
        let parts: Vec<ParticleState> = (0..n)
            .map(|_| {
                let x = Vec3([
                    rng.random_range(0.0..6.0),
                    rng.random_range(0.0..6.0),
                    rng.random_range(0.0..6.0),
                ]);
                ParticleState::new(x, gauss3(&mut rng, 1.0))
            })
            .collect();
        let Ok(c) = Configuration::new(parts, 1.0, false) else { continue };
        let Ok((_, log)) = evolve(&c, horizon) else { continue };
        if log.events.is_empty() || log.events.len() > max_events {
            continue;
        }
        if classify(&c, horizon).is_empty() {
            return c;
        }
    }
}

/// Event list `(time, i, k)` found by fixed-step integration: each step
/// moves every sphere freely, and the first pair found overlapping has its
/// contact time located by bisection on the pair distance, after which
/// the elastic rule is applied at contact and stepping resumes.
pub fn dense_stepping_events(config: &Configuration, horizon: f64, dt: f64) -> Vec<(f64, usize, usize)> {
    let eps = config.epsilon;
    let mut x: Vec<[f64; 3]> = config.particles.iter().map(|p| p.position.0).collect();
    let mut v: Vec<[f64; 3]> = config.particles.iter().map(|p| p.velocity.0).collect();
    let n = x.len();
    let dist = |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let at = |x: [f64; 3], v: [f64; 3], s: f64| [x[0] + s * v[0], x[1] + s * v[1], x[2] + s * v[2]];
    let mut now = 0.0;
    let mut events = Vec::new();
    while now < horizon {
        let step = dt.min(horizon - now);
        // earliest overlapping pair at the end of the step
        let mut hit: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for k in i + 1..n {
                if dist(at(x[i], v[i], step), at(x[k], v[k], step)) >= eps {
                    continue;
                }
                let (mut lo, mut hi) = (0.0, step);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if dist(at(x[i], v[i], mid), at(x[k], v[k], mid)) < eps {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if hit.is_none_or(|(s, _, _)| lo < s) {
                    hit = Some((lo, i, k));
                }
            }
        }
        match hit {
            None => {
                for i in 0..n {
                    x[i] = at(x[i], v[i], step);
                }
                now += step;
            }
            Some((s, i, k)) => {
                for m in 0..n {
                    x[m] = at(x[m], v[m], s);
                }
                now += s;
                let d = dist(x[i], x[k]);
                let w = [(x[i][0] - x[k][0]) / d, (x[i][1] - x[k][1]) / d, (x[i][2] - x[k][2]) / d];
                let g: f64 = (0..3).map(|c| (v[i][c] - v[k][c]) * w[c]).sum();
                for c in 0..3 {
                    v[i][c] -= g * w[c];
                    v[k][c] += g * w[c];
                }
                events.push((now, i, k));
            }
        }
    }
    events
}

/// Random tree, signs, roots and node variables for an EBF instance, redrawn
/// until every kernel factor has the sign prescribed by the sign vector.
pub fn random_ebf_instance(seed: u64, t: f64) -> (Tree, SignVector, Configuration, NodeVariables) {
    let mut rng = rng(seed);
    loop {
        let inst = draw_ebf_instance(&mut rng, t);
        let res = hs_hierarchy::flows::ebf(&inst.0, &inst.1, &inst.2, &inst.3, t).expect("valid instance");
        if res.sign_consistent {
            return inst;
        }
    }
}

fn draw_ebf_instance(rng: &mut ChaCha8Rng, t: f64) -> (Tree, SignVector, Configuration, NodeVariables) {
    let j = rng.random_range(1..=2);
    let n = rng.random_range(1..=3);
    let trees = enumerate_trees(j, n);
    let tree = trees[rng.random_range(0..trees.len())].clone();
    let signs = SignVector(
        (0..n)
            .map(|_| if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus })
            .collect(),
    );
    let roots = Configuration {
        particles: (0..j)
            .map(|_| {
                let x = gauss3(rng, 1.0);
                ParticleState::new(x, gauss3(rng, 1.0))
            })
            .collect(),
        epsilon: 0.5,
        allow_overlap: true,
    };
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..t)).collect();
    times.sort_by(|a, b| b.total_cmp(a));
    let omegas = (0..n).map(|_| gauss3(rng, 1.0).normalized()).collect();
    let velocities = (0..n).map(|_| gauss3(rng, 1.0)).collect();
    (
        tree,
        signs,
        roots,
        NodeVariables {
            times,
            omegas,
            velocities,
        },
    )
}
