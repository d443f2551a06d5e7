//! Benchmark configurations and partitions of the time axis into
//! single-collision intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{classify_with, evolve_with, ClassifyOptions, DynamicsError, DynamicsOptions, TrajectoryLog};
use crate::geometry::{Configuration, GeometryError, ParticleState, Vec3};
use crate::hierarchy::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("no configuration found for {target:?} within budget {budget}")]
    NotFound { target: Vec<(usize, usize)>, budget: usize },
    #[error("partition failure: {0}")]
    Partition(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Ordered list of one-based colliding pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionSequenceTarget(pub Vec<(usize, usize)>);

impl CollisionSequenceTarget {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, ScenarioError> {
        if pairs.is_empty() || pairs.iter().any(|&(a, b)| a == 0 || b == 0 || a == b) {
            return Err(ScenarioError::Invalid(format!("bad target {pairs:?}")));
        }
        Ok(Self(pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect()))
    }

    pub fn n_particles(&self) -> usize {
        self.0.iter().map(|&(_, b)| b).max().unwrap_or(0)
    }

    fn zero_based(&self) -> Vec<(usize, usize)> {
        self.0.iter().map(|&(a, b)| (a - 1, b - 1)).collect()
    }

    /// Parses `2-3,1-2,...`.
    pub fn parse(s: &str) -> Result<Self, ScenarioError> {
        let pairs = s
            .split(',')
            .map(|p| {
                let (a, b) = p
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| ScenarioError::Invalid(format!("bad pair {p:?}")))?;
                let a = a.trim().parse().map_err(|_| ScenarioError::Invalid(format!("bad pair {p:?}")))?;
                let b = b.trim().parse().map_err(|_| ScenarioError::Invalid(format!("bad pair {p:?}")))?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Self::new(pairs)
    }
}

fn st(x: [f64; 3], v: [f64; 3]) -> ParticleState {
    ParticleState::new(Vec3(x), Vec3(v))
}

fn two_sphere_particles(gap: f64, speed: f64, b: f64, eps: f64) -> Result<(Vec<ParticleState>, f64), ScenarioError> {
    if !(gap > 0.0 && speed > 0.0 && eps > 0.0) {
        return Err(ScenarioError::Invalid("gap, speed and epsilon must be positive".into()));
    }
    if b.abs() >= eps || 1.0 - (b / eps).powi(2) < 1e-6 {
        return Err(ScenarioError::Invalid(format!(
            "impact parameter {b} gives a missing or grazing collision for epsilon {eps}"
        )));
    }
    let tc = (eps + gap - (eps * eps - b * b).sqrt()) / speed;
    let parts = vec![
        st([0.0; 3], [speed / 2.0, 0.0, 0.0]),
        st([eps + gap, b, 0.0], [-speed / 2.0, 0.0, 0.0]),
    ];
    Ok((parts, tc))
}

fn finish(config: Configuration, horizon: f64) -> Result<Scenario, ScenarioError> {
    let mut s = Scenario::new(config, horizon);
    s.partition = Some(build_partition(&s)?);
    Ok(s)
}

/// Two spheres on a collision course: sphere 1 at the origin moving along
/// `+x`, sphere 2 at `(epsilon + gap, b, 0)` moving along `-x`; one
/// collision at `(epsilon + gap - sqrt(epsilon^2 - b^2)) / speed`, horizon
/// twice that.
pub fn build_two_sphere(gap: f64, speed: f64, impact_parameter: f64, epsilon: f64) -> Result<Scenario, ScenarioError> {
    let (parts, tc) = two_sphere_particles(gap, speed, impact_parameter, epsilon)?;
    finish(Configuration::new(parts, epsilon, false)?, 2.0 * tc)
}

/// Analytic contact time of [`build_two_sphere`].
pub fn two_sphere_contact_time(gap: f64, speed: f64, impact_parameter: f64, epsilon: f64) -> Result<f64, ScenarioError> {
    Ok(two_sphere_particles(gap, speed, impact_parameter, epsilon)?.1)
}

/// [`build_two_sphere`] plus a third sphere that never interacts.
pub fn build_two_sphere_with_spectator(
    gap: f64,
    speed: f64,
    impact_parameter: f64,
    epsilon: f64,
) -> Result<Scenario, ScenarioError> {
    let (mut parts, tc) = two_sphere_particles(gap, speed, impact_parameter, epsilon)?;
    parts.push(st(
        [0.5 * (epsilon + gap), impact_parameter.abs() + 4.0 * epsilon, 0.3 * epsilon],
        [0.05 * speed, 0.5 * speed, 0.0],
    ));
    let s = finish(Configuration::new(parts, epsilon, false)?, 2.0 * tc)?;
    let (_, log) = evolve_with(&s.initial, s.horizon, &s.tolerances.dynamics())?;
    if log.pair_sequence() != vec![(0, 1)] {
        return Err(ScenarioError::Invalid("spectator interacts".into()));
    }
    Ok(s)
}

fn first_collision(config: &Configuration, span: f64, opts: &DynamicsOptions) -> Result<Option<f64>, ScenarioError> {
    let (_, log) = evolve_with(config, span, opts)?;
    Ok(log.events.first().map(|e| e.time))
}

fn without(config: &Configuration, label: usize) -> Configuration {
    let keep: Vec<usize> = (0..config.len()).filter(|&l| l != label).collect();
    config.subset(&keep)
}

/// Partition `0 = t_0 < ... < t_{S+1} = horizon` with one collision per
/// interior interval, each `t_{i+1}` placed after the collision at half the
/// smaller of the leave-one-out flows' first collision times and the gap to
/// the next collision.
pub fn build_partition(scenario: &Scenario) -> Result<Vec<f64>, ScenarioError> {
    let opts = scenario.tolerances.dynamics();
    let t = scenario.horizon;
    let (_, log) = evolve_with(&scenario.initial, t, &opts)?;
    let mut out = vec![0.0];
    let floor = 1e-10 * t.max(f64::MIN_POSITIVE);
    for (i, e) in log.events.iter().enumerate() {
        let start = *out.last().unwrap();
        let zi = log.state_at(start);
        let next = log.events.get(i + 1).map(|n| n.time).unwrap_or(t);
        let mut margin = next - e.time;
        for &label in &[e.pair.0, e.pair.1] {
            if let Some(first) = first_collision(&without(&zi, label), t - start, &opts)? {
                margin = margin.min(start + first - e.time);
            }
        }
        if margin <= floor {
            return Err(ScenarioError::Partition(format!(
                "isolation margin {margin:e} after collision {} at {} is below {floor:e}",
                i + 1,
                e.time
            )));
        }
        out.push(e.time + 0.5 * margin);
    }
    if *out.last().unwrap() < t {
        out.push(t);
    }
    verify_partition(&scenario.initial, t, &out, &opts)?;
    Ok(out)
}

/// Checks by direct simulation that every interval but the last holds exactly
/// one collision, the last holds none, and removing either colliding sphere
/// leaves its interval collision-free.
pub fn verify_partition(
    config: &Configuration,
    horizon: f64,
    partition: &[f64],
    opts: &DynamicsOptions,
) -> Result<(), ScenarioError> {
    let bad = |s: String| Err(ScenarioError::Partition(s));
    if partition.len() < 2 || partition[0] != 0.0 || *partition.last().unwrap() != horizon {
        return bad(format!("partition must run from 0 to {horizon}"));
    }
    if partition.windows(2).any(|w| w[1] <= w[0]) {
        return bad("partition times must increase".into());
    }
    let (_, log) = evolve_with(config, horizon, opts)?;
    let intervals = partition.len() - 1;
    for (i, w) in partition.windows(2).enumerate() {
        let inside: Vec<_> = log.events.iter().filter(|e| e.time > w[0] && e.time < w[1]).collect();
        let on_edge = log.events.iter().any(|e| e.time == w[0] || e.time == w[1]);
        let last = i + 1 == intervals;
        if on_edge || (last && !inside.is_empty()) || (!last && inside.len() != 1) {
            return bad(format!("interval {i} [{}, {}) has the wrong number of collisions", w[0], w[1]));
        }
        if let Some(e) = inside.first() {
            let zi = log.state_at(w[0]);
            for &label in &[e.pair.0, e.pair.1] {
                let (_, sub) = evolve_with(&without(&zi, label), w[1] - w[0], opts)?;
                if !sub.events.is_empty() {
                    return bad(format!(
                        "interval {i}: removing particle {} leaves a collision at {}",
                        label + 1,
                        w[0] + sub.events[0].time
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Options for [`search_collision_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Total number of trajectory evaluations.
    pub budget: usize,
    /// Evaluations per restart.
    pub restart_every: usize,
    pub epsilon: f64,
    /// Smallest accepted time between consecutive events, and after the
    /// last event up to the horizon.
    pub min_event_gap: f64,
    /// Smallest accepted `|omega . V| / |V|` at every collision.
    pub min_normal_fraction: f64,
    /// Smallest accepted distance minus epsilon from a colliding pair to
    /// any third sphere at collision time.
    pub min_third_gap: f64,
    /// How long the candidate is simulated to make sure nothing follows.
    pub settle_time: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 400_000,
            restart_every: 20_000,
            epsilon: 1.0,
            min_event_gap: 0.02,
            min_normal_fraction: 0.02,
            min_third_gap: 0.02,
            settle_time: 100.0,
        }
    }
}

struct Scored {
    score: f64,
    log: Option<TrajectoryLog>,
}

fn params_to_config(p: &[f64], eps: f64) -> Option<Configuration> {
    let parts = p
        .chunks(4)
        .map(|c| st([c[0], c[1], 0.0], [c[2], c[3], 0.0]))
        .collect();
    Configuration::new(parts, eps, false).ok()
}

fn closest_excess(a: &ParticleState, b: &ParticleState, eps: f64) -> f64 {
    let dx = a.position - b.position;
    let dv = a.velocity - b.velocity;
    let s = if dv.norm2() > 0.0 { (-dx.dot(dv) / dv.norm2()).max(0.0) } else { 0.0 };
    ((dx + dv * s).norm() - eps).max(0.0)
}

fn robust(log: &TrajectoryLog, o: &SearchOptions) -> bool {
    let mut prev = 0.0;
    for e in &log.events {
        if e.time - prev < o.min_event_gap {
            return false;
        }
        prev = e.time;
        let dv = e.velocities_before.0 - e.velocities_before.1;
        if e.omega.dot(dv).abs() < o.min_normal_fraction * dv.norm() {
            return false;
        }
        let c = log.state_at(e.time);
        let (i, k) = e.pair;
        for l in (0..c.len()).filter(|&l| l != i && l != k) {
            for m in [i, k] {
                if (c.particles[l].position - c.particles[m].position).norm() - o.epsilon < o.min_third_gap {
                    return false;
                }
            }
        }
    }
    true
}

fn score(p: &[f64], target: &[(usize, usize)], o: &SearchOptions, dyn_opts: &DynamicsOptions) -> Scored {
    let fail = Scored {
        score: -1.0,
        log: None,
    };
    let Some(config) = params_to_config(p, o.epsilon) else {
        return fail;
    };
    let Ok((_, log)) = evolve_with(&config, o.settle_time, dyn_opts) else {
        return fail;
    };
    let seq = log.pair_sequence();
    let k = seq.iter().zip(target).take_while(|(a, b)| a == b).count();
    if k == target.len() {
        if seq.len() == target.len() && robust(&log, o) {
            return Scored {
                score: k as f64 + 1.0,
                log: Some(log),
            };
        }
        return Scored {
            score: k as f64 + 0.5,
            log: None,
        };
    }
    let at = if k == 0 { 0.0 } else { log.events[k - 1].time };
    let c = log.state_at(at);
    let (a, b) = target[k];
    let d = closest_excess(&c.particles[a], &c.particles[b], o.epsilon);
    Scored {
        score: k as f64 + 0.5 / (1.0 + d),
        log: None,
    }
}

fn restart(
    target: &[(usize, usize)],
    n: usize,
    seed: u64,
    index: usize,
    o: &SearchOptions,
) -> Option<(Vec<f64>, TrajectoryLog)> {
    let dyn_opts = DynamicsOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let eps = o.epsilon;
    let g = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    // spheres strung along x with loose transverse offsets
    let mut cur: Vec<f64> = (0..n)
        .flat_map(|i| {
            let x = 1.6 * eps * i as f64 + 0.3 * eps * g(&mut rng);
            let y = 0.5 * eps * g(&mut rng);
            let vx = g(&mut rng);
            let vy = 0.5 * g(&mut rng);
            [x, y, vx, vy]
        })
        .collect();
    let target_score = target.len() as f64 + 1.0;
    let mut best = score(&cur, target, o, &dyn_opts);
    for _ in 0..o.restart_every {
        if best.score >= target_score {
            break;
        }
        let scale = 10f64.powf(rng.random_range(-3.0..-0.5));
        let mut cand = cur.clone();
        let moves = rng.random_range(1..=cand.len());
        for _ in 0..moves {
            let i = rng.random_range(0..cand.len());
            cand[i] += scale * g(&mut rng) * if i % 4 < 2 { eps } else { 1.0 };
        }
        let s = score(&cand, target, o, &dyn_opts);
        if s.score >= best.score {
            cur = cand;
            best = s;
        }
    }
    best.log.map(|log| (cur, log))
}

/// Seeded hill-climb with restarts for a planar configuration whose full
/// collision history is exactly `target`.
pub fn search_collision_sequence(
    target: &CollisionSequenceTarget,
    seed: u64,
    opts: &SearchOptions,
) -> Result<Scenario, ScenarioError> {
    let n = target.n_particles();
    let tgt = target.zero_based();
    let restarts = (opts.budget / opts.restart_every.max(1)).max(1);
    let found = (0..restarts)
        .into_par_iter()
        .map(|r| restart(&tgt, n, seed, r, opts))
        .find_first(|r| r.is_some())
        .flatten();
    let Some((params, log)) = found else {
        return Err(ScenarioError::NotFound {
            target: target.0.clone(),
            budget: opts.budget,
        });
    };
    let config = params_to_config(&params, opts.epsilon).expect("accepted candidate is valid");
    let last = log.events.last().map(|e| e.time).unwrap_or(0.0);
    let horizon = last + (0.25 * last).clamp(opts.min_event_gap, 1.0);
    let mut s = Scenario::new(config, horizon);
    s.seed = Some(seed);
    let report = classify_with(&s.initial, horizon, &ClassifyOptions::default());
    if !report.is_empty() {
        return Err(ScenarioError::Invalid("found configuration is pathological".into()));
    }
    s.partition = Some(build_partition(&s)?);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_on_contact_time() {
        let s = build_two_sphere(3.0, 1.0, 0.0, 1.0).unwrap();
        let (_, log) = evolve_with(&s.initial, s.horizon, &DynamicsOptions::default()).unwrap();
        assert_eq!(log.events.len(), 1);
        assert!((log.events[0].time - 3.0).abs() < 1e-12);
        assert_eq!(s.partition.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn oblique_contact() {
        let s = build_two_sphere(1.0, 2.0, 0.5, 1.0).unwrap();
        let (_, log) = evolve_with(&s.initial, s.horizon, &DynamicsOptions::default()).unwrap();
        assert_eq!(log.events.len(), 1);
        let tc = two_sphere_contact_time(1.0, 2.0, 0.5, 1.0).unwrap();
        assert!((log.events[0].time - tc).abs() < 1e-12);
    }

    #[test]
    fn missing_collision_rejected() {
        assert!(build_two_sphere(1.0, 1.0, 1.5, 1.0).is_err());
        assert!(build_two_sphere(-1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn spectator_stays_free() {
        let s = build_two_sphere_with_spectator(1.0, 1.0, 0.3, 1.0).unwrap();
        assert_eq!(s.n(), 3);
    }

    #[test]
    fn free_scenario_single_interval() {
        let c = Configuration::new(vec![st([0.0; 3], [1.0, 0.0, 0.0])], 1.0, false).unwrap();
        let s = Scenario::new(c, 2.0);
        assert_eq!(build_partition(&s).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn corrupted_partition_rejected() {
        let s = build_two_sphere(3.0, 1.0, 0.0, 1.0).unwrap();
        let opts = DynamicsOptions::default();
        assert!(verify_partition(&s.initial, s.horizon, &[0.0, s.horizon], &opts).is_err());
        assert!(verify_partition(&s.initial, s.horizon, &[0.0, 2.0, s.horizon], &opts).is_err());
    }

    #[test]
    fn target_parsing() {
        let t = CollisionSequenceTarget::parse("2-3, 1-2,3-2").unwrap();
        assert_eq!(t.0, vec![(2, 3), (1, 2), (2, 3)]);
        assert_eq!(t.n_particles(), 3);
        assert!(CollisionSequenceTarget::parse("1-1").is_err());
    }

    #[test]
    fn single_pair_search() {
        let t = CollisionSequenceTarget::new(vec![(1, 2)]).unwrap();
        let o = SearchOptions {
            budget: 20_000,
            restart_every: 2_000,
            ..SearchOptions::default()
        };
        let s = search_collision_sequence(&t, 1, &o).unwrap();
        let (_, log) = evolve_with(&s.initial, s.horizon, &DynamicsOptions::default()).unwrap();
        assert_eq!(log.pair_sequence(), vec![(0, 1)]);
    }
}
