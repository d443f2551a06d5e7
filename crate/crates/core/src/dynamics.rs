//! Event-driven hard-sphere flow, forward and backward in time.
//!
//! Between events all spheres move freely. At each event the next pair
//! contact is predicted (exhaustively over pairs by default, or through a
//! lazily invalidated priority queue) and checked for the pathologies
//! excluded from good configurations: grazing, simultaneous and triple
//! contacts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    entering_root, is_grazing, scatter_unchecked, Configuration, GeometryError, ParticleState,
    Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scheduler {
    /// Recompute every pair prediction after each event.
    Exhaustive,
    /// Priority queue of pair predictions, invalidated lazily by per-particle
    /// collision counters.
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsOptions {
    pub event_cap: usize,
    /// Two contacts closer than `simultaneity_tol * (1 + t)` are simultaneous.
    pub simultaneity_tol: f64,
    /// A third sphere within `triple_gap_tol * epsilon` of a colliding pair
    /// flags a triple incident.
    pub triple_gap_tol: f64,
    pub scheduler: Scheduler,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            event_cap: 10_000,
            simultaneity_tol: 1e-11,
            triple_gap_tol: 1e-10,
            scheduler: Scheduler::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub pair: (usize, usize),
    pub omega: Vec3,
    pub velocities_before: (Vec3, Vec3),
    pub velocities_after: (Vec3, Vec3),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub initial: Configuration,
    pub horizon: f64,
    pub events: Vec<CollisionEvent>,
}

impl TrajectoryLog {
    /// Configuration at time `s` in `[0, horizon]`, replayed from the log.
    /// At an event time the post-collision velocities are reported.
    pub fn state_at(&self, s: f64) -> Configuration {
        let mut parts = self.initial.particles.clone();
        let mut now = 0.0;
        for e in self.events.iter().take_while(|e| e.time <= s) {
            for p in parts.iter_mut() {
                *p = p.advanced(e.time - now);
            }
            now = e.time;
            parts[e.pair.0].velocity = e.velocities_after.0;
            parts[e.pair.1].velocity = e.velocities_after.1;
        }
        for p in parts.iter_mut() {
            *p = p.advanced(s - now);
        }
        Configuration {
            particles: parts,
            ..self.initial.clone()
        }
    }

    pub fn pair_sequence(&self) -> Vec<(usize, usize)> {
        self.events.iter().map(|e| e.pair).collect()
    }

    /// Trajectory samples at every event time plus `grid` uniform times, as
    /// CSV rows `time,particle,x1,x2,x3,v1,v2,v3`.
    pub fn to_csv(&self, grid: usize) -> String {
        let mut times: Vec<f64> = (0..=grid)
            .map(|i| self.horizon * i as f64 / grid.max(1) as f64)
            .chain(self.events.iter().map(|e| e.time))
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut out = String::from("time,particle,x1,x2,x3,v1,v2,v3\n");
        for t in times {
            let c = self.state_at(t);
            for (i, p) in c.particles.iter().enumerate() {
                let [a, b, cc, d, e, f] = p.coords();
                let _ = writeln!(out, "{t:.17e},{i},{a:.17e},{b:.17e},{cc:.17e},{d:.17e},{e:.17e},{f:.17e}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrazingIncident {
    pub subset: Vec<usize>,
    pub time: f64,
    pub pair: (usize, usize),
    pub normal_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousIncident {
    pub subset: Vec<usize>,
    pub times: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleIncident {
    pub subset: Vec<usize>,
    pub time: f64,
    pub pair: (usize, usize),
    pub third: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathologyReport {
    pub grazing: Vec<GrazingIncident>,
    pub simultaneous: Vec<SimultaneousIncident>,
    pub near_triple: Vec<TripleIncident>,
    /// Subsets whose event count exceeded the cap.
    #[serde(default)]
    pub runaway: Vec<Vec<usize>>,
    pub tolerances: Option<DynamicsOptions>,
}

impl PathologyReport {
    pub fn is_empty(&self) -> bool {
        self.grazing.is_empty()
            && self.simultaneous.is_empty()
            && self.near_triple.is_empty()
            && self.runaway.is_empty()
    }

    fn merge(&mut self, other: PathologyReport) {
        self.grazing.extend(other.grazing);
        self.simultaneous.extend(other.simultaneous);
        self.near_triple.extend(other.near_triple);
        self.runaway.extend(other.runaway);
    }

    fn relabel(&mut self, labels: &[usize]) {
        for g in &mut self.grazing {
            g.subset = labels.to_vec();
            g.pair = (labels[g.pair.0], labels[g.pair.1]);
        }
        for s in &mut self.simultaneous {
            s.subset = labels.to_vec();
            for p in &mut s.pairs {
                *p = (labels[p.0], labels[p.1]);
            }
        }
        for t in &mut self.near_triple {
            t.subset = labels.to_vec();
            t.pair = (labels[t.pair.0], labels[t.pair.1]);
            t.third = labels[t.third];
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("pathological trajectory: {} grazing, {} simultaneous, {} triple", .0.grazing.len(), .0.simultaneous.len(), .0.near_triple.len())]
    Pathology(Box<PathologyReport>),
    #[error("event count exceeded cap {0}")]
    Runaway(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl DynamicsError {
    pub fn pathology(report: PathologyReport) -> Self {
        DynamicsError::Pathology(Box::new(report))
    }
}

/// A predicted pair contact, in absolute flow time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub time: f64,
    pub pair: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    time: f64,
    pair: (usize, usize),
    stamps: (u64, u64),
}

impl PartialEq for QueueEntry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for QueueEntry {
    // min-heap on (time, pair)
    fn cmp(&self, o: &Self) -> Ordering {
        o.time
            .total_cmp(&self.time)
            .then_with(|| o.pair.cmp(&self.pair))
    }
}

/// Mutable working state of one hard-sphere evolution.
#[derive(Debug, Clone)]
pub struct HardSphereFlow {
    pub epsilon: f64,
    pub now: f64,
    pub particles: Vec<ParticleState>,
    pub events: Vec<CollisionEvent>,
    opts: DynamicsOptions,
    stamps: Vec<u64>,
    queue: Option<BinaryHeap<QueueEntry>>,
}

impl HardSphereFlow {
    pub fn new(particles: Vec<ParticleState>, epsilon: f64, opts: DynamicsOptions) -> Self {
        let n = particles.len();
        let mut f = Self {
            epsilon,
            now: 0.0,
            particles,
            events: Vec::new(),
            opts,
            stamps: vec![0; n],
            queue: None,
        };
        if opts.scheduler == Scheduler::Queue {
            f.rebuild_queue();
        }
        f
    }

    pub fn options(&self) -> &DynamicsOptions {
        &self.opts
    }

    fn pair_root(&self, i: usize, k: usize) -> Option<f64> {
        let a = &self.particles[i];
        let b = &self.particles[k];
        entering_root(a.position - b.position, a.velocity - b.velocity, self.epsilon)
    }

    fn rebuild_queue(&mut self) {
        let mut q = BinaryHeap::new();
        for i in 0..self.particles.len() {
            for k in i + 1..self.particles.len() {
                if let Some(s) = self.pair_root(i, k) {
                    q.push(QueueEntry {
                        time: self.now + s,
                        pair: (i, k),
                        stamps: (self.stamps[i], self.stamps[k]),
                    });
                }
            }
        }
        self.queue = Some(q);
    }

    fn requeue_particle(&mut self, i: usize) {
        let n = self.particles.len();
        let mut fresh = Vec::new();
        for k in (0..n).filter(|&k| k != i) {
            let (a, b) = if i < k { (i, k) } else { (k, i) };
            if let Some(s) = self.pair_root(a, b) {
                fresh.push(QueueEntry {
                    time: self.now + s,
                    pair: (a, b),
                    stamps: (self.stamps[a], self.stamps[b]),
                });
            }
        }
        if let Some(q) = self.queue.as_mut() {
            q.extend(fresh);
        }
    }

    fn entry_valid(&self, e: &QueueEntry) -> bool {
        e.pair.1 < self.particles.len()
            && self.stamps[e.pair.0] == e.stamps.0
            && self.stamps[e.pair.1] == e.stamps.1
    }

    /// All contacts predicted within the simultaneity window of the earliest
    /// one, earliest first.
    fn earliest_cluster(&mut self) -> Vec<Contact> {
        let tol = self.opts.simultaneity_tol;
        let mut all: Vec<Contact> = match self.opts.scheduler {
            Scheduler::Exhaustive => {
                let mut v = Vec::new();
                for i in 0..self.particles.len() {
                    for k in i + 1..self.particles.len() {
                        if let Some(s) = self.pair_root(i, k) {
                            v.push(Contact {
                                time: self.now + s,
                                pair: (i, k),
                            });
                        }
                    }
                }
                v
            }
            Scheduler::Queue => {
                let mut popped = Vec::new();
                let mut first: Option<f64> = None;
                while let Some(top) = self.queue.as_ref().and_then(|q| q.peek().copied()) {
                    if !self.entry_valid(&top) {
                        self.queue.as_mut().unwrap().pop();
                        continue;
                    }
                    match first {
                        Some(t0) if top.time - t0 > tol * (1.0 + t0.abs()) => break,
                        None => first = Some(top.time),
                        _ => {}
                    }
                    popped.push(self.queue.as_mut().unwrap().pop().unwrap());
                }
                let out = popped
                    .iter()
                    .map(|e| Contact {
                        time: e.time,
                        pair: e.pair,
                    })
                    .collect();
                // entries stay valid until a participant collides
                self.queue.as_mut().unwrap().extend(popped);
                out
            }
        };
        all.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.pair.cmp(&b.pair)));
        let Some(t0) = all.first().map(|c| c.time) else {
            return all;
        };
        all.retain(|c| c.time - t0 <= tol * (1.0 + t0.abs()));
        all
    }

    /// The next contact strictly before or at `until`, checked for
    /// simultaneity, grazing and triple proximity.
    pub fn next_contact(&mut self, until: f64) -> Result<Option<Contact>, DynamicsError> {
        let cluster = self.earliest_cluster();
        let Some(&first) = cluster.first() else {
            return Ok(None);
        };
        if first.time > until {
            return Ok(None);
        }
        let mut report = PathologyReport {
            tolerances: Some(self.opts),
            ..Default::default()
        };
        if cluster.len() > 1 {
            let shares = cluster.iter().skip(1).any(|c| {
                c.pair.0 == first.pair.0
                    || c.pair.0 == first.pair.1
                    || c.pair.1 == first.pair.0
                    || c.pair.1 == first.pair.1
            });
            if shares {
                let third = cluster[1..]
                    .iter()
                    .flat_map(|c| [c.pair.0, c.pair.1])
                    .find(|&l| l != first.pair.0 && l != first.pair.1)
                    .unwrap_or(first.pair.1);
                report.near_triple.push(TripleIncident {
                    subset: Vec::new(),
                    time: first.time,
                    pair: first.pair,
                    third,
                    gap: 0.0,
                });
            }
            report.simultaneous.push(SimultaneousIncident {
                subset: Vec::new(),
                times: cluster.iter().map(|c| c.time).collect(),
                pairs: cluster.iter().map(|c| c.pair).collect(),
            });
            return Err(DynamicsError::pathology(report));
        }
        if let Some(last) = self.events.last() {
            if last.pair == first.pair && first.time - last.time <= 0.0 {
                report.simultaneous.push(SimultaneousIncident {
                    subset: Vec::new(),
                    times: vec![last.time, first.time],
                    pairs: vec![last.pair, first.pair],
                });
                return Err(DynamicsError::pathology(report));
            }
        }
        let s = first.time - self.now;
        let (i, k) = first.pair;
        let a = self.particles[i].advanced(s);
        let b = self.particles[k].advanced(s);
        let dv = a.velocity - b.velocity;
        let omega = (a.position - b.position).normalized();
        let rate = omega.dot(dv);
        if is_grazing(rate, dv.norm()) {
            report.grazing.push(GrazingIncident {
                subset: Vec::new(),
                time: first.time,
                pair: first.pair,
                normal_rate: rate,
            });
            return Err(DynamicsError::pathology(report));
        }
        let tol = self.opts.triple_gap_tol * self.epsilon;
        for l in (0..self.particles.len()).filter(|&l| l != i && l != k) {
            let c = self.particles[l].advanced(s);
            for (m, pm) in [(i, &a), (k, &b)] {
                let gap = (c.position - pm.position).norm() - self.epsilon;
                if gap < tol {
                    report.near_triple.push(TripleIncident {
                        subset: Vec::new(),
                        time: first.time,
                        pair: (m.min(l), m.max(l)),
                        third: if m == i { k } else { i },
                        gap,
                    });
                }
            }
        }
        if !report.near_triple.is_empty() {
            return Err(DynamicsError::pathology(report));
        }
        Ok(Some(first))
    }

    /// Free flight of every sphere up to absolute time `to`.
    pub fn advance_free(&mut self, to: f64) {
        let s = to - self.now;
        for p in self.particles.iter_mut() {
            *p = p.advanced(s);
        }
        self.now = to;
    }

    /// Elastic collision of the contact pair; the flow must already have
    /// been advanced to the contact time.
    pub fn collide(&mut self, c: &Contact) -> Result<(), DynamicsError> {
        if self.events.len() >= self.opts.event_cap {
            return Err(DynamicsError::Runaway(self.opts.event_cap));
        }
        let (i, k) = c.pair;
        let omega = (self.particles[i].position - self.particles[k].position).normalized();
        let before = (self.particles[i].velocity, self.particles[k].velocity);
        let after = scatter_unchecked(before.0, before.1, omega);
        self.particles[i].velocity = after.0;
        self.particles[k].velocity = after.1;
        self.events.push(CollisionEvent {
            time: c.time,
            pair: c.pair,
            omega,
            velocities_before: before,
            velocities_after: after,
        });
        self.touched(i);
        self.touched(k);
        Ok(())
    }

    /// Marks a sphere's velocity as externally modified.
    pub fn touched(&mut self, i: usize) {
        self.stamps[i] += 1;
        if self.queue.is_some() {
            self.requeue_particle(i);
        }
    }

    /// Removes the last sphere (highest label).
    pub fn pop_last(&mut self) -> ParticleState {
        let p = self.particles.pop().expect("non-empty flow");
        self.stamps.pop();
        p
    }

    /// Appends a sphere with the next label.
    pub fn push(&mut self, p: ParticleState) {
        self.particles.push(p);
        self.stamps.push(0);
        if self.queue.is_some() {
            // popped labels may be reused; stale entries must not survive
            self.rebuild_queue();
        }
    }

    /// Runs the full dynamics up to absolute time `until`.
    pub fn run_until(&mut self, until: f64) -> Result<(), DynamicsError> {
        while let Some(c) = self.next_contact(until)? {
            self.advance_free(c.time);
            self.collide(&c)?;
        }
        self.advance_free(until);
        Ok(())
    }
}

fn check_start(config: &Configuration, t: f64) -> Result<(), DynamicsError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DynamicsError::InvalidInput(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    config.validate()?;
    if config.allow_overlap {
        if let Some((i, k, g)) = config.closest_pair() {
            if g < -1e-12 * config.epsilon {
                return Err(GeometryError::Overlap(i, k, g).into());
            }
        }
    }
    Ok(())
}

/// `T_N(t) config` with the full event log.
pub fn evolve(config: &Configuration, t: f64) -> Result<(Configuration, TrajectoryLog), DynamicsError> {
    evolve_with(config, t, &DynamicsOptions::default())
}

pub fn evolve_with(
    config: &Configuration,
    t: f64,
    opts: &DynamicsOptions,
) -> Result<(Configuration, TrajectoryLog), DynamicsError> {
    check_start(config, t)?;
    let mut flow = HardSphereFlow::new(config.particles.clone(), config.epsilon, *opts);
    flow.run_until(t)?;
    let end = Configuration {
        particles: flow.particles,
        ..config.clone()
    };
    let log = TrajectoryLog {
        initial: config.clone(),
        horizon: t,
        events: flow.events,
    };
    Ok((end, log))
}

/// `T_N(-t) config`, computed as `R T_N(t) R` with `R` the velocity flip.
/// The returned log describes the reversed-velocity forward run.
pub fn evolve_backward(
    config: &Configuration,
    t: f64,
) -> Result<(Configuration, TrajectoryLog), DynamicsError> {
    evolve_backward_with(config, t, &DynamicsOptions::default())
}

pub fn evolve_backward_with(
    config: &Configuration,
    t: f64,
    opts: &DynamicsOptions,
) -> Result<(Configuration, TrajectoryLog), DynamicsError> {
    let (end, log) = evolve_with(&config.reversed(), t, opts)?;
    Ok((end.reversed(), log))
}

pub fn collision_count(log: &TrajectoryLog) -> usize {
    log.events.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassifyOptions {
    pub dynamics: DynamicsOptions,
    /// Largest proper subset evolved; `None` means every subset when
    /// `N <= 6` and subsets up to size 6 otherwise.
    pub max_subset_size: Option<usize>,
}

/// Operational membership test for good configurations over `[0, t]`: the
/// configuration and its sub-configurations are evolved and every pathology
/// found is reported (with labels of the original configuration).
pub fn classify(config: &Configuration, t: f64) -> PathologyReport {
    classify_with(config, t, &ClassifyOptions::default())
}

pub fn classify_with(config: &Configuration, t: f64, opts: &ClassifyOptions) -> PathologyReport {
    let n = config.len();
    let cap = opts.max_subset_size.unwrap_or(if n <= 6 { n } else { 6 });
    let mut report = PathologyReport {
        tolerances: Some(opts.dynamics),
        ..Default::default()
    };
    // subsets in increasing bitmask order; singletons cannot misbehave
    for mask in 1u64..(1u64 << n) {
        let size = mask.count_ones() as usize;
        if size < 2 || (size > cap && size != n) {
            continue;
        }
        let labels: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let sub = config.subset(&labels);
        match evolve_with(&sub, t, &opts.dynamics) {
            Ok(_) => {}
            Err(DynamicsError::Pathology(mut r)) => {
                r.relabel(&labels);
                report.merge(*r);
            }
            Err(DynamicsError::Runaway(_)) => report.runaway.push(labels),
            Err(_) => report.runaway.push(labels),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: [f64; 3], v: [f64; 3]) -> ParticleState {
        ParticleState::new(Vec3(x), Vec3(v))
    }

    fn head_on() -> Configuration {
        Configuration::new(
            vec![state([0., 0., 0.], [1., 0., 0.]), state([3., 0., 0.], [-1., 0., 0.])],
            1.0,
            false,
        )
        .unwrap()
    }

    #[test]
    fn single_particle_free_transport() {
        let c = Configuration::new(vec![state([1., 2., 3.], [0.5, -1., 2.])], 0.3, false).unwrap();
        let (end, log) = evolve(&c, 2.0).unwrap();
        assert_eq!(end.particles[0].position, Vec3::new(2., 0., 7.));
        assert!(log.events.is_empty());
        let (back, _) = evolve_backward(&c, 2.0).unwrap();
        assert_eq!(back.particles[0].position, Vec3::new(0., 4., -1.));
    }

    #[test]
    fn head_on_exchange_logged_once() {
        let (end, log) = evolve(&head_on(), 3.0).unwrap();
        assert_eq!(collision_count(&log), 1);
        assert_eq!(log.events[0].time, 1.0);
        assert_eq!(end.particles[0].velocity, Vec3::new(-1., 0., 0.));
        assert_eq!(end.particles[1].velocity, Vec3::new(1., 0., 0.));
    }

    #[test]
    fn backward_run_recollides_at_mirrored_time() {
        let (end, fwd) = evolve(&head_on(), 3.0).unwrap();
        let (start, bwd) = evolve_backward(&end, 3.0).unwrap();
        assert_eq!(bwd.events.len(), 1);
        assert!((bwd.events[0].time - (3.0 - fwd.events[0].time)).abs() < 1e-14);
        assert!(start.max_abs_diff(&head_on()) < 1e-14);
    }

    #[test]
    fn exact_grazing_is_flagged() {
        // relative motion along y, offset exactly epsilon in x
        let c = Configuration::new(
            vec![state([0., 0., 0.], [0., 1., 0.]), state([1., 3., 0.], [0., -1., 0.])],
            1.0,
            false,
        )
        .unwrap();
        let r = classify(&c, 5.0);
        assert_eq!(r.grazing.len(), 1);
        assert!(matches!(evolve(&c, 5.0), Err(DynamicsError::Pathology(_))));
    }

    #[test]
    fn mirror_symmetric_double_contact_is_simultaneous() {
        let c = Configuration::new(
            vec![
                state([-3., 0., 0.], [1., 0., 0.]),
                state([0., 0., 0.], [0., 0., 0.]),
                state([3., 0., 0.], [-1., 0., 0.]),
            ],
            1.0,
            false,
        )
        .unwrap();
        let r = classify(&c, 5.0);
        assert!(!r.simultaneous.is_empty());
        assert!(!r.near_triple.is_empty());
    }

    #[test]
    fn event_cap_is_enforced() {
        let opts = DynamicsOptions {
            event_cap: 0,
            ..Default::default()
        };
        assert_eq!(
            evolve_with(&head_on(), 3.0, &opts).unwrap_err(),
            DynamicsError::Runaway(0)
        );
    }

    #[test]
    fn overlapping_start_rejected() {
        let c = Configuration::new(
            vec![state([0., 0., 0.], [0., 0., 0.]), state([0.5, 0., 0.], [0., 0., 0.])],
            1.0,
            true,
        )
        .unwrap();
        assert!(matches!(evolve(&c, 1.0), Err(DynamicsError::Geometry(_))));
    }

    #[test]
    fn state_at_replays_log() {
        let (end, log) = evolve(&head_on(), 3.0).unwrap();
        assert!(log.state_at(3.0).max_abs_diff(&end) < 1e-15);
        let mid = log.state_at(0.5);
        assert_eq!(mid.particles[0].position, Vec3::new(0.5, 0., 0.));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (_, log) = evolve(&head_on(), 3.0).unwrap();
        let csv = log.to_csv(4);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "time,particle,x1,x2,x3,v1,v2,v3");
        // 5 grid times + 1 event time (t = 1 is not on the grid), 2 particles each
        assert_eq!(lines.len(), 1 + 6 * 2);
    }
}
