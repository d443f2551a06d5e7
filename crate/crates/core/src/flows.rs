//! Backward flows with particle creations (interacting and Enskog), the
//! branching forward flow, and a finite-difference check of the change of
//! variables induced by the interacting backward flow.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CollisionEvent, DynamicsError, DynamicsOptions, HardSphereFlow};
use crate::geometry::{crossing_times, scatter_unchecked, Configuration, GeometryError, ParticleState, Vec3};
use crate::trees::{NodeVariables, Sign, SignVector, Tree, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("no preimage: {0}")]
    NoPreimage(String),
    #[error("branch enumeration exceeded {0} paths")]
    Runaway(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Upper bound on the number of decision paths explored by [`iff_branches`].
pub const MAX_BRANCHES: usize = 1 << 16;

/// Configuration of a backward flow on `(lower, upper)`, where `j + r`
/// particles exist; `start` is the state at `upper` right after the
/// creation, `end` the state at `lower` before the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub upper: f64,
    pub lower: f64,
    pub start: Vec<ParticleState>,
    pub end: Vec<ParticleState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardFlowResult {
    pub segments: Vec<Segment>,
    /// `zeta(0)`; `None` when a creation violated the exclusion constraint
    /// and the flow was stopped.
    pub terminal: Option<Configuration>,
    pub constraint_satisfied: bool,
    /// `omega_r . (v_{j+r} - eta_{k_r}(t_r))` per creation, in node order.
    pub kernel_factors: Vec<f64>,
    pub sign_consistent: bool,
    /// Recollisions in physical time with forward-time velocities.
    pub recollisions: Vec<CollisionEvent>,
}

impl BackwardFlowResult {
    /// `prod_r |B_r|`.
    pub fn kernel_product(&self) -> f64 {
        self.kernel_factors.iter().map(|b| b.abs()).product()
    }
}

fn check_inputs(
    tree: &Tree,
    signs: &SignVector,
    roots: &Configuration,
    nodes: &NodeVariables,
    t: f64,
) -> Result<(), FlowError> {
    if signs.len() != tree.n() || nodes.n() != tree.n() {
        return Err(TreeError::LengthMismatch {
            signs: signs.len(),
            nodes: tree.n(),
        }
        .into());
    }
    if roots.len() != tree.j {
        return Err(FlowError::InvalidInput(format!(
            "expected {} roots, got {}",
            tree.j,
            roots.len()
        )));
    }
    nodes.validate(t)?;
    Ok(())
}

/// Physical-time view of a collision recorded by a velocity-reversed flow.
fn unreverse(e: &CollisionEvent, t: f64) -> CollisionEvent {
    CollisionEvent {
        time: t - e.time,
        pair: e.pair,
        omega: e.omega,
        velocities_before: (-e.velocities_after.0, -e.velocities_after.1),
        velocities_after: (-e.velocities_before.0, -e.velocities_before.1),
    }
}

fn reversed(ps: &[ParticleState]) -> Vec<ParticleState> {
    ps.iter().map(|p| p.reversed()).collect()
}

/// Places particle `j + r` next to its progenitor and applies the creation
/// velocity rule. Returns `(B_r, overlaps)`.
fn create(
    particles: &mut Vec<ParticleState>,
    progenitor: usize,
    omega: Vec3,
    velocity: Vec3,
    epsilon: f64,
) -> (f64, bool) {
    let pk = particles[progenitor];
    let b = omega.dot(velocity - pk.velocity);
    let position = pk.position + omega * epsilon;
    let overlaps = particles
        .iter()
        .enumerate()
        .any(|(l, p)| l != progenitor && (p.position - position).norm() < epsilon);
    let mut new = ParticleState::new(position, velocity);
    if b >= 0.0 {
        let (vn, vk) = scatter_unchecked(velocity, pk.velocity, omega);
        new.velocity = vn;
        particles[progenitor].velocity = vk;
    }
    particles.push(new);
    (b, overlaps)
}

/// Interacting backward flow at default dynamics tolerances.
pub fn ibf(
    tree: &Tree,
    signs: &SignVector,
    roots: &Configuration,
    nodes: &NodeVariables,
    t: f64,
) -> Result<BackwardFlowResult, FlowError> {
    ibf_with(tree, signs, roots, nodes, t, &DynamicsOptions::default())
}

/// Interacting backward flow: hard-sphere dynamics backwards from `t`,
/// creating particle `j + r` at `t_r` at distance epsilon from `k_r`.
pub fn ibf_with(
    tree: &Tree,
    signs: &SignVector,
    roots: &Configuration,
    nodes: &NodeVariables,
    t: f64,
    opts: &DynamicsOptions,
) -> Result<BackwardFlowResult, FlowError> {
    check_inputs(tree, signs, roots, nodes, t)?;
    roots.validate()?;
    let eps = roots.epsilon;
    // Forward flow of the velocity-reversed state; flow time tau = t - s.
    let mut flow = HardSphereFlow::new(reversed(&roots.particles), eps, *opts);
    let mut segments = Vec::with_capacity(tree.n() + 1);
    let mut kernel_factors = Vec::with_capacity(tree.n());
    let mut sign_consistent = true;
    let mut upper = t;
    let mut start = roots.particles.clone();
    let lowers: Vec<f64> = nodes.times.iter().copied().chain([0.0]).collect();
    for (r0, &lower) in lowers.iter().enumerate() {
        flow.run_until(t - lower)?;
        let end = reversed(&flow.particles);
        segments.push(Segment {
            upper,
            lower,
            start: std::mem::take(&mut start),
            end: end.clone(),
        });
        if r0 == tree.n() {
            break;
        }
        let r = r0 + 1;
        let mut phys = end;
        let k = tree.progenitor0(r);
        let (b, overlaps) = create(&mut phys, k, nodes.omegas[r0], nodes.velocities[r0], eps);
        kernel_factors.push(b);
        if Sign::of(b) != signs.at(r) {
            sign_consistent = false;
        }
        if overlaps {
            return Ok(BackwardFlowResult {
                segments,
                terminal: None,
                constraint_satisfied: false,
                kernel_factors,
                sign_consistent,
                recollisions: flow.events.iter().map(|e| unreverse(e, t)).collect(),
            });
        }
        let created = *phys.last().unwrap();
        flow.particles[k] = phys[k].reversed();
        flow.touched(k);
        flow.push(created.reversed());
        start = phys;
        upper = lower;
    }
    let terminal = Configuration {
        particles: reversed(&flow.particles),
        epsilon: eps,
        allow_overlap: false,
    };
    Ok(BackwardFlowResult {
        segments,
        terminal: Some(terminal),
        constraint_satisfied: true,
        kernel_factors,
        sign_consistent,
        recollisions: flow.events.iter().map(|e| unreverse(e, t)).collect(),
    })
}

/// Enskog backward flow: the same creations with free transport in
/// between; overlaps are allowed and nothing is constrained.
pub fn ebf(
    tree: &Tree,
    signs: &SignVector,
    roots: &Configuration,
    nodes: &NodeVariables,
    t: f64,
) -> Result<BackwardFlowResult, FlowError> {
    check_inputs(tree, signs, roots, nodes, t)?;
    let eps = roots.epsilon;
    let mut segments = Vec::with_capacity(tree.n() + 1);
    let mut kernel_factors = Vec::with_capacity(tree.n());
    let mut sign_consistent = true;
    let mut upper = t;
    let mut state = roots.particles.clone();
    let lowers: Vec<f64> = nodes.times.iter().copied().chain([0.0]).collect();
    for (r0, &lower) in lowers.iter().enumerate() {
        let start = state.clone();
        for p in state.iter_mut() {
            *p = p.advanced(lower - upper);
        }
        segments.push(Segment {
            upper,
            lower,
            start,
            end: state.clone(),
        });
        if r0 == tree.n() {
            break;
        }
        let r = r0 + 1;
        let (b, _) = create(
            &mut state,
            tree.progenitor0(r),
            nodes.omegas[r0],
            nodes.velocities[r0],
            eps,
        );
        kernel_factors.push(b);
        if Sign::of(b) != signs.at(r) {
            sign_consistent = false;
        }
        upper = lower;
    }
    Ok(BackwardFlowResult {
        segments,
        terminal: Some(Configuration {
            particles: state,
            epsilon: eps,
            allow_overlap: true,
        }),
        constraint_satisfied: true,
        kernel_factors,
        sign_consistent,
        recollisions: Vec::new(),
    })
}

/// Decision taken at a contact of the awaited pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Creation(Sign),
    Recollision,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Creation(Sign::Plus) => f.write_str("C+"),
            Choice::Creation(Sign::Minus) => f.write_str("C-"),
            Choice::Recollision => f.write_str("R"),
        }
    }
}

pub fn format_choice_path(path: &[Choice]) -> String {
    path.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOutcome {
    /// `zeta^F_j(t)`.
    pub endpoint: Vec<ParticleState>,
    /// Decisions in forward-time order.
    pub choice_path: Vec<Choice>,
    /// Realized `t_1 > ... > t_n`.
    pub creation_times: Vec<f64>,
    /// Kernel factor `B_r` implied at each creation, in node order.
    pub kernel_factors: Vec<f64>,
    pub sign_consistent: bool,
}

impl BranchOutcome {
    pub fn choice_string(&self) -> String {
        format_choice_path(&self.choice_path)
    }

    pub fn endpoint_coords(&self) -> Vec<f64> {
        self.endpoint.iter().flat_map(|p| p.coords()).collect()
    }
}

#[derive(Clone)]
struct PathState {
    flow: HardSphereFlow,
    awaiting: usize,
    path: Vec<Choice>,
    times: Vec<f64>,
    factors: Vec<f64>,
}

/// Interacting forward flow at default dynamics tolerances.
pub fn iff_branches(
    tree: &Tree,
    signs: &SignVector,
    start: &Configuration,
    t: f64,
) -> Result<Vec<BranchOutcome>, FlowError> {
    iff_branches_with(tree, signs, start, t, &DynamicsOptions::default())
}

/// Every decision path of the interacting forward flow from `start` at
/// time 0 to `t`, depth first with creation explored before recollision.
pub fn iff_branches_with(
    tree: &Tree,
    signs: &SignVector,
    start: &Configuration,
    t: f64,
    opts: &DynamicsOptions,
) -> Result<Vec<BranchOutcome>, FlowError> {
    let n = tree.n();
    if signs.len() != n {
        return Err(TreeError::LengthMismatch {
            signs: signs.len(),
            nodes: n,
        }
        .into());
    }
    if start.len() != tree.j + n {
        return Err(FlowError::InvalidInput(format!(
            "expected {} particles, got {}",
            tree.j + n,
            start.len()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(FlowError::InvalidInput(format!("time must be non-negative, got {t}")));
    }
    start.validate()?;
    let eps = start.epsilon;
    let mut out = Vec::new();
    let mut explored = 0usize;
    let mut stack = vec![PathState {
        flow: HardSphereFlow::new(start.particles.clone(), eps, *opts),
        awaiting: n,
        path: Vec::new(),
        times: vec![0.0; n],
        factors: vec![0.0; n],
    }];
    while let Some(mut st) = stack.pop() {
        explored += 1;
        if explored > MAX_BRANCHES {
            return Err(FlowError::Runaway(MAX_BRANCHES));
        }
        loop {
            let Some(c) = st.flow.next_contact(t)? else {
                if st.awaiting == 0 {
                    st.flow.advance_free(t);
                    let sign_consistent = st
                        .factors
                        .iter()
                        .zip(&signs.0)
                        .all(|(&b, &s)| Sign::of(b) == s);
                    out.push(BranchOutcome {
                        endpoint: st.flow.particles.clone(),
                        choice_path: st.path,
                        creation_times: st.times,
                        kernel_factors: st.factors,
                        sign_consistent,
                    });
                }
                break;
            };
            st.flow.advance_free(c.time);
            let m = st.awaiting;
            if m > 0 && c.pair == (tree.progenitor0(m), tree.created0(m)) {
                let mut rec = st.clone();
                rec.flow.collide(&c)?;
                rec.path.push(Choice::Recollision);

                let k = tree.progenitor0(m);
                let sigma = signs.at(m);
                let created = st.flow.particles[tree.created0(m)];
                let prog = st.flow.particles[k];
                let omega = (created.position - prog.position).normalized();
                let rate = omega.dot(created.velocity - prog.velocity);
                st.factors[m - 1] = match sigma {
                    Sign::Plus => {
                        let (_, vk) = scatter_unchecked(created.velocity, prog.velocity, omega);
                        st.flow.particles[k].velocity = vk;
                        st.flow.touched(k);
                        -rate
                    }
                    Sign::Minus => rate,
                };
                st.flow.pop_last();
                st.times[m - 1] = c.time;
                st.awaiting -= 1;
                st.path.push(Choice::Creation(sigma));
                // LIFO: push recollision first so creation is explored first
                stack.push(rec);
                stack.push(st);
                break;
            }
            st.flow.collide(&c)?;
        }
    }
    Ok(out)
}

/// Finite-difference determinant of the map from node and root variables
/// to `zeta(0)`, against `epsilon^{2n} prod |B_r|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianCheck {
    pub determinant: f64,
    pub expected: f64,
    pub residual: f64,
}

struct Chart<'a> {
    tree: &'a Tree,
    signs: &'a SignVector,
    epsilon: f64,
    t: f64,
    frames: Vec<(Vec3, Vec3, Vec3)>,
    opts: DynamicsOptions,
}

/// Signature of a backward run used to detect event-structure changes.
#[derive(PartialEq)]
struct Structure {
    recollisions: Vec<(usize, usize)>,
    constraint: bool,
    signs: bool,
}

impl Chart<'_> {
    fn unpack(&self, p: &[f64]) -> (Configuration, NodeVariables) {
        let (j, n) = (self.tree.j, self.tree.n());
        let particles = (0..j).map(|i| ParticleState::from_coords(&p[6 * i..6 * i + 6])).collect();
        let o = 6 * j;
        let times = p[o..o + n].to_vec();
        let omegas = (0..n)
            .map(|r| {
                let (w, e1, e2) = self.frames[r];
                (w + e1 * p[o + n + 2 * r] + e2 * p[o + n + 2 * r + 1]).normalized()
            })
            .collect();
        let ov = o + 3 * n;
        let velocities = (0..n)
            .map(|r| Vec3([p[ov + 3 * r], p[ov + 3 * r + 1], p[ov + 3 * r + 2]]))
            .collect();
        (
            Configuration {
                particles,
                epsilon: self.epsilon,
                allow_overlap: false,
            },
            NodeVariables {
                times,
                omegas,
                velocities,
            },
        )
    }

    fn eval(&self, p: &[f64]) -> Result<(Vec<f64>, Structure, BackwardFlowResult), FlowError> {
        let (roots, nodes) = self.unpack(p);
        let res = ibf_with(self.tree, self.signs, &roots, &nodes, self.t, &self.opts)?;
        let out = res
            .terminal
            .as_ref()
            .map(|c| c.particles.iter().flat_map(|q| q.coords()).collect())
            .unwrap_or_default();
        let s = Structure {
            recollisions: res.recollisions.iter().map(|e| e.pair).collect(),
            constraint: res.constraint_satisfied,
            signs: res.sign_consistent,
        };
        Ok((out, s, res))
    }
}

/// Central-difference check of the IBF change of variables.
pub fn ibf_jacobian_residual(
    tree: &Tree,
    signs: &SignVector,
    roots: &Configuration,
    nodes: &NodeVariables,
    t: f64,
    fd_step: f64,
) -> Result<JacobianCheck, FlowError> {
    check_inputs(tree, signs, roots, nodes, t)?;
    let chart = Chart {
        tree,
        signs,
        epsilon: roots.epsilon,
        t,
        frames: nodes
            .omegas
            .iter()
            .map(|&w| {
                let (e1, e2) = w.tangent_frame();
                (w, e1, e2)
            })
            .collect(),
        opts: DynamicsOptions::default(),
    };
    let mut base: Vec<f64> = roots.particles.iter().flat_map(|q| q.coords()).collect();
    base.extend(&nodes.times);
    base.extend(std::iter::repeat_n(0.0, 2 * tree.n()));
    base.extend(nodes.velocities.iter().flat_map(|v| v.0));
    let (_, structure, res) = chart.eval(&base)?;
    if !res.constraint_satisfied {
        return Err(FlowError::DegenerateSample("creation violates the exclusion constraint".into()));
    }
    let dim = base.len();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for col in 0..dim {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[col] += fd_step;
        minus[col] -= fd_step;
        let degenerate = |e: FlowError| match e {
            FlowError::Dynamics(_) | FlowError::Tree(_) => {
                FlowError::DegenerateSample(format!("perturbing coordinate {col}: {e}"))
            }
            other => other,
        };
        let (fp, sp, _) = chart.eval(&plus).map_err(degenerate)?;
        let (fm, sm, _) = chart.eval(&minus).map_err(degenerate)?;
        if sp != structure || sm != structure {
            return Err(FlowError::DegenerateSample(format!(
                "event structure changes when perturbing coordinate {col}"
            )));
        }
        for row in 0..dim {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * fd_step);
        }
    }
    let determinant = jac.determinant().abs();
    let expected = roots.epsilon.powi(2 * tree.n() as i32) * res.kernel_product();
    Ok(JacobianCheck {
        determinant,
        expected,
        residual: (determinant - expected).abs() / expected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSample {
    pub term: String,
    pub n: usize,
    pub check: JacobianCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianStudy {
    pub fd_step: f64,
    pub samples: Vec<JacobianSample>,
    /// Draws discarded as grazing, constrained or structurally unstable.
    pub rejected: usize,
}

impl JacobianStudy {
    pub fn max_residual(&self, n: usize) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.n == n)
            .map(|s| s.check.residual)
            .fold(0.0, f64::max)
    }
}

/// Smallest accepted `|B_r| / |v_r - eta_k|` for a Jacobian sample, and
/// the same ratio at every recollision of its backward flow.
const MIN_KERNEL_FRACTION: f64 = 0.05;
const MAX_JACOBIAN_ATTEMPTS: usize = 1000;

/// Finite-difference Jacobian checks at `count` random one-root IBF
/// points, cycling through the orders in `orders`. Signs follow the
/// geometry of each draw; grazing or structurally unstable draws are
/// redrawn.
pub fn jacobian_study(
    orders: &[usize],
    count: usize,
    epsilon: f64,
    t: f64,
    fd_step: f64,
    seed: u64,
) -> Result<JacobianStudy, FlowError> {
    if orders.is_empty() || t.is_nan() || t <= 0.0 || epsilon.is_nan() || epsilon <= 0.0 {
        return Err(FlowError::InvalidInput("need orders, t > 0 and epsilon > 0".into()));
    }
    let results: Vec<Result<(JacobianSample, usize), FlowError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let n = orders[i % orders.len()];
            let trees = crate::trees::enumerate_trees(1, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rejected = 0;
            for _ in 0..MAX_JACOBIAN_ATTEMPTS {
                let mut g = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
                let root = ParticleState::new(Vec3([g(1.0), g(1.0), g(1.0)]), Vec3([g(1.0), g(1.0), g(1.0)]));
                let tree = trees[rng.random_range(0..trees.len())].clone();
                let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.05 * t..0.95 * t)).collect();
                times.sort_by(|a, b| b.total_cmp(a));
                let mut g = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
                let omegas: Vec<Vec3> = (0..n).map(|_| Vec3([g(1.0), g(1.0), g(1.0)]).normalized()).collect();
                let velocities: Vec<Vec3> = (0..n).map(|_| Vec3([g(1.0), g(1.0), g(1.0)])).collect();
                let nodes = NodeVariables {
                    times,
                    omegas,
                    velocities,
                };
                let roots = Configuration {
                    particles: vec![root],
                    epsilon,
                    allow_overlap: false,
                };
                let probe = SignVector(vec![Sign::Plus; n]);
                let Ok(first) = ibf(&tree, &probe, &roots, &nodes, t) else {
                    rejected += 1;
                    continue;
                };
                let grazing = first.segments.iter().skip(1).zip(&first.kernel_factors).enumerate().any(
                    |(r, (seg, b))| {
                        let k = tree.progenitors[r] - 1;
                        let g = nodes.velocities[r] - seg.start[k].velocity;
                        b.abs() < MIN_KERNEL_FRACTION * g.norm().max(1e-12)
                    },
                );
                let grazing = grazing
                    || first.recollisions.iter().any(|e| {
                        let g = e.velocities_before.0 - e.velocities_before.1;
                        e.omega.dot(g).abs() < MIN_KERNEL_FRACTION * g.norm().max(1e-12)
                    });
                if !first.constraint_satisfied || grazing {
                    rejected += 1;
                    continue;
                }
                let signs = SignVector(first.kernel_factors.iter().map(|&b| Sign::of(b)).collect());
                match ibf_jacobian_residual(&tree, &signs, &roots, &nodes, t, fd_step) {
                    Ok(check) => {
                        let term = crate::trees::TreeLiteral { tree, signs }.to_string();
                        return Ok((JacobianSample { term, n, check }, rejected));
                    }
                    Err(FlowError::DegenerateSample(_)) => rejected += 1,
                    Err(e) => return Err(e),
                }
            }
            Err(FlowError::DegenerateSample(format!(
                "sample {i}: {MAX_JACOBIAN_ATTEMPTS} draws rejected"
            )))
        })
        .collect();
    let mut samples = Vec::with_capacity(count);
    let mut rejected = 0;
    for r in results {
        let (s, k) = r?;
        samples.push(s);
        rejected += k;
    }
    Ok(JacobianStudy {
        fd_step,
        samples,
        rejected,
    })
}

/// Unique preimage of the EBF map: node variables and roots at `t`.
pub fn ebf_invert(
    tree: &Tree,
    signs: &SignVector,
    terminal: &Configuration,
    t: f64,
) -> Result<(NodeVariables, Configuration), FlowError> {
    let n = tree.n();
    if signs.len() != n {
        return Err(TreeError::LengthMismatch {
            signs: signs.len(),
            nodes: n,
        }
        .into());
    }
    if terminal.len() != tree.j + n {
        return Err(FlowError::InvalidInput(format!(
            "expected {} particles, got {}",
            tree.j + n,
            terminal.len()
        )));
    }
    let eps = terminal.epsilon;
    let mut state = terminal.particles.clone();
    let mut now = 0.0;
    let mut times = vec![0.0; n];
    let mut omegas = vec![Vec3::ZERO; n];
    let mut velocities = vec![Vec3::ZERO; n];
    for m in (1..=n).rev() {
        let (c, k) = (tree.created0(m), tree.progenitor0(m));
        let dx = state[c].position - state[k].position;
        let dv = state[c].velocity - state[k].velocity;
        let entering = crossing_times(dx, dv, eps)
            .map(|(enter, _)| enter)
            .filter(|&s| s > 0.0 && now + s < t)
            .ok_or_else(|| {
                FlowError::NoPreimage(format!(
                    "pair ({}, {}) does not reach contact in ({now}, {t})",
                    c + 1,
                    k + 1
                ))
            })?;
        now += entering;
        for p in state.iter_mut() {
            *p = p.advanced(entering);
        }
        let omega = (state[c].position - state[k].position).normalized();
        let rate = omega.dot(state[c].velocity - state[k].velocity);
        let (vc, vk) = match signs.at(m) {
            Sign::Plus => scatter_unchecked(state[c].velocity, state[k].velocity, omega),
            Sign::Minus => (state[c].velocity, state[k].velocity),
        };
        let b = omega.dot(vc - vk);
        if Sign::of(b) != signs.at(m) || rate >= 0.0 {
            return Err(FlowError::NoPreimage(format!(
                "creation {m} has kernel factor of the wrong sign"
            )));
        }
        state[k].velocity = vk;
        times[m - 1] = now;
        omegas[m - 1] = omega;
        velocities[m - 1] = vc;
        state.pop();
    }
    for p in state.iter_mut() {
        *p = p.advanced(t - now);
    }
    Ok((
        NodeVariables {
            times,
            omegas,
            velocities,
        },
        Configuration {
            particles: state,
            epsilon: eps,
            allow_overlap: true,
        },
    ))
}
