//! Microscopic Enskog series for empirical initial data.
//!
//! A term `(tree, signs)` integrates `mu_N^{(x)(j+n)}` over the image of the
//! Enskog backward flow. For Dirac data this is a finite sum over label
//! assignments (repeated labels are contractions); each assignment is
//! tested for membership by running the flow forward: particle `j + m`
//! must reach contact with its progenitor, incoming, strictly after the
//! previous creation time. Assignments whose contacts coincide sit on the
//! boundary of the image and are resolved by a [`RegularizationPolicy`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::evolve_with;
use crate::empirical::{integrate, tuples, Atom, DiracComb, Observable, Weight};
use crate::flows::{ebf, FlowError};
use crate::geometry::{crossing_times, scatter_unchecked, Configuration, ParticleState, Vec3};
use crate::hierarchy::{HierarchyError, Scenario};
use crate::trees::{enumerate_signs, enumerate_trees, NodeVariables, Sign, SignVector, Tree, TreeError, TreeLiteral};

/// Relative tolerance deciding that two creation times coincide.
pub const COINCIDENCE_TOL: f64 = 1e-9;
/// Relative tolerance deciding that a contact is tangential.
pub const GRAZING_TOL: f64 = 1e-9;
/// Low-discrepancy points per mollified assignment and width.
pub const MOLLIFIER_POINTS: usize = 256;
/// Description of the mollifier recorded in reports.
pub const MOLLIFIER: &str =
    "isotropic Gaussian of width delta in position and velocity per atom; R-sequence points, antithetic and label-permutation symmetrized; Richardson over delta, delta/2, delta/4";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnskogError {
    #[error("ambiguous term {term}: Dirac atoms on the boundary of the Enskog image")]
    Ambiguity { term: String },
    #[error("undefined endpoint in term {term}: simultaneous creations with momentum transfer")]
    UndefinedEndpoint { term: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration does not match the singular example: {0}")]
    InvalidDemo(String),
    #[error("Monte Carlo relative standard error {relative:.3} exceeds 1; increase samples")]
    IncreaseSamples { relative: f64 },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// How contraction terms evaluated on the boundary of the Enskog image are
/// given a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegularizationPolicy {
    /// Boundary atoms are refused.
    None,
    /// Every atom is smeared by a Gaussian of width `delta`, then `delta -> 0`.
    Symmetric { delta: f64 },
    /// Consecutive creation times must differ by at least `eta`, then `eta -> 0`.
    TimeSeparation { eta: f64 },
}

impl RegularizationPolicy {
    pub fn validate(&self) -> Result<(), EnskogError> {
        match *self {
            RegularizationPolicy::Symmetric { delta: p } | RegularizationPolicy::TimeSeparation { eta: p }
                if !(p > 0.0 && p.is_finite()) =>
            {
                Err(EnskogError::InvalidPolicy(format!("parameter must be positive, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RegularizationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegularizationPolicy::None => write!(f, "none"),
            RegularizationPolicy::Symmetric { delta } => write!(f, "symmetric:{delta}"),
            RegularizationPolicy::TimeSeparation { eta } => write!(f, "time-sep:{eta}"),
        }
    }
}

impl FromStr for RegularizationPolicy {
    type Err = EnskogError;

    fn from_str(s: &str) -> Result<Self, EnskogError> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64, EnskogError> {
            a.ok_or_else(|| EnskogError::InvalidPolicy(format!("{s:?} needs a parameter")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| EnskogError::InvalidPolicy(format!("{s:?}: {e}")))
        };
        let p = match kind {
            "none" if arg.is_none() => RegularizationPolicy::None,
            "symmetric" => RegularizationPolicy::Symmetric { delta: num(arg)? },
            "time-sep" | "time-separation" => RegularizationPolicy::TimeSeparation { eta: num(arg)? },
            _ => return Err(EnskogError::InvalidPolicy(format!("unknown policy {s:?}"))),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Position of an atom assignment relative to the image of the Enskog
/// backward flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Membership {
    Outside,
    Inside,
    /// Coincident (or tangential) creations: on the border of the image.
    Boundary,
    /// Coincident creations where an earlier one already scattered a
    /// participant of the next: a triple collision of the flow.
    Undefined,
}

#[derive(Debug, Clone, PartialEq)]
struct ForwardOutcome {
    membership: Membership,
    /// `t_1 > ... > t_n` as far as they were reached.
    times: Vec<f64>,
    /// Root states at `t`; only meaningful for `Inside`.
    endpoint: Vec<ParticleState>,
}

/// Runs the Enskog flow forward from `zeta(0)` and classifies it.
fn ebf_forward(tree: &Tree, signs: &SignVector, initial: &[ParticleState], eps: f64, t: f64) -> ForwardOutcome {
    let n = tree.n();
    let mut state = initial.to_vec();
    let mut times = vec![f64::NAN; n];
    let mut now = 0.0;
    let mut flagged = Membership::Inside;
    let tol_t = COINCIDENCE_TOL * t.max(1.0);
    let outside = |times: Vec<f64>| ForwardOutcome {
        membership: Membership::Outside,
        times,
        endpoint: Vec::new(),
    };
    for m in (1..=n).rev() {
        let (c, k) = (tree.created0(m), tree.progenitor0(m));
        let dx = state[c].position - state[k].position;
        let dv = state[c].velocity - state[k].velocity;
        let speed = dv.norm();
        if speed == 0.0 {
            return outside(times);
        }
        let gap = dx.norm() - eps;
        let entering = if gap.abs() <= COINCIDENCE_TOL * eps {
            let rate = dx.normalized().dot(dv);
            if rate < -GRAZING_TOL * speed {
                0.0
            } else if rate <= GRAZING_TOL * speed {
                if m < n {
                    return ForwardOutcome {
                        membership: Membership::Undefined,
                        times,
                        endpoint: Vec::new(),
                    };
                }
                flagged = Membership::Boundary;
                0.0
            } else {
                return outside(times);
            }
        } else {
            match crossing_times(dx, dv, eps) {
                Some((enter, _)) if enter > 0.0 => enter,
                _ => return outside(times),
            }
        };
        if entering <= tol_t {
            flagged = flagged.max(Membership::Boundary);
        }
        if now + entering >= t {
            return outside(times);
        }
        now += entering;
        for p in state.iter_mut() {
            *p = p.advanced(entering);
        }
        let omega = (state[c].position - state[k].position).normalized();
        let rate = omega.dot(state[c].velocity - state[k].velocity);
        if rate.abs() <= GRAZING_TOL * speed {
            flagged = flagged.max(Membership::Boundary);
        }
        if signs.at(m) == Sign::Plus {
            let (_, vk) = scatter_unchecked(state[c].velocity, state[k].velocity, omega);
            state[k].velocity = vk;
        }
        times[m - 1] = now;
        state.pop();
    }
    for p in state.iter_mut() {
        *p = p.advanced(t - now);
    }
    ForwardOutcome {
        membership: flagged,
        times,
        endpoint: state,
    }
}

/// One assignment of atoms to the `j + n` particle slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentValue {
    /// One-based atom labels per slot.
    pub labels: Vec<usize>,
    /// One-based slots sharing an atom (groups of size at least two).
    pub contraction: Vec<Vec<usize>>,
    pub membership: Membership,
    pub creation_times: Vec<f64>,
    /// Signed, weighted contribution under the policy (0 when excluded).
    pub value: f64,
    /// Dropped by the policy (time separation) or undefined.
    pub excluded: bool,
}

impl AssignmentValue {
    pub fn is_contraction(&self) -> bool {
        !self.contraction.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnskogTermValue {
    pub tree: Tree,
    pub signs: SignVector,
    pub policy: RegularizationPolicy,
    pub value: f64,
    /// Some assignment lies on the boundary of the image.
    pub boundary_flag: bool,
    pub assignments: Vec<AssignmentValue>,
    pub undefined: usize,
    /// Time separation only: the two `eta` evaluations agree.
    pub stabilized: bool,
}

impl EnskogTermValue {
    pub fn term_id(&self) -> String {
        term_id(&self.tree, &self.signs)
    }

    /// Assignments with repeated labels that contribute.
    pub fn contractions_admitted(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| a.is_contraction() && !a.excluded && a.membership != Membership::Outside)
            .count()
    }

    /// Assignments that are not outside the image.
    pub fn members(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| a.membership != Membership::Outside)
            .count()
    }
}

fn term_id(tree: &Tree, signs: &SignVector) -> String {
    TreeLiteral {
        tree: tree.clone(),
        signs: signs.clone(),
    }
    .to_string()
}

fn contraction_groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (slot, &l) in labels.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == l) {
            Some(g) => g.1.push(slot),
            None => groups.push((l, vec![slot])),
        }
    }
    groups.into_iter().map(|g| g.1).filter(|g| g.len() > 1).collect()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Slot maps that only exchange slots holding the same atom.
fn symmetry_group(len: usize, groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut maps = vec![(0..len).collect::<Vec<_>>()];
    for g in groups {
        let mut next = Vec::new();
        for base in &maps {
            for p in permutations(g) {
                let mut m = base.clone();
                for (a, b) in g.iter().zip(&p) {
                    m[*a] = *b;
                }
                next.push(m);
            }
        }
        maps = next;
    }
    maps
}

/// Additive recurrence points in `(0,1)^d`.
fn r_sequence(count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut g = 2.0f64;
    for _ in 0..64 {
        g = (1.0 + g).powf(1.0 / (dim as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=dim).map(|k| g.powi(-(k as i32))).collect();
    (1..=count)
        .map(|i| {
            alpha
                .iter()
                .map(|a| (0.5 + i as f64 * a).fract().clamp(1e-12, 1.0 - 1e-12))
                .collect()
        })
        .collect()
}

/// Standard normal deviates from uniform points (Box-Muller on pairs).
fn normal_points(count: usize, dim: usize) -> Vec<Vec<f64>> {
    let even = dim + dim % 2;
    r_sequence(count, even)
        .into_iter()
        .map(|u| {
            let mut g = Vec::with_capacity(even);
            for pair in u.chunks(2) {
                let r = (-2.0 * pair[0].ln()).sqrt();
                let a = std::f64::consts::TAU * pair[1];
                g.push(r * a.cos());
                g.push(r * a.sin());
            }
            g.truncate(dim);
            g
        })
        .collect()
}

struct TermContext<'a> {
    tree: &'a Tree,
    signs: &'a SignVector,
    atoms: &'a [ParticleState],
    eps: f64,
    t: f64,
    phi: &'a Observable,
    /// `prod sigma_r / N^j`.
    factor: f64,
}

impl TermContext<'_> {
    fn endpoint_value(&self, endpoint: &[ParticleState]) -> f64 {
        let coords: Vec<f64> = endpoint.iter().flat_map(|p| p.coords()).collect();
        self.factor * self.phi.eval(&coords)
    }

    fn states(&self, labels: &[usize]) -> Vec<ParticleState> {
        labels.iter().map(|&l| self.atoms[l]).collect()
    }

    /// Mean of the smeared integrand at width `delta`.
    fn smeared(&self, labels: &[usize], delta: f64, points: &[Vec<f64>], group: &[Vec<usize>]) -> f64 {
        let base = self.states(labels);
        let mut sum = 0.0;
        let mut count = 0usize;
        for g in points {
            for map in group {
                for s in [1.0, -1.0] {
                    let shifted: Vec<ParticleState> = base
                        .iter()
                        .enumerate()
                        .map(|(slot, p)| {
                            let o = &g[6 * map[slot]..6 * map[slot] + 6];
                            let d = delta * s;
                            ParticleState::new(
                                p.position + Vec3([o[0], o[1], o[2]]) * d,
                                p.velocity + Vec3([o[3], o[4], o[5]]) * d,
                            )
                        })
                        .collect();
                    let out = ebf_forward(self.tree, self.signs, &shifted, self.eps, self.t);
                    if out.membership == Membership::Inside {
                        sum += self.endpoint_value(&out.endpoint);
                    }
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    /// `delta -> 0` limit by Richardson extrapolation over three widths.
    fn symmetric_value(&self, labels: &[usize], delta: f64) -> f64 {
        let dim = 6 * labels.len();
        let points = normal_points(MOLLIFIER_POINTS, dim);
        let group = symmetry_group(labels.len(), &contraction_groups(labels));
        let v1 = self.smeared(labels, delta, &points, &group);
        let v2 = self.smeared(labels, delta / 2.0, &points, &group);
        let v4 = self.smeared(labels, delta / 4.0, &points, &group);
        (8.0 * v4 - 6.0 * v2 + v1) / 3.0
    }
}

fn separated(times: &[f64], eta: f64) -> bool {
    times.windows(2).all(|w| w[0] - w[1] >= eta)
}

/// Evaluates every assignment of one term. Undefined assignments are
/// excluded and counted; boundary assignments are resolved by `policy`
/// (under `None` they are kept with zero value and flagged).
fn evaluate_term(
    tree: &Tree,
    signs: &SignVector,
    atoms: &[ParticleState],
    eps: f64,
    t: f64,
    phi: &Observable,
    policy: RegularizationPolicy,
) -> Result<EnskogTermValue, EnskogError> {
    if signs.len() != tree.n() {
        return Err(TreeError::LengthMismatch {
            signs: signs.len(),
            nodes: tree.n(),
        }
        .into());
    }
    policy.validate()?;
    let big_n = atoms.len();
    let ctx = TermContext {
        tree,
        signs,
        atoms,
        eps,
        t,
        phi,
        factor: signs.product() as f64 / (big_n as f64).powi(tree.j as i32),
    };
    let mut assignments = Vec::new();
    let (mut total, mut total_half) = (0.0, 0.0);
    let mut undefined = 0;
    let mut boundary_flag = false;
    for labels in tuples(big_n, tree.j + tree.n()) {
        let out = ebf_forward(tree, signs, &ctx.states(&labels), eps, t);
        let (value, half, excluded) = match out.membership {
            Membership::Outside => (0.0, 0.0, false),
            Membership::Undefined => {
                undefined += 1;
                (0.0, 0.0, true)
            }
            Membership::Inside => {
                let v = ctx.endpoint_value(&out.endpoint);
                match policy {
                    RegularizationPolicy::TimeSeparation { eta } => {
                        let a = if separated(&out.times, eta) { v } else { 0.0 };
                        let b = if separated(&out.times, eta / 2.0) { v } else { 0.0 };
                        (b, a, b == 0.0 && v != 0.0)
                    }
                    _ => (v, v, false),
                }
            }
            Membership::Boundary => {
                boundary_flag = true;
                match policy {
                    RegularizationPolicy::None => (0.0, 0.0, false),
                    RegularizationPolicy::Symmetric { delta } => {
                        let v = ctx.symmetric_value(&labels, delta);
                        (v, v, false)
                    }
                    RegularizationPolicy::TimeSeparation { .. } => (0.0, 0.0, true),
                }
            }
        };
        total += value;
        total_half += half;
        assignments.push(AssignmentValue {
            contraction: contraction_groups(&labels)
                .into_iter()
                .map(|g| g.into_iter().map(|s| s + 1).collect())
                .collect(),
            labels: labels.iter().map(|l| l + 1).collect(),
            membership: out.membership,
            creation_times: out.times,
            value,
            excluded,
        });
    }
    Ok(EnskogTermValue {
        tree: tree.clone(),
        signs: signs.clone(),
        policy,
        value: total,
        boundary_flag,
        assignments,
        undefined,
        stabilized: (total - total_half).abs() <= 1e-12 * (1.0 + total.abs()),
    })
}

/// Value of one term of the Enskog series for the empirical measure of
/// `scenario` at its horizon, with `lambda^{-1} = N epsilon^2`.
pub fn enskog_term(
    tree: &Tree,
    signs: &SignVector,
    scenario: &Scenario,
    phi: &Observable,
    policy: RegularizationPolicy,
) -> Result<EnskogTermValue, EnskogError> {
    scenario.check_pathology_free()?;
    let v = evaluate_term(
        tree,
        signs,
        &scenario.initial.particles,
        scenario.initial.epsilon,
        scenario.horizon,
        phi,
        policy,
    )?;
    if v.undefined > 0 {
        return Err(EnskogError::UndefinedEndpoint { term: v.term_id() });
    }
    if v.boundary_flag && policy == RegularizationPolicy::None {
        return Err(EnskogError::Ambiguity { term: v.term_id() });
    }
    Ok(v)
}

/// Per-order sums of the series for `j = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSums {
    pub policy: RegularizationPolicy,
    pub per_n: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// `sum |term value|` per order.
    pub abs_per_n: Vec<f64>,
    pub terms: Vec<EnskogTermValue>,
    pub boundary_terms: usize,
    pub undefined_assignments: usize,
    pub contractions_admitted: usize,
    /// `int mu_N(t) phi`.
    pub target: f64,
}

impl SeriesSums {
    pub fn value(&self) -> f64 {
        self.partial_sums.last().copied().unwrap_or(0.0)
    }
}

fn jobs(n_max: usize) -> Vec<(usize, Tree, SignVector)> {
    (0..=n_max)
        .flat_map(|n| {
            enumerate_trees(1, n).into_iter().flat_map(move |tree| {
                enumerate_signs(n).into_iter().map(move |s| (n, tree.clone(), s))
            })
        })
        .collect()
}

/// `int mu_N(t) phi` by direct simulation.
pub fn physical_value(scenario: &Scenario, phi: &Observable) -> Result<f64, EnskogError> {
    let (fin, _) = evolve_with(&scenario.initial, scenario.horizon, &scenario.tolerances.dynamics())
        .map_err(HierarchyError::from)?;
    let comb = crate::empirical::empirical_measure(&fin);
    Ok(integrate(&comb, phi).map_err(HierarchyError::from)?)
}

/// Sums the series up to `n_max`. Boundary terms are refused under
/// `None`; undefined assignments are excluded and counted.
pub fn series_sums(
    scenario: &Scenario,
    phi: &Observable,
    policy: RegularizationPolicy,
    n_max: usize,
) -> Result<SeriesSums, EnskogError> {
    scenario.check_pathology_free()?;
    policy.validate()?;
    let target = physical_value(scenario, phi)?;
    let atoms = &scenario.initial.particles;
    let (eps, t) = (scenario.initial.epsilon, scenario.horizon);
    let terms: Vec<EnskogTermValue> = jobs(n_max)
        .par_iter()
        .map(|(_, tree, s)| evaluate_term(tree, s, atoms, eps, t, phi, policy))
        .collect::<Result<_, _>>()?;
    if policy == RegularizationPolicy::None {
        if let Some(b) = terms.iter().find(|v| v.boundary_flag) {
            return Err(EnskogError::Ambiguity { term: b.term_id() });
        }
    }
    let mut per_n = vec![0.0; n_max + 1];
    let mut abs_per_n = vec![0.0; n_max + 1];
    for v in &terms {
        per_n[v.tree.n()] += v.value;
        abs_per_n[v.tree.n()] += v.value.abs();
    }
    let partial_sums = per_n
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    Ok(SeriesSums {
        policy,
        per_n,
        partial_sums,
        abs_per_n,
        boundary_terms: terms.iter().filter(|v| v.boundary_flag).count(),
        undefined_assignments: terms.iter().map(|v| v.undefined).sum(),
        contractions_admitted: terms.iter().map(|v| v.contractions_admitted()).sum(),
        terms,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormalizedSeries {
    pub eta: f64,
    pub partial_sums: Vec<f64>,
    pub target: f64,
    pub residual: f64,
    pub contractions_admitted: usize,
    /// Terms of order at least two with a nonzero value.
    pub nonzero_higher_terms: usize,
    /// Every term gave the same value at `eta` and `eta / 2`.
    pub stabilized: bool,
}

/// Checks that at most one collision happens on `(0, horizon)` and that
/// both flows with one colliding sphere removed are free.
fn single_interval(scenario: &Scenario) -> Result<(), EnskogError> {
    let opts = scenario.tolerances.dynamics();
    let (_, log) = evolve_with(&scenario.initial, scenario.horizon, &opts).map_err(HierarchyError::from)?;
    match log.events.as_slice() {
        [] => Ok(()),
        [e] => {
            for drop in [e.pair.0, e.pair.1] {
                let keep: Vec<usize> = (0..scenario.n()).filter(|&l| l != drop).collect();
                let (_, l) = evolve_with(&scenario.initial.subset(&keep), scenario.horizon, &opts)
                    .map_err(HierarchyError::from)?;
                if !l.events.is_empty() {
                    return Err(EnskogError::InvalidInput(
                        "leave-one-out flow is not free on the interval".into(),
                    ));
                }
            }
            Ok(())
        }
        many => Err(EnskogError::InvalidInput(format!(
            "{} collisions on the interval; at most one allowed",
            many.len()
        ))),
    }
}

/// Time-separated series on a single-collision interval.
pub fn renormalized_series(
    scenario: &Scenario,
    phi: &Observable,
    eta: f64,
    n_max: usize,
) -> Result<RenormalizedSeries, EnskogError> {
    if eta >= scenario.horizon {
        return Err(EnskogError::InvalidInput(format!(
            "eta = {eta} is not below the horizon {}; every separated term is excluded",
            scenario.horizon
        )));
    }
    single_interval(scenario)?;
    let s = series_sums(scenario, phi, RegularizationPolicy::TimeSeparation { eta }, n_max)?;
    let last = s.value();
    Ok(RenormalizedSeries {
        eta,
        residual: (last - s.target).abs(),
        nonzero_higher_terms: s.terms.iter().filter(|v| v.tree.n() >= 2 && v.value != 0.0).count(),
        stabilized: s.terms.iter().all(|v| v.stabilized),
        contractions_admitted: s.contractions_admitted,
        partial_sums: s.partial_sums,
        target: s.target,
    })
}

/// Two terms of the same order and tree whose values cancel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternatingFamily {
    pub n: usize,
    pub positive: String,
    pub negative: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTrace {
    pub policy: RegularizationPolicy,
    pub per_n: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub abs_per_n: Vec<f64>,
    pub cesaro_means: Vec<f64>,
    pub alternating: Vec<AlternatingFamily>,
    /// `min_{1 <= n <= n_max} abs_per_n[n]`.
    pub absolute_lower_bound: f64,
    /// `|C_{n_max} - C_{n_max - 1}|`.
    pub cesaro_spread: f64,
    pub target: f64,
    pub undefined_assignments: usize,
}

/// Per-order sums, Cesaro means and alternating pairs of the series.
pub fn divergence_trace(
    scenario: &Scenario,
    phi: &Observable,
    policy: RegularizationPolicy,
    n_max: usize,
) -> Result<DivergenceTrace, EnskogError> {
    let s = series_sums(scenario, phi, policy, n_max)?;
    let cesaro_means: Vec<f64> = s
        .partial_sums
        .iter()
        .enumerate()
        .scan(0.0, |acc, (i, p)| {
            *acc += p;
            Some(*acc / (i + 1) as f64)
        })
        .collect();
    let tol = 1e-9 * (1.0 + s.abs_per_n.iter().cloned().fold(0.0, f64::max));
    let mut alternating = Vec::new();
    for (a, va) in s.terms.iter().enumerate() {
        if va.value <= tol {
            continue;
        }
        let partner = s.terms.iter().enumerate().find(|(b, vb)| {
            *b != a
                && vb.tree == va.tree
                && vb.value < -tol
                && (vb.value + va.value).abs() <= tol
                && !alternating
                    .iter()
                    .any(|f: &AlternatingFamily| f.negative == vb.term_id())
        });
        if let Some((_, vb)) = partner {
            alternating.push(AlternatingFamily {
                n: va.tree.n(),
                positive: va.term_id(),
                negative: vb.term_id(),
                magnitude: va.value,
            });
        }
    }
    let absolute_lower_bound = s.abs_per_n.iter().skip(1).cloned().fold(f64::INFINITY, f64::min);
    let cesaro_spread = match cesaro_means.len() {
        0 | 1 => 0.0,
        l => (cesaro_means[l - 1] - cesaro_means[l - 2]).abs(),
    };
    Ok(DivergenceTrace {
        policy,
        absolute_lower_bound: if absolute_lower_bound.is_finite() { absolute_lower_bound } else { 0.0 },
        cesaro_spread,
        per_n: s.per_n,
        partial_sums: s.partial_sums,
        abs_per_n: s.abs_per_n,
        cesaro_means,
        alternating,
        target: s.target,
        undefined_assignments: s.undefined_assignments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularDemo {
    pub comb: DiracComb,
    /// Member assignments per order `n = 1..=n_max`, over all terms.
    pub members_per_n: Vec<usize>,
    pub series_value: f64,
    pub comb_value: f64,
}

/// Overlapping two-particle data with the second sphere at rest: the only
/// non-vanishing term of the series is free transport.
pub fn singular_solution_demo(
    config: &Configuration,
    t: f64,
    phi: &Observable,
    n_max: usize,
) -> Result<SingularDemo, EnskogError> {
    if config.len() != 2 {
        return Err(EnskogError::InvalidDemo(format!("needs 2 particles, got {}", config.len())));
    }
    let (a, b) = (config.particles[0], config.particles[1]);
    if (a.position - b.position).norm() >= config.epsilon {
        return Err(EnskogError::InvalidDemo("the spheres do not overlap".into()));
    }
    if b.velocity != Vec3::ZERO {
        return Err(EnskogError::InvalidDemo("the second particle must be at rest".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(EnskogError::InvalidInput(format!("bad time {t}")));
    }
    let half = Weight::new(1, 2);
    let comb = DiracComb {
        order: 1,
        atoms: vec![
            Atom {
                point: a.advanced(t).coords().to_vec(),
                weight: half,
            },
            Atom {
                point: b.coords().to_vec(),
                weight: half,
            },
        ],
    };
    let comb_value = integrate(&comb, phi).map_err(HierarchyError::from)?;
    let mut members_per_n = vec![0; n_max];
    let mut series_value = 0.0;
    for (n, tree, s) in jobs(n_max) {
        let v = evaluate_term(&tree, &s, &config.particles, config.epsilon, t, phi, RegularizationPolicy::None)?;
        if n >= 1 {
            members_per_n[n - 1] += v.members();
        }
        series_value += v.value;
    }
    Ok(SingularDemo {
        comb,
        members_per_n,
        series_value,
        comb_value,
    })
}

/// Tensorized Gaussian one-particle density, centred at the origin, for
/// `N` spheres of diameter `epsilon` (so `lambda^{-1} = N epsilon^2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothInitialData {
    pub n_particles: usize,
    pub epsilon: f64,
    pub position_sd: f64,
    pub velocity_sd: f64,
}

impl SmoothInitialData {
    pub fn inverse_mean_free_path(&self) -> f64 {
        self.n_particles as f64 * self.epsilon * self.epsilon
    }

    pub fn density(&self, p: &ParticleState) -> f64 {
        let g = |x: Vec3, s: f64| {
            (-x.norm2() / (2.0 * s * s)).exp() / (std::f64::consts::TAU * s * s).powf(1.5)
        };
        g(p.position, self.position_sd) * g(p.velocity, self.velocity_sd)
    }

    fn velocity_pdf(&self, v: Vec3) -> f64 {
        let s = self.velocity_sd;
        (-v.norm2() / (2.0 * s * s)).exp() / (std::f64::consts::TAU * s * s).powf(1.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationProbe {
    pub point: Vec<f64>,
    pub joint: f64,
    pub product: f64,
    pub residual: f64,
    pub std_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationCheck {
    pub j: usize,
    pub t: f64,
    pub n_max: usize,
    pub samples: usize,
    pub probes: Vec<FactorizationProbe>,
    pub passed: bool,
}

const PROBES: usize = 10;
const BLOCK: usize = 1024;

/// Monte Carlo estimate (mean, standard error) of the order-`n` Enskog
/// term `g_j^{(n)}(z, t)` over `d Lambda`.
fn order_term(
    data: &SmoothInitialData,
    roots: &[ParticleState],
    t: f64,
    n: usize,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<(f64, f64), EnskogError> {
    let j = roots.len();
    let root_cfg = Configuration {
        particles: roots.to_vec(),
        epsilon: data.epsilon,
        allow_overlap: true,
    };
    if n == 0 {
        let v = roots.iter().map(|p| data.density(&p.advanced(-t))).product();
        return Ok((v, 0.0));
    }
    if t == 0.0 {
        return Ok((0.0, 0.0));
    }
    let trees = enumerate_trees(j, n);
    let signs = SignVector(vec![Sign::Plus; n]);
    let volume = t.powi(n as i32) / (1..=n).product::<usize>() as f64
        * (4.0 * std::f64::consts::PI).powi(n as i32)
        * data.inverse_mean_free_path().powi(n as i32);
    let blocks = samples.div_ceil(BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<(f64, f64), EnskogError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream.wrapping_mul(1 << 20).wrapping_add(b as u64));
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..BLOCK.min(samples - b * BLOCK) {
                let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..t)).collect();
                times.sort_by(|a, b| b.total_cmp(a));
                let mut omegas = Vec::with_capacity(n);
                let mut velocities = Vec::with_capacity(n);
                let mut pdf = 1.0;
                for _ in 0..n {
                    let w = Vec3([
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ]);
                    omegas.push(w.normalized());
                    let v = Vec3([
                        data.velocity_sd * rng.sample::<f64, _>(StandardNormal),
                        data.velocity_sd * rng.sample::<f64, _>(StandardNormal),
                        data.velocity_sd * rng.sample::<f64, _>(StandardNormal),
                    ]);
                    pdf *= data.velocity_pdf(v);
                    velocities.push(v);
                }
                let nodes = NodeVariables {
                    times,
                    omegas,
                    velocities,
                };
                let mut x = 0.0;
                for tree in &trees {
                    let r = ebf(tree, &signs, &root_cfg, &nodes, t)?;
                    let term = r.terminal.expect("the Enskog flow always terminates");
                    let kernel: f64 = r.kernel_factors.iter().product();
                    x += kernel * term.particles.iter().map(|p| data.density(p)).product::<f64>();
                }
                x *= volume / pdf;
                s1 += x;
                s2 += x * x;
            }
            Ok((s1, s2))
        })
        .collect::<Result<_, _>>()?;
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = samples as f64;
    let mean = s1 / m;
    let var = (s2 / m - mean * mean).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

/// All `(n_1, ..., n_j)` with `sum <= n_max`.
fn compositions(j: usize, n_max: usize) -> Vec<Vec<usize>> {
    if j == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 0..=n_max {
        for mut rest in compositions(j - 1, n_max - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Compares the order-truncated Enskog solution `g_j(z, t)` with the
/// order-truncated product of one-particle solutions at ten probes drawn
/// from the initial density.
pub fn ebf_factorization_check(
    data: &SmoothInitialData,
    j: usize,
    t: f64,
    n_max: usize,
    samples: usize,
    seed: u64,
) -> Result<FactorizationCheck, EnskogError> {
    if j < 2 || n_max > 2 || samples == 0 || t.is_nan() || t < 0.0 {
        return Err(EnskogError::InvalidInput(format!(
            "need j >= 2, n_max <= 2, samples > 0, t >= 0 (got j={j}, n_max={n_max}, samples={samples}, t={t})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut probes = Vec::with_capacity(PROBES);
    for probe in 0..PROBES {
        let roots: Vec<ParticleState> = (0..j)
            .map(|_| {
                let mut g = || rng.sample::<f64, _>(StandardNormal);
                ParticleState::new(
                    Vec3([g(), g(), g()]) * data.position_sd,
                    Vec3([g(), g(), g()]) * data.velocity_sd,
                )
            })
            .collect();
        let base = (probe as u64 + 1) * 64;
        let (mut joint, mut joint_var) = (0.0, 0.0);
        for n in 0..=n_max {
            let (m, se) = order_term(data, &roots, t, n, samples, seed, base + n as u64)?;
            joint += m;
            joint_var += se * se;
        }
        let mut single = Vec::with_capacity(j);
        for (i, root) in roots.iter().enumerate() {
            let mut per = Vec::with_capacity(n_max + 1);
            for n in 0..=n_max {
                per.push(order_term(
                    data,
                    std::slice::from_ref(root),
                    t,
                    n,
                    samples,
                    seed,
                    base + 8 * (i as u64 + 1) + n as u64,
                )?);
            }
            single.push(per);
        }
        let comps = compositions(j, n_max);
        let product: f64 = comps
            .iter()
            .map(|c| c.iter().enumerate().map(|(i, &n)| single[i][n].0).product::<f64>())
            .sum();
        let mut product_var = 0.0;
        for (i, per) in single.iter().enumerate() {
            for (m, &(_, se)) in per.iter().enumerate() {
                let d: f64 = comps
                    .iter()
                    .filter(|c| c[i] == m)
                    .map(|c| {
                        c.iter()
                            .enumerate()
                            .filter(|(l, _)| *l != i)
                            .map(|(l, &n)| single[l][n].0)
                            .product::<f64>()
                    })
                    .sum();
                product_var += d * d * se * se;
            }
        }
        let std_error = (joint_var + product_var).sqrt();
        let scale = joint.abs().max(product.abs());
        if scale > 0.0 && std_error / scale > 1.0 {
            return Err(EnskogError::IncreaseSamples {
                relative: std_error / scale,
            });
        }
        let residual = (joint - product).abs();
        probes.push(FactorizationProbe {
            point: roots.iter().flat_map(|p| p.coords()).collect(),
            joint,
            product,
            residual,
            std_error,
            passed: residual <= 3.0 * std_error + 1e-12 * scale.max(1e-300),
        });
    }
    Ok(FactorizationCheck {
        j,
        t,
        n_max,
        samples,
        passed: probes.iter().all(|p| p.passed),
        probes,
    })
}

/// Per-policy values of the series and the checks built on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub policy: String,
    pub value: Option<f64>,
    pub partial_sums: Vec<f64>,
    pub boundary_terms: usize,
    pub undefined_assignments: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinusHalfCheck {
    pub term: String,
    pub value: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub passed: bool,
    /// Error raised by the same term under the `none` policy.
    pub none_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub scenario_hash: String,
    pub mollifier: String,
    pub n_max: usize,
    pub target: f64,
    pub policies: Vec<PolicyValue>,
    pub minus_half: MinusHalfCheck,
    pub renormalized: Option<RenormalizedSeries>,
    pub divergence: Option<DivergenceTrace>,
}

/// The contraction tree in which particle 1 creates two particles that
/// sit on the same atom.
pub fn contraction_term() -> (Tree, SignVector) {
    (
        Tree::new(1, vec![1, 1]).expect("valid tree"),
        SignVector(vec![Sign::Plus, Sign::Minus]),
    )
}

/// Evaluates every policy on `scenario` and collects the results; policy
/// failures are recorded, not propagated.
pub fn ambiguity_report(
    scenario: &Scenario,
    phi: &Observable,
    n_max: usize,
    delta: f64,
    eta: f64,
) -> Result<AmbiguityReport, EnskogError> {
    let target = physical_value(scenario, phi)?;
    let policies = [
        RegularizationPolicy::None,
        RegularizationPolicy::Symmetric { delta },
        RegularizationPolicy::TimeSeparation { eta },
    ]
    .into_iter()
    .map(|p| match series_sums(scenario, phi, p, n_max) {
        Ok(s) => PolicyValue {
            policy: p.to_string(),
            value: Some(s.value()),
            partial_sums: s.partial_sums,
            boundary_terms: s.boundary_terms,
            undefined_assignments: s.undefined_assignments,
            error: None,
        },
        Err(e) => PolicyValue {
            policy: p.to_string(),
            value: None,
            partial_sums: Vec::new(),
            boundary_terms: 0,
            undefined_assignments: 0,
            error: Some(e.to_string()),
        },
    })
    .collect();
    let (tree, signs) = contraction_term();
    let sym = enskog_term(&tree, &signs, scenario, phi, RegularizationPolicy::Symmetric { delta })?;
    let expected = -0.5 * target;
    let relative_error = (sym.value - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
    let none_error = enskog_term(&tree, &signs, scenario, phi, RegularizationPolicy::None)
        .err()
        .map(|e| e.to_string());
    Ok(AmbiguityReport {
        scenario_hash: scenario.hash(),
        mollifier: MOLLIFIER.to_string(),
        n_max,
        target,
        policies,
        minus_half: MinusHalfCheck {
            term: sym.term_id(),
            value: sym.value,
            expected,
            relative_error,
            passed: relative_error <= 1e-3,
            none_error,
        },
        renormalized: renormalized_series(scenario, phi, eta, n_max).ok(),
        divergence: divergence_trace(scenario, phi, RegularizationPolicy::Symmetric { delta }, n_max).ok(),
    })
}

/// `n,partial_sum` rows per policy that produced a value.
pub fn partial_sums_csv(report: &AmbiguityReport) -> String {
    let mut out = String::from("policy,n,partial_sum\n");
    for p in &report.policies {
        for (n, s) in p.partial_sums.iter().enumerate() {
            out.push_str(&format!("{},{n},{s:.17e}\n", p.policy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::build_two_sphere;

    fn two_sphere() -> Scenario {
        build_two_sphere(1.0, 1.0, 0.3, 1.0).unwrap()
    }

    fn real_phi(s: &Scenario) -> Observable {
        let (fin, _) = evolve_with(&s.initial, s.horizon, &s.tolerances.dynamics()).unwrap();
        Observable::gaussian(fin.particles[0].coords().to_vec())
    }

    #[test]
    fn policy_round_trip() {
        for s in ["none", "symmetric:0.01", "time-sep:0.001"] {
            let p: RegularizationPolicy = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("symmetric:-1".parse::<RegularizationPolicy>().is_err());
        assert!("symmetric".parse::<RegularizationPolicy>().is_err());
        assert!("median:1".parse::<RegularizationPolicy>().is_err());
    }

    #[test]
    fn first_order_terms_rebuild_the_collision() {
        let s = two_sphere();
        let phi = real_phi(&s);
        let sums = series_sums(&s, &phi, RegularizationPolicy::TimeSeparation { eta: 1e-3 }, 1).unwrap();
        assert!((sums.value() - sums.target).abs() < 1e-12);
        assert_eq!(sums.contractions_admitted, 0);
    }

    #[test]
    fn contraction_term_is_on_the_boundary() {
        let s = two_sphere();
        let phi = real_phi(&s);
        let (tree, signs) = contraction_term();
        let err = enskog_term(&tree, &signs, &s, &phi, RegularizationPolicy::None).unwrap_err();
        assert!(matches!(err, EnskogError::Ambiguity { .. }));
        let sep = enskog_term(&tree, &signs, &s, &phi, RegularizationPolicy::TimeSeparation { eta: 1e-3 }).unwrap();
        assert_eq!(sep.value, 0.0);
    }

    #[test]
    fn contraction_term_symmetric_value() {
        let s = two_sphere();
        let phi = real_phi(&s);
        let target = physical_value(&s, &phi).unwrap();
        let (tree, signs) = contraction_term();
        let v = enskog_term(&tree, &signs, &s, &phi, RegularizationPolicy::Symmetric { delta: 1e-3 }).unwrap();
        assert!((v.value + 0.5 * target).abs() <= 1e-3 * target.abs(), "{} vs {}", v.value, -0.5 * target);
    }

    #[test]
    fn singular_example_is_free_transport() {
        let c = Configuration::new(
            vec![
                ParticleState::new(Vec3::ZERO, Vec3([1.0, 0.5, 0.0])),
                ParticleState::new(Vec3([0.4, 0.1, 0.0]), Vec3::ZERO),
            ],
            1.0,
            true,
        )
        .unwrap();
        let d = singular_solution_demo(&c, 2.0, &Observable::gaussian(vec![2.0, 1.0, 0.0, 1.0, 0.5, 0.0]), 3).unwrap();
        assert_eq!(d.members_per_n, vec![0, 0, 0]);
        assert_eq!(d.series_value, d.comb_value);
        assert!(singular_solution_demo(&c, 0.0, &Observable::one(), 1).is_ok());
    }

    #[test]
    fn singular_example_pattern_enforced() {
        let c = Configuration::new(
            vec![
                ParticleState::new(Vec3::ZERO, Vec3([1.0, 0.0, 0.0])),
                ParticleState::new(Vec3([3.0, 0.0, 0.0]), Vec3::ZERO),
            ],
            1.0,
            true,
        )
        .unwrap();
        assert!(matches!(
            singular_solution_demo(&c, 1.0, &Observable::one(), 1),
            Err(EnskogError::InvalidDemo(_))
        ));
    }

    #[test]
    fn symmetry_group_sizes() {
        assert_eq!(symmetry_group(3, &contraction_groups(&[0, 1, 1])).len(), 2);
        assert_eq!(symmetry_group(4, &contraction_groups(&[0, 0, 0, 1])).len(), 6);
        assert_eq!(symmetry_group(2, &contraction_groups(&[0, 1])).len(), 1);
    }

    #[test]
    fn zeroth_order_factorization_is_exact() {
        let data = SmoothInitialData {
            n_particles: 4,
            epsilon: 0.5,
            position_sd: 1.0,
            velocity_sd: 1.0,
        };
        let c = ebf_factorization_check(&data, 2, 0.7, 0, 10, 3).unwrap();
        assert!(c.probes.iter().all(|p| p.residual <= 1e-12 * p.joint.abs().max(1e-300)));
        let c0 = ebf_factorization_check(&data, 2, 0.0, 2, 10, 3).unwrap();
        assert!(c0.probes.iter().all(|p| p.residual == 0.0));
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(2, 2).len(), 6);
        assert_eq!(compositions(3, 1).len(), 4);
    }
}
