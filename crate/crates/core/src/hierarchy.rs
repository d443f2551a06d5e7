//! Weak-form BBGKY series for Dirac initial data: term ledgers, the
//! theorem check against direct evolution, composition over partitions,
//! cancellation auditing and a Monte Carlo check of the averaged identity.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{classify_with, evolve_with, ClassifyOptions, DynamicsError, DynamicsOptions, PathologyReport};
use crate::empirical::{
    falling_factorial, injections, integrate, marginal, max_abs_diff, ratio_f64, DiracComb, EmpiricalError,
    Observable, Weight,
};
use crate::flows::{iff_branches_with, FlowError};
use crate::geometry::{Configuration, GeometryError, ParticleState, Vec3};
use crate::scenarios::{verify_partition, ScenarioError};
use crate::trees::{enumerate_signs, enumerate_trees, SignVector, Tree, TreeLiteral};
use crate::SCHEMA_VERSION;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("term {term}: {source}")]
    Term { term: String, source: FlowError },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Empirical(#[from] EmpiricalError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario is not pathology-free on [0, {horizon}]")]
    Pathological {
        horizon: f64,
        report: Box<PathologyReport>,
    },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("sampler mismatch: {0}")]
    Sampler(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl HierarchyError {
    /// True when the failure comes from a degenerate trajectory.
    pub fn is_pathology(&self) -> bool {
        matches!(
            self,
            HierarchyError::Pathological { .. }
                | HierarchyError::Dynamics(DynamicsError::Pathology(_))
                | HierarchyError::Term {
                    source: FlowError::Dynamics(DynamicsError::Pathology(_)),
                    ..
                }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual allowed by the theorem check.
    pub theorem: f64,
    /// Absolute residual allowed by the semigroup composition.
    pub semigroup: f64,
    /// Endpoint matching distance used by the audit.
    pub endpoint: f64,
    pub simultaneity: f64,
    pub triple_gap: f64,
    pub event_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = DynamicsOptions::default();
        Self {
            theorem: 1e-9,
            semigroup: 1e-8,
            endpoint: 1e-8,
            simultaneity: d.simultaneity_tol,
            triple_gap: d.triple_gap_tol,
            event_cap: d.event_cap,
        }
    }
}

impl Tolerances {
    pub fn dynamics(&self) -> DynamicsOptions {
        DynamicsOptions {
            event_cap: self.event_cap,
            simultaneity_tol: self.simultaneity,
            triple_gap_tol: self.triple_gap,
            ..DynamicsOptions::default()
        }
    }

    /// Overrides one named field.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), HierarchyError> {
        let mut v = serde_json::to_value(*self).expect("tolerances serialize");
        let map = v.as_object_mut().expect("object");
        if !map.contains_key(key) {
            return Err(HierarchyError::InvalidInput(format!("unknown tolerance {key:?}")));
        }
        let num = if key == "event_cap" {
            serde_json::Value::from(value as u64)
        } else {
            serde_json::Value::from(value)
        };
        map.insert(key.to_string(), num);
        *self = serde_json::from_value(v).map_err(|e| HierarchyError::InvalidInput(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    epsilon: f64,
    horizon: f64,
    particles: Vec<ParticleState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default)]
    tolerances: Tolerances,
}

/// Initial configuration, horizon and optional partition
/// `0 = t_0 < t_1 < ... < t_{S+1} = horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    pub initial: Configuration,
    pub horizon: f64,
    pub partition: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub tolerances: Tolerances,
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = HierarchyError;

    fn try_from(f: ScenarioFile) -> Result<Self, HierarchyError> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(HierarchyError::Schema {
                found: f.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let s = Scenario {
            initial: Configuration::new(f.particles, f.epsilon, false)?,
            horizon: f.horizon,
            partition: f.partition,
            seed: f.seed,
            tolerances: f.tolerances,
        };
        if !(s.horizon >= 0.0 && s.horizon.is_finite()) {
            return Err(HierarchyError::InvalidInput(format!("bad horizon {}", s.horizon)));
        }
        Ok(s)
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            epsilon: s.initial.epsilon,
            horizon: s.horizon,
            particles: s.initial.particles,
            partition: s.partition,
            seed: s.seed,
            tolerances: s.tolerances,
        }
    }
}

impl Scenario {
    pub fn new(initial: Configuration, horizon: f64) -> Self {
        Self {
            initial,
            horizon,
            partition: None,
            seed: None,
            tolerances: Tolerances::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn from_json(s: &str) -> Result<Self, HierarchyError> {
        serde_json::from_str::<ScenarioFile>(s)
            .map_err(|e| HierarchyError::InvalidInput(e.to_string()))?
            .try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// FNV-1a hash of the canonical JSON form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        let h = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        });
        format!("{h:016x}")
    }

    /// Errors unless every subsystem is free of grazing, simultaneous and
    /// triple collisions on `[0, horizon]`.
    pub fn check_pathology_free(&self) -> Result<(), HierarchyError> {
        let report = classify_with(
            &self.initial,
            self.horizon,
            &ClassifyOptions {
                dynamics: self.tolerances.dynamics(),
                ..ClassifyOptions::default()
            },
        );
        if report.is_empty() {
            Ok(())
        } else {
            Err(HierarchyError::Pathological {
                horizon: self.horizon,
                report: Box::new(report),
            })
        }
    }
}

/// One forward branch contributing to the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub n: usize,
    pub tree: Tree,
    pub signs: SignVector,
    /// One-based particle labels assigned to slots `1..=j+n`.
    pub injection: Vec<usize>,
    pub branch: usize,
    pub choice_path: String,
    /// `prod_r sigma_r`.
    pub sign: i64,
    pub weight: Weight,
    pub phi: f64,
    pub endpoint: Vec<f64>,
}

impl LedgerRow {
    pub fn term_id(&self) -> String {
        let lit = TreeLiteral {
            tree: self.tree.clone(),
            signs: self.signs.clone(),
        };
        let labels: Vec<String> = self.injection.iter().map(|l| l.to_string()).collect();
        format!("{lit};i={};branch={}", labels.join(","), self.branch)
    }

    pub fn signed_weight(&self) -> Weight {
        self.weight * self.sign
    }

    pub fn contribution(&self) -> f64 {
        ratio_f64(self.signed_weight()) * self.phi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermLedger {
    pub j: usize,
    pub n_particles: usize,
    pub n_max: usize,
    pub horizon: f64,
    pub rows: Vec<LedgerRow>,
}

impl TermLedger {
    pub fn total(&self) -> f64 {
        self.rows.iter().map(|r| r.contribution()).sum()
    }

    pub fn per_n(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_max + 1];
        for r in &self.rows {
            out[r.n] += r.contribution();
        }
        out
    }

    pub fn rows_with_n_at_least(&self, n: usize) -> usize {
        self.rows.iter().filter(|r| r.n >= n).count()
    }

    pub fn signed_weight_sum(&self) -> Weight {
        self.rows.iter().map(|r| r.signed_weight()).sum()
    }

    /// The reconstructed order-`j` comb, one signed atom per row.
    pub fn comb(&self) -> DiracComb {
        DiracComb {
            order: self.j,
            atoms: self
                .rows
                .iter()
                .map(|r| crate::empirical::Atom {
                    point: r.endpoint.clone(),
                    weight: r.signed_weight(),
                })
                .collect(),
        }
    }
}

struct Job {
    n: usize,
    tree: Tree,
    signs: SignVector,
    injection: Vec<usize>,
}

/// Ledger of the series at time `t` for Dirac data at `config`.
pub fn bbgky_ledger(
    config: &Configuration,
    t: f64,
    j: usize,
    phi: &Observable,
    n_max: usize,
    opts: &DynamicsOptions,
) -> Result<TermLedger, HierarchyError> {
    let big_n = config.len();
    if j == 0 || j > big_n {
        return Err(EmpiricalError::InvalidOrder { order: j, n: big_n }.into());
    }
    if n_max > big_n - j {
        return Err(HierarchyError::InvalidInput(format!(
            "n_max = {n_max} exceeds N - j = {}",
            big_n - j
        )));
    }
    if let Some(o) = phi.order() {
        if o != j {
            return Err(EmpiricalError::OrderMismatch {
                comb: j,
                observable: o,
            }
            .into());
        }
    }
    let weight: Weight = Ratio::new(1, falling_factorial(big_n, j));
    let mut jobs = Vec::new();
    for n in 0..=n_max {
        let injs = injections(big_n, j + n);
        for tree in enumerate_trees(j, n) {
            for signs in enumerate_signs(n) {
                for inj in &injs {
                    jobs.push(Job {
                        n,
                        tree: tree.clone(),
                        signs: signs.clone(),
                        injection: inj.clone(),
                    });
                }
            }
        }
    }
    let per_job: Vec<Result<Vec<LedgerRow>, HierarchyError>> = jobs
        .par_iter()
        .map(|job| {
            let sub = config.subset(&job.injection);
            let term = || {
                let lit = TreeLiteral {
                    tree: job.tree.clone(),
                    signs: job.signs.clone(),
                };
                let labels: Vec<String> = job.injection.iter().map(|l| (l + 1).to_string()).collect();
                format!("{lit};i={}", labels.join(","))
            };
            let branches = iff_branches_with(&job.tree, &job.signs, &sub, t, opts)
                .map_err(|source| HierarchyError::Term { term: term(), source })?;
            Ok(branches
                .into_iter()
                .enumerate()
                .map(|(b, br)| {
                    let endpoint = br.endpoint_coords();
                    LedgerRow {
                        n: job.n,
                        tree: job.tree.clone(),
                        signs: job.signs.clone(),
                        injection: job.injection.iter().map(|l| l + 1).collect(),
                        branch: b,
                        choice_path: br.choice_string(),
                        sign: job.signs.product(),
                        weight,
                        phi: phi.eval(&endpoint),
                        endpoint,
                    }
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_job {
        rows.extend(r?);
    }
    Ok(TermLedger {
        j,
        n_particles: big_n,
        n_max,
        horizon: t,
        rows,
    })
}

/// Signed total and ledger of the series over the scenario's horizon.
pub fn bbgky_rhs(
    scenario: &Scenario,
    j: usize,
    phi: &Observable,
    n_max: usize,
) -> Result<(f64, TermLedger), HierarchyError> {
    scenario.check_pathology_free()?;
    let ledger = bbgky_ledger(
        &scenario.initial,
        scenario.horizon,
        j,
        phi,
        n_max,
        &scenario.tolerances.dynamics(),
    )?;
    Ok((ledger.total(), ledger))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `max(1, |lhs|)`.
    pub scale: f64,
    pub per_n: Vec<f64>,
    pub passed: bool,
    #[serde(skip)]
    pub ledger: Option<TermLedger>,
}

/// `int Delta_j(t) phi` read off the evolved configuration.
pub fn direct_lhs(
    config: &Configuration,
    t: f64,
    j: usize,
    phi: &Observable,
    opts: &DynamicsOptions,
) -> Result<f64, HierarchyError> {
    let (zt, _) = evolve_with(config, t, opts)?;
    Ok(integrate(&marginal(&zt, j)?, phi)?)
}

/// Compares the series with the empirical marginal of the evolved state.
pub fn verify_theorem(
    scenario: &Scenario,
    j: usize,
    phi: &Observable,
    n_max: usize,
) -> Result<TheoremCheck, HierarchyError> {
    let (rhs, ledger) = bbgky_rhs(scenario, j, phi, n_max)?;
    let lhs = direct_lhs(&scenario.initial, scenario.horizon, j, phi, &scenario.tolerances.dynamics())?;
    let scale = lhs.abs().max(1.0);
    let residual = (rhs - lhs).abs();
    Ok(TheoremCheck {
        lhs,
        rhs,
        residual,
        scale,
        per_n: ledger.per_n(),
        passed: residual <= scenario.tolerances.theorem * scale,
        ledger: Some(ledger),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCheck {
    pub start: f64,
    pub end: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Reconstructed comb equals `Delta_j(end)` as a measure.
    pub comb_matches: bool,
    pub rows: usize,
    pub rows_n_ge_2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupCheck {
    pub intervals: Vec<IntervalCheck>,
    pub composed: f64,
    pub direct: f64,
    pub residual: f64,
    pub passed: bool,
}

/// Evaluates the series interval by interval over the scenario's
/// partition, starting each interval from the simulated state at its left
/// end, and compares the result at the horizon with direct evolution.
pub fn compose_semigroup(scenario: &Scenario, j: usize, phi: &Observable) -> Result<SemigroupCheck, HierarchyError> {
    let partition = scenario
        .partition
        .as_ref()
        .ok_or_else(|| HierarchyError::InvalidPartition("scenario has no partition".into()))?;
    let opts = scenario.tolerances.dynamics();
    verify_partition(&scenario.initial, scenario.horizon, partition, &opts)
        .map_err(|e| HierarchyError::InvalidPartition(e.to_string()))?;
    scenario.check_pathology_free()?;
    let (_, log) = evolve_with(&scenario.initial, scenario.horizon, &opts)?;
    let n_max = scenario.n() - j;
    let tol = scenario.tolerances.endpoint;
    let intervals: Vec<Result<IntervalCheck, HierarchyError>> = partition
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let za = log.state_at(a);
            let zb = log.state_at(b);
            let ledger = bbgky_ledger(&za, b - a, j, phi, n_max, &opts)?;
            let truth = marginal(&zb, j)?;
            let lhs = integrate(&truth, phi)?;
            let rhs = ledger.total();
            Ok(IntervalCheck {
                start: a,
                end: b,
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
                comb_matches: ledger.comb().same_measure(&truth, tol),
                rows: ledger.rows.len(),
                rows_n_ge_2: ledger.rows_with_n_at_least(2),
            })
        })
        .collect();
    let intervals = intervals.into_iter().collect::<Result<Vec<_>, _>>()?;
    let composed = intervals.last().map(|c| c.rhs).unwrap_or(0.0);
    let direct = integrate(&marginal(&log.state_at(scenario.horizon), j)?, phi)?;
    let residual = intervals
        .iter()
        .map(|c| c.residual)
        .fold((composed - direct).abs(), f64::max);
    let passed = residual <= scenario.tolerances.semigroup && intervals.iter().all(|c| c.comb_matches);
    Ok(SemigroupCheck {
        intervals,
        composed,
        direct,
        residual,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub negative: String,
    pub positive: String,
    pub endpoint: Vec<f64>,
    /// The positive row is a higher-order branch of the same tree with a
    /// different sign vector: a virtual trajectory compensated inside the
    /// expansion rather than by the free-flow term.
    pub compensates_virtual_branch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub clean: bool,
    pub pairings: Vec<Pairing>,
    /// Surviving positive rows whose endpoint is an atom of `Delta_j(t)`.
    pub real: Vec<String>,
    pub failures: Vec<String>,
}

impl AuditReport {
    pub fn virtual_pairings(&self) -> impl Iterator<Item = &Pairing> {
        self.pairings.iter().filter(|p| p.compensates_virtual_branch)
    }
}

/// Matches negative rows with positive rows at the same endpoint and
/// checks that each endpoint cluster carries the weight of `Delta_j(t)`.
pub fn cancellation_audit(ledger: &TermLedger, lhs_comb: &DiracComb, tol: f64) -> AuditReport {
    let rows = &ledger.rows;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|c| max_abs_diff(&rows[c[0]].endpoint, &r.endpoint) <= tol)
        {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    let mut pairings = Vec::new();
    let mut real = Vec::new();
    let mut failures = Vec::new();
    let mut atom_used = vec![false; lhs_comb.atoms.len()];
    for c in &clusters {
        let rep = &rows[c[0]].endpoint;
        let mut used = vec![false; c.len()];
        for (a, &ni) in c.iter().enumerate() {
            let neg = &rows[ni];
            if neg.sign > 0 {
                continue;
            }
            let candidates: Vec<usize> = (0..c.len())
                .filter(|&b| !used[b] && rows[c[b]].sign > 0 && rows[c[b]].weight == neg.weight)
                .collect();
            let rank = |b: &usize| {
                let p = &rows[c[*b]];
                match (p.tree == neg.tree, p.injection == neg.injection, p.n == 0) {
                    (true, true, _) => 0,
                    (true, false, _) => 1,
                    (_, _, true) => 2,
                    _ => 3,
                }
            };
            match candidates.iter().min_by_key(|b| (rank(b), **b)) {
                Some(&b) => {
                    used[a] = true;
                    used[b] = true;
                    let pos = &rows[c[b]];
                    pairings.push(Pairing {
                        negative: neg.term_id(),
                        positive: pos.term_id(),
                        endpoint: neg.endpoint.clone(),
                        compensates_virtual_branch: pos.n >= 2 && pos.tree == neg.tree && pos.signs != neg.signs,
                    });
                }
                None => failures.push(format!("unmatched negative row {}", neg.term_id())),
            }
        }
        let net: Weight = c.iter().map(|&i| rows[i].signed_weight()).sum();
        let mut atom_weight = Weight::from_integer(0);
        for (k, atom) in lhs_comb.atoms.iter().enumerate() {
            if !atom_used[k] && max_abs_diff(&atom.point, rep) <= tol {
                atom_used[k] = true;
                atom_weight += atom.weight;
            }
        }
        if net != atom_weight {
            failures.push(format!(
                "endpoint cluster of {} carries weight {net}, expected {atom_weight}",
                rows[c[0]].term_id()
            ));
        }
        for (b, &i) in c.iter().enumerate() {
            if !used[b] && rows[i].sign > 0 {
                if atom_weight != Weight::from_integer(0) {
                    real.push(rows[i].term_id());
                } else {
                    failures.push(format!("unmatched positive row {}", rows[i].term_id()));
                }
            }
        }
    }
    for (k, atom) in lhs_comb.atoms.iter().enumerate() {
        if !atom_used[k] {
            failures.push(format!("atom at {:?} with weight {} is not reconstructed", atom.point, atom.weight));
        }
    }
    AuditReport {
        clean: failures.is_empty(),
        pairings,
        real,
        failures,
    }
}

/// Independent Gaussian positions and velocities, rejected on overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSampler {
    pub n: usize,
    pub epsilon: f64,
    pub position_sd: f64,
    pub velocity_sd: f64,
}

impl GaussianSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<ParticleState> {
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        (0..self.n)
            .map(|_| {
                let x = Vec3([g(), g(), g()]) * self.position_sd;
                let v = Vec3([g(), g(), g()]) * self.velocity_sd;
                ParticleState::new(x, v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub samples: usize,
    pub rejected: usize,
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Mean and standard error of the paired difference `lhs - rhs`.
    pub diff_mean: f64,
    pub diff_se: f64,
    pub threshold: f64,
    pub agrees: bool,
}

/// Absolute floor added to the 3-sigma band: the paired difference is
/// zero per sample up to rounding, so its standard error can vanish.
pub const MC_ROUNDING_FLOOR: f64 = 1e-12;

const MAX_ATTEMPTS_PER_SAMPLE: usize = 1000;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Monte Carlo means of both sides of the averaged identity over samples
/// of the initial configuration.
pub fn corollary_mc(
    sampler: &GaussianSampler,
    j: usize,
    phi: &Observable,
    t: f64,
    n_max: usize,
    samples: usize,
    seed: u64,
) -> Result<McResult, HierarchyError> {
    if samples < 2 {
        return Err(HierarchyError::InvalidInput("need at least two samples".into()));
    }
    let opts = DynamicsOptions::default();
    let classify_opts = ClassifyOptions::default();
    let per: Vec<Result<(f64, f64, usize), HierarchyError>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rejected = 0;
            for _ in 0..MAX_ATTEMPTS_PER_SAMPLE {
                let parts = sampler.draw(&mut rng);
                let Ok(config) = Configuration::new(parts, sampler.epsilon, false) else {
                    rejected += 1;
                    continue;
                };
                if !classify_with(&config, t, &classify_opts).is_empty() {
                    rejected += 1;
                    continue;
                }
                let lhs = direct_lhs(&config, t, j, phi, &opts)?;
                let rhs = match bbgky_ledger(&config, t, j, phi, n_max, &opts) {
                    Ok(l) => l.total(),
                    Err(e) if e.is_pathology() => {
                        rejected += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                return Ok((lhs, rhs, rejected));
            }
            Err(HierarchyError::Sampler(format!(
                "sample {i} rejected {MAX_ATTEMPTS_PER_SAMPLE} times"
            )))
        })
        .collect();
    let mut lhs = Vec::with_capacity(samples);
    let mut rhs = Vec::with_capacity(samples);
    let mut rejected = 0;
    for r in per {
        let (l, r, k) = r?;
        lhs.push(l);
        rhs.push(r);
        rejected += k;
    }
    if rejected > samples {
        return Err(HierarchyError::Sampler(format!(
            "rejection rate {:.3} exceeds 50%",
            rejected as f64 / (rejected + samples) as f64
        )));
    }
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let (lhs_mean, lhs_se) = mean_se(&lhs);
    let (rhs_mean, rhs_se) = mean_se(&rhs);
    let (diff_mean, diff_se) = mean_se(&diff);
    let threshold = 3.0 * diff_se + MC_ROUNDING_FLOOR;
    Ok(McResult {
        samples,
        rejected,
        lhs_mean,
        rhs_mean,
        lhs_se,
        rhs_se,
        diff_mean,
        diff_se,
        threshold,
        agrees: diff_mean.abs() <= threshold,
    })
}

/// `count` Gaussian packets of order `j` centred near the atoms of
/// `Delta_j(horizon)`, each shifted along the first position axis so that
/// no two coincide.
pub fn probe_observables(scenario: &Scenario, j: usize, count: usize) -> Result<Vec<Observable>, HierarchyError> {
    let n = scenario.n();
    if j == 0 || j > n {
        return Err(HierarchyError::InvalidInput(format!("need 1 <= j <= {n}, got {j}")));
    }
    let (zt, _) = evolve_with(&scenario.initial, scenario.horizon, &scenario.tolerances.dynamics())?;
    Ok((0..count)
        .map(|k| {
            let mut center: Vec<f64> = (0..j)
                .flat_map(|s| zt.particles[(k + s) % n].coords())
                .collect();
            center[0] += 0.03 * k as f64;
            Observable::gaussian(center)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub observable: Observable,
    pub theorem: TheoremCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semigroup: Option<SemigroupCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub scenario: Scenario,
    pub j: usize,
    pub n_max: usize,
    pub observables: Vec<ObservableReport>,
    pub signed_weight_sum: Weight,
    pub rows_n_ge_2: usize,
    pub audit: AuditReport,
    pub ledger_rows: usize,
    /// Omitted when the ledger exceeds the size cap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger: Option<Vec<LedgerRow>>,
    pub passed: bool,
}

/// Theorem check for every observable, semigroup composition when the
/// scenario has a partition, and the cancellation audit.
pub fn verification_report(
    scenario: &Scenario,
    j: usize,
    n_max: usize,
    phis: &[Observable],
    ledger_cap: usize,
) -> Result<VerificationReport, HierarchyError> {
    let mut observables = Vec::new();
    let mut ledger = None;
    for phi in phis {
        let mut theorem = verify_theorem(scenario, j, phi, n_max)?;
        let l = theorem.ledger.take().expect("ledger present");
        ledger.get_or_insert(l);
        let semigroup = match scenario.partition {
            Some(_) => Some(compose_semigroup(scenario, j, phi)?),
            None => None,
        };
        observables.push(ObservableReport {
            observable: phi.clone(),
            theorem,
            semigroup,
        });
    }
    let ledger = match ledger {
        Some(l) => l,
        None => bbgky_rhs(scenario, j, &Observable::one(), n_max)?.1,
    };
    let (zt, _) = evolve_with(&scenario.initial, scenario.horizon, &scenario.tolerances.dynamics())?;
    let audit = cancellation_audit(&ledger, &marginal(&zt, j)?, scenario.tolerances.endpoint);
    let passed = audit.clean
        && observables.iter().all(|o| {
            o.theorem.passed && o.semigroup.as_ref().is_none_or(|s| s.passed)
        });
    Ok(VerificationReport {
        schema_version: SCHEMA_VERSION,
        scenario_hash: scenario.hash(),
        scenario: scenario.clone(),
        j,
        n_max,
        observables,
        signed_weight_sum: ledger.signed_weight_sum(),
        rows_n_ge_2: ledger.rows_with_n_at_least(2),
        audit,
        ledger_rows: ledger.rows.len(),
        ledger: (ledger.rows.len() <= ledger_cap).then_some(ledger.rows),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn p(x: [f64; 3], v: [f64; 3]) -> ParticleState {
        ParticleState::new(Vec3(x), Vec3(v))
    }

    fn head_on() -> Scenario {
        let c = Configuration::new(
            vec![p([0.0; 3], [0.5, 0.0, 0.0]), p([3.0, 0.2, 0.0], [-0.5, 0.0, 0.0])],
            1.0,
            false,
        )
        .unwrap();
        Scenario::new(c, 4.0)
    }

    #[test]
    fn two_sphere_series_terms() {
        let s = head_on();
        let (_, ledger) = bbgky_rhs(&s, 1, &Observable::one(), 1).unwrap();
        // n = 0: two rows; n = 1: each sign reaches both injections
        assert_eq!(ledger.rows.iter().filter(|r| r.n == 0).count(), 2);
        assert_eq!(ledger.rows.iter().filter(|r| r.n == 1).count(), 4);
        assert_eq!(ledger.signed_weight_sum(), Weight::from_integer(1));
    }

    #[test]
    fn free_flight_has_no_higher_rows() {
        let c = Configuration::new(
            vec![p([0.0; 3], [-1.0, 0.0, 0.0]), p([3.0, 0.0, 0.0], [1.0, 0.0, 0.0])],
            1.0,
            false,
        )
        .unwrap();
        let s = Scenario::new(c, 2.0);
        let (_, ledger) = bbgky_rhs(&s, 1, &Observable::one(), 1).unwrap();
        assert_eq!(ledger.rows_with_n_at_least(1), 0);
    }

    #[test]
    fn zero_horizon_is_identity() {
        let mut s = head_on();
        s.horizon = 0.0;
        let phi = Observable::gaussian(vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        let c = verify_theorem(&s, 1, &phi, 1).unwrap();
        assert!(c.residual < 1e-15);
        assert_eq!(c.per_n[1], 0.0);
    }

    #[test]
    fn audit_pairs_minus_rows_with_free_rows() {
        let s = head_on();
        let (_, ledger) = bbgky_rhs(&s, 1, &Observable::one(), 1).unwrap();
        let (zt, _) = evolve_with(&s.initial, s.horizon, &DynamicsOptions::default()).unwrap();
        let audit = cancellation_audit(&ledger, &marginal(&zt, 1).unwrap(), 1e-8);
        assert!(audit.clean, "{:?}", audit.failures);
        assert_eq!(audit.pairings.len(), 2);
        assert!(audit.pairings.iter().all(|p| p.positive.contains("k=;")));
        assert_eq!(audit.real.len(), 2);
    }

    #[test]
    fn scenario_json_round_trip_and_schema_check() {
        let s = head_on();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let bad = s.to_json().replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(Scenario::from_json(&bad), Err(HierarchyError::Schema { .. })));
    }

    #[test]
    fn tolerance_override() {
        let mut t = Tolerances::default();
        t.set("theorem", 1e-6).unwrap();
        assert_eq!(t.theorem, 1e-6);
        assert!(t.set("nonsense", 1.0).is_err());
    }
}
