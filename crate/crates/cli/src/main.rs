use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hs_hierarchy::dynamics::{classify_with, evolve_with, ClassifyOptions, DynamicsError};
use hs_hierarchy::enskog::{ambiguity_report, partial_sums_csv, EnskogError, RegularizationPolicy};
use hs_hierarchy::flows::jacobian_study;
use hs_hierarchy::hierarchy::{
    bbgky_rhs, cancellation_audit, probe_observables, verification_report, HierarchyError, Scenario,
};
use hs_hierarchy::empirical::marginal;
use hs_hierarchy::scenarios::{
    build_partition, build_two_sphere, build_two_sphere_with_spectator, search_collision_sequence,
    verify_partition, CollisionSequenceTarget, ScenarioError, SearchOptions,
};
use hs_hierarchy::trees::Sign;
use hs_hierarchy::SCHEMA_VERSION;
use serde::Serialize;

const GOLDEN: &str = include_str!("../../core/golden/three_sphere.json");

/// Symmetric mollifier width used when `--policy` does not set one.
const DEFAULT_DELTA: f64 = 1e-4;
/// Time-separation cutoff, as a fraction of the horizon, used when
/// `--policy` does not set one.
const DEFAULT_ETA_FRACTION: f64 = 1e-3;
const LEDGER_CAP: usize = 10_000;

#[derive(Parser)]
#[command(name = "hsh", version, about = "Hard-sphere hierarchy verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a scenario; writes trajectory.csv and events.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Uniform time samples in the trajectory CSV, besides event times.
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
    /// Check the series against direct evolution; writes verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Number of Gaussian probe observables.
        #[arg(long, default_value_t = 5)]
        observables: usize,
        /// Test mode: flip one sign vector in the ledger before the audit.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Enskog series under each policy; writes enskog.json and partial_sums.csv.
    Enskog {
        #[command(flatten)]
        common: Common,
    },
    /// Search for a configuration with a given collision history; writes scenario.json.
    Search {
        #[command(flatten)]
        common: Common,
        /// Ordered one-based pairs, e.g. `2-3,1-2`.
        #[arg(long)]
        target: String,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Build and check a one-collision-per-interval partition; writes partition.json.
    Partition {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference Jacobian checks of the backward flow; writes jacobian.json.
    Jacobian {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Comma-separated creation counts to cycle through.
        #[arg(long, default_value = "1,2")]
        orders: String,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file, or `builtin:two-sphere`, `builtin:spectator`, `builtin:golden`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 1)]
    j: usize,
    #[arg(long)]
    n_max: Option<usize>,
    /// `none`, `symmetric:DELTA` or `time-sep:ETA`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Tolerance override `KEY=VAL`; repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    tol_override: Vec<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Verification(String),
    Pathology(anyhow::Error),
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 2,
            Failure::Pathology(_) => 3,
            Failure::Config(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

fn config<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

impl From<HierarchyError> for Failure {
    fn from(e: HierarchyError) -> Self {
        match e {
            e if e.is_pathology() => Failure::Pathology(e.into()),
            e @ (HierarchyError::Schema { .. } | HierarchyError::InvalidInput(_)) => Failure::Config(e.into()),
            e => Failure::Other(e.into()),
        }
    }
}

impl From<EnskogError> for Failure {
    fn from(e: EnskogError) -> Self {
        match e {
            EnskogError::Hierarchy(h) => h.into(),
            e @ (EnskogError::InvalidPolicy(_) | EnskogError::InvalidInput(_)) => Failure::Config(e.into()),
            e => Failure::Other(e.into()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Dynamics(DynamicsError::Pathology(_)) => Failure::Pathology(e.into()),
            ScenarioError::Invalid(_) | ScenarioError::Geometry(_) => Failure::Config(e.into()),
            e => Failure::Other(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

/// Resolved run configuration embedded in every report.
#[derive(Serialize)]
struct RunConfig {
    schema_version: u32,
    command: &'static str,
    scenario: Option<String>,
    j: usize,
    n_max: Option<usize>,
    policy: Option<String>,
    seed: u64,
    tolerance_overrides: Vec<(String, f64)>,
    /// The scenario after overrides, so a report can be rerun on its own.
    #[serde(skip_serializing_if = "Option::is_none")]
    resolved_scenario: Option<Scenario>,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, f64)>, Failure> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| config(anyhow::anyhow!("tolerance override {kv:?} is not KEY=VAL")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| config(anyhow::anyhow!("tolerance override {kv:?} has a non-numeric value")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn load_scenario(spec: Option<&str>, overrides: &[(String, f64)]) -> Result<Scenario, Failure> {
    let spec = spec.ok_or_else(|| config(anyhow::anyhow!("--scenario is required")))?;
    let mut s = match spec {
        "builtin:two-sphere" => build_two_sphere(1.0, 1.0, 0.3, 1.0)?,
        "builtin:spectator" => build_two_sphere_with_spectator(1.0, 1.0, 0.3, 1.0)?,
        "builtin:golden" => Scenario::from_json(GOLDEN)?,
        path => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading scenario {path}"))
                .map_err(Failure::Config)?;
            Scenario::from_json(&text)?
        }
    };
    for (k, v) in overrides {
        s.tolerances.set(k, *v)?;
    }
    Ok(s)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Other(e.into()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn resolve(common: &Common, command: &'static str) -> Result<(RunConfig, Vec<(String, f64)>), Failure> {
    let overrides = parse_overrides(&common.tol_override)?;
    fs::create_dir_all(&common.out)?;
    let rc = RunConfig {
        schema_version: SCHEMA_VERSION,
        command,
        scenario: common.scenario.clone(),
        j: common.j,
        n_max: common.n_max,
        policy: common.policy.clone(),
        seed: common.seed,
        tolerance_overrides: overrides.clone(),
        resolved_scenario: None,
    };
    Ok((rc, overrides))
}

#[derive(Serialize)]
struct SimulateBody<'a> {
    scenario_hash: String,
    horizon: f64,
    events: &'a [hs_hierarchy::dynamics::CollisionEvent],
}

#[derive(Serialize)]
struct PathologyBody<'a> {
    scenario_hash: String,
    horizon: f64,
    pathology: &'a hs_hierarchy::dynamics::PathologyReport,
}

fn cmd_simulate(common: &Common, grid: usize) -> Result<(), Failure> {
    let (mut rc, overrides) = resolve(common, "simulate")?;
    let s = load_scenario(common.scenario.as_deref(), &overrides)?;
    rc.resolved_scenario = Some(s.clone());
    let opts = s.tolerances.dynamics();
    let report = classify_with(
        &s.initial,
        s.horizon,
        &ClassifyOptions {
            dynamics: opts,
            ..ClassifyOptions::default()
        },
    );
    if !report.is_empty() {
        let body = PathologyBody {
            scenario_hash: s.hash(),
            horizon: s.horizon,
            pathology: &report,
        };
        write_json(&common.out, "pathology.json", &Report { config: &rc, body })?;
        return Err(Failure::Pathology(anyhow::anyhow!(
            "scenario is pathological on [0, {}]; see pathology.json",
            s.horizon
        )));
    }
    let (_, log) = evolve_with(&s.initial, s.horizon, &opts).map_err(|e| match e {
        DynamicsError::Pathology(_) => Failure::Pathology(e.into()),
        e => Failure::Other(e.into()),
    })?;
    fs::write(common.out.join("trajectory.csv"), log.to_csv(grid))?;
    let body = SimulateBody {
        scenario_hash: s.hash(),
        horizon: s.horizon,
        events: &log.events,
    };
    write_json(&common.out, "events.json", &Report { config: &rc, body })?;
    println!("{} events", log.events.len());
    Ok(())
}

fn cmd_verify(common: &Common, count: usize, inject_fault: bool) -> Result<(), Failure> {
    let (mut rc, overrides) = resolve(common, "verify")?;
    let s = load_scenario(common.scenario.as_deref(), &overrides)?;
    rc.resolved_scenario = Some(s.clone());
    let j = common.j;
    if j == 0 || j > s.n() {
        return Err(config(anyhow::anyhow!("--j must lie in 1..={}", s.n())));
    }
    let n_max = common.n_max.unwrap_or(s.n() - j);
    let phis = probe_observables(&s, j, count)?;
    let mut report = verification_report(&s, j, n_max, &phis, LEDGER_CAP)?;
    if inject_fault {
        let (_, mut ledger) = bbgky_rhs(&s, j, &phis[0], n_max)?;
        let row = ledger
            .rows
            .iter_mut()
            .find(|r| r.n >= 1)
            .ok_or_else(|| config(anyhow::anyhow!("fault injection needs a ledger row with n >= 1")))?;
        row.signs.0[0] = match row.signs.0[0] {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        };
        row.sign = -row.sign;
        let (zt, _) = evolve_with(&s.initial, s.horizon, &s.tolerances.dynamics()).map_err(HierarchyError::from)?;
        let truth = marginal(&zt, j).map_err(HierarchyError::from)?;
        report.audit = cancellation_audit(&ledger, &truth, s.tolerances.endpoint);
        report.signed_weight_sum = ledger.signed_weight_sum();
        report.ledger = (ledger.rows.len() <= LEDGER_CAP).then_some(ledger.rows);
        report.passed &= report.audit.clean;
    }
    let passed = report.passed;
    let clean = report.audit.clean;
    write_json(&common.out, "verify.json", &Report { config: &rc, body: report })?;
    if passed {
        println!("verification passed");
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "verification failed (audit {}); see verify.json",
            if clean { "clean" } else { "failed" }
        )))
    }
}

fn cmd_enskog(common: &Common) -> Result<(), Failure> {
    let (mut rc, overrides) = resolve(common, "enskog")?;
    let s = load_scenario(common.scenario.as_deref(), &overrides)?;
    rc.resolved_scenario = Some(s.clone());
    let mut delta = DEFAULT_DELTA;
    let mut eta = DEFAULT_ETA_FRACTION * s.horizon;
    if let Some(p) = &common.policy {
        match p.parse::<RegularizationPolicy>()? {
            RegularizationPolicy::None => {}
            RegularizationPolicy::Symmetric { delta: d } => delta = d,
            RegularizationPolicy::TimeSeparation { eta: e } => eta = e,
        }
    }
    let n_max = common.n_max.unwrap_or(2);
    let phi = probe_observables(&s, 1, 1)?.remove(0);
    let report = ambiguity_report(&s, &phi, n_max, delta, eta)?;
    fs::write(common.out.join("partial_sums.csv"), partial_sums_csv(&report))?;
    let passed = report.minus_half.passed;
    for p in &report.policies {
        match (&p.value, &p.error) {
            (Some(v), _) => println!("{}: {v:.12e}", p.policy),
            (None, Some(e)) => println!("{}: error: {e}", p.policy),
            _ => {}
        }
    }
    write_json(&common.out, "enskog.json", &Report { config: &rc, body: report })?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("symmetric contraction value misses -1/2; see enskog.json".into()))
    }
}

fn cmd_search(common: &Common, target: &str, budget: Option<usize>) -> Result<(), Failure> {
    let (_, _) = resolve(common, "search")?;
    let target = CollisionSequenceTarget::parse(target)?;
    let mut opts = SearchOptions::default();
    if let Some(b) = budget {
        opts.budget = b;
    }
    let s = match search_collision_sequence(&target, common.seed, &opts) {
        Ok(s) => s,
        Err(e @ ScenarioError::NotFound { .. }) => return Err(Failure::Verification(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    fs::write(common.out.join("scenario.json"), s.to_json() + "\n")?;
    println!("found scenario {}", s.hash());
    Ok(())
}

#[derive(Serialize)]
struct PartitionBody {
    scenario_hash: String,
    horizon: f64,
    partition: Vec<f64>,
    verified: bool,
}

fn cmd_partition(common: &Common) -> Result<(), Failure> {
    let (mut rc, overrides) = resolve(common, "partition")?;
    let s = load_scenario(common.scenario.as_deref(), &overrides)?;
    rc.resolved_scenario = Some(s.clone());
    s.check_pathology_free()?;
    let partition = match build_partition(&s) {
        Ok(p) => p,
        Err(e @ ScenarioError::Partition(_)) => return Err(Failure::Verification(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let verified = verify_partition(&s.initial, s.horizon, &partition, &s.tolerances.dynamics()).is_ok();
    let body = PartitionBody {
        scenario_hash: s.hash(),
        horizon: s.horizon,
        partition,
        verified,
    };
    write_json(&common.out, "partition.json", &Report { config: &rc, body })?;
    if verified {
        Ok(())
    } else {
        Err(Failure::Verification("partition failed verification".into()))
    }
}

#[derive(Serialize)]
struct JacobianBody {
    tolerances: Vec<(usize, f64)>,
    max_residual: Vec<(usize, f64)>,
    passed: bool,
    study: hs_hierarchy::flows::JacobianStudy,
}

fn cmd_jacobian(common: &Common, count: usize, orders: &str, epsilon: f64, time: f64) -> Result<(), Failure> {
    let (rc, overrides) = resolve(common, "jacobian")?;
    let orders: Vec<usize> = orders
        .split(',')
        .map(|o| o.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| config(anyhow::anyhow!("bad --orders: {e}")))?;
    if orders.contains(&0) {
        return Err(config(anyhow::anyhow!("--orders entries must be positive")));
    }
    let mut fd_step = 1e-6;
    let mut tol_n1 = 1e-5;
    let mut tol_higher = 1e-4;
    for (k, v) in &overrides {
        match k.as_str() {
            "fd_step" => fd_step = *v,
            "jacobian_n1" => tol_n1 = *v,
            "jacobian_higher" => tol_higher = *v,
            _ => return Err(config(anyhow::anyhow!("unknown jacobian tolerance {k:?}"))),
        }
    }
    let study = jacobian_study(&orders, count, epsilon, time, fd_step, common.seed)
        .map_err(|e| Failure::Other(e.into()))?;
    let mut uniq = orders.clone();
    uniq.sort_unstable();
    uniq.dedup();
    let tolerances: Vec<(usize, f64)> = uniq
        .iter()
        .map(|&n| (n, if n == 1 { tol_n1 } else { tol_higher }))
        .collect();
    let max_residual: Vec<(usize, f64)> = uniq.iter().map(|&n| (n, study.max_residual(n))).collect();
    let passed = max_residual.iter().zip(&tolerances).all(|((_, r), (_, t))| r <= t);
    for (n, r) in &max_residual {
        println!("n={n}: max relative residual {r:.3e}");
    }
    let body = JacobianBody {
        tolerances,
        max_residual,
        passed,
        study,
    };
    write_json(&common.out, "jacobian.json", &Report { config: &rc, body })?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("Jacobian residual above tolerance; see jacobian.json".into()))
    }
}

fn init_workers() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("HSH_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config(anyhow::anyhow!("HSH_WORKERS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_workers()?;
    match &cli.command {
        Command::Simulate { common, grid } => cmd_simulate(common, *grid),
        Command::Verify {
            common,
            observables,
            inject_fault,
        } => cmd_verify(common, *observables, *inject_fault),
        Command::Enskog { common } => cmd_enskog(common),
        Command::Search { common, target, budget } => cmd_search(common, target, *budget),
        Command::Partition { common } => cmd_partition(common),
        Command::Jacobian {
            common,
            count,
            orders,
            epsilon,
            time,
        } => cmd_jacobian(common, *count, orders, *epsilon, *time),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verification(m) => eprintln!("error: {m}"),
                Failure::Pathology(e) | Failure::Config(e) | Failure::Other(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse() {
        let o = parse_overrides(&["theorem=1e-6".into(), " endpoint = 2e-8".into()]).unwrap();
        assert_eq!(o, vec![("theorem".to_string(), 1e-6), ("endpoint".to_string(), 2e-8)]);
        assert_eq!(parse_overrides(&["theorem".into()]).unwrap_err().code(), 4);
        assert_eq!(parse_overrides(&["theorem=x".into()]).unwrap_err().code(), 4);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        let schema = HierarchyError::Schema { found: 2, expected: 1 };
        assert_eq!(Failure::from(schema).code(), 4);
        let patho = HierarchyError::Dynamics(DynamicsError::pathology(Default::default()));
        assert_eq!(Failure::from(patho).code(), 3);
        let amb = EnskogError::Ambiguity { term: "t".into() };
        assert_eq!(Failure::from(amb).code(), 1);
    }

    #[test]
    fn builtin_scenarios_load() {
        for s in ["builtin:two-sphere", "builtin:spectator", "builtin:golden"] {
            load_scenario(Some(s), &[]).unwrap();
        }
        assert_eq!(load_scenario(None, &[]).unwrap_err().code(), 4);
    }
}
