//! The `coalgebra` command line: `verify`, `simulate` and `expand`.
//!
//! Settings come from an optional JSON config file; flags override it. All
//! settings are validated up front and every problem is reported together.
//! Exit codes: 0 success, 1 failed check or runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bracket_engine::{PhasePoint, SpinChainState};
use crate::dynamics::{
    check_step_size, integrate, spin_flow, IntegratorConfig, Method, Trajectory,
};
use crate::error::{Error, Result};
use crate::systems::{build_system, first_order_term, Fault, Observable, PotentialSpec, SystemSpec};
use crate::verify::{run_suites, SamplingPlan, Suite, VerificationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Worker-count override; 0 means one worker per core.
pub const THREADS_ENV: &str = "COALGEBRA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "coalgebra", version, about = "Integrable chains from sl(2,R) Poisson coalgebras")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run certification suites and write a JSON report.
    Verify(RunArgs),
    /// Integrate a trajectory and write a CSV plus a drift summary.
    Simulate(RunArgs),
    /// Tabulate the first-order coefficient of the two-site Hamiltonian.
    Expand(RunArgs),
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub z: Option<f64>,
    /// harmonic:<omega> | quartic | poly:<c0,c1,...> | none
    #[arg(long)]
    pub potential: Option<String>,
    /// canonical | spin
    #[arg(long)]
    pub realization: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling box half-width.
    #[arg(long)]
    pub range: Option<f64>,
    /// Fixed tolerance replacing the default formula.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Suites to run (repeatable); default: all that apply.
    #[arg(long = "suite")]
    pub suites: Vec<String>,
    /// undeformed-casimir
    #[arg(long)]
    pub inject_fault: Option<String>,
    /// Deformations tabulated by `expand`, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z_values: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// midpoint | rk4
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub newton_tol: Option<f64>,
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Initial positions, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q: Option<Vec<f64>>,
    /// Initial momenta, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,
    /// Initial spins `sm,sp,s3` per site, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sites: Option<Vec<f64>>,
    /// JSON report path (`verify`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// CSV output path (`simulate`, `expand`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drift summary path (`simulate`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Contents of a config file; every field optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: Option<usize>,
    pub z: Option<f64>,
    pub potential: Option<String>,
    pub realization: Option<String>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub range: Option<f64>,
    pub tolerance: Option<f64>,
    pub suites: Option<Vec<String>>,
    pub inject_fault: Option<String>,
    pub z_values: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub method: Option<String>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub record_every: Option<usize>,
    pub q: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub sites: Option<Vec<f64>>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Flags win over file values.
    pub fn merged(self, a: RunArgs) -> Self {
        Self {
            n: a.n.or(self.n),
            z: a.z.or(self.z),
            potential: a.potential.or(self.potential),
            realization: a.realization.or(self.realization),
            samples: a.samples.or(self.samples),
            seed: a.seed.or(self.seed),
            range: a.range.or(self.range),
            tolerance: a.tolerance.or(self.tolerance),
            suites: if a.suites.is_empty() { self.suites } else { Some(a.suites) },
            inject_fault: a.inject_fault.or(self.inject_fault),
            z_values: a.z_values.or(self.z_values),
            dt: a.dt.or(self.dt),
            steps: a.steps.or(self.steps),
            method: a.method.or(self.method),
            newton_tol: a.newton_tol.or(self.newton_tol),
            newton_max_iter: a.newton_max_iter.or(self.newton_max_iter),
            record_every: a.record_every.or(self.record_every),
            q: a.q.or(self.q),
            p: a.p.or(self.p),
            sites: a.sites.or(self.sites),
            report: a.report.or(self.report),
            out: a.out.or(self.out),
            summary: a.summary.or(self.summary),
        }
    }
}

/// Collects validation problems so they can be reported together.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn take<T>(&mut self, r: Result<T>) -> Option<T> {
        r.map_err(|e| self.0.push(e.to_string())).ok()
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    fn finish(self) -> std::result::Result<(), Vec<String>> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(self.0)
        }
    }
}

fn parse_spec(cfg: &RunConfig, problems: &mut Problems) -> Option<SystemSpec> {
    let n = cfg.n.unwrap_or(2);
    let z = cfg.z.unwrap_or(0.0);
    let potential = problems.take(
        cfg.potential
            .as_deref()
            .unwrap_or("harmonic:1")
            .parse::<PotentialSpec>(),
    );
    let spin = match cfg.realization.as_deref().unwrap_or("canonical") {
        "canonical" => Some(false),
        "spin" => Some(true),
        other => {
            problems.push(format!("unknown realization {other:?}, expected canonical or spin"));
            None
        }
    };
    problems.take(SystemSpec::new(n, z, potential?, spin?))
}

fn parse_plan(cfg: &RunConfig, problems: &mut Problems) -> SamplingPlan {
    let mut plan = SamplingPlan::new(cfg.seed.unwrap_or(0), cfg.samples.unwrap_or(100));
    if let Some(range) = cfg.range {
        if range.is_finite() && range > 0.0 {
            plan.range = range;
        } else {
            problems.push(format!("range must be positive, got {range}"));
        }
    }
    if let Some(tol) = cfg.tolerance {
        if tol.is_finite() && tol > 0.0 {
            plan.tolerance = Some(tol);
        } else {
            problems.push(format!("tolerance must be positive, got {tol}"));
        }
    }
    if plan.count == 0 {
        problems.push("samples must be at least 1");
    }
    plan
}

fn parse_fault(cfg: &RunConfig, problems: &mut Problems) -> Option<Fault> {
    match cfg.inject_fault.as_deref() {
        None => None,
        Some("undeformed-casimir") => Some(Fault::UndeformedCasimir),
        Some(other) => {
            problems.push(format!("unknown fault {other:?}, expected undeformed-casimir"));
            None
        }
    }
}

fn parse_suites(cfg: &RunConfig, problems: &mut Problems) -> Option<Vec<Suite>> {
    cfg.suites.as_ref().map(|names| {
        names
            .iter()
            .filter_map(|s| {
                let parsed = Suite::parse(s);
                if parsed.is_none() {
                    let known: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                    problems.push(format!("unknown suite {s:?}, expected one of {}", known.join(", ")));
                }
                parsed
            })
            .collect()
    })
}

fn parse_integrator(cfg: &RunConfig, spin: bool, problems: &mut Problems) -> IntegratorConfig {
    let default_method = if spin { Method::Rk4 } else { Method::ImplicitMidpoint };
    let method = cfg
        .method
        .as_deref()
        .map_or(Some(default_method), |m| problems.take(m.parse()))
        .unwrap_or(default_method);
    let base = IntegratorConfig::default();
    let out = IntegratorConfig {
        dt: cfg.dt.unwrap_or(base.dt),
        steps: cfg.steps.unwrap_or(base.steps),
        method,
        newton_tol: cfg.newton_tol.unwrap_or(base.newton_tol),
        newton_max_iter: cfg.newton_max_iter.unwrap_or(base.newton_max_iter),
        record_every: cfg.record_every.unwrap_or(base.record_every),
    };
    for p in out.problems() {
        problems.push(p);
    }
    out
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn usage_error(problems: &[String]) -> i32 {
    for p in problems {
        eprintln!("error: {p}");
    }
    EXIT_USAGE
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}"))?;
    if n > 0 {
        // a pool may already exist when embedded; keeping it is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        return usage_error(&[msg]);
    }
    let (which, args) = match cli.command {
        Command::Verify(a) => ("verify", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Expand(a) => ("expand", a),
    };
    let file = match &args.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => return usage_error(&[format!("config {}: {e}", path.display())]),
        },
        None => RunConfig::default(),
    };
    let cfg = file.merged(args);
    match which {
        "verify" => cmd_verify(&cfg),
        "simulate" => cmd_simulate(&cfg),
        _ => cmd_expand(&cfg),
    }
}

#[derive(Serialize)]
struct VerifyDocument<'a> {
    spec: &'a SystemSpec,
    plan: &'a SamplingPlan,
    inject_fault: Option<&'a str>,
    all_ok: bool,
    reports: &'a [VerificationReport],
}

/// Runs the selected suites; exit 0 iff every check behaved as intended.
pub fn cmd_verify(cfg: &RunConfig) -> i32 {
    let mut problems = Problems::default();
    let spec = parse_spec(cfg, &mut problems);
    let plan = parse_plan(cfg, &mut problems);
    let fault = parse_fault(cfg, &mut problems);
    let suites = parse_suites(cfg, &mut problems);
    if let Err(p) = problems.finish() {
        return usage_error(&p);
    }
    let spec = spec.expect("validated");
    if spec.n_sites == 1 {
        eprintln!("warning: N=1: nothing to verify");
    }
    let reports = run_suites(&spec, &plan, suites.as_deref(), fault);
    let all_ok = reports.iter().all(VerificationReport::ok);
    let _ = std::io::stdout().lock().write_all(render_table(&reports).as_bytes());
    say!("{}", if all_ok { "all checks passed" } else { "some checks failed" });
    let doc = VerifyDocument {
        spec: &spec,
        plan: &plan,
        inject_fault: cfg.inject_fault.as_deref(),
        all_ok,
        reports: &reports,
    };
    let path = cfg.report.clone().unwrap_or_else(|| PathBuf::from("verification_report.json"));
    let json = serde_json::to_string_pretty(&doc).expect("serializable report") + "\n";
    if let Err(e) = write_atomic(&path, json.as_bytes()) {
        eprintln!("error: writing {}: {e}", path.display());
        return EXIT_FAILURE;
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

/// One line per report: verdict, residual over scale, tolerance, name.
pub fn render_table(reports: &[VerificationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:>12} {:>12} {:>10}  check", "result", "residual", "scale", "tolerance");
    for r in reports {
        let verdict = match (r.ok(), r.negative_control) {
            (true, false) => "PASS",
            (true, true) => "PASS*",
            (false, _) => "FAIL",
        };
        let _ = writeln!(
            out,
            "{verdict:<6} {:>12.3e} {:>12.3e} {:>10.1e}  {}",
            r.max_abs_residual, r.scale, r.tolerance, r.check
        );
    }
    if reports.iter().any(|r| r.negative_control) {
        out.push_str("PASS* = negative control, expected to violate its tolerance\n");
    }
    out
}

#[derive(Serialize)]
struct DriftSummary<'a> {
    spec: &'a SystemSpec,
    integrator: &'a IntegratorConfig,
    status: &'a str,
    error: Option<String>,
    recorded_rows: usize,
    invariants: Vec<String>,
    initial_values: &'a [f64],
    max_relative_drift: Vec<f64>,
    final_relative_drift: Option<&'a [f64]>,
    max_site_casimir_drift: Option<f64>,
}

enum InitialState {
    Canonical(PhasePoint),
    Spin(SpinChainState),
}

fn parse_initial(cfg: &RunConfig, spec: &SystemSpec, plan: &SamplingPlan, problems: &mut Problems) -> Option<InitialState> {
    let n = spec.n_sites;
    let spin = spec.realization.is_spin();
    if spin {
        if cfg.q.is_some() || cfg.p.is_some() {
            problems.push("q/p given for a spin system; use sites");
        }
        let flat = cfg
            .sites
            .clone()
            .unwrap_or_else(|| plan.sampler().state(n, spec.realization));
        if flat.len() != 3 * n {
            problems.push(format!("sites needs {} values, got {}", 3 * n, flat.len()));
            return None;
        }
        problems.take(SpinChainState::from_flat(&flat)).map(InitialState::Spin)
    } else {
        if cfg.sites.is_some() {
            problems.push("sites given for a canonical system; use q and p");
        }
        let sampled = plan.sampler().phase_point(n, spec.realization.is_deformed());
        let q = cfg.q.clone().unwrap_or(sampled.q);
        let p = cfg.p.clone().unwrap_or(sampled.p);
        for (name, v) in [("q", &q), ("p", &p)] {
            if v.len() != n {
                problems.push(format!("{name} needs {n} values, got {}", v.len()));
            }
        }
        if q.len() != n || p.len() != n {
            return None;
        }
        problems.take(PhasePoint::new(q, p)).map(InitialState::Canonical)
    }
}

/// Integrates from the configured (or sampled) initial state.
pub fn cmd_simulate(cfg: &RunConfig) -> i32 {
    let mut problems = Problems::default();
    let spec = parse_spec(cfg, &mut problems);
    let plan = parse_plan(cfg, &mut problems);
    let integrator = parse_integrator(cfg, spec.as_ref().is_some_and(|s| s.realization.is_spin()), &mut problems);
    let initial = spec.as_ref().and_then(|s| parse_initial(cfg, s, &plan, &mut problems));
    if let (Some(spec), Some(initial)) = (&spec, &initial) {
        let flat = match initial {
            InitialState::Canonical(x) => x.to_flat(),
            InitialState::Spin(s) => {
                if spec.realization.is_deformed() {
                    problems.take(s.check_cone());
                }
                s.to_flat()
            }
        };
        if integrator.problems().is_empty() {
            let family = build_system(spec).expect("validated spec");
            problems.take(check_step_size(&family, &flat, integrator.dt));
        }
    }
    if let Err(p) = problems.finish() {
        return usage_error(&p);
    }
    let (spec, initial) = (spec.expect("validated"), initial.expect("validated"));
    let result = match &initial {
        InitialState::Canonical(x) => integrate(&spec, x, &integrator),
        InitialState::Spin(s) => spin_flow(&spec, s, &integrator),
    };
    let (traj, failure) = match result {
        Ok(t) => (t, None),
        Err(d) => {
            let msg = d.to_string();
            (d.partial, Some(msg))
        }
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    let summary_path = cfg.summary.clone().unwrap_or_else(|| PathBuf::from("drift_summary.json"));
    let summary = drift_summary(&spec, &integrator, &traj, failure.clone());
    let json = serde_json::to_string_pretty(&summary).expect("serializable summary") + "\n";
    for (path, bytes) in [(&out, traj.to_csv().into_bytes()), (&summary_path, json.into_bytes())] {
        if let Err(e) = write_atomic(path, &bytes) {
            eprintln!("error: writing {}: {e}", path.display());
            return EXIT_FAILURE;
        }
    }
    let names = traj.invariant_names();
    for (name, d) in names.iter().zip(traj.max_drift()) {
        say!("max relative drift {name:<4} {d:.3e}");
    }
    if traj.spin {
        say!("max site casimir drift {:.3e}", traj.max_site_casimir_drift());
    }
    match failure {
        Some(msg) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
        None => EXIT_OK,
    }
}

fn drift_summary<'a>(
    spec: &'a SystemSpec,
    integrator: &'a IntegratorConfig,
    traj: &'a Trajectory,
    failure: Option<String>,
) -> DriftSummary<'a> {
    DriftSummary {
        spec,
        integrator,
        status: if failure.is_some() { "diverged" } else { "completed" },
        error: failure,
        recorded_rows: traj.times.len(),
        invariants: traj.invariant_names(),
        initial_values: &traj.initial_invariants,
        max_relative_drift: traj.max_drift(),
        final_relative_drift: traj.invariant_drift.last().map(|v| v.as_slice()),
        max_site_casimir_drift: traj.spin.then(|| traj.max_site_casimir_drift()),
    }
}

/// Default deformations tabulated by `expand`.
pub const EXPAND_Z: [f64; 4] = [1e-1, 1e-2, 1e-3, 0.0];

/// Measured `(H_z - H_0)/z` against `p1^2 q2^2 - p2^2 q1^2` at sampled two-site points.
pub fn cmd_expand(cfg: &RunConfig) -> i32 {
    let mut problems = Problems::default();
    if let Some(n) = cfg.n.filter(|&n| n != 2) {
        problems.push(format!("expand needs n = 2, got {n}"));
    }
    if cfg.realization.as_deref().is_some_and(|r| r != "canonical") {
        problems.push("expand works on the canonical realization");
    }
    let potential = problems.take(
        cfg.potential
            .as_deref()
            .unwrap_or("harmonic:1")
            .parse::<PotentialSpec>(),
    );
    let plan = parse_plan(cfg, &mut problems);
    let zs: Vec<f64> = cfg
        .z_values
        .clone()
        .or_else(|| cfg.z.map(|z| vec![z]))
        .unwrap_or_else(|| EXPAND_Z.to_vec());
    if let Some(z) = zs.iter().find(|z| !z.is_finite()) {
        problems.push(format!("z values must be finite, got {z}"));
    }
    if let Err(p) = problems.finish() {
        return usage_error(&p);
    }
    let potential = potential.expect("validated");
    let family = |z: f64| {
        build_system(&SystemSpec::new(2, z, potential.clone(), false).expect("validated")).expect("validated")
    };
    let base = family(0.0);
    let deformed: Vec<_> = zs.iter().map(|&z| family(z)).collect();
    let mut sampler = plan.sampler();
    let mut csv = String::from("sample,z,q1,q2,p1,p2,difference,measured,analytic,remainder\n");
    for s in 0..plan.count {
        let x = sampler.phase_point(2, true);
        let flat = x.to_flat();
        let analytic = first_order_term(&x).expect("two sites");
        let h0 = base.eval(Observable::Hamiltonian, &flat);
        for (z, fam) in zs.iter().zip(&deformed) {
            let difference = fam.eval(Observable::Hamiltonian, &flat) - h0;
            let (measured, remainder) = if *z == 0.0 {
                (String::new(), String::new())
            } else {
                let m = difference / z;
                (format!("{m:.16e}"), format!("{:.16e}", m - analytic))
            };
            let _ = writeln!(
                csv,
                "{s},{z:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{difference:.16e},{measured},{analytic:.16e},{remainder}",
                x.q[0], x.q[1], x.p[0], x.p[1]
            );
        }
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("expansion.csv"));
    if let Err(e) = write_atomic(&out, csv.as_bytes()) {
        eprintln!("error: writing {}: {e}", out.display());
        return EXIT_FAILURE;
    }
    say!("wrote {} rows to {}", plan.count * zs.len(), out.display());
    EXIT_OK
}
