//! Time integration of built systems with invariant drift monitoring.
//!
//! Canonical chains evolve by `q_dot = dH/dp`, `p_dot = -dH/dq`; spin chains
//! by `s_dot = {s, H}` under the site-wise Lie-Poisson tensor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bracket_engine::{
    dual_gradient, hessian_flat, lie_poisson_vector_field, site_casimir, structure_tensor,
    PhasePoint, SpinChainState,
};
use crate::dual::seed;
use crate::error::{Error, Result};
use crate::systems::{build_system, IntegralFamily, Observable, SystemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ImplicitMidpoint,
    Rk4,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ImplicitMidpoint => "midpoint",
            Method::Rk4 => "rk4",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" | "implicit-midpoint" => Ok(Method::ImplicitMidpoint),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?}, expected midpoint or rk4"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Record every k-th step.
    pub record_every: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            steps: 1000,
            method: Method::ImplicitMidpoint,
            newton_tol: 1e-13,
            newton_max_iter: 50,
            record_every: 1,
        }
    }
}

/// A step may move the state by at most this fraction of `max(1, |x0|_inf)`.
pub const STEP_SANITY_FRACTION: f64 = 0.5;

impl IntegratorConfig {
    pub fn new(dt: f64, steps: usize, method: Method) -> Self {
        Self {
            dt,
            steps,
            method,
            ..Self::default()
        }
    }

    /// Every violated field, in declaration order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(format!("dt must be positive and finite, got {}", self.dt));
        }
        if !(self.newton_tol.is_finite() && self.newton_tol > 0.0) {
            out.push(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.newton_max_iter == 0 {
            out.push("newton_max_iter must be at least 1".into());
        }
        if self.record_every == 0 {
            out.push("record_every must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(Error::InvalidConfig(p.join("; "))),
        }
    }
}

/// Hamiltonian vector field of a family in either coordinate layout.
struct Flow<'a> {
    family: &'a IntegralFamily,
    spin: bool,
}

impl<'a> Flow<'a> {
    fn new(family: &'a IntegralFamily) -> Self {
        Self {
            family,
            spin: family.spec().realization.is_spin(),
        }
    }

    fn apply(&self, x: &[f64], dh: &[f64]) -> Vec<f64> {
        if self.spin {
            lie_poisson_vector_field(x, dh)
        } else {
            let n = x.len() / 2;
            let (dq, dp) = dh.split_at(n);
            dp.iter().copied().chain(dq.iter().map(|v| -v)).collect()
        }
    }

    fn field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.family.eval(Observable::Hamiltonian, &seed(x));
        let (_, dh) = dual_gradient(&h, x.len(), |k| format!("x[{k}]"))?;
        Ok(self.apply(x, &dh))
    }

    /// Vector field and its Jacobian.
    fn field_and_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = x.len();
        let (_, dh, hess) = hessian_flat(&self.family.hamiltonian(), x)?;
        let hess = DMatrix::from_row_slice(n, n, &hess);
        let f = self.apply(x, &dh);
        let jac = if self.spin {
            let mut jac = DMatrix::zeros(n, n);
            for s in 0..n / 3 {
                let b = 3 * s;
                let pi = structure_tensor(&x[b..b + 3]);
                let g = &dh[b..b + 3];
                for r in 0..3 {
                    for k in 0..n {
                        jac[(b + r, k)] = (0..3).map(|c| pi[r][c] * hess[(b + c, k)]).sum();
                    }
                }
                // derivative of the tensor itself, which is linear in the site
                let dpi = [
                    [(0, 2.0 * g[2]), (2, 4.0 * g[1])],
                    [(1, -2.0 * g[2]), (2, -4.0 * g[0])],
                    [(0, -2.0 * g[0]), (1, 2.0 * g[1])],
                ];
                for (r, row) in dpi.iter().enumerate() {
                    for &(k, v) in row {
                        jac[(b + r, b + k)] += v;
                    }
                }
            }
            jac
        } else {
            let h = n / 2;
            let mut jac = DMatrix::zeros(n, n);
            for k in 0..n {
                for i in 0..h {
                    jac[(i, k)] = hess[(h + i, k)];
                    jac[(h + i, k)] = -hess[(i, k)];
                }
            }
            jac
        };
        Ok((f, jac))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Pivot ratio below which the Newton matrix counts as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Relaxation of the fixed-point fallback.
const FIXED_POINT_DAMPING: f64 = 0.5;

fn midpoint_step(flow: &Flow<'_>, x: &[f64], dt: f64, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let n = x.len();
    let f0 = flow.field(x)?;
    let mut y: Vec<f64> = x.iter().zip(&f0).map(|(a, b)| a + dt * b).collect();
    let mut trace = Vec::new();
    for _ in 0..cfg.newton_max_iter {
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (f, jf) = flow.field_and_jacobian(&mid)?;
        let r: Vec<f64> = (0..n).map(|i| y[i] - x[i] - dt * f[i]).collect();
        let rn = inf_norm(&r);
        trace.push(rn);
        if !rn.is_finite() {
            break;
        }
        if rn <= cfg.newton_tol * inf_norm(&y).max(1.0) {
            return Ok(y);
        }
        let jr = DMatrix::identity(n, n) - jf * (0.5 * dt);
        let lu = jr.lu();
        let pivots = lu.u().diagonal();
        let (lo, hi) = pivots
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), p| (lo.min(p.abs()), hi.max(p.abs())));
        let newton = (lo > SINGULAR_PIVOT_RATIO * hi)
            .then(|| lu.solve(&-DVector::from_vec(r.clone())))
            .flatten()
            .filter(|d| d.iter().all(|v| v.is_finite()));
        match newton {
            Some(delta) => y.iter_mut().zip(delta.iter()).for_each(|(a, d)| *a += d),
            None => y
                .iter_mut()
                .zip(&r)
                .for_each(|(a, ri)| *a -= FIXED_POINT_DAMPING * ri),
        }
    }
    Err(Error::NewtonNonConvergence {
        iterations: trace.len(),
        trace,
    })
}

fn rk4_step(flow: &Flow<'_>, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    let shifted = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1 = flow.field(x)?;
    let k2 = flow.field(&shifted(&k1, 0.5 * dt))?;
    let k3 = flow.field(&shifted(&k2, 0.5 * dt))?;
    let k4 = flow.field(&shifted(&k3, dt))?;
    Ok((0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// One step of size `cfg.dt`.
pub fn flow_step(family: &IntegralFamily, x: &[f64], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    flow_step_by(family, x, cfg.dt, cfg)
}

/// One step of size `dt`, which may be negative.
pub fn flow_step_by(family: &IntegralFamily, x: &[f64], dt: f64, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    if x.len() != family.spec().arity() {
        return Err(Error::Dimension {
            expected: family.spec().arity(),
            found: x.len(),
        });
    }
    let flow = Flow::new(family);
    match cfg.method {
        Method::ImplicitMidpoint => midpoint_step(&flow, x, dt, cfg),
        Method::Rk4 => rk4_step(&flow, x, dt),
    }
}

/// `X_H` at `x`.
pub fn vector_field(family: &IntegralFamily, x: &[f64]) -> Result<Vec<f64>> {
    Flow::new(family).field(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spin: bool,
    pub n_sites: usize,
    pub initial: Vec<f64>,
    /// `[H, C^(2), .., C^(N)]` at the initial state.
    pub initial_invariants: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub invariants: Vec<Vec<f64>>,
    /// Relative drift `|I(t) - I(0)| / |I(0)|` (absolute when `I(0) = 0`).
    pub invariant_drift: Vec<Vec<f64>>,
    /// Spin chains only: drift of each site Casimir `s3^2 - s- s+`.
    pub site_casimir_drift: Vec<Vec<f64>>,
}

fn relative_drift(now: f64, start: f64) -> f64 {
    let d = (now - start).abs();
    if start == 0.0 {
        d
    } else {
        d / start.abs()
    }
}

impl Trajectory {
    fn start(family: &IntegralFamily, x0: &[f64]) -> Self {
        Self {
            spin: family.spec().realization.is_spin(),
            n_sites: family.n_sites(),
            initial: x0.to_vec(),
            initial_invariants: family.eval_all(x0),
            times: Vec::new(),
            states: Vec::new(),
            invariants: Vec::new(),
            invariant_drift: Vec::new(),
            site_casimir_drift: Vec::new(),
        }
    }

    fn record(&mut self, family: &IntegralFamily, t: f64, x: Vec<f64>) {
        let values = family.eval_all(&x);
        self.invariant_drift.push(
            values
                .iter()
                .zip(&self.initial_invariants)
                .map(|(v, v0)| relative_drift(*v, *v0))
                .collect(),
        );
        if self.spin {
            self.site_casimir_drift.push(
                x.chunks(3)
                    .zip(self.initial.chunks(3))
                    .map(|(s, s0)| (site_casimir(s) - site_casimir(s0)).abs())
                    .collect(),
            );
        }
        self.invariants.push(values);
        self.times.push(t);
        self.states.push(x);
    }

    /// Names of the monitored invariants: `H, C2, .., CN`.
    pub fn invariant_names(&self) -> Vec<String> {
        std::iter::once("H".to_string())
            .chain((2..=self.n_sites).map(|m| format!("C{m}")))
            .collect()
    }

    /// Largest recorded drift per invariant.
    pub fn max_drift(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.initial_invariants.len()];
        for row in &self.invariant_drift {
            for (o, d) in out.iter_mut().zip(row) {
                *o = f64::max(*o, *d);
            }
        }
        out
    }

    pub fn max_site_casimir_drift(&self) -> f64 {
        self.site_casimir_drift
            .iter()
            .flatten()
            .fold(0.0, |m, d| m.max(*d))
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&self.initial, |s| s)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        if self.spin {
            for i in 1..=self.n_sites {
                cols.extend([format!("sm_{i}"), format!("sp_{i}"), format!("s3_{i}")]);
            }
        } else {
            cols.extend((1..=self.n_sites).map(|i| format!("q{i}")));
            cols.extend((1..=self.n_sites).map(|i| format!("p{i}")));
        }
        cols.extend(self.invariant_names());
        cols.join(",")
    }

    /// One row per recorded step, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for ((t, x), inv) in self.times.iter().zip(&self.states).zip(&self.invariants) {
            let row: Vec<String> = std::iter::once(t)
                .chain(x)
                .chain(inv)
                .map(|v| format!("{v:.16e}"))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// A run that stopped early; `partial` holds everything recorded before the failure.
#[derive(Debug)]
pub struct Divergence {
    pub partial: Trajectory,
    pub step: usize,
    pub error: Error,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "integration stopped at step {}: {}", self.step, self.error)
    }
}

impl std::error::Error for Divergence {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Checks `dt * |X_H(x0)|_inf <= 0.5 * max(1, |x0|_inf)`.
pub fn check_step_size(family: &IntegralFamily, x0: &[f64], dt: f64) -> Result<()> {
    let v = vector_field(family, x0)?;
    let limit = STEP_SANITY_FRACTION * inf_norm(x0).max(1.0);
    let moved = dt.abs() * inf_norm(&v);
    if moved > limit {
        return Err(Error::InvalidConfig(format!(
            "dt = {dt} moves the initial state by {moved:.3e}, above {limit:.3e}"
        )));
    }
    Ok(())
}

/// Integrates a canonical system from `x0`.
pub fn integrate(spec: &SystemSpec, x0: &PhasePoint, cfg: &IntegratorConfig) -> Result<Trajectory, Divergence> {
    let family = setup(spec, false, cfg)?;
    integrate_family(&family, &x0.to_flat(), cfg)
}

/// Integrates a spin system from `s0`; deformed chains must start on the zero cone.
pub fn spin_flow(spec: &SystemSpec, s0: &SpinChainState, cfg: &IntegratorConfig) -> Result<Trajectory, Divergence> {
    let family = setup(spec, true, cfg)?;
    if spec.realization.is_deformed() {
        s0.check_cone().map_err(|e| early(&family, &s0.to_flat(), e))?;
    }
    integrate_family(&family, &s0.to_flat(), cfg)
}

fn early(family: &IntegralFamily, x0: &[f64], error: Error) -> Divergence {
    let partial = if x0.len() == family.spec().arity() {
        Trajectory::start(family, x0)
    } else {
        Trajectory {
            spin: family.spec().realization.is_spin(),
            n_sites: family.n_sites(),
            initial: x0.to_vec(),
            initial_invariants: Vec::new(),
            times: Vec::new(),
            states: Vec::new(),
            invariants: Vec::new(),
            invariant_drift: Vec::new(),
            site_casimir_drift: Vec::new(),
        }
    };
    Divergence {
        partial,
        step: 0,
        error,
    }
}

fn setup(spec: &SystemSpec, spin: bool, cfg: &IntegratorConfig) -> Result<IntegralFamily, Divergence> {
    let fail = |error: Error| Divergence {
        partial: Trajectory {
            spin,
            n_sites: spec.n_sites,
            initial: Vec::new(),
            initial_invariants: Vec::new(),
            times: Vec::new(),
            states: Vec::new(),
            invariants: Vec::new(),
            invariant_drift: Vec::new(),
            site_casimir_drift: Vec::new(),
        },
        step: 0,
        error,
    };
    cfg.validate().map_err(fail)?;
    let family = build_system(spec).map_err(fail)?;
    if spec.realization.is_spin() != spin {
        return Err(fail(Error::Realization(format!(
            "{} system given to the {} integrator",
            spec.realization.name(),
            if spin { "spin" } else { "canonical" }
        ))));
    }
    Ok(family)
}

/// Rolls [`flow_step`] from `x0`, recording every `cfg.record_every` steps.
pub fn integrate_family(
    family: &IntegralFamily,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, Divergence> {
    if x0.len() != family.spec().arity() {
        let e = Error::Dimension {
            expected: family.spec().arity(),
            found: x0.len(),
        };
        return Err(early(family, x0, e));
    }
    if let Some(k) = x0.iter().position(|v| !v.is_finite()) {
        return Err(early(family, x0, Error::NonFinite { coordinate: format!("x0[{k}]") }));
    }
    cfg.validate()
        .and_then(|_| check_step_size(family, x0, cfg.dt))
        .map_err(|e| early(family, x0, e))?;
    let mut traj = Trajectory::start(family, x0);
    let mut x = x0.to_vec();
    for step in 1..=cfg.steps {
        let next = flow_step(family, &x, cfg).and_then(|y| {
            if y.iter().all(|v| v.is_finite()) {
                Ok(y)
            } else {
                Err(Error::NonFiniteState { step })
            }
        });
        match next {
            Ok(y) => x = y,
            Err(error) => {
                return Err(Divergence {
                    partial: traj,
                    step,
                    error,
                })
            }
        }
        if step % cfg.record_every == 0 {
            traj.record(family, step as f64 * cfg.dt, x.clone());
        }
    }
    Ok(traj)
}
