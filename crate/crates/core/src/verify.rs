//! Certification suites for the coalgebra construction.
//!
//! Each check samples states from a seeded [`SamplingPlan`], measures a
//! residual that is zero in exact arithmetic, and condenses the worst sample
//! into a [`VerificationReport`]. Every suite pairs its check with a negative
//! control that is expected to fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bracket_engine::{
    canonical_bracket_from_gradients, lie_poisson_from_gradients, Bracket, PhasePoint,
};
use crate::coalgebra::{
    build_casimir, build_coproduct, casimir_of, k_functions, k_pair, realized_generators, AlgebraSpec,
    Generator, Generators, Realization, RealizationKind,
};
use crate::dual::{seed, sinhc_f64, Dual};
use crate::systems::{
    build_system, casimirs_closed_form, first_order_term, gaudin_closed_form,
    gaudin_pair_magnitudes, Fault, GaudinForm, IntegralFamily, Observable, PotentialSpec,
    SystemSpec,
};

/// Base of the default tolerance `base * N^2 * max(1, L^4)`.
pub const BASE_TOLERANCE: f64 = 1e-12;

/// Deformation used by negative controls when the checked `z` is zero.
pub const CONTROL_Z: f64 = 0.3;

/// Smallest `|q_i|` (or `|sigma_minus|`) drawn for deformed samples.
pub const MIN_SAMPLED_Q: f64 = 1e-3;

/// Classical-limit ratio window for an O(z) difference at `z` and `z/10`.
pub const LIMIT_RATIO_WINDOW: (f64, f64) = (8.0, 12.0);

/// Deformations probed by the first-order expansion check; each is paired
/// with its half.
pub const EXPANSION_Z: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Allowed deviation of the halving ratio from 2.
pub const EXPANSION_RATIO_TOLERANCE: f64 = 0.4;

/// Deformations always probed by the sinh addition identity.
pub const SINH_IDENTITY_Z: [f64; 3] = [0.01, 0.1, 1.0];

/// Chain lengths probed by the sinh addition identity.
pub const SINH_IDENTITY_MAX_M: usize = 8;

/// Outcome of one check.
///
/// The worst sample maximizes `residual / scale`; its residual and scale are
/// reported, so `passed == (max_abs_residual <= tolerance * scale)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub seed: u64,
    pub samples: usize,
    #[serde(rename = "max_residual")]
    pub max_abs_residual: f64,
    pub scale: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Controls are built to violate the identity; they succeed by failing.
    pub negative_control: bool,
    #[serde(rename = "worst_input")]
    pub worst_case_input: Value,
}

impl VerificationReport {
    /// Whether the check behaved as intended.
    pub fn ok(&self) -> bool {
        self.passed != self.negative_control
    }

    pub fn scaled_residual(&self) -> f64 {
        self.max_abs_residual / self.scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub seed: u64,
    pub count: usize,
    /// Coordinates are drawn from `[-range, range]`.
    pub range: f64,
    pub z_values: Vec<f64>,
    /// Overrides the default `base * N^2 * max(1, L^4)` tolerance.
    pub tolerance: Option<f64>,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 100,
            range: 2.0,
            z_values: vec![0.0, 0.05, -0.05, 0.3, -0.3],
            tolerance: None,
        }
    }
}

impl SamplingPlan {
    pub fn new(seed: u64, count: usize) -> Self {
        Self {
            seed,
            count,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn tolerance_for(&self, n: usize) -> f64 {
        self.tolerance.unwrap_or_else(|| {
            let n = n.max(1) as f64;
            BASE_TOLERANCE * n * n * self.range.powi(4).max(1.0)
        })
    }

    pub fn sampler(&self) -> Sampler {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            range: self.range,
        }
    }
}

/// Deterministic state generator.
pub struct Sampler {
    rng: ChaCha8Rng,
    range: f64,
}

impl Sampler {
    pub fn uniform(&mut self) -> f64 {
        self.rng.random_range(-self.range..=self.range)
    }

    fn away_from_zero(&mut self, min: f64) -> f64 {
        loop {
            let v = self.uniform();
            if v.abs() >= min {
                return v;
            }
        }
    }

    pub fn vector(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }

    /// `q, p` uniform; `|q_i| >= MIN_SAMPLED_Q` when `avoid_small_q`.
    pub fn phase_point(&mut self, n: usize, avoid_small_q: bool) -> PhasePoint {
        let q = (0..n)
            .map(|_| {
                if avoid_small_q {
                    self.away_from_zero(MIN_SAMPLED_Q)
                } else {
                    self.uniform()
                }
            })
            .collect();
        let p = self.vector(n);
        PhasePoint { q, p }
    }

    /// Flat spin state; cone sites are `s (u^2, v^2, u v)` with a random sign `s`.
    pub fn spin_sites(&mut self, n: usize, cone: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * n);
        for _ in 0..n {
            if cone {
                let u = self.away_from_zero(MIN_SAMPLED_Q.sqrt());
                let v = self.uniform();
                let s = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
                out.extend([s * u * u, s * v * v, s * u * v]);
            } else {
                out.extend(self.vector(3));
            }
        }
        out
    }

    /// Flat state suited to `kind`.
    pub fn state(&mut self, n: usize, kind: RealizationKind) -> Vec<f64> {
        match kind {
            RealizationKind::CanonicalUndeformed => self.phase_point(n, false).to_flat(),
            RealizationKind::CanonicalDeformed => self.phase_point(n, true).to_flat(),
            RealizationKind::SpinUndeformed => self.spin_sites(n, false),
            RealizationKind::SpinDeformedZeroCone => self.spin_sites(n, true),
        }
    }
}

/// Residual of one sample.
#[derive(Clone, Copy, Debug)]
struct Outcome {
    residual: f64,
    scale: f64,
}

impl Outcome {
    fn new(residual: f64, scale: f64) -> Self {
        Self {
            residual,
            scale: scale.max(1.0),
        }
    }

    fn zero() -> Self {
        Self::new(0.0, 1.0)
    }

    fn ratio(&self) -> f64 {
        let r = self.residual / self.scale;
        if r.is_nan() {
            f64::INFINITY
        } else {
            r
        }
    }

    fn worst(self, other: Self) -> Self {
        if other.ratio() > self.ratio() {
            other
        } else {
            self
        }
    }

    fn from_bracket(b: Bracket, expected: f64) -> Self {
        Self::new((b.value - expected).abs(), b.scale.max(expected.abs()))
    }
}

struct CheckContext<'a> {
    check: String,
    plan: &'a SamplingPlan,
    tolerance: f64,
    negative_control: bool,
}

impl CheckContext<'_> {
    /// Evaluates samples in parallel and keeps the first worst one.
    fn run<T: Sync>(
        &self,
        samples: &[T],
        eval: impl Fn(&T) -> Outcome + Sync,
        describe: impl Fn(&T) -> Value,
    ) -> VerificationReport {
        let outcomes: Vec<Outcome> = samples.par_iter().map(&eval).collect();
        let mut worst: Option<(usize, Outcome)> = None;
        for (i, o) in outcomes.into_iter().enumerate() {
            worst = match worst {
                Some((_, w)) if o.ratio() <= w.ratio() => worst,
                _ => Some((i, o)),
            };
        }
        let (index, outcome) = worst.unwrap_or((usize::MAX, Outcome::zero()));
        let residual = if outcome.residual.is_nan() {
            f64::INFINITY
        } else {
            outcome.residual
        };
        VerificationReport {
            check: self.check.clone(),
            seed: self.plan.seed,
            samples: samples.len(),
            max_abs_residual: residual,
            scale: outcome.scale,
            tolerance: self.tolerance,
            passed: residual <= self.tolerance * outcome.scale,
            negative_control: self.negative_control,
            worst_case_input: samples.get(index).map(describe).unwrap_or(Value::Null),
        }
    }
}

fn describe_flat(kind: RealizationKind) -> impl Fn(&Vec<f64>) -> Value {
    move |x| {
        if kind.is_spin() {
            let sites: Vec<&[f64]> = x.chunks(3).collect();
            json!({ "sites": sites })
        } else {
            let n = x.len() / 2;
            json!({ "q": &x[..n], "p": &x[n..] })
        }
    }
}

fn bracket(kind: RealizationKind, x: &[f64], df: &[f64], dg: &[f64]) -> Bracket {
    if kind.is_spin() {
        lie_poisson_from_gradients(x, df, dg)
    } else {
        canonical_bracket_from_gradients(df, dg)
    }
}

fn gradient(d: &Dual<f64>, n: usize) -> Vec<f64> {
    (0..n).map(|k| d.deriv(k)).collect()
}

/// `{C^(m), C^(n)}` and `{C^(m), H^(N)}` over the plan's samples.
pub fn check_involution(spec: &SystemSpec, plan: &SamplingPlan) -> VerificationReport {
    let family = build_system(spec).expect("a buildable system");
    involution_report(&family, plan, false)
}

/// Runs the involution check on an already configured family (oracle path,
/// injected faults).
pub fn check_involution_family(family: &IntegralFamily, plan: &SamplingPlan) -> VerificationReport {
    involution_report(family, plan, false)
}

/// Involution with integrals replaced by their undeformed counterparts;
/// at `z = 0` the control runs at [`CONTROL_Z`].
pub fn involution_negative_control(spec: &SystemSpec, plan: &SamplingPlan) -> VerificationReport {
    let mut spec = spec.clone();
    if spec.z == 0.0 {
        spec = SystemSpec::new(spec.n_sites, CONTROL_Z, spec.potential.clone(), spec.realization.is_spin())
            .expect("control spec");
    }
    let family = build_system(&spec)
        .expect("a buildable system")
        .with_fault(Some(Fault::UndeformedCasimir));
    involution_report(&family, plan, true)
}

fn involution_report(family: &IntegralFamily, plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let spec = family.spec();
    let kind = spec.realization;
    let n = spec.n_sites;
    let mut sampler = plan.sampler();
    let samples: Vec<Vec<f64>> = (0..plan.count).map(|_| sampler.state(n, kind)).collect();
    let ctx = CheckContext {
        check: format!(
            "involution[{} N={} z={}{}]",
            kind.name(),
            n,
            spec.z,
            fault_tag(negative)
        ),
        plan,
        tolerance: plan.tolerance_for(n),
        negative_control: negative,
    };
    ctx.run(
        &samples,
        |x| {
            let vals = family.eval_all(&seed(x));
            let grads: Vec<Vec<f64>> = vals.iter().map(|v| gradient(v, x.len())).collect();
            let mut worst = Outcome::zero();
            // grads[0] is H, grads[k] is C^(k+1)
            for a in 1..grads.len() {
                for b in (0..grads.len()).filter(|&b| b != a && (b == 0 || b > a)) {
                    let br = bracket(kind, x, &grads[a], &grads[b]);
                    worst = worst.worst(Outcome::from_bracket(br, 0.0));
                }
            }
            worst
        },
        describe_flat(kind),
    )
}

fn fault_tag(negative: bool) -> &'static str {
    if negative {
        " control"
    } else {
        ""
    }
}

/// Closure of the m-site images under the (deformed) algebra brackets:
/// `{F3, F+} = 2 F+ cosh(z F-)`, `{F3, F-} = -2 sinh(z F-)/z`, `{F-, F+} = 4 F3`.
pub fn check_homomorphism(kind: RealizationKind, z: f64, m: usize, plan: &SamplingPlan) -> VerificationReport {
    homomorphism_report(kind, z, m, plan, false)
}

/// Deformed images tested against the undeformed brackets; `z = 0` becomes [`CONTROL_Z`].
pub fn homomorphism_negative_control(spin: bool, z: f64, m: usize, plan: &SamplingPlan) -> VerificationReport {
    let z = if z == 0.0 { CONTROL_Z } else { z };
    let kind = Realization::for_family(spin, z).expect("finite z").kind;
    homomorphism_report(kind, z, m, plan, true)
}

fn homomorphism_report(
    kind: RealizationKind,
    z: f64,
    m: usize,
    plan: &SamplingPlan,
    negative: bool,
) -> VerificationReport {
    let realization = Realization::new(kind, z).expect("valid realization");
    let z_images = realization.effective_z();
    // the control checks deformed images against undeformed structure constants
    let z_brackets = if negative { 0.0 } else { z_images };
    let mut sampler = plan.sampler();
    let samples: Vec<Vec<f64>> = (0..plan.count).map(|_| sampler.state(m, kind)).collect();
    let ctx = CheckContext {
        check: format!("homomorphism[{} m={} z={}{}]", kind.name(), m, z, fault_tag(negative)),
        plan,
        tolerance: plan.tolerance_for(m),
        negative_control: negative,
    };
    ctx.run(
        &samples,
        |x| {
            let g = realized_generators(&seed(x), m, realization);
            let n = x.len();
            let (fm, fp, f3) = (gradient(&g.minus, n), gradient(&g.plus, n), gradient(&g.three, n));
            let v = g.values();
            let cosh = if z_brackets == 0.0 { 1.0 } else { (z_brackets * v.minus).cosh() };
            let sinh_over_z = v.minus * sinhc_f64(z_brackets * v.minus);
            let relations = [
                (bracket(kind, x, &f3, &fp), 2.0 * v.plus * cosh),
                (bracket(kind, x, &f3, &fm), -2.0 * sinh_over_z),
                (bracket(kind, x, &fm, &fp), 4.0 * v.three),
            ];
            relations
                .into_iter()
                .map(|(b, rhs)| Outcome::from_bracket(b, rhs))
                .fold(Outcome::zero(), Outcome::worst)
        },
        describe_flat(kind),
    )
}

/// Recursion-built coproducts against the closed-form generators and
/// Casimirs for every `m <= n`.
pub fn check_oracle_equivalence(realization: Realization, n: usize, plan: &SamplingPlan) -> VerificationReport {
    oracle_report(realization, n, plan, false)
}

/// Closed forms at `z` compared with primitive (undeformed) coproducts.
pub fn oracle_negative_control(spin: bool, z: f64, n: usize, plan: &SamplingPlan) -> VerificationReport {
    let z = if z == 0.0 { CONTROL_Z } else { z };
    let realization = Realization::for_family(spin, z).expect("finite z");
    oracle_report(realization, n, plan, true)
}

fn oracle_report(realization: Realization, n: usize, plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let kind = realization.kind;
    let z = realization.effective_z();
    let z_tree = if negative { 0.0 } else { z };
    let algebra = AlgebraSpec::realized(z_tree).expect("finite z");
    let trees: Vec<Vec<_>> = (1..=n)
        .map(|m| Generator::ALL.iter().map(|&g| build_coproduct(g, m, z_tree)).collect())
        .collect();
    let casimir_trees: Vec<_> = (2..=n).map(|m| build_casimir(m, algebra)).collect();
    let mut sampler = plan.sampler();
    let samples: Vec<Vec<f64>> = (0..plan.count).map(|_| sampler.state(n, kind)).collect();
    let ctx = CheckContext {
        check: format!("oracle-equivalence[{} N={} z={}{}]", kind.name(), n, z, fault_tag(negative)),
        plan,
        tolerance: plan.tolerance_for(n),
        negative_control: negative,
    };
    ctx.run(
        &samples,
        |x| {
            let mut worst = Outcome::zero();
            for m in 1..=n {
                let closed = realized_generators(x, m, realization);
                let sub = sub_state(x, n, m, kind);
                for (tree, &gen) in trees[m - 1].iter().zip(Generator::ALL.iter()) {
                    let oracle = tree.eval(&sub, kind);
                    let c = *closed.get(gen);
                    worst = worst.worst(Outcome::new((oracle - c).abs(), c.abs().max(oracle.abs())));
                }
            }
            let closed = casimirs_closed_form(x, realization);
            for (m, tree) in (2..=n).zip(&casimir_trees) {
                let sub = sub_state(x, n, m, kind);
                let oracle = tree.eval(&sub, kind);
                let c = closed[m - 2];
                let g = realized_generators(x, m, realization);
                worst = worst.worst(Outcome::new((oracle - c).abs(), casimir_magnitude(&g, z)));
            }
            worst
        },
        describe_flat(kind),
    )
}

/// `|J3^2| + |sinh(z J-)/z J+|`, the size of the terms that cancel in a Casimir.
fn casimir_magnitude(g: &Generators<f64>, z: f64) -> f64 {
    g.three * g.three + (g.minus * sinhc_f64(z * g.minus) * g.plus).abs()
}

fn sub_state(x: &[f64], n: usize, m: usize, kind: RealizationKind) -> Vec<f64> {
    if kind.is_spin() {
        x[..3 * m].to_vec()
    } else {
        x[..m].iter().chain(&x[n..n + m]).copied().collect()
    }
}

/// `sinh(u)/u - 1` without cancellation near zero.
pub fn sinhc_minus_one(u: f64) -> f64 {
    if u.abs() < 0.5 {
        let u2 = u * u;
        // Taylor series; the truncation error is below 1e-17 for |u| < 0.5
        u2 / 6.0 * (1.0 + u2 / 20.0 * (1.0 + u2 / 42.0 * (1.0 + u2 / 72.0 * (1.0 + u2 / 110.0 * (1.0 + u2 / 156.0)))))
    } else {
        sinhc_f64(u) - 1.0
    }
}

/// `prod sinhc(u_i) * e^v - 1` without cancellation.
fn dressing_minus_one(us: &[f64], v: f64) -> f64 {
    let log: f64 = us.iter().map(|&u| sinhc_minus_one(u).ln_1p()).sum::<f64>() + v;
    log.exp_m1()
}

/// Deformed minus undeformed values of `J+^(N)`, `J3^(N)` and `C^(2)..C^(N)`,
/// summed term by term so the roundoff scales with `z`.
///
/// `J-` is primitive and any potential term cancels, so these cover `H^(N)`.
pub fn deformation_increments(x: &[f64], n: usize, spin: bool, z: f64) -> Vec<f64> {
    // per site: (dressing argument, plus-like, three-like)
    let (sm, plus, three): (Vec<f64>, Vec<f64>, Vec<f64>) = if spin {
        (
            (0..n).map(|i| x[3 * i]).collect(),
            (0..n).map(|i| x[3 * i + 1]).collect(),
            (0..n).map(|i| x[3 * i + 2]).collect(),
        )
    } else {
        let (q, p) = x.split_at(n);
        (
            q.iter().map(|v| v * v).collect(),
            p.iter().map(|v| v * v).collect(),
            q.iter().zip(p).map(|(a, b)| a * b).collect(),
        )
    };
    let k = k_functions(n, &sm);
    let mut plus_inc = 0.0;
    let mut three_inc = 0.0;
    for i in 0..n {
        let d = dressing_minus_one(&[z * sm[i]], z * k[i]);
        plus_inc += plus[i] * d;
        three_inc += three[i] * d;
    }
    let mut out = vec![plus_inc, three_inc];
    for m in 2..=n {
        let sub = &sm[..m];
        let mut acc = 0.0;
        for i in 0..m {
            if spin {
                let c = three[i] * three[i] - sm[i] * plus[i];
                let two_k = 2.0 * k_functions(m, sub)[i];
                acc += c * dressing_minus_one(&[z * sm[i], z * sm[i]], z * two_k);
            }
            for j in i + 1..m {
                let kij = k_pair(i, j, m, sub).expect("indices in range");
                let t = if spin {
                    2.0 * three[i] * three[j] - sm[i] * plus[j] - plus[i] * sm[j]
                } else {
                    let (q, p) = x.split_at(n);
                    let l = q[i] * p[j] - q[j] * p[i];
                    -l * l
                };
                acc += t * dressing_minus_one(&[z * sm[i], z * sm[j]], z * kij);
            }
        }
        out.push(acc);
    }
    out
}

/// Deformed minus undeformed quantities at `z` and `z/10`; an O(z) gap
/// gives a ratio inside [`LIMIT_RATIO_WINDOW`].
///
/// Probed: `J+^(N)` (hence `H^(N)`), `J3^(N)` and every `C^(m)`. Each
/// quantity is measured down [`CLASSICAL_LIMIT_LADDER`] and keeps its best
/// ratio: a sample whose first-order coefficient nearly cancels only enters
/// the linear regime at smaller `z`.
pub fn check_classical_limit(spin: bool, n: usize, plan: &SamplingPlan) -> VerificationReport {
    limit_report(spin, n, plan, false)
}

/// One-site `J+`, whose deformation is O(z^2), fed through the same ratio test.
pub fn classical_limit_negative_control(spin: bool, plan: &SamplingPlan) -> VerificationReport {
    limit_report(spin, 1, plan, true)
}

fn limit_report(spin: bool, n: usize, plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let kind = Realization::for_family(spin, 1.0).expect("nonzero z").kind;
    let mut sampler = plan.sampler();
    let samples: Vec<Vec<f64>> = (0..plan.count).map(|_| sampler.state(n, kind)).collect();
    let (lo, hi) = LIMIT_RATIO_WINDOW;
    let center = (hi + lo) / 2.0;
    let ctx = CheckContext {
        check: format!(
            "classical-limit[{} N={}{}]",
            if spin { "spin" } else { "canonical" },
            n,
            fault_tag(negative)
        ),
        plan,
        tolerance: (hi - lo) / 2.0,
        negative_control: negative,
    };
    ctx.run(
        &samples,
        |x| {
            let increments = |z: f64| {
                let mut d = deformation_increments(x, n, spin, z);
                d.truncate(if negative { 1 } else { d.len() });
                d
            };
            let rungs: Vec<(Vec<f64>, Vec<f64>)> = CLASSICAL_LIMIT_LADDER
                .iter()
                .map(|&z| (increments(z), increments(z / 10.0)))
                .collect();
            let mut worst = Outcome::zero();
            for k in 0..rungs[0].0.len() {
                let best = rungs
                    .iter()
                    .filter(|(_, small)| small[k] != 0.0)
                    .map(|(big, small)| (big[k] / small[k] - center).abs())
                    .reduce(f64::min);
                if let Some(d) = best {
                    worst = worst.worst(Outcome::new(d, 1.0));
                }
            }
            worst
        },
        describe_flat(kind),
    )
}

/// `(H_z^(2) - H^(2))/z - (p1^2 q2^2 - p2^2 q1^2)` must halve with `z`.
pub fn check_expansion(plan: &SamplingPlan) -> VerificationReport {
    expansion_report(plan, false)
}

/// The same test against the coefficient with the wrong sign.
pub fn expansion_negative_control(plan: &SamplingPlan) -> VerificationReport {
    expansion_report(plan, true)
}

/// `|(H_z - H)/z - first_order_term|` for a two-site harmonic chain.
pub fn expansion_remainder(x: &PhasePoint, z: f64) -> f64 {
    let flat = x.to_flat();
    let h = |z: f64| -> f64 {
        let spec = SystemSpec::new(2, z, PotentialSpec::Harmonic { omega: 1.0 }, false).expect("valid");
        build_system(&spec).expect("valid").eval(Observable::Hamiltonian, &flat)
    };
    let coefficient = first_order_term(x).expect("two sites");
    ((h(z) - h(0.0)) / z - coefficient).abs()
}

fn expansion_report(plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let mut sampler = plan.sampler();
    let samples: Vec<PhasePoint> = (0..plan.count).map(|_| sampler.phase_point(2, true)).collect();
    let ctx = CheckContext {
        check: format!("first-order-expansion[N=2{}]", fault_tag(negative)),
        plan,
        tolerance: EXPANSION_RATIO_TOLERANCE,
        negative_control: negative,
    };
    let sign = if negative { -1.0 } else { 1.0 };
    ctx.run(
        &samples,
        |x| {
            let flat = x.to_flat();
            let h = |z: f64| -> f64 {
                let spec = SystemSpec::new(2, z, PotentialSpec::Harmonic { omega: 1.0 }, false)
                    .expect("valid");
                build_system(&spec).expect("valid").eval(Observable::Hamiltonian, &flat)
            };
            let h0 = h(0.0);
            let coefficient = sign * first_order_term(x).expect("two sites");
            let remainder = |z: f64| ((h(z) - h0) / z - coefficient).abs();
            let mut worst = Outcome::zero();
            for &z in &EXPANSION_Z {
                let (full, half) = (remainder(z), remainder(z / 2.0));
                if full == 0.0 && half == 0.0 {
                    continue;
                }
                worst = worst.worst(Outcome::new((full / half - 2.0).abs(), 1.0));
            }
            worst
        },
        |x| json!({ "q": x.q, "p": x.p }),
    )
}

/// `sinh(z sum x_i)/z = sum_i (sinh(z x_i)/z) e^{z K_i^(m)(x)}` for `m <= 8`.
pub fn check_sinh_identity(plan: &SamplingPlan) -> VerificationReport {
    sinh_identity_report(plan, false)
}

/// The identity with the `e^{z K}` dressing dropped.
pub fn sinh_identity_negative_control(plan: &SamplingPlan) -> VerificationReport {
    sinh_identity_report(plan, true)
}

fn sinh_identity_report(plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let mut zs: Vec<f64> = SINH_IDENTITY_Z.to_vec();
    zs.extend(plan.z_values.iter().filter(|z| !SINH_IDENTITY_Z.contains(z)));
    let mut sampler = plan.sampler();
    let mut samples: Vec<(f64, Vec<f64>)> = Vec::new();
    for i in 0..plan.count {
        let m = 1 + i % SINH_IDENTITY_MAX_M;
        let x = sampler.vector(m);
        samples.extend(zs.iter().map(|&z| (z, x.clone())));
    }
    let ctx = CheckContext {
        check: format!("sinh-identity[m<={}{}]", SINH_IDENTITY_MAX_M, fault_tag(negative)),
        plan,
        tolerance: plan.tolerance.unwrap_or(1e-11),
        negative_control: negative,
    };
    let dressing = if negative { 0.0 } else { 1.0 };
    ctx.run(
        &samples,
        |(z, x)| {
            let total: f64 = x.iter().sum();
            let lhs = total * sinhc_f64(z * total);
            let k = k_functions(x.len(), x);
            let terms: Vec<f64> = x
                .iter()
                .zip(&k)
                .map(|(xi, ki)| xi * sinhc_f64(z * xi) * (dressing * z * ki).exp())
                .collect();
            let rhs: f64 = terms.iter().sum();
            let scale = terms.iter().map(|t| t.abs()).sum::<f64>().max(lhs.abs());
            Outcome::new((lhs - rhs).abs(), scale)
        },
        |(z, x)| json!({ "z": z, "x": x }),
    )
}

/// The full deformed Gaudin expansion equals its cone-simplified form on the
/// zero cone.
pub fn check_cone_simplification(n: usize, z: f64, plan: &SamplingPlan) -> VerificationReport {
    cone_report(n, z, plan, false)
}

/// The same comparison on states off the cone, where the one-site terms survive.
pub fn cone_negative_control(n: usize, z: f64, plan: &SamplingPlan) -> VerificationReport {
    cone_report(n, z, plan, true)
}

fn cone_report(n: usize, z: f64, plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let mut sampler = plan.sampler();
    let samples: Vec<Vec<f64>> = (0..plan.count).map(|_| sampler.spin_sites(n, !negative)).collect();
    let ctx = CheckContext {
        check: format!("cone-simplification[N={} z={}{}]", n, z, fault_tag(negative)),
        plan,
        tolerance: plan.tolerance.unwrap_or(1e-11),
        negative_control: negative,
    };
    ctx.run(
        &samples,
        |x| {
            let full = gaudin_closed_form(x, z, GaudinForm::Full);
            let cone = gaudin_closed_form(x, z, GaudinForm::Cone);
            let scale = gaudin_pair_magnitudes(x, z);
            full.iter()
                .zip(&cone)
                .zip(&scale)
                .skip(1)
                .map(|((a, b), s)| Outcome::new((a - b).abs(), *s))
                .fold(Outcome::zero(), Outcome::worst)
        },
        describe_flat(RealizationKind::SpinUndeformed),
    )
}

/// The pairwise expansion with coefficient 1 on `s3^i s3^j` against the
/// coproduct image of the Casimir. Reported as a control: they differ.
pub fn check_printed_gaudin_form(n: usize, z: f64, plan: &SamplingPlan) -> VerificationReport {
    let mut sampler = plan.sampler();
    let cone = z != 0.0;
    let samples: Vec<Vec<f64>> = (0..plan.count).map(|_| sampler.spin_sites(n, cone)).collect();
    let ctx = CheckContext {
        check: format!("gaudin-printed-form[N={n} z={z} control]"),
        plan,
        tolerance: plan.tolerance.unwrap_or(1e-11),
        negative_control: true,
    };
    ctx.run(
        &samples,
        |x| {
            let image = gaudin_closed_form(x, z, GaudinForm::Full);
            let printed = gaudin_closed_form(x, z, GaudinForm::Printed);
            let scale = gaudin_pair_magnitudes(x, z);
            image
                .iter()
                .zip(&printed)
                .zip(&scale)
                .skip(1)
                .map(|((a, b), s)| Outcome::new((a - b).abs(), *s))
                .fold(Outcome::zero(), Outcome::worst)
        },
        describe_flat(RealizationKind::SpinUndeformed),
    )
}

/// Spin quantities at `sigma = (q^2, p^2, q p)` reproduce the canonical ones:
/// generators, harmonic Hamiltonian and Casimirs for every `m <= n`.
pub fn check_spin_canonical_bridge(n: usize, z: f64, plan: &SamplingPlan) -> VerificationReport {
    bridge_report(n, z, plan, false)
}

/// The bridge with `sigma_plus = p^2 + 1`, which leaves the cone.
pub fn bridge_negative_control(n: usize, z: f64, plan: &SamplingPlan) -> VerificationReport {
    bridge_report(n, z, plan, true)
}

/// Substitutes `sigma_i = (q_i^2, p_i^2 [+ shift], q_i p_i)`.
pub fn spin_image(x: &PhasePoint, plus_shift: f64) -> Vec<f64> {
    x.q.iter()
        .zip(&x.p)
        .flat_map(|(q, p)| [q * q, p * p + plus_shift, q * p])
        .collect()
}

fn bridge_report(n: usize, z: f64, plan: &SamplingPlan, negative: bool) -> VerificationReport {
    let canonical = Realization::for_family(false, z).expect("finite z");
    let spin = Realization::for_family(true, z).expect("finite z");
    let shift = if negative { 1.0 } else { 0.0 };
    let mut sampler = plan.sampler();
    let samples: Vec<PhasePoint> = (0..plan.count).map(|_| sampler.phase_point(n, z != 0.0)).collect();
    let ctx = CheckContext {
        check: format!("spin-canonical-bridge[N={} z={}{}]", n, z, fault_tag(negative)),
        plan,
        tolerance: plan.tolerance.unwrap_or(1e-11),
        negative_control: negative,
    };
    let harmonic = PotentialSpec::Harmonic { omega: 1.0 };
    ctx.run(
        &samples,
        |x| {
            let flat = x.to_flat();
            let sigma = spin_image(x, shift);
            let mut worst = Outcome::zero();
            let mut compare = |a: f64, b: f64, scale: f64| {
                worst = worst.worst(Outcome::new((a - b).abs(), scale.max(a.abs()).max(b.abs())));
            };
            for m in 1..=n {
                let gc = realized_generators(&flat, m, canonical);
                let gs = realized_generators(&sigma, m, spin);
                for gen in Generator::ALL {
                    compare(*gc.get(gen), *gs.get(gen), 1.0);
                }
                let hc = gc.plus + harmonic.eval(&gc.minus);
                let hs = gs.plus + harmonic.eval(&gs.minus);
                compare(hc, hs, 1.0);
                if m >= 2 {
                    let cc = casimir_of(&gc, canonical.effective_z());
                    let cs = casimir_of(&gs, spin.effective_z());
                    compare(cc, cs, casimir_magnitude(&gc, canonical.effective_z()));
                }
            }
            let cc = casimirs_closed_form(&flat, canonical);
            let cs = casimirs_closed_form(&sigma, spin);
            let mags = gaudin_pair_magnitudes(&sigma, spin.effective_z());
            for (k, (a, b)) in cc.iter().zip(&cs).enumerate() {
                compare(*a, *b, mags[k + 1]);
            }
            worst
        },
        |x| json!({ "q": x.q, "p": x.p }),
    )
}

/// Named groups of checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Involution,
    Homomorphism,
    Oracle,
    ClassicalLimit,
    Expansion,
    SinhIdentity,
    ConeSimplification,
    Bridge,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Involution,
        Suite::Homomorphism,
        Suite::Oracle,
        Suite::ClassicalLimit,
        Suite::Expansion,
        Suite::SinhIdentity,
        Suite::ConeSimplification,
        Suite::Bridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Involution => "involution",
            Suite::Homomorphism => "homomorphism",
            Suite::Oracle => "oracle",
            Suite::ClassicalLimit => "classical-limit",
            Suite::Expansion => "expansion",
            Suite::SinhIdentity => "sinh-identity",
            Suite::ConeSimplification => "cone-simplification",
            Suite::Bridge => "bridge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|suite| suite.name() == s)
    }

    /// Whether the suite says anything about `spec`.
    pub fn applies_to(self, spec: &SystemSpec) -> bool {
        let n = spec.n_sites;
        let spin = spec.realization.is_spin();
        match self {
            Suite::Involution | Suite::ClassicalLimit => n >= 2,
            Suite::Expansion => !spin,
            Suite::ConeSimplification => spin && n >= 2,
            Suite::Homomorphism | Suite::Oracle | Suite::SinhIdentity | Suite::Bridge => true,
        }
    }
}

/// Deformations at which the classical-limit ratio is measured, each
/// against a tenth of itself.
pub const CLASSICAL_LIMIT_LADDER: [f64; 3] = [1e-4, 1e-6, 1e-8];

/// Runs one suite for `spec`: the check(s) followed by negative control(s).
pub fn run_suite(suite: Suite, spec: &SystemSpec, plan: &SamplingPlan, fault: Option<Fault>) -> Vec<VerificationReport> {
    let n = spec.n_sites;
    let spin = spec.realization.is_spin();
    let z = spec.z;
    match suite {
        Suite::Involution => {
            let family = build_system(spec).expect("validated spec").with_fault(fault);
            vec![
                check_involution_family(&family, plan),
                involution_negative_control(spec, plan),
            ]
        }
        Suite::Homomorphism => vec![
            check_homomorphism(spec.realization, z, n, plan),
            homomorphism_negative_control(spin, z, n, plan),
        ],
        Suite::Oracle => vec![
            check_oracle_equivalence(spec.realization(), n, plan),
            oracle_negative_control(spin, z, n, plan),
        ],
        Suite::ClassicalLimit => vec![
            check_classical_limit(spin, n, plan),
            classical_limit_negative_control(spin, plan),
        ],
        Suite::Expansion => vec![check_expansion(plan), expansion_negative_control(plan)],
        Suite::SinhIdentity => vec![check_sinh_identity(plan), sinh_identity_negative_control(plan)],
        Suite::ConeSimplification => {
            let cz = if z == 0.0 { CONTROL_Z } else { z };
            vec![
                check_cone_simplification(n, z, plan),
                cone_negative_control(n, cz, plan),
                check_printed_gaudin_form(n, z, plan),
            ]
        }
        Suite::Bridge => vec![
            check_spin_canonical_bridge(n, z, plan),
            bridge_negative_control(n, z, plan),
        ],
    }
}

/// Runs every applicable suite (or the selected ones) in a fixed order.
pub fn run_suites(
    spec: &SystemSpec,
    plan: &SamplingPlan,
    selected: Option<&[Suite]>,
    fault: Option<Fault>,
) -> Vec<VerificationReport> {
    Suite::ALL
        .into_iter()
        .filter(|s| selected.is_none_or(|sel| sel.contains(s)))
        .filter(|s| s.applies_to(spec))
        .flat_map(|s| run_suite(s, spec, plan, fault))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_is_deterministic() {
        let plan = SamplingPlan::new(42, 3);
        let a: Vec<_> = (0..5).map({
            let mut s = plan.sampler();
            move |_| s.phase_point(3, true)
        }).collect();
        let b: Vec<_> = (0..5).map({
            let mut s = plan.sampler();
            move |_| s.phase_point(3, true)
        }).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.q.iter().all(|q| q.abs() >= MIN_SAMPLED_Q)));
    }

    #[test]
    fn cone_samples_lie_on_the_cone() {
        let mut s = SamplingPlan::new(3, 1).sampler();
        for _ in 0..50 {
            let x = s.spin_sites(4, true);
            let state = crate::SpinChainState::from_flat(&x).unwrap();
            state.check_cone().unwrap();
        }
    }

    #[test]
    fn default_tolerance_formula() {
        let plan = SamplingPlan::default();
        assert!((plan.tolerance_for(4) - 1e-12 * 16.0 * 16.0).abs() < 1e-24);
        let tight = SamplingPlan { range: 0.5, ..SamplingPlan::default() };
        assert!((tight.tolerance_for(2) - 4e-12).abs() < 1e-24);
    }

    #[test]
    fn report_invariant_holds() {
        let plan = SamplingPlan::new(1, 20);
        let spec = SystemSpec::new(3, 0.2, PotentialSpec::Quartic, false).unwrap();
        for r in run_suites(&spec, &plan, None, None) {
            assert_eq!(r.passed, r.max_abs_residual <= r.tolerance * r.scale, "{r:?}");
            assert!(r.ok(), "{r:?}");
        }
    }

    #[test]
    fn increments_match_direct_differences() {
        let mut s = SamplingPlan::new(9, 1).sampler();
        for spin in [false, true] {
            let kind = Realization::for_family(spin, 0.2).unwrap().kind;
            for n in 1..=5 {
                let x = s.state(n, kind);
                let quantities = |z: f64| {
                    let r = Realization::for_family(spin, z).unwrap();
                    let g = realized_generators(&x, n, r);
                    let mut out = vec![g.plus, g.three];
                    out.extend(casimirs_closed_form(&x, r));
                    out
                };
                let (a, b) = (quantities(0.2), quantities(0.0));
                let inc = deformation_increments(&x, n, spin, 0.2);
                assert_eq!(inc.len(), a.len());
                for k in 0..a.len() {
                    let direct = a[k] - b[k];
                    assert!((inc[k] - direct).abs() <= 1e-12 * (1.0 + a[k].abs() + b[k].abs()), "{k}: {} vs {direct}", inc[k]);
                }
            }
        }
    }

    #[test]
    fn sinhc_minus_one_branches_agree() {
        for u in [0.49999_f64, 0.5, -0.5, 0.3, 1e-3] {
            let direct = u.sinh() / u - 1.0;
            assert!((sinhc_minus_one(u) - direct).abs() <= 1e-14, "{u}");
        }
        assert_eq!(sinhc_minus_one(0.0), 0.0);
        assert!((sinhc_minus_one(1e-8) - 1e-16 / 6.0).abs() < 1e-30);
    }

    #[test]
    fn expansion_point_with_zero_momenta_is_exact() {
        let x = PhasePoint::new(vec![0.7, -1.2], vec![0.0, 0.0]).unwrap();
        for z in EXPANSION_Z {
            assert_eq!(expansion_remainder(&x, z), 0.0);
        }
    }

    #[test]
    fn expansion_remainder_halves() {
        let x = PhasePoint::new(vec![0.7, -1.2], vec![0.3, 1.1]).unwrap();
        let ratio = expansion_remainder(&x, 1e-3) / expansion_remainder(&x, 5e-4);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }
}
