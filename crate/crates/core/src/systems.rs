//! Concrete Hamiltonians `H = J+ + F(J-)` and their Casimir integral families
//! in canonical and spin realizations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bracket_engine::{Field, PhasePoint, SpinChainState};
use crate::coalgebra::{
    build_casimir, build_coproduct, canonical_generators, spin_generators, AlgebraSpec, CoproductExpr,
    Generator, Realization, RealizationKind,
};
use crate::dual::Scalar;
use crate::error::{Error, Result};

/// The potential `F(u)` evaluated at `u = J-^(N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PotentialSpec {
    /// `F(u) = omega^2 u`.
    Harmonic { omega: f64 },
    /// `F(u) = u^2`.
    Quartic,
    /// `F(u) = sum_k c_k u^k`.
    Polynomial(Vec<f64>),
    None,
}

impl PotentialSpec {
    pub fn eval<S: Scalar>(&self, u: &S) -> S {
        match self {
            Self::Harmonic { omega } => u.clone() * (omega * omega),
            Self::Quartic => u.square(),
            Self::Polynomial(c) => c
                .iter()
                .rev()
                .fold(S::from_f64(0.0), |acc, &ck| acc * u + ck),
            Self::None => S::from_f64(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Harmonic { omega } if !(omega.is_finite() && *omega > 0.0) => Err(
                Error::InvalidSpec(format!("harmonic frequency must be positive, got {omega}")),
            ),
            Self::Polynomial(c) if c.iter().any(|v| !v.is_finite()) => Err(Error::InvalidSpec(
                "polynomial coefficients must be finite".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Harmonic { omega } => write!(f, "harmonic:{omega}"),
            Self::Quartic => write!(f, "quartic"),
            Self::Polynomial(c) => {
                let coeffs: Vec<String> = c.iter().map(f64::to_string).collect();
                write!(f, "poly:{}", coeffs.join(","))
            }
            Self::None => write!(f, "none"),
        }
    }
}

impl FromStr for PotentialSpec {
    type Err = Error;

    /// `harmonic:<omega> | quartic | poly:<c0,c1,...> | none`
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidSpec(format!("potential '{s}': {why}"));
        let (tag, arg) = match s.split_once(':') {
            Some((t, a)) => (t.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let parsed = match (tag, arg) {
            ("harmonic", Some(a)) => Self::Harmonic {
                omega: a.parse().map_err(|_| bad("omega is not a number"))?,
            },
            ("harmonic", None) => return Err(bad("expected harmonic:<omega>")),
            ("quartic", None) => Self::Quartic,
            ("none", None) => Self::None,
            ("poly", Some(a)) => Self::Polynomial(
                a.split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("coefficients must be numbers"))?,
            ),
            _ => return Err(bad("expected harmonic:<omega> | quartic | poly:<c0,c1,...> | none")),
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

impl From<PotentialSpec> for String {
    fn from(p: PotentialSpec) -> Self {
        p.to_string()
    }
}

impl TryFrom<String> for PotentialSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n_sites: usize,
    pub z: f64,
    pub potential: PotentialSpec,
    pub realization: RealizationKind,
}

impl SystemSpec {
    /// Canonical or spin family, deformed exactly when `z != 0`.
    pub fn new(n_sites: usize, z: f64, potential: PotentialSpec, spin: bool) -> Result<Self> {
        let realization = Realization::for_family(spin, z)?.kind;
        let spec = Self {
            n_sites,
            z,
            potential,
            realization,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::InvalidSpec("n_sites must be at least 1".into()));
        }
        Realization::new(self.realization, self.z)
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        self.potential.validate()?;
        if self.realization.is_spin()
            && !matches!(self.potential, PotentialSpec::Harmonic { .. } | PotentialSpec::None)
        {
            return Err(Error::InvalidSpec(format!(
                "spin realizations take a harmonic or no potential, got {}",
                self.potential
            )));
        }
        Ok(())
    }

    pub fn realization(&self) -> Realization {
        Realization {
            kind: self.realization,
            z: self.z,
        }
    }

    /// Length of the flat coordinate vector.
    pub fn arity(&self) -> usize {
        self.n_sites * self.realization.coords_per_site()
    }
}

/// Which of the two independent routes evaluates the family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalPath {
    #[default]
    ClosedForm,
    /// Recursion-built coproduct expressions.
    Oracle,
}

/// Deliberate defects for negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Integrals taken from the undeformed realization regardless of `z`.
    UndeformedCasimir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    Hamiltonian,
    /// `C^(m)`, `2 <= m <= N`.
    Casimir(usize),
}

#[derive(Clone, Debug)]
struct OracleExprs {
    plus: CoproductExpr,
    minus: CoproductExpr,
    /// `casimirs[m - 2]` spans `m` slots.
    casimirs: Vec<CoproductExpr>,
    casimir_kind: RealizationKind,
}

/// `H^(N)` plus the integrals `C^(2)..C^(N)` of one system.
#[derive(Clone, Debug)]
pub struct IntegralFamily {
    spec: SystemSpec,
    path: EvalPath,
    fault: Option<Fault>,
    oracle: Option<OracleExprs>,
}

/// Builds `H^(N) = J+^(N) + F(J-^(N))` and its Casimir integrals.
pub fn build_system(spec: &SystemSpec) -> Result<IntegralFamily> {
    spec.validate()?;
    Ok(IntegralFamily {
        spec: spec.clone(),
        path: EvalPath::ClosedForm,
        fault: None,
        oracle: None,
    })
}

impl IntegralFamily {
    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn path(&self) -> EvalPath {
        self.path
    }

    pub fn n_sites(&self) -> usize {
        self.spec.n_sites
    }

    pub fn with_path(mut self, path: EvalPath) -> Self {
        self.path = path;
        self.rebuild_oracle();
        self
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self.rebuild_oracle();
        self
    }

    fn casimir_realization(&self) -> Realization {
        match self.fault {
            Some(Fault::UndeformedCasimir) => Realization {
                kind: if self.spec.realization.is_spin() {
                    RealizationKind::SpinUndeformed
                } else {
                    RealizationKind::CanonicalUndeformed
                },
                z: 0.0,
            },
            None => self.spec.realization(),
        }
    }

    fn rebuild_oracle(&mut self) {
        if self.path != EvalPath::Oracle {
            self.oracle = None;
            return;
        }
        let n = self.spec.n_sites;
        let z = self.spec.realization().effective_z();
        let cas = self.casimir_realization();
        let algebra = AlgebraSpec::realized(cas.effective_z()).expect("validated z");
        self.oracle = Some(OracleExprs {
            plus: build_coproduct(Generator::JPlus, n, z),
            minus: build_coproduct(Generator::JMinus, n, z),
            casimirs: (2..=n).map(|m| build_casimir(m, algebra)).collect(),
            casimir_kind: cas.kind,
        });
    }

    pub fn hamiltonian(&self) -> ObservableField<'_> {
        ObservableField {
            family: self,
            which: Observable::Hamiltonian,
        }
    }

    /// `C^(m)` for `2 <= m <= N`.
    pub fn integral(&self, m: usize) -> Result<ObservableField<'_>> {
        if m < 2 || m > self.spec.n_sites {
            return Err(Error::Index(format!(
                "integral C^({m}) outside 2..={}",
                self.spec.n_sites
            )));
        }
        Ok(ObservableField {
            family: self,
            which: Observable::Casimir(m),
        })
    }

    /// The `N - 1` integrals `C^(2)..C^(N)`.
    pub fn integrals(&self) -> Vec<ObservableField<'_>> {
        (2..=self.spec.n_sites)
            .map(|m| ObservableField {
                family: self,
                which: Observable::Casimir(m),
            })
            .collect()
    }

    pub fn eval<S: Scalar>(&self, which: Observable, x: &[S]) -> S {
        match which {
            Observable::Hamiltonian => self.eval_hamiltonian(x),
            Observable::Casimir(m) => match self.path {
                EvalPath::ClosedForm => {
                    let n = self.spec.n_sites;
                    let r = self.casimir_realization();
                    let x = truncate_flat(x, n, m, r.kind);
                    casimirs_closed_form(&x, r).pop().expect("m >= 2")
                }
                EvalPath::Oracle => {
                    let o = self.oracle.as_ref().expect("oracle built");
                    o.casimirs[m - 2].eval(x, o.casimir_kind)
                }
            },
        }
    }

    /// `[H, C^(2), .., C^(N)]` in one pass.
    pub fn eval_all<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![self.eval_hamiltonian(x)];
        match self.path {
            EvalPath::ClosedForm => out.extend(casimirs_closed_form(x, self.casimir_realization())),
            EvalPath::Oracle => {
                let o = self.oracle.as_ref().expect("oracle built");
                out.extend(o.casimirs.iter().map(|e| e.eval(x, o.casimir_kind)));
            }
        }
        out
    }

    fn eval_hamiltonian<S: Scalar>(&self, x: &[S]) -> S {
        let r = self.spec.realization();
        let (plus, minus) = match self.path {
            EvalPath::ClosedForm => {
                let g = if r.kind.is_spin() {
                    spin_generators(x, r.effective_z())
                } else {
                    let n = x.len() / 2;
                    canonical_generators(&x[..n], &x[n..], r.effective_z())
                };
                (g.plus, g.minus)
            }
            EvalPath::Oracle => {
                let o = self.oracle.as_ref().expect("oracle built");
                (o.plus.eval(x, r.kind), o.minus.eval(x, r.kind))
            }
        };
        plus + &self.spec.potential.eval(&minus)
    }
}

/// Copies the first `m` sites of an `n`-site flat state.
fn truncate_flat<S: Scalar>(x: &[S], n: usize, m: usize, kind: RealizationKind) -> Vec<S> {
    if kind.is_spin() {
        x[..3 * m].to_vec()
    } else {
        x[..m].iter().chain(&x[n..n + m]).cloned().collect()
    }
}

/// A member of an [`IntegralFamily`] viewed as a phase-space field.
#[derive(Clone, Copy, Debug)]
pub struct ObservableField<'a> {
    family: &'a IntegralFamily,
    which: Observable,
}

impl ObservableField<'_> {
    pub fn which(&self) -> Observable {
        self.which
    }
}

impl Field for ObservableField<'_> {
    fn arity(&self) -> usize {
        self.family.spec.arity()
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        self.family.eval(self.which, x)
    }
}

/// `sum_{i<j<m} pair(i,j) e^{z K_ij^(m)(x)} + sum_{i<m} diag(i) e^{2 z K_i^(m)(x)}`
/// for every `m = 1..=N`.
///
/// With `P_k` the prefix sums of `x` and `phi_k = -z (x_k + 2 P_k)`, the
/// exponents factor as `z K_ij^(m) = phi_i + phi_j + 2 z P_m` and
/// `2 z K_i^(m) = 2 phi_i + 2 z P_m`, so all chain lengths share one O(N^2) pass.
pub fn dressed_pair_sums<S: Scalar>(
    x: &[S],
    z: f64,
    diag: Option<&[S]>,
    pair: impl Fn(usize, usize) -> S,
) -> Vec<S> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    if z == 0.0 {
        let mut acc = S::from_f64(0.0);
        for j in 0..n {
            if let Some(d) = diag {
                acc = acc + &d[j];
            }
            for i in 0..j {
                acc = acc + &pair(i, j);
            }
            out.push(acc.clone());
        }
        return out;
    }
    let mut prefix = S::from_f64(0.0);
    let mut phi_exp = Vec::with_capacity(n);
    let mut acc = S::from_f64(0.0);
    for j in 0..n {
        let phi = -((x[j].clone() + &(prefix.clone() * 2.0)) * z);
        let e = phi.exp();
        if let Some(d) = diag {
            acc = acc + &(d[j].clone() * &e.square());
        }
        for (i, ei) in phi_exp.iter().enumerate() {
            acc = acc + &(pair(i, j) * ei * &e);
        }
        phi_exp.push(e);
        prefix = prefix + &x[j];
        out.push(acc.clone() * &(prefix.clone() * (2.0 * z)).exp());
    }
    out
}

/// Closed-form `C^(2)..C^(N)` (length `N - 1`) for a flat state of either kind.
pub fn casimirs_closed_form<S: Scalar>(x: &[S], realization: Realization) -> Vec<S> {
    let z = realization.effective_z();
    let mut all = if realization.kind.is_spin() {
        gaudin_closed_form(x, z, GaudinForm::Full)
    } else {
        let n = x.len() / 2;
        let (q, p) = x.split_at(n);
        let q2: Vec<S> = q.iter().map(Scalar::square).collect();
        let a: Vec<S> = q2.iter().map(|v| (v.clone() * z).sinhc()).collect();
        dressed_pair_sums(&q2, z, None, |i, j| {
            let l = q[i].clone() * &p[j] - &(q[j].clone() * &p[i]);
            -(a[i].clone() * &a[j] * &l.square())
        })
    };
    all.remove(0);
    all
}

/// Variants of the pairwise Gaudin expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaudinForm {
    /// Coproduct image of the Casimir: one-site terms plus pair terms with
    /// `2 s3^i s3^j - s-^i s+^j - s+^i s-^j`.
    Full,
    /// Pair terms only; equal to `Full` on the zero cone.
    Cone,
    /// The expansion with coefficient 1 on `s3^i s3^j`, one-site terms included.
    Printed,
    /// Coefficient 1 on `s3^i s3^j`, pair terms only.
    PrintedCone,
}

/// `C^(m)` for `m = 1..=N` of a spin chain in the chosen pairwise form.
pub fn gaudin_closed_form<S: Scalar>(sites: &[S], z: f64, form: GaudinForm) -> Vec<S> {
    let n = sites.len() / 3;
    let sm: Vec<S> = (0..n).map(|i| sites[3 * i].clone()).collect();
    let sp = |i: usize| &sites[3 * i + 1];
    let s3 = |i: usize| &sites[3 * i + 2];
    let b: Vec<S> = sm.iter().map(|v| (v.clone() * z).sinhc()).collect();
    let coupling = match form {
        GaudinForm::Full | GaudinForm::Cone => 2.0,
        GaudinForm::Printed | GaudinForm::PrintedCone => 1.0,
    };
    let diag: Option<Vec<S>> = matches!(form, GaudinForm::Full | GaudinForm::Printed).then(|| {
        (0..n)
            .map(|i| {
                let c = s3(i).square() - &(sm[i].clone() * sp(i));
                b[i].square() * &c
            })
            .collect()
    });
    dressed_pair_sums(&sm, z, diag.as_deref(), |i, j| {
        let t = s3(i).clone() * s3(j) * coupling
            - &(sm[i].clone() * sp(j))
            - &(sp(i).clone() * &sm[j]);
        b[i].clone() * &b[j] * &t
    })
}

/// `p1^2 q2^2 - p2^2 q1^2`, the first-order coefficient of `H_z^(2)` in `z`.
pub fn first_order_term(x: &PhasePoint) -> Result<f64> {
    if x.n_sites() != 2 {
        return Err(Error::InvalidState(format!(
            "first-order term is defined for two sites, got {}",
            x.n_sites()
        )));
    }
    Ok(x.p[0] * x.p[0] * x.q[1] * x.q[1] - x.p[1] * x.p[1] * x.q[0] * x.q[0])
}

/// Largest pairwise-form disagreement accepted on the cone, relative to the
/// magnitude of the pair terms.
const CONE_FORM_TOLERANCE: f64 = 1e-9;

/// Gaudin Hamiltonians `C^(2)..C^(N)` of a spin system.
///
/// Deformed systems must sit on the zero cone; both the full and the
/// cone-simplified expansions are evaluated and required to agree.
pub fn gaudin_integrals(spec: &SystemSpec, state: &SpinChainState) -> Result<Vec<f64>> {
    spec.validate()?;
    if !spec.realization.is_spin() {
        return Err(Error::Realization(format!(
            "gaudin integrals need a spin realization, got {}",
            spec.realization.name()
        )));
    }
    if state.n_sites() != spec.n_sites {
        return Err(Error::Dimension {
            expected: spec.n_sites,
            found: state.n_sites(),
        });
    }
    let x = state.to_flat();
    let z = spec.realization().effective_z();
    let mut full = gaudin_closed_form(&x, z, GaudinForm::Full);
    full.remove(0);
    if spec.realization.is_deformed() {
        state.check_cone()?;
        let mut cone = gaudin_closed_form(&x, z, GaudinForm::Cone);
        cone.remove(0);
        let magnitudes = gaudin_pair_magnitudes(&x, z);
        for (m, (a, b)) in full.iter().zip(&cone).enumerate() {
            let scale = magnitudes[m + 1].max(1.0);
            if (a - b).abs() > CONE_FORM_TOLERANCE * scale {
                return Err(Error::Inconsistent(format!(
                    "full and cone forms of C^({}) differ: {a} vs {b}",
                    m + 2
                )));
            }
        }
    }
    Ok(full)
}

/// Sum of absolute pair terms for each `m`, the natural scale of `C^(m)`.
pub fn gaudin_pair_magnitudes(sites: &[f64], z: f64) -> Vec<f64> {
    let n = sites.len() / 3;
    let abs: Vec<f64> = sites.iter().map(|v| v.abs()).collect();
    let sm: Vec<f64> = (0..n).map(|i| sites[3 * i]).collect();
    let b: Vec<f64> = sm.iter().map(|v| (v * z).sinhc()).collect();
    // Dressing magnitudes are positive, so evaluating the pair sums on
    // absolute terms bounds the cancellation-free size.
    dressed_pair_sums(&sm, z, None, |i, j| {
        (b[i] * b[j]).abs()
            * (2.0 * abs[3 * i + 2] * abs[3 * j + 2]
                + abs[3 * i] * abs[3 * j + 1]
                + abs[3 * i + 1] * abs[3 * j])
    })
}
