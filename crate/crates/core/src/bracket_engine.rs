//! Exact partial derivatives of phase-space functions and the canonical and
//! Lie-Poisson brackets built from them.

use serde::{Deserialize, Serialize};

use crate::dual::{seed, seed_second_order, Dual, Scalar};
use crate::error::{Error, Result};

/// A scalar function over a flat coordinate vector.
///
/// Canonical fields use the layout `[q_1..q_N, p_1..p_N]`; spin fields use
/// one `(sigma_minus, sigma_plus, sigma_three)` triple per site.
pub trait Field: Sync {
    /// Number of flat coordinates the field expects.
    fn arity(&self) -> usize;

    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

impl<F: Field + ?Sized> Field for &F {
    fn arity(&self) -> usize {
        (**self).arity()
    }
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        (**self).eval(x)
    }
}

/// Canonical coordinates of an N-body chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(Error::InvalidState(format!(
                "phase point needs q.len == p.len >= 1, got {} and {}",
                q.len(),
                p.len()
            )));
        }
        if let Some(k) = q.iter().chain(&p).position(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!(
                "non-finite entry for {}",
                canonical_coordinate_name(k, q.len())
            )));
        }
        Ok(Self { q, p })
    }

    pub fn n_sites(&self) -> usize {
        self.q.len()
    }

    /// `[q_1..q_N, p_1..p_N]`
    pub fn to_flat(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::Dimension {
                expected: x.len() + 1,
                found: x.len(),
            });
        }
        let n = x.len() / 2;
        Self::new(x[..n].to_vec(), x[n..].to_vec())
    }

    /// The first `m` sites.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.n_sites() {
            return Err(Error::Index(format!(
                "cannot take {m} sites of a {}-site phase point",
                self.n_sites()
            )));
        }
        Ok(Self {
            q: self.q[..m].to_vec(),
            p: self.p[..m].to_vec(),
        })
    }
}

/// Per-site hyperbolic spin triples `(sigma_minus, sigma_plus, sigma_three)`
/// with their one-site Casimirs `c_i = sigma_three^2 - sigma_minus sigma_plus`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinChainState {
    sites: Vec<[f64; 3]>,
    casimirs: Vec<f64>,
}

/// Relative tolerance for treating a one-site Casimir as zero.
pub const CONE_TOLERANCE: f64 = 1e-10;

pub fn site_casimir<S: Scalar>(site: &[S]) -> S {
    site[2].square() - &(site[0].clone() * &site[1])
}

impl SpinChainState {
    pub fn new(sites: Vec<[f64; 3]>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidState("spin chain needs at least one site".into()));
        }
        if let Some(k) = sites.iter().flatten().position(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!(
                "non-finite entry for {}",
                spin_coordinate_name(k)
            )));
        }
        let casimirs = sites.iter().map(|s| site_casimir(&s[..])).collect();
        Ok(Self { sites, casimirs })
    }

    /// Builds a state on the zero cone, rejecting sites with `c_i != 0`.
    pub fn on_cone(sites: Vec<[f64; 3]>) -> Result<Self> {
        let state = Self::new(sites)?;
        state.check_cone()?;
        Ok(state)
    }

    /// Spin embedding of a canonical point with prescribed one-site Casimirs:
    /// `sigma_minus = q^2`, `sigma_plus = p^2 - c/q^2`, `sigma_three = q p`.
    pub fn from_canonical(x: &PhasePoint, casimirs: &[f64]) -> Result<Self> {
        if casimirs.len() != x.n_sites() {
            return Err(Error::Dimension {
                expected: x.n_sites(),
                found: casimirs.len(),
            });
        }
        let sites = x
            .q
            .iter()
            .zip(&x.p)
            .zip(casimirs)
            .map(|((&q, &p), &c)| {
                let q2 = q * q;
                let plus = if c == 0.0 { p * p } else { p * p - c / q2 };
                [q2, plus, q * p]
            })
            .collect();
        Self::new(sites)
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[[f64; 3]] {
        &self.sites
    }

    pub fn casimirs(&self) -> &[f64] {
        &self.casimirs
    }

    pub fn max_abs_casimir(&self) -> f64 {
        self.casimirs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Fails with the largest `|c_i|` when any site leaves the zero cone.
    pub fn check_cone(&self) -> Result<()> {
        let off = self.sites.iter().zip(&self.casimirs).any(|(s, c)| {
            let scale = (s[2] * s[2]).abs().max((s[0] * s[1]).abs()).max(1.0);
            c.abs() > CONE_TOLERANCE * scale
        });
        if off {
            Err(Error::ConeViolation {
                max_abs_casimir: self.max_abs_casimir(),
            })
        } else {
            Ok(())
        }
    }

    /// `(sm_1, sp_1, s3_1, sm_2, ...)`
    pub fn to_flat(&self) -> Vec<f64> {
        self.sites.iter().flatten().copied().collect()
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() % 3 != 0 {
            return Err(Error::Dimension {
                expected: 3 * (x.len() / 3 + 1),
                found: x.len(),
            });
        }
        Self::new(x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.n_sites() {
            return Err(Error::Index(format!(
                "cannot take {m} sites of a {}-site spin chain",
                self.n_sites()
            )));
        }
        Self::new(self.sites[..m].to_vec())
    }
}

pub fn canonical_coordinate_name(k: usize, n: usize) -> String {
    if k < n {
        format!("q{}", k + 1)
    } else {
        format!("p{}", k - n + 1)
    }
}

pub fn spin_coordinate_name(k: usize) -> String {
    let component = ["sigma_minus", "sigma_plus", "sigma_three"][k % 3];
    format!("{component}[{}]", k / 3 + 1)
}

/// Value and gradient of `f` at the flat point `x`.
pub fn gradient_flat<F: Field>(
    f: &F,
    x: &[f64],
    name: impl Fn(usize) -> String,
) -> Result<(f64, Vec<f64>)> {
    if f.arity() != x.len() {
        return Err(Error::Dimension {
            expected: f.arity(),
            found: x.len(),
        });
    }
    let out = f.eval(&seed(x));
    dual_gradient(&out, x.len(), name)
}

/// Unpacks a seeded dual result into `(value, gradient)`, rejecting non-finite entries.
pub fn dual_gradient(
    out: &Dual<f64>,
    n: usize,
    name: impl Fn(usize) -> String,
) -> Result<(f64, Vec<f64>)> {
    let g: Vec<f64> = (0..n).map(|k| out.deriv(k)).collect();
    if let Some(k) = g.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            coordinate: name(k),
        });
    }
    if !out.value.is_finite() {
        return Err(Error::NonFinite {
            coordinate: "value".into(),
        });
    }
    Ok((out.value, g))
}

/// Gradient ordered `d/dq_1..d/dq_N, d/dp_1..d/dp_N`.
pub fn grad<F: Field>(f: &F, x: &PhasePoint) -> Result<Vec<f64>> {
    let n = x.n_sites();
    gradient_flat(f, &x.to_flat(), |k| canonical_coordinate_name(k, n)).map(|(_, g)| g)
}

/// Value, gradient and Hessian (row-major, `n x n`) at the flat point `x`.
pub fn hessian_flat<F: Field>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if f.arity() != x.len() {
        return Err(Error::Dimension {
            expected: f.arity(),
            found: x.len(),
        });
    }
    let n = x.len();
    let out = f.eval(&seed_second_order(x));
    let value = out.value.value;
    let gradient: Vec<f64> = (0..n).map(|j| out.value.deriv(j)).collect();
    let mut hess = vec![0.0; n * n];
    for j in 0..n {
        let row = out.deriv(j);
        for i in 0..n {
            hess[j * n + i] = row.deriv(i);
        }
    }
    if !value.is_finite() || gradient.iter().chain(&hess).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            coordinate: "hessian".into(),
        });
    }
    Ok((value, gradient, hess))
}

/// A bracket value with the magnitude scale used to judge "zero".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    pub value: f64,
    /// `max(1, sum of |constituent terms|)`.
    pub scale: f64,
}

impl Bracket {
    pub fn scaled_residual(&self) -> f64 {
        self.value.abs() / self.scale
    }
}

/// Canonical bracket of two canonical-layout gradients.
pub fn canonical_bracket_from_gradients(df: &[f64], dg: &[f64]) -> Bracket {
    let n = df.len() / 2;
    let mut value = 0.0;
    let mut terms = 0.0;
    for i in 0..n {
        let a = df[i] * dg[n + i];
        let b = dg[i] * df[n + i];
        value += a - b;
        terms += a.abs() + b.abs();
    }
    Bracket {
        value,
        scale: terms.max(1.0),
    }
}

pub fn canonical_bracket_scaled<F: Field, G: Field>(f: &F, g: &G, x: &PhasePoint) -> Result<Bracket> {
    let df = grad(f, x)?;
    let dg = grad(g, x)?;
    Ok(canonical_bracket_from_gradients(&df, &dg))
}

/// `{f, g} = sum_i (df/dq_i dg/dp_i - dg/dq_i df/dp_i)`.
pub fn canonical_bracket<F: Field, G: Field>(f: &F, g: &G, x: &PhasePoint) -> Result<f64> {
    canonical_bracket_scaled(f, g, x).map(|b| b.value)
}

/// Lie-Poisson structure tensor of one site in `(sigma_minus, sigma_plus, sigma_three)` order:
/// `{s3, s+} = 2 s+`, `{s3, s-} = -2 s-`, `{s-, s+} = 4 s3`.
pub fn structure_tensor(site: &[f64]) -> [[f64; 3]; 3] {
    let (sm, sp, s3) = (site[0], site[1], site[2]);
    [
        [0.0, 4.0 * s3, 2.0 * sm],
        [-4.0 * s3, 0.0, -2.0 * sp],
        [-2.0 * sm, 2.0 * sp, 0.0],
    ]
}

/// Lie-Poisson bracket of two spin-layout gradients at the flat state `x`.
pub fn lie_poisson_from_gradients(x: &[f64], df: &[f64], dg: &[f64]) -> Bracket {
    let mut value = 0.0;
    let mut terms = 0.0;
    for ((site, a), b) in x.chunks(3).zip(df.chunks(3)).zip(dg.chunks(3)) {
        let pi = structure_tensor(site);
        for r in 0..3 {
            for c in 0..3 {
                if r != c {
                    let t = a[r] * pi[r][c] * b[c];
                    value += t;
                    terms += t.abs();
                }
            }
        }
    }
    Bracket {
        value,
        scale: terms.max(1.0),
    }
}

pub fn lie_poisson_bracket_scaled<F: Field, G: Field>(
    f: &F,
    g: &G,
    s: &SpinChainState,
) -> Result<Bracket> {
    let x = s.to_flat();
    let (_, df) = gradient_flat(f, &x, spin_coordinate_name)?;
    let (_, dg) = gradient_flat(g, &x, spin_coordinate_name)?;
    Ok(lie_poisson_from_gradients(&x, &df, &dg))
}

/// Bracket induced by the sl(2) structure constants, site by site; distinct
/// sites commute.
pub fn lie_poisson_bracket<F: Field, G: Field>(f: &F, g: &G, s: &SpinChainState) -> Result<f64> {
    lie_poisson_bracket_scaled(f, g, s).map(|b| b.value)
}

/// `x_dot = {x, H}` for spin variables, from a gradient of `H`.
pub fn lie_poisson_vector_field(x: &[f64], dh: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ((site, g), o) in x.chunks(3).zip(dh.chunks(3)).zip(out.chunks_mut(3)) {
        let pi = structure_tensor(site);
        for r in 0..3 {
            o[r] = (0..3).map(|c| pi[r][c] * g[c]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Coord(usize, usize);
    impl Field for Coord {
        fn arity(&self) -> usize {
            self.1
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            x[self.0].clone()
        }
    }

    struct QSquared;
    impl Field for QSquared {
        fn arity(&self) -> usize {
            4
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            x[0].square()
        }
    }

    #[test]
    fn grad_of_q_squared() {
        let x = PhasePoint::new(vec![3.0, -1.0], vec![0.5, 2.0]).unwrap();
        assert_eq!(grad(&QSquared, &x).unwrap(), vec![6.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn canonical_pair_brackets_to_one() {
        let x = PhasePoint::new(vec![0.3, 1.0], vec![-2.0, 0.1]).unwrap();
        assert_eq!(canonical_bracket(&Coord(0, 4), &Coord(2, 4), &x).unwrap(), 1.0);
        assert_eq!(canonical_bracket(&Coord(2, 4), &Coord(0, 4), &x).unwrap(), -1.0);
        assert_eq!(canonical_bracket(&Coord(0, 4), &Coord(3, 4), &x).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = PhasePoint::new(vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(
            canonical_bracket(&QSquared, &QSquared, &x),
            Err(Error::Dimension { expected: 4, found: 2 })
        ));
    }

    struct Reciprocal;
    impl Field for Reciprocal {
        fn arity(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            x[1].clone() / &x[0]
        }
    }

    #[test]
    fn non_finite_derivative_names_the_coordinate() {
        let x = PhasePoint::new(vec![0.0], vec![1.0]).unwrap();
        match grad(&Reciprocal, &x) {
            Err(Error::NonFinite { coordinate }) => assert_eq!(coordinate, "q1"),
            other => panic!("expected NaN detection, got {other:?}"),
        }
    }

    #[test]
    fn invalid_points_are_rejected() {
        assert!(PhasePoint::new(vec![], vec![]).is_err());
        assert!(PhasePoint::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(PhasePoint::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(SpinChainState::new(vec![[1.0, f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn structure_constants() {
        let s = SpinChainState::new(vec![[1.5, 4.0, -0.5], [2.0, 3.0, 1.0]]).unwrap();
        // {s3^1, s+^1} = 2 s+^1
        assert_eq!(lie_poisson_bracket(&Coord(2, 6), &Coord(1, 6), &s).unwrap(), 8.0);
        // different sites commute
        assert_eq!(lie_poisson_bracket(&Coord(2, 6), &Coord(3, 6), &s).unwrap(), 0.0);
        // {s-, s+} = 4 s3
        assert_eq!(lie_poisson_bracket(&Coord(3, 6), &Coord(4, 6), &s).unwrap(), 4.0);
        // {s3, s-} = -2 s-
        assert_eq!(lie_poisson_bracket(&Coord(2, 6), &Coord(0, 6), &s).unwrap(), -3.0);
    }

    struct SiteCasimir;
    impl Field for SiteCasimir {
        fn arity(&self) -> usize {
            3
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            site_casimir(x)
        }
    }

    #[test]
    fn one_site_casimir_is_central() {
        let s = SpinChainState::new(vec![[0.7, -1.3, 2.2]]).unwrap();
        for k in 0..3 {
            let b = lie_poisson_bracket_scaled(&SiteCasimir, &Coord(k, 3), &s).unwrap();
            assert!(b.scaled_residual() < 1e-15, "component {k}: {b:?}");
        }
    }

    #[test]
    fn canonical_embedding_carries_the_requested_casimir() {
        let x = PhasePoint::new(vec![0.8, -1.7], vec![1.1, 0.4]).unwrap();
        let s = SpinChainState::from_canonical(&x, &[0.25, -2.0]).unwrap();
        assert!((s.casimirs()[0] - 0.25).abs() < 1e-14);
        assert!((s.casimirs()[1] + 2.0).abs() < 1e-14);
        assert!(s.check_cone().is_err());
        let on = SpinChainState::from_canonical(&x, &[0.0, 0.0]).unwrap();
        assert!(on.check_cone().is_ok());
    }

    #[test]
    fn cone_violation_reports_max_casimir() {
        match SpinChainState::on_cone(vec![[1.0, 4.0, 2.0], [1.0, 1.0, 0.0]]) {
            Err(Error::ConeViolation { max_abs_casimir }) => assert_eq!(max_abs_casimir, 1.0),
            other => panic!("{other:?}"),
        }
    }
}
