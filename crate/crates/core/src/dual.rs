//! Forward-mode dual numbers and the [`Scalar`] abstraction.
//!
//! Every evaluator in this crate is generic over [`Scalar`], so the same code
//! path yields plain values (`f64`), exact gradients (`Dual<f64>`) or
//! gradients together with Hessians (`Dual<Dual<f64>>`).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use smallvec::SmallVec;

/// Below this magnitude `sinhc` switches to its Taylor series.
pub const SINHC_SERIES_THRESHOLD: f64 = 1e-4;

/// Arithmetic needed by phase-space evaluators.
pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;

    /// Real part.
    fn value(&self) -> f64;

    fn exp(&self) -> Self;
    fn sinh(&self) -> Self;
    fn cosh(&self) -> Self;

    /// `sinh(u)/u` with the removable singularity at zero filled in.
    fn sinhc(&self) -> Self;

    fn powi(&self, n: i32) -> Self;

    fn is_finite(&self) -> bool;

    fn square(&self) -> Self {
        self.clone() * self
    }

    /// Derivative of `sinhc`, `(u cosh u - sinh u)/u^2`.
    ///
    /// The closed form cancels catastrophically near zero, so `|u| < 1` uses
    /// the series `sum_k 2k u^(2k-1)/(2k+1)!` truncated below 1e-16.
    fn sinhc_prime(&self) -> Self {
        if self.value().abs() < 1.0 {
            // coefficients 2k/(2k+1)! for k = 1..=9, Horner in u^2
            const COEFFS: [f64; 9] = [
                2.0 / 6.0,
                4.0 / 120.0,
                6.0 / 5040.0,
                8.0 / 362_880.0,
                10.0 / 39_916_800.0,
                12.0 / 6_227_020_800.0,
                14.0 / 1_307_674_368_000.0,
                16.0 / 355_687_428_096_000.0,
                18.0 / 121_645_100_408_832_000.0,
            ];
            let u2 = self.square();
            let mut acc = Self::from_f64(COEFFS[COEFFS.len() - 1]);
            for c in COEFFS.iter().rev().skip(1) {
                acc = acc * &u2 + *c;
            }
            acc * self
        } else {
            (self.clone() * &self.cosh() - self.sinh()) / &self.square()
        }
    }
}

/// Plain `sinh(u)/u`; Taylor series `1 + u^2/6 + u^4/120` when `|u| < 1e-4`.
pub fn sinhc_f64(u: f64) -> f64 {
    if u.abs() < SINHC_SERIES_THRESHOLD {
        let u2 = u * u;
        1.0 + u2 / 6.0 + u2 * u2 / 120.0
    } else {
        u.sinh() / u
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sinh(&self) -> Self {
        f64::sinh(*self)
    }
    fn cosh(&self) -> Self {
        f64::cosh(*self)
    }
    fn sinhc(&self) -> Self {
        sinhc_f64(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

type Derivs<T> = SmallVec<[T; 8]>;

/// Dual number `value + sum_k derivs[k] e_k` with first-order infinitesimals `e_k`.
///
/// An empty derivative vector denotes a constant; it combines with any seeded
/// dual as if it carried zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T = f64> {
    pub value: T,
    pub derivs: Derivs<T>,
}

impl<T: Scalar> Dual<T> {
    pub fn constant(value: T) -> Self {
        Self {
            value,
            derivs: SmallVec::new(),
        }
    }

    /// Independent variable number `index` out of `n` seeded coordinates.
    pub fn variable(value: T, index: usize, n: usize) -> Self {
        let mut derivs: Derivs<T> = (0..n).map(|_| T::from_f64(0.0)).collect();
        derivs[index] = T::from_f64(1.0);
        Self { value, derivs }
    }

    /// Partial derivative along coordinate `k` (zero for constants).
    pub fn deriv(&self, k: usize) -> T {
        self.derivs
            .get(k)
            .cloned()
            .unwrap_or_else(|| T::from_f64(0.0))
    }

    fn chain(&self, value: T, slope: T) -> Self {
        Self {
            value,
            derivs: self.derivs.iter().map(|d| d.clone() * &slope).collect(),
        }
    }

    /// `da * self' + db * other'`, treating an empty vector as zeros.
    fn combine(&self, other: &Self, da: &T, db: &T) -> Derivs<T> {
        match (self.derivs.is_empty(), other.derivs.is_empty()) {
            (true, true) => SmallVec::new(),
            (false, true) => self.derivs.iter().map(|d| d.clone() * da).collect(),
            (true, false) => other.derivs.iter().map(|d| d.clone() * db).collect(),
            (false, false) => {
                debug_assert_eq!(self.derivs.len(), other.derivs.len());
                self.derivs
                    .iter()
                    .zip(&other.derivs)
                    .map(|(a, b)| a.clone() * da + &(b.clone() * db))
                    .collect()
            }
        }
    }
}

/// Seeds each entry of `x` as an independent variable.
pub fn seed(x: &[f64]) -> Vec<Dual<f64>> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(k, &v)| Dual::variable(v, k, n))
        .collect()
}

/// Seeds `x` for second derivatives: the outer infinitesimal of entry `j`
/// is itself seeded along `j`, so `f.derivs[j].derivs[i]` is `d2f/dx_j dx_i`.
pub fn seed_second_order(x: &[f64]) -> Vec<Dual<Dual<f64>>> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let inner = Dual::variable(v, k, n);
            let mut derivs: Derivs<Dual<f64>> = (0..n).map(|_| Dual::constant(0.0)).collect();
            derivs[k] = Dual::constant(1.0);
            Dual {
                value: inner,
                derivs,
            }
        })
        .collect()
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self + &rhs
    }
}

impl<'a, T: Scalar> Add<&'a Dual<T>> for Dual<T> {
    type Output = Self;
    fn add(mut self, rhs: &'a Dual<T>) -> Self {
        self.value = self.value + &rhs.value;
        if self.derivs.is_empty() {
            self.derivs = rhs.derivs.clone();
        } else if !rhs.derivs.is_empty() {
            debug_assert_eq!(self.derivs.len(), rhs.derivs.len());
            for (a, b) in self.derivs.iter_mut().zip(&rhs.derivs) {
                *a = a.clone() + b;
            }
        }
        self
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self - &rhs
    }
}

impl<'a, T: Scalar> Sub<&'a Dual<T>> for Dual<T> {
    type Output = Self;
    fn sub(mut self, rhs: &'a Dual<T>) -> Self {
        self.value = self.value - &rhs.value;
        if self.derivs.is_empty() {
            self.derivs = rhs.derivs.iter().map(|d| -d.clone()).collect();
        } else if !rhs.derivs.is_empty() {
            debug_assert_eq!(self.derivs.len(), rhs.derivs.len());
            for (a, b) in self.derivs.iter_mut().zip(&rhs.derivs) {
                *a = a.clone() - b;
            }
        }
        self
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self * &rhs
    }
}

impl<'a, T: Scalar> Mul<&'a Dual<T>> for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: &'a Dual<T>) -> Self {
        let derivs = self.combine(rhs, &rhs.value, &self.value);
        Dual {
            value: self.value * &rhs.value,
            derivs,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self / &rhs
    }
}

impl<'a, T: Scalar> Div<&'a Dual<T>> for Dual<T> {
    type Output = Self;
    fn div(self, rhs: &'a Dual<T>) -> Self {
        let inv = T::from_f64(1.0) / &rhs.value;
        let value = self.value.clone() * &inv;
        let db = -(value.clone() * &inv);
        let derivs = self.combine(rhs, &inv, &db);
        Dual { value, derivs }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual {
            value: -self.value,
            derivs: self.derivs.into_iter().map(|d| -d).collect(),
        }
    }
}

impl<T: Scalar> Add<f64> for Dual<T> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.value = self.value + rhs;
        self
    }
}

impl<T: Scalar> Sub<f64> for Dual<T> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.value = self.value - rhs;
        self
    }
}

impl<T: Scalar> Mul<f64> for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Dual {
            value: self.value * rhs,
            derivs: self.derivs.into_iter().map(|d| d * rhs).collect(),
        }
    }
}

impl<T: Scalar> Div<f64> for Dual<T> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Dual {
            value: self.value / rhs,
            derivs: self.derivs.into_iter().map(|d| d / rhs).collect(),
        }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(T::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e.clone(), e)
    }

    fn sinh(&self) -> Self {
        self.chain(self.value.sinh(), self.value.cosh())
    }

    fn cosh(&self) -> Self {
        self.chain(self.value.cosh(), self.value.sinh())
    }

    fn sinhc(&self) -> Self {
        self.chain(self.value.sinhc(), self.value.sinhc_prime())
    }

    fn powi(&self, n: i32) -> Self {
        match n {
            0 => Dual::constant(T::from_f64(1.0)),
            _ => {
                let lower = self.value.powi(n - 1);
                let value = lower.clone() * &self.value;
                self.chain(value, lower * f64::from(n))
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.derivs.iter().all(Scalar::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sinhc_known_values() {
        assert_eq!(sinhc_f64(0.0), 1.0);
        assert!((sinhc_f64(1.0) - 1.175_201_193_643_801_4).abs() < 1e-16);
        let small = sinhc_f64(1e-6);
        assert!((small - 1.0 - 1e-12 / 6.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn sinhc_branches_meet_at_switch() {
        let below = sinhc_f64(SINHC_SERIES_THRESHOLD * (1.0 - 1e-12));
        let above = sinhc_f64(SINHC_SERIES_THRESHOLD);
        assert!((below - above).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn sinhc_prime_matches_finite_difference() {
        for &u in &[-3.0, -1.0, -0.999, -0.3, 1e-3, 0.0, 0.5, 0.9999, 1.0, 2.5] {
            let d = u.sinhc_prime();
            let fd = central_difference(sinhc_f64, u, 1e-5);
            assert!((d - fd).abs() < 1e-9, "u={u}: {d} vs {fd}");
        }
    }

    #[test]
    fn product_rule_is_exact() {
        let x = seed(&[1.3, -0.7]);
        let f = x[0].clone() * &x[1];
        let g = x[0].sinh() + &x[1].exp();
        let fg = f.clone() * &g;
        for k in 0..2 {
            let leibniz = f.deriv(k) * g.value + f.value * g.deriv(k);
            assert!((fg.deriv(k) - leibniz).abs() <= 2.0 * f64::EPSILON * leibniz.abs());
        }
    }

    #[test]
    fn quotient_and_powers() {
        let x = seed(&[2.0]);
        let f = x[0].powi(3) / &x[0].square();
        assert!((f.value - 2.0).abs() < 1e-15);
        assert!((f.deriv(0) - 1.0).abs() < 1e-15);
        assert_eq!(x[0].powi(0).deriv(0), 0.0);
    }

    #[test]
    fn constants_broadcast_against_seeded_duals() {
        let x = seed(&[0.5, 1.5]);
        let c = Dual::<f64>::from_f64(2.0);
        let s = c.clone() - &x[1];
        assert_eq!(s.derivs.as_slice(), &[0.0, -1.0]);
        let p = c * &x[0];
        assert_eq!(p.derivs.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn second_order_seed_gives_hessian() {
        // f = x^2 y + sinhc(x y)
        let x = seed_second_order(&[0.4, -1.1]);
        let f = x[0].square() * &x[1] + &(x[0].clone() * &x[1]).sinhc();
        let h = |a: f64, b: f64| a * a * b + sinhc_f64(a * b);
        let eps = 1e-4;
        let fd_xy = (h(0.4 + eps, -1.1 + eps) - h(0.4 + eps, -1.1 - eps) - h(0.4 - eps, -1.1 + eps)
            + h(0.4 - eps, -1.1 - eps))
            / (4.0 * eps * eps);
        assert!((f.deriv(0).deriv(1) - fd_xy).abs() < 1e-6);
        assert_eq!(f.deriv(0).deriv(1), f.deriv(1).deriv(0));
    }
}
