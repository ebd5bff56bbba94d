//! The sl(2,R) Poisson coalgebra and its non-standard deformation.
//!
//! Two independent routes to the N-site generator images live here: closed
//! forms (`*_generators`, K-functions, [`casimir`]) and an expression tree
//! ([`CoproductExpr`]) assembled by applying the two-site coproduct one slot at
//! a time and then evaluated through a one-site realization. The second route
//! is the oracle for the first.

use serde::{Deserialize, Serialize};

use crate::bracket_engine::{PhasePoint, SpinChainState};
use crate::dual::{sinhc_f64, Scalar};
use crate::error::{Error, Result};

/// Structure constant of `{J-, J+} = alpha J3` and the deformation parameter.
///
/// All phase-space realizations assume `alpha = 4`; other values are only
/// meaningful inside the abstract expression engine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraSpec {
    pub alpha: f64,
    pub z: f64,
}

pub const REALIZATION_ALPHA: f64 = 4.0;

impl AlgebraSpec {
    pub fn new(alpha: f64, z: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidSpec(format!("alpha must be positive, got {alpha}")));
        }
        if !z.is_finite() {
            return Err(Error::InvalidSpec(format!("z must be finite, got {z}")));
        }
        if z != 0.0 && alpha != REALIZATION_ALPHA {
            return Err(Error::InvalidSpec(
                "the deformed algebra is only defined for alpha = 4".into(),
            ));
        }
        Ok(Self { alpha, z })
    }

    pub fn realized(z: f64) -> Result<Self> {
        Self::new(REALIZATION_ALPHA, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    JMinus,
    JPlus,
    JThree,
}

impl Generator {
    pub const ALL: [Generator; 3] = [Generator::JMinus, Generator::JPlus, Generator::JThree];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RealizationKind {
    /// `J- = q^2`, `J+ = p^2`, `J3 = q p`.
    CanonicalUndeformed,
    /// `J- = q^2`, `J+ = sinhc(z q^2) p^2`, `J3 = q sinhc(z q^2) p`.
    CanonicalDeformed,
    /// `J_l = sigma_l` under the Lie-Poisson bracket.
    SpinUndeformed,
    /// `J- = sigma_-`, `J+,3 = sinhc(z sigma_-) sigma_+,3` on the cone `c_i = 0`.
    SpinDeformedZeroCone,
}

impl RealizationKind {
    pub fn is_spin(self) -> bool {
        matches!(self, Self::SpinUndeformed | Self::SpinDeformedZeroCone)
    }

    pub fn is_deformed(self) -> bool {
        matches!(self, Self::CanonicalDeformed | Self::SpinDeformedZeroCone)
    }

    /// Flat coordinates per site.
    pub fn coords_per_site(self) -> usize {
        if self.is_spin() {
            3
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::CanonicalUndeformed => "canonical-undeformed",
            Self::CanonicalDeformed => "canonical-deformed",
            Self::SpinUndeformed => "spin-undeformed",
            Self::SpinDeformedZeroCone => "spin-deformed-zero-cone",
        }
    }
}

/// A realization kind together with the deformation it is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub kind: RealizationKind,
    pub z: f64,
}

impl Realization {
    pub fn new(kind: RealizationKind, z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::Realization(format!("z must be finite, got {z}")));
        }
        if !kind.is_deformed() && z != 0.0 {
            return Err(Error::Realization(format!(
                "{} realization requires z = 0, got {z}",
                kind.name()
            )));
        }
        Ok(Self { kind, z })
    }

    /// Canonical or spin realization, deformed exactly when `z != 0`.
    pub fn for_family(spin: bool, z: f64) -> Result<Self> {
        let kind = match (spin, z != 0.0) {
            (false, false) => RealizationKind::CanonicalUndeformed,
            (false, true) => RealizationKind::CanonicalDeformed,
            (true, false) => RealizationKind::SpinUndeformed,
            (true, true) => RealizationKind::SpinDeformedZeroCone,
        };
        Self::new(kind, z)
    }

    /// The deformation actually applied (zero for undeformed kinds).
    pub fn effective_z(&self) -> f64 {
        if self.kind.is_deformed() {
            self.z
        } else {
            0.0
        }
    }
}

/// A state of either representation.
#[derive(Clone, Copy, Debug)]
pub enum StateRef<'a> {
    Canonical(&'a PhasePoint),
    Spin(&'a SpinChainState),
}

impl StateRef<'_> {
    pub fn n_sites(&self) -> usize {
        match self {
            Self::Canonical(x) => x.n_sites(),
            Self::Spin(s) => s.n_sites(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            Self::Canonical(x) => x.to_flat(),
            Self::Spin(s) => s.to_flat(),
        }
    }

    fn check_kind(&self, kind: RealizationKind) -> Result<()> {
        let spin = matches!(self, Self::Spin(_));
        if spin != kind.is_spin() {
            return Err(Error::Realization(format!(
                "{} realization cannot be evaluated on a {} state",
                kind.name(),
                if spin { "spin" } else { "canonical" }
            )));
        }
        Ok(())
    }
}

impl<'a> From<&'a PhasePoint> for StateRef<'a> {
    fn from(x: &'a PhasePoint) -> Self {
        Self::Canonical(x)
    }
}

impl<'a> From<&'a SpinChainState> for StateRef<'a> {
    fn from(s: &'a SpinChainState) -> Self {
        Self::Spin(s)
    }
}

/// `sinh(u)/u`, exact 1 at the origin.
pub fn sinhc(u: f64) -> f64 {
    sinhc_f64(u)
}

fn check_sites(m: usize, len: usize) -> Result<()> {
    if m == 0 || m > len {
        return Err(Error::Index(format!(
            "chain length {m} must lie in 1..={len}"
        )));
    }
    Ok(())
}

/// `K_i^(m)(x) = -sum_{k<i} x_k + sum_{i<l<m} x_l` (0-based `i < m`).
pub fn k_function(i: usize, m: usize, x: &[f64]) -> Result<f64> {
    check_sites(m, x.len())?;
    if i >= m {
        return Err(Error::Index(format!("site {i} outside a chain of length {m}")));
    }
    let left: f64 = x[..i].iter().sum();
    let right: f64 = x[i + 1..m].iter().sum();
    Ok(right - left)
}

/// All `K_i^(m)`, `i < m`, from one pass of prefix sums.
pub fn k_functions<S: Scalar>(m: usize, x: &[S]) -> Vec<S> {
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(S::from_f64(0.0));
    for v in &x[..m] {
        let next = prefix[prefix.len() - 1].clone() + v;
        prefix.push(next);
    }
    let total = prefix[m].clone();
    (0..m)
        .map(|i| total.clone() - &prefix[i + 1] - &prefix[i])
        .collect()
}

/// `K_ij^(m) = K_i^(m) + K_j^(m)` for `i < j < m` (0-based).
///
/// Debug builds also evaluate `-(x_i - x_j) - 2 sum_{k<i} x_k + 2 sum_{j<l<m} x_l`
/// and assert agreement.
pub fn k_pair(i: usize, j: usize, m: usize, x: &[f64]) -> Result<f64> {
    if i >= j {
        return Err(Error::Index(format!("k_pair needs i < j, got i={i}, j={j}")));
    }
    if j >= m {
        return Err(Error::Index(format!("site {j} outside a chain of length {m}")));
    }
    let summed = k_function(i, m, x)? + k_function(j, m, x)?;
    if cfg!(debug_assertions) {
        let explicit = k_pair_explicit(i, j, m, x);
        let scale: f64 = x[..m].iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        debug_assert!(
            (summed - explicit).abs() <= 1e-12 * scale,
            "K-pair forms disagree: {summed} vs {explicit}"
        );
    }
    Ok(summed)
}

fn k_pair_explicit(i: usize, j: usize, m: usize, x: &[f64]) -> f64 {
    let left: f64 = x[..i].iter().sum();
    let right: f64 = x[j + 1..m].iter().sum();
    -(x[i] - x[j]) - 2.0 * left + 2.0 * right
}

/// Images `(J-, J+, J3)` of the generators.
#[derive(Clone, Debug, PartialEq)]
pub struct Generators<S> {
    pub minus: S,
    pub plus: S,
    pub three: S,
}

impl<S: Scalar> Generators<S> {
    pub fn get(&self, g: Generator) -> &S {
        match g {
            Generator::JMinus => &self.minus,
            Generator::JPlus => &self.plus,
            Generator::JThree => &self.three,
        }
    }

    pub fn values(&self) -> Generators<f64> {
        Generators {
            minus: self.minus.value(),
            plus: self.plus.value(),
            three: self.three.value(),
        }
    }
}

/// Closed-form N-site images for canonical coordinates `q`, `p` (all sites).
///
/// `z = 0` gives the primitive sums; otherwise each site carries the
/// `sinhc(z q_i^2) e^{z K_i(q^2)}` dressing.
pub fn canonical_generators<S: Scalar>(q: &[S], p: &[S], z: f64) -> Generators<S> {
    let m = q.len();
    let q2: Vec<S> = q.iter().map(Scalar::square).collect();
    let minus = sum(q2.iter().cloned());
    if z == 0.0 {
        let plus = sum(p.iter().map(Scalar::square));
        let three = sum(q.iter().zip(p).map(|(a, b)| a.clone() * b));
        return Generators { minus, plus, three };
    }
    let k = k_functions(m, &q2);
    let mut plus = S::from_f64(0.0);
    let mut three = S::from_f64(0.0);
    for i in 0..m {
        let weight = (q2[i].clone() * z).sinhc() * &(k[i].clone() * z).exp();
        plus = plus + &(weight.clone() * &p[i].square());
        // q sinhc(z q^2) p: the removable singularity never becomes a division.
        three = three + &(weight * &q[i] * &p[i]);
    }
    Generators { minus, plus, three }
}

/// Closed-form N-site images for spin triples in flat layout.
pub fn spin_generators<S: Scalar>(sites: &[S], z: f64) -> Generators<S> {
    let m = sites.len() / 3;
    let sm: Vec<S> = (0..m).map(|i| sites[3 * i].clone()).collect();
    let minus = sum(sm.iter().cloned());
    if z == 0.0 {
        let plus = sum((0..m).map(|i| sites[3 * i + 1].clone()));
        let three = sum((0..m).map(|i| sites[3 * i + 2].clone()));
        return Generators { minus, plus, three };
    }
    let k = k_functions(m, &sm);
    let mut plus = S::from_f64(0.0);
    let mut three = S::from_f64(0.0);
    for i in 0..m {
        let weight = (sm[i].clone() * z).sinhc() * &(k[i].clone() * z).exp();
        plus = plus + &(weight.clone() * &sites[3 * i + 1]);
        three = three + &(weight * &sites[3 * i + 2]);
    }
    Generators { minus, plus, three }
}

/// Closed-form images on the first `m` sites of a flat state.
pub fn realized_generators<S: Scalar>(x: &[S], m: usize, realization: Realization) -> Generators<S> {
    let z = realization.effective_z();
    if realization.kind.is_spin() {
        spin_generators(&x[..3 * m], z)
    } else {
        let n = x.len() / 2;
        canonical_generators(&x[..m], &x[n..n + m], z)
    }
}

/// `C_z(J) = J3^2 - (sinh(z J-)/z) J+`, reducing to `J3^2 - J+ J-` at `z = 0`.
pub fn casimir_of<S: Scalar>(g: &Generators<S>, z: f64) -> S {
    let sinh_over_z = if z == 0.0 {
        g.minus.clone()
    } else {
        g.minus.clone() * &(g.minus.clone() * z).sinhc()
    };
    g.three.square() - &(sinh_over_z * &g.plus)
}

pub fn generators_undeformed(m: usize, x: &PhasePoint) -> Result<Generators<f64>> {
    check_sites(m, x.n_sites())?;
    Ok(canonical_generators(&x.q[..m], &x.p[..m], 0.0))
}

pub fn generators_deformed(m: usize, x: &PhasePoint, z: f64) -> Result<Generators<f64>> {
    check_sites(m, x.n_sites())?;
    Ok(canonical_generators(&x.q[..m], &x.p[..m], z))
}

/// The m-th coproduct image of the Casimir, `C(Delta^(m)(J))`.
pub fn casimir(m: usize, state: StateRef<'_>, realization: Realization) -> Result<f64> {
    state.check_kind(realization.kind)?;
    check_sites(m, state.n_sites())?;
    let g = realized_generators(&state.to_flat(), m, realization);
    Ok(casimir_of(&g, realization.effective_z()))
}

fn sum<S: Scalar>(terms: impl Iterator<Item = S>) -> S {
    terms.fold(S::from_f64(0.0), |acc, t| acc + &t)
}

/// One-site realization of the generators at a single slot.
fn realize_site<S: Scalar>(site: &[S], kind: RealizationKind, z: f64) -> Generators<S> {
    match kind {
        RealizationKind::CanonicalUndeformed => Generators {
            minus: site[0].square(),
            plus: site[1].square(),
            three: site[0].clone() * &site[1],
        },
        RealizationKind::CanonicalDeformed => {
            let q2 = site[0].square();
            let s = (q2.clone() * z).sinhc();
            Generators {
                plus: s.clone() * &site[1].square(),
                three: s * &site[0] * &site[1],
                minus: q2,
            }
        }
        RealizationKind::SpinUndeformed => Generators {
            minus: site[0].clone(),
            plus: site[1].clone(),
            three: site[2].clone(),
        },
        RealizationKind::SpinDeformedZeroCone => {
            let s = (site[0].clone() * z).sinhc();
            Generators {
                minus: site[0].clone(),
                plus: s.clone() * &site[1],
                three: s * &site[2],
            }
        }
    }
}

/// Node of a coproduct expression over tensor slots `0..slots`.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    /// A generator acting at one slot.
    Gen { slot: usize, gen: Generator },
    /// `exp(sign * z * sum_{k = from..=to} J-_k)`.
    Dressing { from: usize, to: usize, sign: i8 },
    Sum(Vec<Node>),
    Product(Vec<Node>),
    /// `sinh(z X)/z = X sinhc(z X)`.
    SinhOverZ(Box<Node>),
}

impl Node {
    fn size(&self) -> usize {
        match self {
            Node::Const(_) | Node::Gen { .. } | Node::Dressing { .. } => 1,
            Node::Sum(c) | Node::Product(c) => 1 + c.iter().map(Node::size).sum::<usize>(),
            Node::SinhOverZ(c) => 1 + c.size(),
        }
    }

    fn max_slot(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Gen { slot, .. } => Some(*slot),
            Node::Dressing { to, .. } => Some(*to),
            Node::Sum(c) | Node::Product(c) => c.iter().filter_map(Node::max_slot).max(),
            Node::SinhOverZ(c) => c.max_slot(),
        }
    }

    /// Replaces every leaf at `slot` by its two-site coproduct on
    /// `(slot, slot + 1)` and shifts higher slots up by one.
    fn split_slot(&self, slot: usize, deformed: bool) -> Node {
        match self {
            Node::Const(c) => Node::Const(*c),
            Node::Gen { slot: k, gen } if *k < slot => Node::Gen { slot: *k, gen: *gen },
            Node::Gen { slot: k, gen } if *k > slot => Node::Gen { slot: k + 1, gen: *gen },
            Node::Gen { gen, .. } => two_site_coproduct(*gen, slot, deformed),
            Node::Dressing { from, to, sign } => {
                let (from, to) = if *to < slot {
                    (*from, *to)
                } else if *from > slot {
                    (from + 1, to + 1)
                } else {
                    // e^{zJ-} is group-like because J- is primitive.
                    (*from, to + 1)
                };
                Node::Dressing { from, to, sign: *sign }
            }
            Node::Sum(c) => Node::Sum(c.iter().map(|n| n.split_slot(slot, deformed)).collect()),
            Node::Product(c) => {
                Node::Product(c.iter().map(|n| n.split_slot(slot, deformed)).collect())
            }
            Node::SinhOverZ(c) => Node::SinhOverZ(Box::new(c.split_slot(slot, deformed))),
        }
    }
}

/// `Delta(J-) = J- x 1 + 1 x J-`; `Delta(J+,3) = J x e^{zJ-} + e^{-zJ-} x J`
/// (primitive when undeformed).
fn two_site_coproduct(gen: Generator, slot: usize, deformed: bool) -> Node {
    let here = Node::Gen { slot, gen };
    let next = Node::Gen { slot: slot + 1, gen };
    if gen == Generator::JMinus || !deformed {
        return Node::Sum(vec![here, next]);
    }
    Node::Sum(vec![
        Node::Product(vec![
            here,
            Node::Dressing {
                from: slot + 1,
                to: slot + 1,
                sign: 1,
            },
        ]),
        Node::Product(vec![
            Node::Dressing {
                from: slot,
                to: slot,
                sign: -1,
            },
            next,
        ]),
    ])
}

/// Splices nested sums and distributes a monomial over its single sum factor.
///
/// Products of two or more sums, or involving `SinhOverZ` (the `J3^2` and
/// `sinh(zJ-) J+` parts of the Casimir), are left unexpanded so the tree stays
/// linear in the slot count.
fn flatten(node: Node) -> Node {
    match node {
        Node::Sum(children) => {
            let mut out = Vec::with_capacity(children.len());
            for c in children {
                match flatten(c) {
                    Node::Sum(inner) => out.extend(inner),
                    other => out.push(other),
                }
            }
            Node::Sum(out)
        }
        Node::Product(children) => {
            let children: Vec<Node> = children.into_iter().map(flatten).collect();
            let sums = children.iter().filter(|c| matches!(c, Node::Sum(_))).count();
            let atoms = children.iter().all(|c| {
                matches!(
                    c,
                    Node::Sum(_) | Node::Const(_) | Node::Gen { .. } | Node::Dressing { .. }
                )
            });
            if sums == 1 && atoms {
                let (sum, rest): (Vec<Node>, Vec<Node>) =
                    children.into_iter().partition(|c| matches!(c, Node::Sum(_)));
                let Some(Node::Sum(terms)) = sum.into_iter().next() else {
                    unreachable!()
                };
                let terms = terms
                    .into_iter()
                    .map(|t| {
                        let mut factors = rest.clone();
                        factors.push(t);
                        normalize_product(factors)
                    })
                    .collect();
                Node::Sum(terms)
            } else {
                normalize_product(children)
            }
        }
        Node::SinhOverZ(c) => Node::SinhOverZ(Box::new(flatten(*c))),
        leaf => leaf,
    }
}

/// Folds constants, splices nested products and merges adjacent dressings.
fn normalize_product(factors: Vec<Node>) -> Node {
    let mut coefficient = 1.0;
    let mut dressings: Vec<(usize, usize, i8)> = Vec::new();
    let mut others = Vec::new();
    let mut stack = factors;
    while let Some(f) = stack.pop() {
        match f {
            Node::Const(c) => coefficient *= c,
            Node::Product(inner) => stack.extend(inner),
            Node::Dressing { from, to, sign } => dressings.push((from, to, sign)),
            other => others.push(other),
        }
    }
    dressings.sort_by_key(|&(from, _, sign)| (sign, from));
    let mut merged: Vec<(usize, usize, i8)> = Vec::new();
    for d in dressings {
        match merged.last_mut() {
            Some(last) if last.2 == d.2 && last.1 + 1 == d.0 => last.1 = d.1,
            _ => merged.push(d),
        }
    }
    others.sort_by_key(|n| n.max_slot());
    let mut out = Vec::with_capacity(others.len() + merged.len() + 1);
    if coefficient != 1.0 {
        out.push(Node::Const(coefficient));
    }
    out.extend(others);
    out.extend(
        merged
            .into_iter()
            .map(|(from, to, sign)| Node::Dressing { from, to, sign }),
    );
    match out.len() {
        0 => Node::Const(1.0),
        1 => out.pop().unwrap(),
        _ => Node::Product(out),
    }
}

/// Expression for `Delta^(N)` of an element, built by the coproduct recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct CoproductExpr {
    root: Node,
    slots: usize,
    z: f64,
}

impl CoproductExpr {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        self.root.size()
    }

    /// Grows a one-slot expression to `n` slots; `split(step, slots)` picks
    /// the slot the two-site coproduct is applied to at each step.
    fn grow(one_site: Node, n: usize, z: f64, mut split: impl FnMut(usize, usize) -> usize) -> Self {
        let deformed = z != 0.0;
        let mut root = flatten(one_site);
        for step in 1..n {
            let slot = split(step, step);
            debug_assert!(slot < step);
            root = flatten(root.split_slot(slot, deformed));
        }
        Self { root, slots: n.max(1), z }
    }

    /// Evaluates through a one-site realization on the flat state `x`
    /// (`slots` sites, layout per `kind`).
    pub fn eval<S: Scalar>(&self, x: &[S], kind: RealizationKind) -> S {
        let z = if kind.is_deformed() { self.z } else { 0.0 };
        let sites: Vec<Generators<S>> = if kind.is_spin() {
            (0..self.slots)
                .map(|i| realize_site(&x[3 * i..3 * i + 3], kind, z))
                .collect()
        } else {
            let n = x.len() / 2;
            (0..self.slots)
                .map(|i| realize_site(&[x[i].clone(), x[n + i].clone()], kind, z))
                .collect()
        };
        eval_node(&self.root, &sites, self.z)
    }
}

fn eval_node<S: Scalar>(node: &Node, sites: &[Generators<S>], z: f64) -> S {
    match node {
        Node::Const(c) => S::from_f64(*c),
        Node::Gen { slot, gen } => sites[*slot].get(*gen).clone(),
        Node::Dressing { from, to, sign } => {
            let exponent = sum(sites[*from..=*to].iter().map(|s| s.minus.clone()));
            (exponent * (z * f64::from(*sign))).exp()
        }
        Node::Sum(c) => c
            .iter()
            .fold(S::from_f64(0.0), |acc, n| acc + &eval_node(n, sites, z)),
        Node::Product(c) => c
            .iter()
            .fold(S::from_f64(1.0), |acc, n| acc * &eval_node(n, sites, z)),
        Node::SinhOverZ(c) => {
            let x = eval_node(c, sites, z);
            if z == 0.0 {
                x
            } else {
                x.clone() * &(x * z).sinhc()
            }
        }
    }
}

fn generator_leaf(gen: Generator) -> Node {
    Node::Gen { slot: 0, gen }
}

/// `Delta^(N)(gen)` via `Delta^(N) = (id^{N-2} x Delta) o Delta^(N-1)`.
pub fn build_coproduct(gen: Generator, n: usize, z: f64) -> CoproductExpr {
    CoproductExpr::grow(generator_leaf(gen), n, z, |_, slots| slots - 1)
}

/// The same coproduct grown by always splitting the first slot,
/// `Delta^(N) = (Delta x id^{N-2}) o Delta^(N-1)`.
pub fn build_coproduct_left(gen: Generator, n: usize, z: f64) -> CoproductExpr {
    CoproductExpr::grow(generator_leaf(gen), n, z, |_, _| 0)
}

/// Grows the coproduct splitting the slot chosen by `split(step, slots)`
/// (which must return a value below `slots`).
pub fn build_coproduct_with_splits(
    gen: Generator,
    n: usize,
    z: f64,
    split: impl FnMut(usize, usize) -> usize,
) -> CoproductExpr {
    CoproductExpr::grow(generator_leaf(gen), n, z, split)
}

/// `Delta^(N)` of the Casimir `(alpha/4) J3^2 - (sinh(z J-)/z) J+`,
/// grown from its one-site form by the same recursion.
pub fn build_casimir(n: usize, algebra: AlgebraSpec) -> CoproductExpr {
    let minus = generator_leaf(Generator::JMinus);
    let minus = if algebra.z == 0.0 {
        minus
    } else {
        Node::SinhOverZ(Box::new(minus))
    };
    let one_site = Node::Sum(vec![
        Node::Product(vec![
            Node::Const(algebra.alpha / 4.0),
            generator_leaf(Generator::JThree),
            generator_leaf(Generator::JThree),
        ]),
        Node::Product(vec![Node::Const(-1.0), minus, generator_leaf(Generator::JPlus)]),
    ]);
    CoproductExpr::grow(one_site, n, algebra.z, |_, slots| slots - 1)
}

/// Substitutes the one-site realization into every slot and evaluates.
pub fn coproduct_eval(expr: &CoproductExpr, state: StateRef<'_>, realization: Realization) -> Result<f64> {
    state.check_kind(realization.kind)?;
    if state.n_sites() != expr.slots {
        return Err(Error::Realization(format!(
            "expression has {} slots but the state has {} sites",
            expr.slots,
            state.n_sites()
        )));
    }
    if realization.effective_z() != expr.z {
        return Err(Error::Realization(format!(
            "expression was built at z = {} but the realization uses z = {}",
            expr.z,
            realization.effective_z()
        )));
    }
    Ok(expr.eval(&state.to_flat(), realization.kind))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(q: &[f64], p: &[f64]) -> PhasePoint {
        PhasePoint::new(q.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn k_function_edges() {
        let x = [1.0, 2.0, 4.0];
        assert_eq!(k_function(0, 3, &x).unwrap(), 6.0);
        assert_eq!(k_function(2, 3, &x).unwrap(), -3.0);
        assert_eq!(k_function(0, 1, &x).unwrap(), 0.0);
        assert!(k_function(3, 3, &x).is_err());
        assert!(k_function(0, 4, &x).is_err());
        assert_eq!(k_functions(3, &x), vec![6.0, 4.0 - 1.0, -3.0]);
    }

    #[test]
    fn k_pair_edges() {
        let x = [1.0, 2.0, 4.0];
        assert_eq!(k_pair(0, 2, 3, &x).unwrap(), 4.0 - 1.0);
        assert_eq!(k_pair(0, 1, 2, &x).unwrap(), 2.0 - 1.0);
        assert_eq!(k_pair(1, 2, 3, &[0.0; 3]).unwrap(), 0.0);
        assert!(k_pair(1, 1, 3, &x).is_err());
        assert!(k_pair(2, 1, 3, &x).is_err());
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((k_pair(i, j, 3, &x).unwrap() - k_pair_explicit(i, j, 3, &x)).abs() < 1e-15);
        }
    }

    #[test]
    fn undeformed_generators() {
        let x = point(&[1.0, 2.0], &[3.0, 4.0]);
        let g = generators_undeformed(2, &x).unwrap();
        assert_eq!((g.minus, g.plus, g.three), (5.0, 25.0, 11.0));
        let g1 = generators_undeformed(1, &x).unwrap();
        assert_eq!((g1.minus, g1.plus, g1.three), (1.0, 9.0, 3.0));
        let still = point(&[0.3, -1.0, 2.0], &[0.0; 3]);
        let g = generators_undeformed(3, &still).unwrap();
        assert_eq!((g.plus, g.three), (0.0, 0.0));
        assert!(generators_undeformed(3, &x).is_err());
    }

    #[test]
    fn deformed_generators_limits() {
        let x = point(&[0.4, -1.2, 0.9], &[1.0, 0.3, -2.0]);
        assert_eq!(
            generators_deformed(3, &x, 0.0).unwrap(),
            generators_undeformed(3, &x).unwrap()
        );
        let z = 0.37;
        let one = generators_deformed(1, &x, z).unwrap();
        let s = sinhc(z * 0.4 * 0.4);
        assert_eq!(one.minus, 0.4 * 0.4);
        assert!((one.plus - s * 1.0).abs() < 1e-15);
        assert!((one.three - (z * 0.4 * 0.4).sinh() / (z * 0.4) * 1.0).abs() < 1e-15);
        let deformed = generators_deformed(3, &x, z).unwrap();
        assert_eq!(deformed.minus, generators_undeformed(3, &x).unwrap().minus);
    }

    #[test]
    fn deformed_three_at_zero_q() {
        let x = point(&[0.0, 1.0], &[2.0, 1.0]);
        let g = generators_deformed(2, &x, 0.5).unwrap();
        assert!(g.three.is_finite());
        // site 1 contributes nothing to J3 at q_1 = 0
        let expected = sinhc(0.5) * 1.0 * (-0.0f64 * 0.5).exp();
        assert!((g.three - expected).abs() < 1e-15);
    }

    #[test]
    fn two_site_deformed_plus_worked_value() {
        let x = point(&[1.0, 2.0], &[3.0, 4.0]);
        let g = generators_deformed(2, &x, 0.1).unwrap();
        let expected = sinhc(0.1) * 9.0 * (0.4f64).exp() + sinhc(0.4) * 16.0 * (-0.1f64).exp();
        assert!((g.plus - expected).abs() < 1e-13);
        let expr = build_coproduct(Generator::JPlus, 2, 0.1);
        let r = Realization::new(RealizationKind::CanonicalDeformed, 0.1).unwrap();
        let oracle = coproduct_eval(&expr, (&x).into(), r).unwrap();
        assert!((oracle - g.plus).abs() < 1e-13 * g.plus.abs());
        // 50-digit evaluation: 28.31537379785302053651968...
        assert!((g.plus - 28.315_373_797_853_02).abs() < 1e-12, "{}", g.plus);
    }

    #[test]
    fn primitive_minus_tree() {
        let expr = build_coproduct(Generator::JMinus, 4, 0.7);
        let expected = Node::Sum(
            (0..4)
                .map(|slot| Node::Gen {
                    slot,
                    gen: Generator::JMinus,
                })
                .collect(),
        );
        assert_eq!(expr.root(), &expected);
    }

    #[test]
    fn two_site_plus_tree() {
        let expr = build_coproduct(Generator::JPlus, 2, 0.3);
        let expected = Node::Sum(vec![
            Node::Product(vec![
                Node::Gen {
                    slot: 0,
                    gen: Generator::JPlus,
                },
                Node::Dressing { from: 1, to: 1, sign: 1 },
            ]),
            Node::Product(vec![
                Node::Gen {
                    slot: 1,
                    gen: Generator::JPlus,
                },
                Node::Dressing { from: 0, to: 0, sign: -1 },
            ]),
        ]);
        assert_eq!(expr.root(), &expected);
    }

    #[test]
    fn three_site_three_tree_has_signed_prefix_dressings() {
        let expr = build_coproduct(Generator::JThree, 3, 0.3);
        let Node::Sum(terms) = expr.root() else {
            panic!("expected a sum")
        };
        assert_eq!(terms.len(), 3);
        let gen = |slot| Node::Gen {
            slot,
            gen: Generator::JThree,
        };
        assert_eq!(
            terms[0],
            Node::Product(vec![gen(0), Node::Dressing { from: 1, to: 2, sign: 1 }])
        );
        assert_eq!(
            terms[1],
            Node::Product(vec![
                gen(1),
                Node::Dressing { from: 0, to: 0, sign: -1 },
                Node::Dressing { from: 2, to: 2, sign: 1 },
            ])
        );
        assert_eq!(
            terms[2],
            Node::Product(vec![gen(2), Node::Dressing { from: 0, to: 1, sign: -1 }])
        );
    }

    #[test]
    fn tree_size_is_linear() {
        let sizes: Vec<usize> = (1..=12)
            .map(|n| build_coproduct(Generator::JPlus, n, 0.2).size())
            .collect();
        let steps: Vec<usize> = sizes.windows(2).skip(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&s| s == steps[0]), "{sizes:?}");
        let casimir: Vec<usize> = (2..=12)
            .map(|n| build_casimir(n, AlgebraSpec::realized(0.2).unwrap()).size())
            .collect();
        let steps: Vec<usize> = casimir.windows(2).skip(1).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|&s| s == steps[0]), "{casimir:?}");
    }

    #[test]
    fn one_slot_expression_is_the_realization() {
        let x = point(&[0.7], &[-1.3]);
        let z = 0.4;
        let r = Realization::new(RealizationKind::CanonicalDeformed, z).unwrap();
        let site = generators_deformed(1, &x, z).unwrap();
        for gen in Generator::ALL {
            let v = coproduct_eval(&build_coproduct(gen, 1, z), (&x).into(), r).unwrap();
            assert_eq!(v, *site.get(gen));
        }
    }

    #[test]
    fn coproduct_eval_checks_shapes() {
        let x = point(&[1.0, 2.0], &[3.0, 4.0]);
        let expr = build_coproduct(Generator::JMinus, 2, 0.0);
        let r = Realization::new(RealizationKind::CanonicalUndeformed, 0.0).unwrap();
        assert_eq!(coproduct_eval(&expr, (&x).into(), r).unwrap(), 5.0);
        let three = build_coproduct(Generator::JMinus, 3, 0.0);
        assert!(coproduct_eval(&three, (&x).into(), r).is_err());
        let deformed = build_coproduct(Generator::JPlus, 2, 0.2);
        assert!(coproduct_eval(&deformed, (&x).into(), r).is_err());
        let s = SpinChainState::new(vec![[1.0, 1.0, 1.0]; 2]).unwrap();
        assert!(coproduct_eval(&expr, (&s).into(), r).is_err());
    }

    #[test]
    fn casimir_worked_values() {
        let x = point(&[1.0, 2.0], &[3.0, 4.0]);
        let und = Realization::new(RealizationKind::CanonicalUndeformed, 0.0).unwrap();
        assert_eq!(casimir(2, (&x).into(), und).unwrap(), -4.0);
        let def = Realization::new(RealizationKind::CanonicalDeformed, 0.3).unwrap();
        for r in [und, def] {
            let c1 = casimir(1, (&x).into(), r).unwrap();
            assert!(c1.abs() < 1e-14, "{c1}");
        }
        let s = SpinChainState::new(vec![[1.0, 4.0, 2.0], [1.0, 1.0, -1.0]]).unwrap();
        let spin = Realization::new(RealizationKind::SpinUndeformed, 0.0).unwrap();
        assert_eq!(casimir(2, (&s).into(), spin).unwrap(), -9.0);
        assert!(casimir(3, (&s).into(), spin).is_err());
        assert!(casimir(2, (&s).into(), und).is_err());
    }

    #[test]
    fn realization_validation() {
        assert!(Realization::new(RealizationKind::CanonicalUndeformed, 0.1).is_err());
        assert!(Realization::new(RealizationKind::CanonicalDeformed, f64::NAN).is_err());
        assert_eq!(
            Realization::for_family(true, 0.2).unwrap().kind,
            RealizationKind::SpinDeformedZeroCone
        );
        assert!(AlgebraSpec::new(1.0, 0.1).is_err());
        assert!(AlgebraSpec::new(-1.0, 0.0).is_err());
        assert!(AlgebraSpec::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn abstract_alpha_scales_the_casimir() {
        let x = point(&[1.0, 2.0], &[3.0, 4.0]);
        let r = Realization::new(RealizationKind::CanonicalUndeformed, 0.0).unwrap();
        let expr = build_casimir(2, AlgebraSpec::new(1.0, 0.0).unwrap());
        // 121/4 - 125
        assert_eq!(coproduct_eval(&expr, (&x).into(), r).unwrap(), 30.25 - 125.0);
    }
}
