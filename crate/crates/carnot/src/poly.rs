//! Sparse multivariate polynomials graded by homogeneous degree.
//!
//! A polynomial lives in a ring of `n` variables with integer weights
//! (the homogeneities `d_i`); its terms are keyed by [`MultiIndex`].
//! Canonical order is by weighted degree, then lexicographic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::group::{Group, Metric};
use crate::scalar::{factorial, rng_for, Rational, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("polynomials live in different rings ({left} vs {right} variables or different weights)")]
    SpecMismatch { left: usize, right: usize },
    #[error("point has {got} coordinates, ring has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = vec![0; n];
        v[i] = 1;
        MultiIndex(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&j| j == 0)
    }

    /// `|J| = Σ j_i`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `|J|_G = Σ d_i j_i`.
    pub fn hom_degree(&self, weights: &[u32]) -> u32 {
        self.0.iter().zip(weights).map(|(j, d)| j * d).sum()
    }

    pub fn factorial(&self) -> BigInt {
        self.0.iter().fold(BigInt::one(), |acc, &j| acc * factorial(j))
    }

    pub fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn with_incremented(&self, i: usize) -> MultiIndex {
        let mut v = self.0.clone();
        v[i] += 1;
        MultiIndex(v)
    }

    pub fn with_decremented(&self, i: usize) -> Option<MultiIndex> {
        if self.0[i] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[i] -= 1;
        Some(MultiIndex(v))
    }

    /// Index of the leftmost nonzero entry.
    pub fn first_nonzero(&self) -> Option<usize> {
        self.0.iter().position(|&j| j > 0)
    }

    pub fn canonical_cmp(&self, other: &MultiIndex, weights: &[u32]) -> Ordering {
        self.hom_degree(weights)
            .cmp(&other.hom_degree(weights))
            .then_with(|| self.0.cmp(&other.0))
    }

    /// All multi-indices with `|J|_G ≤ k`, in canonical order.
    pub fn all_up_to(weights: &[u32], k: u32) -> Vec<MultiIndex> {
        let n = weights.len();
        let mut out = Vec::new();
        let mut cur = vec![0u32; n];
        fn rec(i: usize, budget: u32, weights: &[u32], cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if i == weights.len() {
                out.push(MultiIndex(cur.clone()));
                return;
            }
            let mut j = 0;
            while j * weights[i] <= budget {
                cur[i] = j;
                rec(i + 1, budget - j * weights[i], weights, cur, out);
                j += 1;
            }
            cur[i] = 0;
        }
        rec(0, k, weights, &mut cur, &mut out);
        let _ = n;
        out.sort_by(|a, b| a.canonical_cmp(b, weights));
        out
    }

    /// Multi-indices with `|J|_G == k` exactly.
    pub fn all_of_degree(weights: &[u32], k: u32) -> Vec<MultiIndex> {
        Self::all_up_to(weights, k)
            .into_iter()
            .filter(|j| j.hom_degree(weights) == k)
            .collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Evaluate the monomial `x^J` (no factorial).
pub fn monomial_value<C: Scalar>(j: &MultiIndex, x: &[C]) -> C {
    let mut acc = C::one();
    for (e, xi) in j.entries().iter().zip(x) {
        if *e > 0 {
            acc = acc * xi.pow(*e);
        }
    }
    acc
}

pub fn monomial_value_f64(j: &MultiIndex, x: &[f64]) -> f64 {
    let mut acc = 1.0;
    for (e, xi) in j.entries().iter().zip(x) {
        if *e > 0 {
            acc *= xi.powi(*e as i32);
        }
    }
    acc
}

#[derive(Clone, PartialEq)]
pub struct Poly<C> {
    weights: Arc<[u32]>,
    terms: BTreeMap<MultiIndex, C>,
}

impl<C: Scalar> Poly<C> {
    pub fn zero(weights: Arc<[u32]>) -> Self {
        Poly { weights, terms: BTreeMap::new() }
    }

    pub fn constant(weights: Arc<[u32]>, c: C) -> Self {
        let n = weights.len();
        Self::monomial(weights, MultiIndex::zero(n), c)
    }

    pub fn var(weights: Arc<[u32]>, i: usize) -> Self {
        let n = weights.len();
        Self::monomial(weights, MultiIndex::unit(n, i), C::one())
    }

    pub fn monomial(weights: Arc<[u32]>, j: MultiIndex, c: C) -> Self {
        assert_eq!(j.len(), weights.len(), "multi-index length must match the ring");
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(j, c);
        }
        Poly { weights, terms }
    }

    pub fn from_terms(weights: Arc<[u32]>, terms: impl IntoIterator<Item = (MultiIndex, C)>) -> Self {
        let mut p = Poly::zero(weights);
        for (j, c) in terms {
            p.add_term(j, c);
        }
        p
    }

    pub fn weights(&self) -> &Arc<[u32]> {
        &self.weights
    }

    pub fn nvars(&self) -> usize {
        self.weights.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, j: &MultiIndex) -> C {
        self.terms.get(j).cloned().unwrap_or_else(C::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &C)> {
        self.terms.iter()
    }

    /// Terms in canonical order (weighted degree, then lexicographic).
    pub fn canonical_terms(&self) -> Vec<(&MultiIndex, &C)> {
        let mut v: Vec<_> = self.terms.iter().collect();
        v.sort_by(|a, b| a.0.canonical_cmp(b.0, &self.weights));
        v
    }

    pub fn add_term(&mut self, j: MultiIndex, c: C) {
        debug_assert_eq!(j.len(), self.weights.len());
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&j) {
            Some(v) => {
                let s = v.clone() + c;
                if s.is_zero() {
                    self.terms.remove(&j);
                } else {
                    *v = s;
                }
            }
            None => {
                self.terms.insert(j, c);
            }
        }
    }

    pub fn same_ring(&self, other: &Poly<C>) -> bool {
        Arc::ptr_eq(&self.weights, &other.weights) || self.weights[..] == other.weights[..]
    }

    fn check_ring(&self, other: &Poly<C>) -> Result<(), PolyError> {
        if self.same_ring(other) {
            Ok(())
        } else {
            Err(PolyError::SpecMismatch { left: self.nvars(), right: other.nvars() })
        }
    }

    pub fn try_add(&self, other: &Poly<C>) -> Result<Poly<C>, PolyError> {
        self.check_ring(other)?;
        let mut out = self.clone();
        for (j, c) in &other.terms {
            out.add_term(j.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Poly<C>) -> Result<Poly<C>, PolyError> {
        self.check_ring(other)?;
        let mut out = self.clone();
        for (j, c) in &other.terms {
            out.add_term(j.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Poly<C>) -> Result<Poly<C>, PolyError> {
        self.check_ring(other)?;
        let mut out = Poly::zero(self.weights.clone());
        for (ja, ca) in &self.terms {
            for (jb, cb) in &other.terms {
                out.add_term(ja.plus(jb), ca.clone() * cb.clone());
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Poly<C>) -> Poly<C> {
        self.try_add(other).expect("ring mismatch in add")
    }

    pub fn sub(&self, other: &Poly<C>) -> Poly<C> {
        self.try_sub(other).expect("ring mismatch in sub")
    }

    pub fn mul(&self, other: &Poly<C>) -> Poly<C> {
        self.try_mul(other).expect("ring mismatch in mul")
    }

    pub fn scale(&self, c: &C) -> Poly<C> {
        if c.is_zero() {
            return Poly::zero(self.weights.clone());
        }
        let terms = self.terms.iter().map(|(j, v)| (j.clone(), v.clone() * c.clone()));
        Poly::from_terms(self.weights.clone(), terms)
    }

    pub fn neg(&self) -> Poly<C> {
        self.scale(&(-C::one()))
    }

    pub fn pow(&self, e: u32) -> Poly<C> {
        let mut acc = Poly::constant(self.weights.clone(), C::one());
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn try_eval(&self, x: &[C]) -> Result<C, PolyError> {
        if x.len() != self.nvars() {
            return Err(PolyError::DimensionMismatch { expected: self.nvars(), got: x.len() });
        }
        Ok(self.eval(x))
    }

    pub fn eval(&self, x: &[C]) -> C {
        debug_assert_eq!(x.len(), self.nvars());
        let mut acc = C::zero();
        for (j, c) in &self.terms {
            acc = acc + c.clone() * monomial_value(j, x);
        }
        acc
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, c) in &self.terms {
            acc += c.to_f64() * monomial_value_f64(j, x);
        }
        acc
    }

    /// Maximal weighted degree over the terms; `None` for the zero polynomial.
    pub fn hom_degree(&self) -> Option<u32> {
        self.terms.keys().map(|j| j.hom_degree(&self.weights)).max()
    }

    pub fn min_hom_degree(&self) -> Option<u32> {
        self.terms.keys().map(|j| j.hom_degree(&self.weights)).min()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.hom_degree() == self.min_hom_degree()
    }

    /// `P ∘ δ_λ`.
    pub fn dilate(&self, lambda: &C) -> Poly<C> {
        let terms = self
            .terms
            .iter()
            .map(|(j, c)| (j.clone(), c.clone() * lambda.pow(j.hom_degree(&self.weights))));
        Poly::from_terms(self.weights.clone(), terms)
    }

    pub fn homogeneous_parts(&self) -> Vec<(u32, Poly<C>)> {
        let mut parts: BTreeMap<u32, Poly<C>> = BTreeMap::new();
        for (j, c) in &self.terms {
            let d = j.hom_degree(&self.weights);
            parts
                .entry(d)
                .or_insert_with(|| Poly::zero(self.weights.clone()))
                .add_term(j.clone(), c.clone());
        }
        parts.into_iter().collect()
    }

    /// Keep the terms whose weighted degree satisfies `keep`.
    pub fn filter_degree(&self, keep: impl Fn(u32) -> bool) -> Poly<C> {
        let terms = self
            .terms
            .iter()
            .filter(|(j, _)| keep(j.hom_degree(&self.weights)))
            .map(|(j, c)| (j.clone(), c.clone()));
        Poly::from_terms(self.weights.clone(), terms)
    }

    /// Euclidean partial derivative `∂/∂x_i`.
    pub fn derivative(&self, i: usize) -> Poly<C> {
        let mut out = Poly::zero(self.weights.clone());
        for (j, c) in &self.terms {
            if let Some(jm) = j.with_decremented(i) {
                out.add_term(jm, c.clone() * C::from_i64(j.get(i) as i64));
            }
        }
        out
    }

    /// `(∂/∂x)^β` without factorial normalisation.
    pub fn derivative_multi(&self, beta: &MultiIndex) -> Poly<C> {
        let mut out = self.clone();
        for (i, &b) in beta.entries().iter().enumerate() {
            for _ in 0..b {
                out = out.derivative(i);
                if out.is_zero() {
                    return out;
                }
            }
        }
        out
    }

    /// Substitute variable `i` by `subs[i]`; the result lives in the ring of `subs`.
    pub fn compose(&self, subs: &[Poly<C>]) -> Poly<C> {
        assert_eq!(subs.len(), self.nvars(), "one substitution per variable");
        let target = subs
            .first()
            .map(|s| s.weights.clone())
            .unwrap_or_else(|| self.weights.clone());
        let mut powers: Vec<Vec<Poly<C>>> = subs
            .iter()
            .map(|s| vec![Poly::constant(s.weights.clone(), C::one())])
            .collect();
        let mut out = Poly::zero(target.clone());
        for (j, c) in &self.terms {
            let mut term = Poly::constant(target.clone(), c.clone());
            for (i, &e) in j.entries().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[i].len() <= e as usize {
                    let next = powers[i].last().unwrap().mul(&subs[i]);
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][e as usize]);
            }
            for (jj, cc) in term.terms {
                out.add_term(jj, cc);
            }
        }
        out
    }

    pub fn map_coeffs<D: Scalar>(&self, f: impl Fn(&C) -> D) -> Poly<D> {
        Poly::from_terms(self.weights.clone(), self.terms.iter().map(|(j, c)| (j.clone(), f(c))))
    }

    pub fn to_f64(&self) -> Poly<f64> {
        self.map_coeffs(|c| c.to_f64())
    }

    /// Rebind the polynomial to an equal ring handle (shares the allocation).
    pub fn with_weights(mut self, weights: Arc<[u32]>) -> Poly<C> {
        assert_eq!(&weights[..], &self.weights[..]);
        self.weights = weights;
        self
    }

    /// Bound `|P|` on the box `|x_i| ≤ rad[i]` term by term.
    pub fn abs_bound(&self, rad: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(j, c)| {
                let m: f64 = j
                    .entries()
                    .iter()
                    .zip(rad)
                    .map(|(&e, &r)| r.abs().powi(e as i32))
                    .product();
                c.to_f64().abs() * m
            })
            .sum()
    }
}

/// Flattened terms for repeated floating evaluation in hot loops.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatPoly {
    nvars: usize,
    coeffs: Vec<f64>,
    exps: Vec<u32>,
}

impl FlatPoly {
    pub fn new<C: Scalar>(p: &Poly<C>) -> Self {
        let nvars = p.nvars();
        let mut coeffs = Vec::with_capacity(p.num_terms());
        let mut exps = Vec::with_capacity(p.num_terms() * nvars);
        for (j, c) in p.terms() {
            coeffs.push(c.to_f64());
            exps.extend_from_slice(j.entries());
        }
        FlatPoly { nvars, coeffs, exps }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (t, c) in self.coeffs.iter().enumerate() {
            let mut m = *c;
            for (e, xi) in self.exps[t * self.nvars..(t + 1) * self.nvars].iter().zip(x) {
                if *e > 0 {
                    m *= xi.powi(*e as i32);
                }
            }
            acc += m;
        }
        acc
    }
}

impl Poly<Rational> {
    /// Canonical text form: one line `j_1 … j_N  num/den` per term.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (j, c) in self.canonical_terms() {
            let idx: Vec<String> = j.entries().iter().map(|e| e.to_string()).collect();
            s.push_str(&format!("{}  {}/{}\n", idx.join(" "), c.numer(), c.denom()));
        }
        s
    }

    pub fn from_text(weights: Arc<[u32]>, text: &str) -> Result<Self, PolyError> {
        let n = weights.len();
        let mut p = Poly::zero(weights);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != n + 1 {
                return Err(PolyError::Parse {
                    line: lineno + 1,
                    msg: format!("expected {} exponents and a coefficient", n),
                });
            }
            let mut e = Vec::with_capacity(n);
            for t in &toks[..n] {
                e.push(t.parse::<u32>().map_err(|err| PolyError::Parse {
                    line: lineno + 1,
                    msg: err.to_string(),
                })?);
            }
            let c = parse_rational(toks[n]).ok_or_else(|| PolyError::Parse {
                line: lineno + 1,
                msg: format!("bad rational `{}`", toks[n]),
            })?;
            p.add_term(MultiIndex::new(e), c);
        }
        Ok(p)
    }
}

pub fn parse_rational(tok: &str) -> Option<Rational> {
    let (n, d) = match tok.split_once('/') {
        Some((n, d)) => (n, d),
        None => (tok, "1"),
    };
    let n: BigInt = n.trim().parse().ok()?;
    let d: BigInt = d.trim().parse().ok()?;
    if d.is_zero() {
        return None;
    }
    Some(Rational::new(n, d))
}

impl<C: Scalar + fmt::Display> fmt::Display for Poly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (j, c) in self.canonical_terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({})", c)?;
            for (i, &e) in j.entries().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, e)?,
                }
            }
        }
        Ok(())
    }
}

impl<C: Scalar> fmt::Debug for Poly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.terms.iter()).finish()
    }
}

/// `y ↦ P(x0 · δ_r y)` computed symbolically through the group law.
pub fn left_translate(
    group: &Group,
    p: &Poly<Rational>,
    x0: &[Rational],
    r: &Rational,
) -> Result<Poly<Rational>, PolyError> {
    let w = group.weights();
    if !p.same_ring(&Poly::zero(w.clone())) {
        return Err(PolyError::SpecMismatch { left: p.nvars(), right: w.len() });
    }
    if x0.len() != w.len() {
        return Err(PolyError::DimensionMismatch { expected: w.len(), got: x0.len() });
    }
    let subs = group.translation_substitution(x0, r);
    Ok(p.compose(&subs))
}

/// Empirical `c̃ = sup |x^J|` over the unit sphere of the chosen metric.
///
/// Random directions are pushed to the sphere by dilation; the best
/// candidates are polished by a shrinking coordinate search.
pub fn monomial_bound_constant(
    group: &Group,
    j: &MultiIndex,
    metric: Metric,
    samples: usize,
    seed: u64,
) -> f64 {
    let n = group.dim();
    if j.is_zero() {
        return 1.0;
    }
    let objective = |z: &[f64]| -> f64 {
        match group.normalize_to_sphere(z, metric) {
            Some(s) => monomial_value_f64(j, &s).abs(),
            None => 0.0,
        }
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            starts.push(e);
        }
    }
    let chunk = 4096;
    let nchunks = samples.div_ceil(chunk);
    let mut random: Vec<(f64, Vec<f64>)> = (0..nchunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_for(seed, c as u64);
            let m = chunk.min(samples - c * chunk);
            (0..m)
                .map(|_| {
                    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    (objective(&z), z)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    random.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| lex_cmp(&a.1, &b.1)));
    starts.extend(random.into_iter().take(16).map(|(_, z)| z));
    starts
        .par_iter()
        .map(|z0| polish_max(z0, &objective, 200_000).0)
        .reduce(|| 0.0, f64::max)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Coordinate pattern search maximising `f`; returns the best value seen.
pub(crate) fn polish_max(z0: &[f64], f: &dyn Fn(&[f64]) -> f64, max_evals: usize) -> (f64, Vec<f64>) {
    let mut z = z0.to_vec();
    let mut best = f(&z);
    let mut step = 0.25;
    let mut evals = 0usize;
    // Strict relative gain only: scale-invariant objectives otherwise drift on rounding noise.
    while step > 1e-13 && evals < max_evals {
        let mut improved = false;
        for i in 0..z.len() {
            for s in [step, -step] {
                let mut t = z.clone();
                t[i] += s;
                let v = f(&t);
                evals += 1;
                if v > best * (1.0 + 1e-14) + 1e-300 {
                    best = v;
                    z = t;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, z)
}
