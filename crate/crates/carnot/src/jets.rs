//! Carnot Taylor polynomials and jets.
//!
//! With `T(y) = Σ α_J y^J / J!` and `P_k(x0, x) = T(x0⁻¹x)`, left invariance
//! gives `(X^K P_k)(x0) = (X^K T)(0) = Σ_J G_KJ α_J` where
//! `G_KJ = X^K(y^J/J!)(0)`. `G` vanishes unless `|K|_G = |J|_G` and
//! `|J| ≤ |K|`, with unit diagonal, so `β = G⁻¹` exists and is exact.

use std::fmt::Write as _;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::group::{Group, GroupScalar, Metric};
use crate::poly::{MultiIndex, Poly};
use crate::scalar::{rng_for, Rational, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("the triangular system for β is singular at {0}")]
    SingularSystem(MultiIndex),
    #[error("jet at point {point} has {got} values, expected {expected}")]
    IncompleteJet { point: usize, expected: usize, got: usize },
    #[error("points {0} and {1} coincide but carry different jets")]
    CoincidentPoints(usize, usize),
    #[error("jet set is empty")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug)]
pub struct BetaTable {
    k: u32,
    weights: Arc<[u32]>,
    indices: Vec<MultiIndex>,
    beta: Vec<Vec<Rational>>,
    beta_f64: Vec<Vec<f64>>,
    gram: Vec<Vec<Rational>>,
    /// `E[J][I] = X^J(y^I / I!)`.
    basis: Vec<Vec<Poly<Rational>>>,
    basis_f64: Vec<Vec<Poly<f64>>>,
}

impl BetaTable {
    pub fn new(group: &Group, k: u32) -> Result<Self, JetError> {
        let w = group.weights();
        let indices = MultiIndex::all_up_to(&w, k);
        let n = indices.len();
        let fields = group.fields();
        let monos: Vec<Poly<Rational>> = indices
            .iter()
            .map(|j| Poly::monomial(w.clone(), j.clone(), Rational::new(BigInt::one(), j.factorial())))
            .collect();
        let basis: Vec<Vec<Poly<Rational>>> = indices
            .par_iter()
            .map(|jj| monos.iter().map(|m| fields.apply_xj(jj, m)).collect())
            .collect();
        let origin = vec![Rational::zero(); group.dim()];
        let gram: Vec<Vec<Rational>> = basis.iter().map(|row| row.iter().map(|p| p.eval(&origin)).collect()).collect();
        for (a, ka) in indices.iter().enumerate() {
            for (b, jb) in indices.iter().enumerate() {
                let g = &gram[a][b];
                let same = ka.hom_degree(&w) == jb.hom_degree(&w);
                let allowed = same && (jb.order() < ka.order() || a == b);
                if (a == b && !g.is_one()) || (!allowed && !g.is_zero()) {
                    return Err(JetError::SingularSystem(ka.clone()));
                }
            }
        }
        // Forward substitution in order of |·|; G is unit lower-triangular there.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (indices[i].hom_degree(&w), indices[i].order(), i));
        let mut beta = vec![vec![Rational::zero(); n]; n];
        for col in 0..n {
            // Solve G x = e_col.
            let mut x = vec![Rational::zero(); n];
            for &r in &order {
                let mut s = if r == col { Rational::one() } else { Rational::zero() };
                for &c in &order {
                    if c == r {
                        break;
                    }
                    if !gram[r][c].is_zero() {
                        s -= &gram[r][c] * &x[c];
                    }
                }
                x[r] = s;
            }
            for r in 0..n {
                beta[r][col] = x[r].clone();
            }
        }
        let beta_f64 = beta.iter().map(|row| row.iter().map(|v| v.to_f64()).collect()).collect();
        let basis_f64 = basis.iter().map(|row| row.iter().map(|p| p.to_f64()).collect()).collect();
        Ok(BetaTable { k, weights: w, indices, beta, beta_f64, gram, basis, basis_f64 })
    }

    pub fn order(&self) -> u32 {
        self.k
    }

    /// Multi-indices with `|J|_G ≤ k` in canonical order; jets are stored in this order.
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, j: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|i| i == j)
    }

    pub fn beta(&self, j: &MultiIndex, k: &MultiIndex) -> Rational {
        match (self.position(j), self.position(k)) {
            (Some(a), Some(b)) => self.beta[a][b].clone(),
            _ => Rational::zero(),
        }
    }

    pub fn gram(&self) -> &[Vec<Rational>] {
        &self.gram
    }

    pub fn weights(&self) -> &Arc<[u32]> {
        &self.weights
    }

    /// `α_J = Σ_K β_JK f_K`.
    pub fn alpha<C: Scalar>(&self, f: &[C]) -> Vec<C> {
        (0..self.indices.len())
            .map(|a| {
                let mut s = C::zero();
                for (b, fb) in f.iter().enumerate() {
                    let bv = &self.beta[a][b];
                    if !bv.is_zero() {
                        s = s + C::from_rational(bv) * fb.clone();
                    }
                }
                s
            })
            .collect()
    }

    pub fn alpha_f64(&self, f: &[f64]) -> Vec<f64> {
        self.beta_f64.iter().map(|row| row.iter().zip(f).map(|(b, v)| b * v).sum()).collect()
    }

    /// `f_K = Σ_J G_KJ α_J`: the jet at the centre of `Σ α_J y^J/J!`.
    pub fn jet_from_alpha<C: Scalar>(&self, alpha: &[C]) -> Vec<C> {
        self.gram
            .iter()
            .map(|row| {
                let mut s = C::zero();
                for (g, a) in row.iter().zip(alpha) {
                    if !g.is_zero() {
                        s = s + C::from_rational(g) * a.clone();
                    }
                }
                s
            })
            .collect()
    }

    pub fn basis_derivative(&self, j: usize, i: usize) -> &Poly<Rational> {
        &self.basis[j][i]
    }

    /// `(X^J T)(y)` for every `J`, with `T = Σ α_I y^I / I!`.
    pub fn local_derivatives_f64(&self, alpha: &[f64], y: &[f64]) -> Vec<f64> {
        self.basis_f64
            .iter()
            .map(|row| {
                row.iter()
                    .zip(alpha)
                    .filter(|(p, a)| **a != 0.0 && !p.is_zero())
                    .map(|(p, a)| a * p.eval_f64(y))
                    .sum()
            })
            .collect()
    }
}

/// Values `X^J P(x0)` for all `|J|_G ≤ k`, exact.
pub fn jet_of(group: &Group, table: &BetaTable, p: &Poly<Rational>, x0: &[Rational]) -> Vec<Rational> {
    table.indices.iter().map(|j| group.fields().apply_xj(j, p).eval(x0)).collect()
}

pub fn jet_of_f64(group: &Group, table: &BetaTable, p: &Poly<Rational>, x0: &[f64]) -> Vec<f64> {
    table.indices.iter().map(|j| group.fields().apply_xj(j, p).eval_f64(x0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaylorPoly<C> {
    pub center: Vec<C>,
    pub k: u32,
    /// Coefficients `α_J` in the table's index order.
    pub alpha: Vec<C>,
}

pub fn taylor_poly<C: GroupScalar>(table: &BetaTable, center: &[C], jet: &[C]) -> Result<TaylorPoly<C>, JetError> {
    if jet.len() != table.indices.len() {
        return Err(JetError::IncompleteJet { point: 0, expected: table.indices.len(), got: jet.len() });
    }
    Ok(TaylorPoly { center: center.to_vec(), k: table.k, alpha: table.alpha(jet) })
}

impl<C: GroupScalar> TaylorPoly<C> {
    /// `T(y) = Σ α_J y^J / J!`.
    pub fn local(&self, table: &BetaTable) -> Poly<C> {
        Poly::from_terms(
            table.weights.clone(),
            table.indices.iter().zip(&self.alpha).map(|(j, a)| {
                let f = C::from_rational(&Rational::new(BigInt::one(), j.factorial()));
                (j.clone(), a.clone() * f)
            }),
        )
    }

    /// `P_k(x0, x) = T(x0⁻¹ x)` as a polynomial in `x`.
    pub fn to_poly(&self, group: &Group, table: &BetaTable) -> Poly<C> {
        self.local(table).compose(&inverse_translation(group, &self.center))
    }

    pub fn eval(&self, group: &Group, table: &BetaTable, x: &[C]) -> C {
        let y = group.relative(&self.center, x);
        self.local(table).eval(&y)
    }
}

/// `x ↦ (x0⁻¹ x)_i` as polynomials in `x`.
pub fn inverse_translation<C: GroupScalar>(group: &Group, x0: &[C]) -> Vec<Poly<C>> {
    let w = group.weights();
    let n = group.dim();
    let mut subs: Vec<Poly<C>> = x0.iter().map(|v| Poly::constant(w.clone(), -v.clone())).collect();
    subs.extend((0..n).map(|i| Poly::var(w.clone(), i)));
    C::law(group.law())
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let base = Poly::var(w.clone(), i).add(&Poly::constant(w.clone(), -x0[i].clone()));
            if q.is_zero() {
                base
            } else {
                base.add(&q.compose(&subs))
            }
        })
        .collect()
}

/// `R_J(x0, ·) = X^J u − X^J P_k(u, x0, ·)` symbolically.
pub fn remainder_polys(group: &Group, table: &BetaTable, u: &Poly<Rational>, x0: &[Rational]) -> Vec<Poly<Rational>> {
    let t = taylor_poly(table, x0, &jet_of(group, table, u, x0)).expect("complete jet").to_poly(group, table);
    let d = u.sub(&t);
    table.indices.iter().map(|j| group.fields().apply_xj(j, &d)).collect()
}

/// Floating jets on a finite point set, values in [`BetaTable::indices`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct JetSet {
    pub k: u32,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl JetSet {
    pub fn new(table: &BetaTable, points: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Result<Self, JetError> {
        let js = JetSet { k: table.k, points, values };
        js.check(table)?;
        Ok(js)
    }

    pub fn from_poly(group: &Group, table: &BetaTable, p: &Poly<Rational>, points: Vec<Vec<f64>>) -> Self {
        let derivs: Vec<Poly<f64>> = table.indices.iter().map(|j| group.fields().apply_xj(j, p).to_f64()).collect();
        let values = points.iter().map(|x| derivs.iter().map(|d| d.eval_f64(x)).collect()).collect();
        JetSet { k: table.k, points, values }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check(&self, table: &BetaTable) -> Result<(), JetError> {
        let m = table.indices.len();
        if self.points.len() != self.values.len() {
            return Err(JetError::IncompleteJet { point: self.values.len(), expected: m, got: 0 });
        }
        for (i, v) in self.values.iter().enumerate() {
            if v.len() != m || v.iter().any(|x| !x.is_finite()) {
                return Err(JetError::IncompleteJet { point: i, expected: m, got: v.iter().filter(|x| x.is_finite()).count() });
            }
        }
        Ok(())
    }

    pub fn subset(&self, keep: &[usize]) -> JetSet {
        JetSet {
            k: self.k,
            points: keep.iter().map(|&i| self.points[i].clone()).collect(),
            values: keep.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }
}

/// Ordered pair `(x0, x)` with distance and `|R_J(x0, x)|` for every `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRemainder {
    pub x0: usize,
    pub x: usize,
    pub distance: f64,
    pub values: Vec<f64>,
}

/// Remainders over the given ordered pairs, or over all ordered pairs of distinct points.
pub fn remainders(
    group: &Group,
    table: &BetaTable,
    jets: &JetSet,
    metric: Metric,
    pairs: Option<&[(usize, usize)]>,
) -> Result<Vec<PairRemainder>, JetError> {
    jets.check(table)?;
    let all: Vec<(usize, usize)>;
    let pairs = match pairs {
        Some(p) => p,
        None => {
            let n = jets.len();
            all = (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect();
            &all
        }
    };
    let alphas: Vec<Vec<f64>> = jets.values.iter().map(|v| table.alpha_f64(v)).collect();
    Ok(pairs
        .par_iter()
        .map(|&(a, b)| {
            let y = group.relative(&jets.points[a], &jets.points[b]);
            let distance = group.norm_with(metric, &y);
            let pd = table.local_derivatives_f64(&alphas[a], &y);
            let values = jets.values[b].iter().zip(pd).map(|(f, p)| f - p).collect();
            PairRemainder { x0: a, x: b, distance, values }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipReport {
    /// `max(value_bound, remainder_bound)`.
    pub m: f64,
    pub value_bound: f64,
    pub remainder_bound: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub coincident: Option<(usize, usize)>,
}

/// Least `M` with `|f_J| ≤ M` and `|R_J(x0, x)| ≤ M d^{γ − |J|_G}` on the pairs.
pub fn lip_constant(
    group: &Group,
    table: &BetaTable,
    jets: &JetSet,
    gamma: f64,
    metric: Metric,
    pairs: Option<&[(usize, usize)]>,
) -> Result<LipReport, JetError> {
    if jets.is_empty() {
        return Err(JetError::Empty);
    }
    let rem = remainders(group, table, jets, metric, pairs)?;
    let value_bound = jets.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let degs: Vec<f64> = table.indices.iter().map(|j| j.hom_degree(&table.weights) as f64).collect();
    let mut remainder_bound = 0.0f64;
    let mut worst = None;
    let mut coincident = None;
    for r in &rem {
        for (v, d) in r.values.iter().zip(&degs) {
            let ratio = if r.distance == 0.0 {
                if v.abs() > 0.0 {
                    coincident.get_or_insert((r.x0, r.x));
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                v.abs() / r.distance.powf(gamma - d)
            };
            if ratio > remainder_bound {
                remainder_bound = ratio;
                worst = Some((r.x0, r.x));
            }
        }
    }
    Ok(LipReport { m: value_bound.max(remainder_bound), value_bound, remainder_bound, worst_pair: worst, coincident })
}

/// Per ordered pair: distance and `max_J |R_J| / d^{k − |J|_G}`.
pub fn whitney_ratios(table: &BetaTable, rem: &[PairRemainder]) -> Vec<(f64, f64, usize, usize)> {
    let k = table.k as f64;
    let degs: Vec<f64> = table.indices.iter().map(|j| j.hom_degree(&table.weights) as f64).collect();
    rem.iter()
        .map(|r| {
            let m = r
                .values
                .iter()
                .zip(&degs)
                .map(|(v, d)| if r.distance == 0.0 { if *v == 0.0 { 0.0 } else { f64::INFINITY } } else { v.abs() / r.distance.powf(k - d) })
                .fold(0.0, f64::max);
            (r.distance, m, r.x0, r.x)
        })
        .collect()
}

/// `ω(t)` at each `t`: the largest Whitney ratio over pairs with `d ≤ t`.
pub fn whitney_modulus(table: &BetaTable, rem: &[PairRemainder], ts: &[f64]) -> Vec<(f64, f64)> {
    let mut ratios = whitney_ratios(table, rem);
    ratios.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prefix = Vec::with_capacity(ratios.len());
    let mut m = 0.0f64;
    for r in &ratios {
        m = m.max(r.1);
        prefix.push(m);
    }
    ts.iter()
        .map(|&t| {
            let n = ratios.partition_point(|r| r.0 <= t);
            (t, if n == 0 { 0.0 } else { prefix[n - 1] })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzTopReport {
    /// `max |f_J(x) − f_J(x0)| / d(x, x0)` over `|J|_G = k − 1`.
    pub ratio: f64,
    pub m: f64,
    pub holds: bool,
}

/// For jets of order `k − 1` with Lip constant `M` at `γ = k`: the top components are `M`-Lipschitz.
pub fn top_order_lipschitz(
    group: &Group,
    table: &BetaTable,
    jets: &JetSet,
    metric: Metric,
    pairs: Option<&[(usize, usize)]>,
) -> Result<LipschitzTopReport, JetError> {
    let k = table.k as f64 + 1.0;
    let lip = lip_constant(group, table, jets, k, metric, pairs)?;
    let top: Vec<usize> = (0..table.indices.len())
        .filter(|&i| table.indices[i].hom_degree(&table.weights) == table.k)
        .collect();
    let rem = remainders(group, table, jets, metric, pairs)?;
    let mut ratio = 0.0f64;
    for r in &rem {
        if r.distance == 0.0 {
            continue;
        }
        for &i in &top {
            ratio = ratio.max((jets.values[r.x][i] - jets.values[r.x0][i]).abs() / r.distance);
        }
    }
    Ok(LipschitzTopReport { ratio, m: lip.m, holds: ratio <= lip.m * (1.0 + 1e-9) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    /// `(r, sup_{B(x0,r)} |u − P_k|)`.
    pub sups: Vec<(f64, f64)>,
    /// Log-log regression slope; `None` when the remainder vanishes identically.
    pub slope: Option<f64>,
    pub exact_zero: bool,
    /// `sup / r^k`.
    pub normalized: Vec<f64>,
}

/// Sup of the order-`k` Taylor remainder over `B(x0, r)` for each radius.
pub fn taylor_decay_probe(
    group: &Group,
    u: &Poly<Rational>,
    x0: &[Rational],
    k: u32,
    radii: &[f64],
    metric: Metric,
    samples: usize,
    seed: u64,
) -> Result<DecayReport, JetError> {
    let table = BetaTable::new(group, k)?;
    let t = taylor_poly(&table, x0, &jet_of(group, &table, u, x0))?.local(&table);
    // y ↦ u(x0 y) − T(y), exact: only degrees above k survive.
    let shifted = crate::poly::left_translate(group, u, x0, &Rational::one()).expect("same ring");
    let rem = shifted.sub(&t);
    if rem.is_zero() {
        return Ok(DecayReport {
            sups: radii.iter().map(|&r| (r, 0.0)).collect(),
            slope: None,
            exact_zero: true,
            normalized: vec![0.0; radii.len()],
        });
    }
    let remf = rem.to_f64();
    let mut rng = rng_for(seed, 0);
    let n = group.dim();
    // Unit-ball samples: the sphere through each axis plus random interior points.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(samples + 2 * n);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            dirs.extend(group.normalize_to_sphere(&e, metric));
        }
    }
    while dirs.len() < samples + 2 * n {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(s) = group.normalize_to_sphere(&z, metric) {
            let shrink: f64 = rng.gen_range(0.0f64..1.0).powf(1.0 / group.hom_dim() as f64);
            dirs.push(group.dilate_f64(shrink, &s));
        }
    }
    let sups: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| {
            let m = dirs
                .par_iter()
                .map(|z| remf.eval_f64(&group.dilate_f64(r, z)).abs())
                .reduce(|| 0.0, f64::max);
            (r, m)
        })
        .collect();
    let pts: Vec<(f64, f64)> = sups.iter().filter(|(_, s)| *s > 0.0).map(|(r, s)| (r.ln(), s.ln())).collect();
    let slope = if pts.len() >= 2 {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    let normalized = sups.iter().map(|(r, s)| s / r.powi(k as i32)).collect();
    Ok(DecayReport { sups, slope, exact_zero: false, normalized })
}

/// Text form: header lines then `x_1 … x_N  j_1,…,j_N  value` per point and index.
pub fn write_jets(group: &Group, table: &BetaTable, jets: &JetSet) -> String {
    let mut s = String::new();
    writeln!(s, "# carnot jets v1").unwrap();
    writeln!(s, "group {}", group.name()).unwrap();
    writeln!(s, "dim {}", group.dim()).unwrap();
    writeln!(s, "k {}", table.k).unwrap();
    for (p, v) in jets.points.iter().zip(&jets.values) {
        let xs: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
        for (j, val) in table.indices.iter().zip(v) {
            let js: Vec<String> = j.entries().iter().map(|e| e.to_string()).collect();
            writeln!(s, "{}  {}  {val:?}", xs.join(" "), js.join(",")).unwrap();
        }
    }
    s
}

/// Parses [`write_jets`] output; returns the group name and the jets.
pub fn read_jets(table: &BetaTable, text: &str) -> Result<(String, JetSet), JetError> {
    let mut name = None;
    let mut dim = None;
    let mut k = None;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let m = table.indices.len();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let err = |msg: &str| JetError::Parse { line: line_no, msg: msg.into() };
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        match toks[0] {
            "group" => name = toks.get(1).map(|s| s.to_string()),
            "dim" => dim = Some(toks.get(1).and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| err("bad dim"))?),
            "k" => k = Some(toks.get(1).and_then(|t| t.parse::<u32>().ok()).ok_or_else(|| err("bad k"))?),
            _ => {
                let n = dim.ok_or_else(|| err("record before `dim`"))?;
                if toks.len() != n + 2 {
                    return Err(err("expected coordinates, index and value"));
                }
                let x: Result<Vec<f64>, _> = toks[..n].iter().map(|t| t.parse::<f64>()).collect();
                let x = x.map_err(|_| err("bad coordinate"))?;
                let j: Result<Vec<u32>, _> = toks[n].split(',').map(|t| t.parse::<u32>()).collect();
                let j = MultiIndex::new(j.map_err(|_| err("bad multi-index"))?);
                let pos = table.position(&j).ok_or_else(|| err("multi-index outside the table"))?;
                let v: f64 = toks[n + 1].parse().map_err(|_| err("bad value"))?;
                if points.last() != Some(&x) {
                    points.push(x);
                    values.push(vec![f64::NAN; m]);
                }
                values.last_mut().unwrap()[pos] = v;
            }
        }
    }
    if k != Some(table.k) {
        return Err(JetError::Parse { line: 0, msg: "order does not match the table".into() });
    }
    let js = JetSet { k: table.k, points, values };
    js.check(table)?;
    Ok((name.unwrap_or_default(), js))
}
