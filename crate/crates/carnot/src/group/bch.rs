//! Dynkin's form of the BCH series, truncated at the step.
//!
//! `log(e^X e^Y) = Σ_n (-1)^{n-1}/n Σ [X^{r_1} Y^{s_1} … X^{r_n} Y^{s_n}] / (m Π r_i! s_i!)`
//! where `m = Σ (r_i + s_i)` and the bracket is right-nested. Words longer
//! than the step vanish in a nilpotent algebra of that step.

use std::sync::Arc;

use super::{StratificationSpec, StructureConstants};
use crate::poly::Poly;
use crate::scalar::{factorial, Rational};

/// A Lie algebra element whose coordinates are polynomials.
pub(crate) type LieVec = Vec<Poly<Rational>>;

pub(crate) fn bracket(sc: &StructureConstants, nz: &[(usize, usize, usize, Rational)], a: &LieVec, b: &LieVec) -> LieVec {
    let w = a[0].weights().clone();
    let mut out: LieVec = (0..sc.dim()).map(|_| Poly::zero(w.clone())).collect();
    for (l, i, j, c) in nz {
        if a[*i].is_zero() || b[*j].is_zero() {
            continue;
        }
        out[*l] = out[*l].add(&a[*i].mul(&b[*j]).scale(c));
    }
    out
}

/// Right-nested bracket `[w_1, [w_2, … [w_{m-1}, w_m]]]` of letters from `{x, y}`.
pub(crate) fn nested(sc: &StructureConstants, nz: &[(usize, usize, usize, Rational)], word: &[bool], x: &LieVec, y: &LieVec) -> LieVec {
    let letter = |b: bool| if b { y } else { x };
    let mut acc = letter(*word.last().unwrap()).clone();
    for &b in word[..word.len() - 1].iter().rev() {
        if acc.iter().all(|p| p.is_zero()) {
            break;
        }
        acc = bracket(sc, nz, letter(b), &acc);
    }
    acc
}

/// Symbolic generic elements `x = Σ x_i X_i`, `y = Σ y_i X_i` in `2N` variables.
pub(crate) fn generic_pair(spec: &StratificationSpec) -> (LieVec, LieVec) {
    let n = spec.dim();
    let w2: Arc<[u32]> = spec.degrees().iter().chain(spec.degrees().iter()).copied().collect();
    let x = (0..n).map(|i| Poly::var(w2.clone(), i)).collect();
    let y = (0..n).map(|i| Poly::var(w2.clone(), n + i)).collect();
    (x, y)
}

/// The correction `Q(x, y) = log(e^x e^y) − x − y`.
pub fn bch_correction(spec: &StratificationSpec, sc: &StructureConstants) -> Vec<Poly<Rational>> {
    let s = spec.step();
    let (x, y) = generic_pair(spec);
    let nz = sc.nonzero();
    let n = spec.dim();
    let w2 = x[0].weights().clone();
    let mut total: LieVec = (0..n).map(|_| Poly::zero(w2.clone())).collect();
    for terms in 1..=s {
        let sign = if terms % 2 == 1 { 1 } else { -1 };
        let mut pairs = Vec::new();
        enumerate_pairs(terms, s as u32, &mut Vec::new(), &mut pairs);
        for seq in pairs {
            let m: u32 = seq.iter().map(|(r, q)| r + q).sum();
            if m < 2 {
                continue;
            }
            let mut denom = num_bigint::BigInt::from(terms as i64) * num_bigint::BigInt::from(m);
            let mut word = Vec::new();
            for &(r, q) in &seq {
                denom *= factorial(r) * factorial(q);
                word.extend(std::iter::repeat(false).take(r as usize));
                word.extend(std::iter::repeat(true).take(q as usize));
            }
            let coeff = Rational::new(num_bigint::BigInt::from(sign), denom);
            let term = nested(sc, &nz, &word, &x, &y);
            for (t, v) in total.iter_mut().zip(term) {
                if !v.is_zero() {
                    *t = t.add(&v.scale(&coeff));
                }
            }
        }
    }
    total
}

/// Sequences of `n` pairs `(r_i, s_i)`, each with `r_i + s_i ≥ 1`, of total length ≤ `max`.
fn enumerate_pairs(n: usize, max: u32, cur: &mut Vec<(u32, u32)>, out: &mut Vec<Vec<(u32, u32)>>) {
    if cur.len() == n {
        out.push(cur.clone());
        return;
    }
    let used: u32 = cur.iter().map(|(r, s)| r + s).sum();
    let remaining_slots = (n - cur.len() - 1) as u32;
    if used + 1 + remaining_slots > max {
        return;
    }
    let budget = max - used - remaining_slots;
    for r in 0..=budget {
        for s in 0..=(budget - r) {
            if r + s == 0 {
                continue;
            }
            cur.push((r, s));
            enumerate_pairs(n, max, cur, out);
            cur.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Group;
    use crate::scalar::{int, rat};
    use num_traits::Zero;
    use std::collections::BTreeMap;

    /// Truncated free associative algebra on two letters.
    type Word = Vec<bool>;
    type Series = BTreeMap<Word, Rational>;

    fn mul(a: &Series, b: &Series, max: usize) -> Series {
        let mut out = Series::new();
        for (wa, ca) in a {
            for (wb, cb) in b {
                if wa.len() + wb.len() > max {
                    continue;
                }
                let mut w = wa.clone();
                w.extend(wb);
                *out.entry(w).or_insert_with(Rational::zero) += ca * cb;
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    fn exp_letter(letter: bool, max: usize) -> Series {
        let mut s = Series::new();
        let mut f = int(1);
        for k in 0..=max {
            if k > 0 {
                f /= int(k as i64);
            }
            s.insert(vec![letter; k], f.clone());
        }
        s
    }

    /// Oracle: log(e^X e^Y) in the free algebra, projected to Lie elements by
    /// the Dynkin–Specht–Wever map `w ↦ [w]/|w|`.
    fn oracle(g: &Group) -> Vec<Poly<Rational>> {
        let max = g.step();
        let prod = mul(&exp_letter(false, max), &exp_letter(true, max), max);
        let mut z = prod.clone();
        z.remove(&Vec::new());
        let mut log = Series::new();
        let mut power = z.clone();
        for n in 1..=max {
            let c = rat(if n % 2 == 1 { 1 } else { -1 }, n as i64);
            for (w, v) in &power {
                *log.entry(w.clone()).or_insert_with(Rational::zero) += v * &c;
            }
            power = mul(&power, &z, max);
        }
        let (x, y) = generic_pair(g.spec());
        let nz = g.constants().nonzero();
        let w2 = x[0].weights().clone();
        let mut total: LieVec = (0..g.dim()).map(|_| Poly::zero(w2.clone())).collect();
        for (w, c) in log {
            if c.is_zero() || w.len() < 2 {
                continue;
            }
            let coeff = c / int(w.len() as i64);
            let t = nested(g.constants(), &nz, &w, &x, &y);
            for (acc, v) in total.iter_mut().zip(t) {
                *acc = acc.add(&v.scale(&coeff));
            }
        }
        total
    }

    #[test]
    fn dynkin_matches_free_algebra_oracle() {
        for g in [Group::heisenberg(), Group::engel(), Group::abelian(3)] {
            assert_eq!(g.law().correction(), &oracle(&g)[..], "{}", g.name());
        }
    }

    #[test]
    fn corrections_vanish_on_first_layer_and_are_homogeneous() {
        let g = Group::engel();
        for (i, q) in g.law().correction().iter().enumerate() {
            if g.spec().degree(i) == 1 {
                assert!(q.is_zero());
            } else {
                assert!(q.is_homogeneous());
                assert_eq!(q.hom_degree(), Some(g.spec().degree(i)));
            }
        }
    }

    #[test]
    fn first_order_agrees_with_bracket() {
        // The bilinear part of Q is ½[x, y].
        let g = Group::engel();
        let (x, y) = generic_pair(g.spec());
        let half = bracket(g.constants(), &g.constants().nonzero(), &x, &y);
        for (q, b) in g.law().correction().iter().zip(half) {
            let bil = Poly::from_terms(
                q.weights().clone(),
                q.terms().filter(|(j, _)| j.order() == 2).map(|(j, c)| (j.clone(), c.clone())),
            );
            assert_eq!(bil, b.scale(&rat(1, 2)));
        }
    }

    #[test]
    fn pair_enumeration_counts() {
        let mut out = Vec::new();
        enumerate_pairs(1, 2, &mut Vec::new(), &mut out);
        // (0,1),(0,2),(1,0),(1,1),(2,0)
        assert_eq!(out.len(), 5);
    }
}
