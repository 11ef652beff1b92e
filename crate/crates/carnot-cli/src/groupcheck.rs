//! `group check`: parse a spec, print the law and test its invariants.

use std::fmt::Write as _;

use num_traits::{One, Signed, Zero};
use rand::Rng;

use carnot::poly::Poly;
use carnot::scalar::{rat, rng_for, Rational};
use carnot::Group;

use crate::report::Report;

/// `Q_i` written in `x1..xN, y1..yN`.
pub fn format_law_poly(p: &Poly<Rational>, n: usize) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut s = String::new();
    for (t, (j, c)) in p.canonical_terms().into_iter().enumerate() {
        let neg = c.is_negative();
        let mag = c.abs();
        match (t, neg) {
            (0, true) => s.push('-'),
            (0, false) => {}
            (_, true) => s.push_str(" - "),
            (_, false) => s.push_str(" + "),
        }
        let mut factors = Vec::new();
        if !mag.is_one() {
            factors.push(mag.to_string());
        }
        for (v, &e) in j.entries().iter().enumerate() {
            if e == 0 {
                continue;
            }
            let name = if v < n { format!("x{}", v + 1) } else { format!("y{}", v - n + 1) };
            factors.push(if e == 1 { name } else { format!("{name}^{e}") });
        }
        if factors.is_empty() {
            factors.push("1".to_string());
        }
        s.push_str(&factors.join("*"));
    }
    s
}

pub fn law_text(g: &Group) -> String {
    let n = g.dim();
    let mut s = String::new();
    for (i, q) in g.law().correction().iter().enumerate() {
        writeln!(s, "Q{} = {}", i + 1, format_law_poly(q, n)).unwrap();
    }
    s
}

fn random_point(rng: &mut impl Rng, n: usize) -> Vec<Rational> {
    (0..n).map(|_| rat(rng.gen_range(-9..=9), rng.gen_range(1..=4))).collect()
}

/// Structural and randomized checks on the law. `tuples` random rational
/// triples drive associativity, inverse and dilation.
pub fn check_group(g: &Group, tuples: usize, seed: u64) -> Report {
    let n = g.dim();
    let law = g.law().correction();
    let spec = g.spec();
    let mut rep = Report::new("group-check");
    rep.line(format!("group {} dim {} step {} Q {}", g.name(), n, g.step(), g.hom_dim()));

    let layer1 = spec.layer_range(1).all(|i| law[i].is_zero());
    rep.check("layer1_zero", layer1, "");

    let mut bad = Vec::new();
    for (i, q) in law.iter().enumerate() {
        if !q.is_zero() && !(q.is_homogeneous() && q.hom_degree() == Some(spec.degree(i))) {
            bad.push(i + 1);
        }
    }
    rep.check("homogeneous", bad.is_empty(), format!("bad {bad:?}"));

    // Q(x, x) = 0: substitute y = x.
    let w = law.first().map(|q| q.weights().clone());
    let diag_ok = match w {
        Some(w) => {
            let subs: Vec<Poly<Rational>> = (0..2 * n).map(|v| Poly::var(w.clone(), v % n)).collect();
            law.iter().all(|q| q.compose(&subs).is_zero())
        }
        None => true,
    };
    rep.check("diagonal_zero", diag_ok, "");

    // Bilinear part of Q_l is half the bracket.
    let mut bracket_bad = 0usize;
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut e = vec![0u32; 2 * n];
                e[i] += 1;
                e[n + j] += 1;
                let c = law[l].coeff(&carnot::MultiIndex::new(e));
                if c * Rational::from_integer(2.into()) != *g.constants().get(l, i, j) {
                    bracket_bad += 1;
                }
            }
        }
    }
    rep.check("brackets", bracket_bad == 0, format!("mismatches {bracket_bad}"));

    let mut rng = rng_for(seed, 0);
    let zero = vec![Rational::zero(); n];
    let (mut assoc, mut inv, mut dil) = (0usize, 0usize, 0usize);
    for _ in 0..tuples {
        let x = random_point(&mut rng, n);
        let y = random_point(&mut rng, n);
        let z = random_point(&mut rng, n);
        if g.multiply(&g.multiply(&x, &y), &z) != g.multiply(&x, &g.multiply(&y, &z)) {
            assoc += 1;
        }
        if g.multiply(&x, &g.inverse(&x)) != zero || g.multiply(&g.inverse(&x), &x) != zero {
            inv += 1;
        }
        let lam = rat(rng.gen_range(1..=7), rng.gen_range(1..=5));
        if g.dilate(&lam, &g.multiply(&x, &y)) != g.multiply(&g.dilate(&lam, &x), &g.dilate(&lam, &y)) {
            dil += 1;
        }
    }
    rep.check("associative", assoc == 0, format!("failures {assoc}/{tuples}"));
    rep.check("inverse", inv == 0, format!("failures {inv}/{tuples}"));
    rep.check("dilation_hom", dil == 0, format!("failures {dil}/{tuples}"));
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heisenberg_law_text() {
        let g = Group::heisenberg();
        assert_eq!(law_text(&g), "Q1 = 0\nQ2 = 0\nQ3 = -1/2*x2*y1 + 1/2*x1*y2\n");
    }

    #[test]
    fn builtins_pass() {
        for name in ["abelian-3", "heisenberg", "engel"] {
            let g = Group::builtin(name).unwrap();
            let r = check_group(&g, 50, 1);
            assert!(r.pass(), "{name}: {:?}", r.failed());
        }
    }
}
