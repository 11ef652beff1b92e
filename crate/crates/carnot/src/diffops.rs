//! Left-invariant vector fields and the composed operators `X^J`.
//!
//! `X_i = Σ_j a_ij(x) ∂_j` with `a_ij(x) = ∂_{y_i} (x·y)_j |_{y=0}`.
//! `X^J = X_1^{j_1} ⋯ X_N^{j_N}`; the rightmost factor acts first.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::group::{Group, GroupError, GroupLaw, GroupScalar, StratificationSpec, StructureConstants};
use crate::poly::{MultiIndex, Poly, PolyError};
use crate::scalar::Rational;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("stencil point {point:?} lies outside the sampled domain")]
    StencilOutOfDomain { point: Vec<f64> },
}

/// Coefficients `a_ij` of the left-invariant fields, exact and rounded.
#[derive(Clone, Debug)]
pub struct Fields {
    exact: Vec<Vec<Poly<Rational>>>,
    float: Vec<Vec<Poly<f64>>>,
}

impl Fields {
    /// `exact()[i][j] = a_ij`.
    pub fn exact(&self) -> &[Vec<Poly<Rational>>] {
        &self.exact
    }

    pub fn float(&self) -> &[Vec<Poly<f64>>] {
        &self.float
    }

    pub fn dim(&self) -> usize {
        self.exact.len()
    }

    /// `X_i P`.
    pub fn apply<C: GroupScalar>(&self, i: usize, p: &Poly<C>) -> Poly<C> {
        let a = &C::field_coeffs(self)[i];
        let mut out = Poly::zero(p.weights().clone());
        for (j, aij) in a.iter().enumerate() {
            if aij.is_zero() {
                continue;
            }
            let d = p.derivative(j);
            if !d.is_zero() {
                out = out.add(&aij.clone().with_weights(p.weights().clone()).mul(&d));
            }
        }
        out
    }

    /// `X^J P`, applying `X_N^{j_N}` first.
    pub fn apply_xj<C: GroupScalar>(&self, j: &MultiIndex, p: &Poly<C>) -> Poly<C> {
        let mut out = p.clone();
        for i in (0..j.len()).rev() {
            for _ in 0..j.get(i) {
                if out.is_zero() {
                    return out;
                }
                out = self.apply(i, &out);
            }
        }
        out
    }
}

pub(crate) fn build_fields(
    spec: &StratificationSpec,
    constants: &StructureConstants,
    law: &GroupLaw,
) -> Result<Fields, GroupError> {
    let n = spec.dim();
    let w: Arc<[u32]> = spec.degrees().clone();
    // (x; y) ↦ (x; 0)
    let mut at_origin: Vec<Poly<Rational>> = (0..n).map(|i| Poly::var(w.clone(), i)).collect();
    at_origin.extend((0..n).map(|_| Poly::zero(w.clone())));
    let mut exact = vec![vec![Poly::zero(w.clone()); n]; n];
    for (i, row) in exact.iter_mut().enumerate() {
        for (j, a) in row.iter_mut().enumerate() {
            let mut v = law.correction()[j].derivative(n + i).compose(&at_origin);
            if i == j {
                v = v.add(&Poly::constant(w.clone(), Rational::one()));
            }
            *a = v;
        }
    }
    let float = exact.iter().map(|row| row.iter().map(|p| p.to_f64()).collect()).collect();
    let fields = Fields { exact, float };
    check_brackets(&fields, constants, &w)?;
    Ok(fields)
}

/// `[X_i, X_j] = Σ_l c_lij X_l` as operators: compare the `∂_m` coefficients.
fn check_brackets(f: &Fields, sc: &StructureConstants, w: &Arc<[u32]>) -> Result<(), GroupError> {
    let n = f.dim();
    for i in 0..n {
        for j in (i + 1)..n {
            for m in 0..n {
                let lhs = f.apply(i, &f.exact[j][m]).sub(&f.apply(j, &f.exact[i][m]));
                let mut rhs = Poly::zero(w.clone());
                for l in 0..n {
                    let c = sc.get(l, i, j);
                    if !c.is_zero() {
                        rhs = rhs.add(&f.exact[l][m].scale(c));
                    }
                }
                if lhs != rhs {
                    return Err(GroupError::BracketMismatch(format!(
                        "[X{}, X{}] differs from the structure constants on ∂{}",
                        i + 1,
                        j + 1,
                        m + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

fn check_ring<C: GroupScalar>(group: &Group, p: &Poly<C>) -> Result<(), PolyError> {
    if p.weights()[..] == group.spec().degrees()[..] {
        Ok(())
    } else {
        Err(PolyError::SpecMismatch { left: p.nvars(), right: group.dim() })
    }
}

pub fn apply_field<C: GroupScalar>(group: &Group, i: usize, p: &Poly<C>) -> Result<Poly<C>, PolyError> {
    check_ring(group, p)?;
    Ok(group.fields().apply(i, p))
}

pub fn apply_xj<C: GroupScalar>(group: &Group, j: &MultiIndex, p: &Poly<C>) -> Result<Poly<C>, PolyError> {
    check_ring(group, p)?;
    if j.len() != group.dim() {
        return Err(PolyError::DimensionMismatch { expected: group.dim(), got: j.len() });
    }
    Ok(group.fields().apply_xj(j, p))
}

/// `X^α = Σ_β Q_β(x) D^β` with `D^β = (∂/∂x)^β`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorExpansion {
    pub alpha: MultiIndex,
    pub terms: BTreeMap<MultiIndex, Poly<Rational>>,
}

impl OperatorExpansion {
    pub fn apply(&self, p: &Poly<Rational>) -> Poly<Rational> {
        let mut out = Poly::zero(p.weights().clone());
        for (beta, q) in &self.terms {
            let d = p.derivative_multi(beta);
            if !d.is_zero() {
                out = out.add(&q.mul(&d));
            }
        }
        out
    }

    /// Unit leading coefficient; `|β| ≤ |α|`, `|β|_G ≥ |α|_G`, `Q_β` homogeneous of the difference.
    pub fn check_invariants(&self, weights: &[u32]) -> Result<(), String> {
        let one = Poly::constant(Arc::from(weights.to_vec()), Rational::one());
        match self.terms.get(&self.alpha) {
            Some(q) if *q == one => {}
            _ => return Err(format!("leading coefficient of D^{} is not 1", self.alpha)),
        }
        let (a, ag) = (self.alpha.order(), self.alpha.hom_degree(weights));
        for (beta, q) in &self.terms {
            let (b, bg) = (beta.order(), beta.hom_degree(weights));
            if b > a || bg < ag {
                return Err(format!("term D^{beta} outside the allowed range"));
            }
            if q.is_zero() || !q.is_homogeneous() || q.hom_degree() != Some(bg - ag) {
                return Err(format!("coefficient of D^{beta} is not homogeneous of degree {}", bg - ag));
            }
        }
        Ok(())
    }
}

pub fn expand_operator(group: &Group, alpha: &MultiIndex) -> OperatorExpansion {
    let w = group.weights();
    let n = group.dim();
    let mut terms: BTreeMap<MultiIndex, Poly<Rational>> = BTreeMap::new();
    terms.insert(MultiIndex::zero(n), Poly::constant(w.clone(), Rational::one()));
    let a = group.fields().exact();
    for i in (0..n).rev() {
        for _ in 0..alpha.get(i) {
            // X_i ∘ Σ Q_β D^β = Σ_j a_ij (∂_j Q_β D^β + Q_β D^{β+e_j})
            let mut next: BTreeMap<MultiIndex, Poly<Rational>> = BTreeMap::new();
            let mut push = |b: MultiIndex, p: Poly<Rational>| {
                if p.is_zero() {
                    return;
                }
                let e = next.entry(b).or_insert_with(|| Poly::zero(w.clone()));
                *e = e.add(&p);
            };
            for (beta, q) in &terms {
                for (j, aij) in a[i].iter().enumerate() {
                    if aij.is_zero() {
                        continue;
                    }
                    push(beta.clone(), aij.mul(&q.derivative(j)));
                    push(beta.with_incremented(j), aij.mul(q));
                }
            }
            next.retain(|_, p| !p.is_zero());
            terms = next;
        }
    }
    OperatorExpansion { alpha: alpha.clone(), terms }
}

/// Point evaluation of sampled data; `None` outside the domain.
pub trait PointEvaluator: Sync {
    fn value_at(&self, x: &[f64]) -> Option<f64>;
}

impl<F: Fn(&[f64]) -> Option<f64> + Sync> PointEvaluator for F {
    fn value_at(&self, x: &[f64]) -> Option<f64> {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericDerivative {
    pub value: f64,
    /// Every point at which `f` was evaluated.
    pub stencil: Vec<Vec<f64>>,
    /// False if some factor fell back to a one-sided difference.
    pub central: bool,
}

/// `X^J f(x)` by nested differences along `t ↦ x·(t e_i)`, step `h`.
pub fn apply_xj_numeric(
    group: &Group,
    j: &MultiIndex,
    f: &dyn PointEvaluator,
    x: &[f64],
    h: f64,
) -> Result<NumericDerivative, DiffError> {
    if x.len() != group.dim() || j.len() != group.dim() {
        return Err(PolyError::DimensionMismatch { expected: group.dim(), got: x.len().min(j.len()) }.into());
    }
    let mut stencil = Vec::new();
    let mut central = true;
    let value = numeric_rec(group, j, f, x, h, &mut stencil, &mut central)?;
    Ok(NumericDerivative { value, stencil, central })
}

fn numeric_rec(
    group: &Group,
    j: &MultiIndex,
    f: &dyn PointEvaluator,
    x: &[f64],
    h: f64,
    stencil: &mut Vec<Vec<f64>>,
    central: &mut bool,
) -> Result<f64, DiffError> {
    let Some(i) = j.first_nonzero() else {
        stencil.push(x.to_vec());
        return f.value_at(x).ok_or_else(|| DiffError::StencilOutOfDomain { point: x.to_vec() });
    };
    let rest = j.with_decremented(i).unwrap();
    let shift = |t: f64| {
        let mut e = vec![0.0; x.len()];
        e[i] = t;
        group.multiply(x, &e)
    };
    let inside = |p: &[f64], rest: &MultiIndex| probe_inside(group, rest, f, p, h);
    let (xp, xm) = (shift(h), shift(-h));
    match (inside(&xp, &rest), inside(&xm, &rest)) {
        (true, true) => {
            let a = numeric_rec(group, &rest, f, &xp, h, stencil, central)?;
            let b = numeric_rec(group, &rest, f, &xm, h, stencil, central)?;
            Ok((a - b) / (2.0 * h))
        }
        (true, false) if inside(x, &rest) => {
            *central = false;
            let a = numeric_rec(group, &rest, f, &xp, h, stencil, central)?;
            let b = numeric_rec(group, &rest, f, x, h, stencil, central)?;
            Ok((a - b) / h)
        }
        (false, true) if inside(x, &rest) => {
            *central = false;
            let a = numeric_rec(group, &rest, f, x, h, stencil, central)?;
            let b = numeric_rec(group, &rest, f, &xm, h, stencil, central)?;
            Ok((a - b) / h)
        }
        _ => Err(DiffError::StencilOutOfDomain { point: if f.value_at(&xp).is_none() { xp } else { xm } }),
    }
}

/// Whether the full sub-stencil of `X^rest` at `p` can be evaluated.
fn probe_inside(group: &Group, rest: &MultiIndex, f: &dyn PointEvaluator, p: &[f64], h: f64) -> bool {
    let mut s = Vec::new();
    let mut c = true;
    numeric_rec(group, rest, f, p, h, &mut s, &mut c).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::left_translate;
    use crate::scalar::{int, rat};
    use proptest::prelude::*;

    fn x(g: &Group, i: usize) -> Poly<Rational> {
        Poly::var(g.weights(), i)
    }

    #[test]
    fn heisenberg_fields() {
        let g = Group::heisenberg();
        let a = g.fields().exact();
        let one = Poly::constant(g.weights(), int(1));
        // X_1 = ∂_1 − (x_2/2)∂_3, X_2 = ∂_2 + (x_1/2)∂_3, X_3 = ∂_3
        assert_eq!(a[0], vec![one.clone(), Poly::zero(g.weights()), x(&g, 1).scale(&rat(-1, 2))]);
        assert_eq!(a[1], vec![Poly::zero(g.weights()), one.clone(), x(&g, 0).scale(&rat(1, 2))]);
        assert_eq!(a[2], vec![Poly::zero(g.weights()), Poly::zero(g.weights()), one]);
    }

    #[test]
    fn abelian_fields_are_partials() {
        let g = Group::abelian(3);
        for (i, row) in g.fields().exact().iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let expect = if i == j { Poly::constant(g.weights(), int(1)) } else { Poly::zero(g.weights()) };
                assert_eq!(a, &expect);
            }
        }
    }

    #[test]
    fn heisenberg_bracket_on_polynomials() {
        let g = Group::heisenberg();
        let p = x(&g, 0).mul(&x(&g, 2)).add(&x(&g, 1).pow(3));
        let f = g.fields();
        let br = f.apply(0, &f.apply(1, &p)).sub(&f.apply(1, &f.apply(0, &p)));
        assert_eq!(br, f.apply(2, &p));
    }

    #[test]
    fn xj_examples() {
        let g = Group::heisenberg();
        let e1 = MultiIndex::unit(3, 0);
        assert_eq!(apply_xj(&g, &e1, &x(&g, 2)).unwrap(), x(&g, 1).scale(&rat(-1, 2)));
        let p = x(&g, 0).mul(&x(&g, 1));
        assert_eq!(apply_xj(&g, &MultiIndex::zero(3), &p).unwrap(), p);
        // |J|_G = 3 > 2
        assert!(apply_xj(&g, &MultiIndex::new(vec![1, 0, 1]), &p).unwrap().is_zero());
        let other = Poly::<Rational>::var(Arc::from(vec![1u32, 1]), 0);
        assert!(apply_xj(&g, &e1, &other).is_err());
    }

    #[test]
    fn expansion_examples() {
        let g = Group::heisenberg();
        let id = expand_operator(&g, &MultiIndex::zero(3));
        assert_eq!(id.terms.len(), 1);
        let e = expand_operator(&g, &MultiIndex::unit(3, 0));
        assert_eq!(e.terms.len(), 2);
        assert_eq!(e.terms[&MultiIndex::unit(3, 0)], Poly::constant(g.weights(), int(1)));
        assert_eq!(e.terms[&MultiIndex::unit(3, 2)], x(&g, 1).scale(&rat(-1, 2)));
        let a = Group::abelian(2);
        let alpha = MultiIndex::new(vec![2, 1]);
        let ex = expand_operator(&a, &alpha);
        assert_eq!(ex.terms.keys().cloned().collect::<Vec<_>>(), vec![alpha]);
    }

    fn random_poly(g: &Group, deg: u32, coeffs: &[i64]) -> Poly<Rational> {
        let idx = MultiIndex::all_up_to(&g.weights(), deg);
        Poly::from_terms(g.weights(), idx.into_iter().zip(coeffs).map(|(j, &c)| (j, int(c))))
    }

    fn homogeneous(g: &Group, deg: u32, coeffs: &[i64]) -> Poly<Rational> {
        let idx = MultiIndex::all_of_degree(&g.weights(), deg);
        Poly::from_terms(g.weights(), idx.into_iter().zip(coeffs).map(|(j, &c)| (j, int(c))))
    }

    fn groups() -> Vec<Group> {
        vec![Group::heisenberg(), Group::engel(), Group::abelian(2)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn xj_lowers_degree(gi in 0usize..3, deg in 0u32..6, coeffs in prop::collection::vec(-5i64..6, 40)) {
            let g = &groups()[gi];
            let p = homogeneous(g, deg, &coeffs);
            for alpha in MultiIndex::all_up_to(&g.weights(), 4) {
                let q = g.fields().apply_xj(&alpha, &p);
                let ag = alpha.hom_degree(&g.weights());
                prop_assert!(q.is_zero() || (q.is_homogeneous() && q.hom_degree() == Some(deg - ag)));
            }
        }

        #[test]
        fn expansion_matches_composition(gi in 0usize..3, coeffs in prop::collection::vec(-5i64..6, 60)) {
            let g = &groups()[gi];
            let p = random_poly(g, 4, &coeffs);
            for alpha in MultiIndex::all_up_to(&g.weights(), 3) {
                let ex = expand_operator(g, &alpha);
                prop_assert!(ex.check_invariants(&g.weights()).is_ok());
                prop_assert_eq!(ex.apply(&p), g.fields().apply_xj(&alpha, &p));
            }
        }

        #[test]
        fn xj_commutes_with_left_translation(
            coeffs in prop::collection::vec(-4i64..5, 30),
            x0 in prop::collection::vec(-3i64..4, 4),
        ) {
            let g = Group::engel();
            let p = random_poly(&g, 3, &coeffs);
            let x0: Vec<Rational> = x0.iter().map(|&v| rat(v, 2)).collect();
            let one = int(1);
            for alpha in MultiIndex::all_up_to(&g.weights(), 3) {
                let lhs = g.fields().apply_xj(&alpha, &left_translate(&g, &p, &x0, &one).unwrap());
                let rhs = left_translate(&g, &g.fields().apply_xj(&alpha, &p), &x0, &one).unwrap();
                prop_assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn numeric_derivatives() {
        let g = Group::heisenberg();
        let e1 = MultiIndex::unit(3, 0);
        let constant = |_: &[f64]| Some(2.5);
        let d = apply_xj_numeric(&g, &e1, &constant, &[0.1, 0.2, 0.3], 1e-3).unwrap();
        assert!(d.value.abs() < 1e-12 && d.central && d.stencil.len() == 2);
        let x1 = |p: &[f64]| Some(p[0]);
        let d = apply_xj_numeric(&g, &e1, &x1, &[0.0; 3], 1e-3).unwrap();
        assert!((d.value - 1.0).abs() < 1e-3);
        let x3 = |p: &[f64]| Some(p[2]);
        let d = apply_xj_numeric(&g, &e1, &x3, &[0.0, 1.0, 0.0], 1e-3).unwrap();
        assert!((d.value + 0.5).abs() < 1e-3);
        // X_1 X_2 x_3 = X_1(x_1/2) = 1/2
        let d = apply_xj_numeric(&g, &MultiIndex::new(vec![1, 1, 0]), &x3, &[0.3, 0.1, 0.2], 1e-3).unwrap();
        assert!((d.value - 0.5).abs() < 1e-3, "{}", d.value);
    }

    #[test]
    fn numeric_stencil_falls_back_and_fails() {
        let g = Group::abelian(1);
        let e1 = MultiIndex::unit(1, 0);
        let half_line = |p: &[f64]| if p[0] >= 0.0 { Some(p[0] * p[0]) } else { None };
        let d = apply_xj_numeric(&g, &e1, &half_line, &[0.0], 1e-4).unwrap();
        assert!(!d.central && (d.value - 1e-4).abs() < 1e-9);
        let nowhere = |_: &[f64]| None;
        assert!(matches!(
            apply_xj_numeric(&g, &e1, &nowhere, &[0.0], 1e-3),
            Err(DiffError::StencilOutOfDomain { .. })
        ));
    }
}
