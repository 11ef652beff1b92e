//! Carnot groups in exponential coordinates.
//!
//! A group is built from a stratification and structure constants; the
//! product `xy = x + y + Q(x, y)` comes from the truncated BCH series with
//! exact rational coefficients.

mod bch;
mod metric;
mod spec_file;

use std::sync::Arc;

use num_traits::Zero;
use thiserror::Error;

use crate::diffops::{self, Fields};
use crate::poly::Poly;
use crate::scalar::{int, Rational, Scalar};

pub use bch::bch_correction;
pub use metric::{
    heisenberg_cc_norm, CcEstimate, EquivalenceReport, Metric, VolumeEstimate,
};
pub use spec_file::{parse_group_spec, GroupSpecFile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("Jacobi identity fails for (X{i}, X{j}, X{k})")]
    JacobiViolation { i: usize, j: usize, k: usize },
    #[error("bracket [X{i}, X{j}] has a component on X{l} of the wrong degree")]
    GradingViolation { i: usize, j: usize, l: usize },
    #[error("brackets of layer 1 with layer {layer} do not span layer {}", layer + 1)]
    NonGenerating { layer: usize },
    #[error("antisymmetry fails for [X{i}, X{j}]")]
    AntisymmetryViolation { i: usize, j: usize },
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid stratification: {0}")]
    InvalidSpec(String),
    #[error("metric `{0}` is not available for this group")]
    MetricUnsupported(String),
    #[error("path optimisation did not converge (constraint residual {residual:e})")]
    OptimizationDidNotConverge { residual: f64 },
    #[error("{0}")]
    BracketMismatch(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratificationSpec {
    layer_dims: Vec<usize>,
    cumulative: Vec<usize>,
    degrees: Arc<[u32]>,
}

impl StratificationSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self, GroupError> {
        if layer_dims.is_empty() {
            return Err(GroupError::InvalidSpec("at least one layer is required".into()));
        }
        if layer_dims.iter().any(|&m| m == 0) {
            return Err(GroupError::InvalidSpec("layer dimensions must be positive".into()));
        }
        let mut cumulative = vec![0];
        let mut degrees = Vec::new();
        for (j, &m) in layer_dims.iter().enumerate() {
            cumulative.push(cumulative[j] + m);
            degrees.extend(std::iter::repeat(j as u32 + 1).take(m));
        }
        Ok(StratificationSpec { layer_dims, cumulative, degrees: Arc::from(degrees) })
    }

    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// `N = h_s`.
    pub fn dim(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    /// `h_0 = 0, …, h_s = N`.
    pub fn cumulative(&self) -> &[usize] {
        &self.cumulative
    }

    pub fn degrees(&self) -> &Arc<[u32]> {
        &self.degrees
    }

    pub fn degree(&self, i: usize) -> u32 {
        self.degrees[i]
    }

    /// `Q = Σ j m_j`.
    pub fn hom_dim(&self) -> u32 {
        self.layer_dims.iter().enumerate().map(|(j, &m)| (j as u32 + 1) * m as u32).sum()
    }

    /// Zero-based coordinate range of layer `j` (one-based).
    pub fn layer_range(&self, j: usize) -> std::ops::Range<usize> {
        self.cumulative[j - 1]..self.cumulative[j]
    }
}

/// `[X_i, X_j] = Σ_l c[l][i][j] X_l`, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureConstants {
    n: usize,
    table: Vec<Rational>,
}

impl StructureConstants {
    pub fn zero(n: usize) -> Self {
        StructureConstants { n, table: vec![Rational::zero(); n * n * n] }
    }

    /// Zero-based triples `[X_i, X_j] += c X_l`; the antisymmetric partner is implied.
    pub fn from_brackets(n: usize, brackets: &[(usize, usize, usize, Rational)]) -> Result<Self, GroupError> {
        let mut sc = Self::zero(n);
        let mut seen = std::collections::HashMap::new();
        for (i, j, l, c) in brackets {
            let (i, j, l) = (*i, *j, *l);
            if i >= n || j >= n || l >= n {
                return Err(GroupError::DimensionMismatch { expected: n, got: i.max(j).max(l) + 1 });
            }
            if i == j {
                if !c.is_zero() {
                    return Err(GroupError::AntisymmetryViolation { i: i + 1, j: j + 1 });
                }
                continue;
            }
            let key = (i.min(j), i.max(j), l);
            let signed = if i < j { c.clone() } else { -c.clone() };
            if let Some(prev) = seen.insert(key, signed.clone()) {
                if prev != signed {
                    return Err(GroupError::AntisymmetryViolation { i: i + 1, j: j + 1 });
                }
                continue;
            }
            sc.set(l, key.0, key.1, signed.clone());
            sc.set(l, key.1, key.0, -signed);
        }
        Ok(sc)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn idx(&self, l: usize, i: usize, j: usize) -> usize {
        (l * self.n + i) * self.n + j
    }

    pub fn get(&self, l: usize, i: usize, j: usize) -> &Rational {
        &self.table[self.idx(l, i, j)]
    }

    fn set(&mut self, l: usize, i: usize, j: usize, c: Rational) {
        let k = self.idx(l, i, j);
        self.table[k] = c;
    }

    /// Nonzero entries `(l, i, j, c)`.
    pub fn nonzero(&self) -> Vec<(usize, usize, usize, Rational)> {
        let n = self.n;
        let mut v = Vec::new();
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let c = self.get(l, i, j);
                    if !c.is_zero() {
                        v.push((l, i, j, c.clone()));
                    }
                }
            }
        }
        v
    }

    pub fn validate(&self, spec: &StratificationSpec) -> Result<(), GroupError> {
        let n = self.n;
        if n != spec.dim() {
            return Err(GroupError::DimensionMismatch { expected: spec.dim(), got: n });
        }
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if self.get(l, i, j) != &-self.get(l, j, i).clone() {
                        return Err(GroupError::AntisymmetryViolation { i: i + 1, j: j + 1 });
                    }
                    if !self.get(l, i, j).is_zero() && spec.degree(l) != spec.degree(i) + spec.degree(j) {
                        return Err(GroupError::GradingViolation { i: i + 1, j: j + 1, l: l + 1 });
                    }
                }
            }
        }
        let nz = self.nonzero();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    for m in 0..n {
                        let mut s = Rational::zero();
                        for (a, b, c) in [(i, j, k), (j, k, i), (k, i, j)] {
                            for &(l, ii, jj, ref cl) in &nz {
                                if ii == a && jj == b {
                                    s += cl * self.get(m, l, c);
                                }
                            }
                        }
                        if !s.is_zero() {
                            return Err(GroupError::JacobiViolation { i: i + 1, j: j + 1, k: k + 1 });
                        }
                    }
                }
            }
        }
        for t in 1..spec.step() {
            let target = spec.layer_range(t + 1);
            let mut rows = Vec::new();
            for a in spec.layer_range(1) {
                for b in spec.layer_range(t) {
                    rows.push(target.clone().map(|l| self.get(l, a, b).clone()).collect::<Vec<_>>());
                }
            }
            if rank(rows) < target.len() {
                return Err(GroupError::NonGenerating { layer: t });
            }
        }
        Ok(())
    }
}

fn rank(mut rows: Vec<Vec<Rational>>) -> usize {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else { continue };
        rows.swap(r, p);
        let pivot = rows[r][c].clone();
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = &rows[i][c] / &pivot;
                for cc in c..ncols {
                    let v = &rows[r][cc] * &f;
                    rows[i][cc] -= v;
                }
            }
        }
        r += 1;
    }
    r
}

/// The correction polynomials `Q_i(x, y)` in `2N` variables `(x; y)`.
#[derive(Clone, Debug)]
pub struct GroupLaw {
    exact: Vec<Poly<Rational>>,
    float: Vec<Poly<f64>>,
}

impl GroupLaw {
    pub fn correction(&self) -> &[Poly<Rational>] {
        &self.exact
    }

    pub fn correction_f64(&self) -> &[Poly<f64>] {
        &self.float
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    Abelian,
    /// First Heisenberg group with `[X1, X2] = X3`.
    Heisenberg,
    General,
}

/// Scalars that can be pushed through the group law and the fields.
pub trait GroupScalar: Scalar {
    fn law(law: &GroupLaw) -> &[Poly<Self>];
    fn field_coeffs(fields: &Fields) -> &[Vec<Poly<Self>>];
}

impl GroupScalar for Rational {
    fn law(law: &GroupLaw) -> &[Poly<Self>] {
        &law.exact
    }
    fn field_coeffs(fields: &Fields) -> &[Vec<Poly<Self>>] {
        fields.exact()
    }
}

impl GroupScalar for f64 {
    fn law(law: &GroupLaw) -> &[Poly<Self>] {
        &law.float
    }
    fn field_coeffs(fields: &Fields) -> &[Vec<Poly<Self>>] {
        fields.float()
    }
}

#[derive(Clone, Debug)]
pub struct Group {
    name: String,
    spec: StratificationSpec,
    constants: StructureConstants,
    law: GroupLaw,
    fields: Fields,
    kind: GroupKind,
}

impl Group {
    pub fn new(name: &str, spec: StratificationSpec, constants: StructureConstants) -> Result<Self, GroupError> {
        constants.validate(&spec)?;
        let exact = bch_correction(&spec, &constants);
        let float = exact.iter().map(|q| q.to_f64()).collect();
        let law = GroupLaw { exact, float };
        let fields = diffops::build_fields(&spec, &constants, &law)?;
        let kind = if spec.step() == 1 {
            GroupKind::Abelian
        } else if spec.layer_dims() == [2, 1] && constants.get(2, 0, 1) == &int(1) {
            GroupKind::Heisenberg
        } else {
            GroupKind::General
        };
        Ok(Group { name: name.to_string(), spec, constants, law, fields, kind })
    }

    pub fn abelian(n: usize) -> Self {
        let spec = StratificationSpec::new(vec![n]).expect("positive dimension");
        Group::new(&format!("abelian-{n}"), spec, StructureConstants::zero(n)).expect("abelian group is valid")
    }

    pub fn heisenberg() -> Self {
        let spec = StratificationSpec::new(vec![2, 1]).unwrap();
        let sc = StructureConstants::from_brackets(3, &[(0, 1, 2, int(1))]).unwrap();
        Group::new("heisenberg", spec, sc).expect("Heisenberg group is valid")
    }

    pub fn engel() -> Self {
        let spec = StratificationSpec::new(vec![2, 1, 1]).unwrap();
        let sc = StructureConstants::from_brackets(4, &[(0, 1, 2, int(1)), (0, 2, 3, int(1))]).unwrap();
        Group::new("engel", spec, sc).expect("Engel group is valid")
    }

    /// Built-in groups by name: `abelian-N`, `heisenberg`, `engel`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "heisenberg" | "h1" => Some(Self::heisenberg()),
            "engel" => Some(Self::engel()),
            _ => name
                .strip_prefix("abelian-")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .map(Self::abelian),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &StratificationSpec {
        &self.spec
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.constants
    }

    pub fn law(&self) -> &GroupLaw {
        &self.law
    }

    pub fn fields(&self) -> &Fields {
        &self.fields
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn hom_dim(&self) -> u32 {
        self.spec.hom_dim()
    }

    pub fn step(&self) -> usize {
        self.spec.step()
    }

    /// Shared handle to the homogeneities `d_i`, used as the polynomial ring tag.
    pub fn weights(&self) -> Arc<[u32]> {
        self.spec.degrees().clone()
    }

    fn check_dim(&self, len: usize) -> Result<(), GroupError> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(GroupError::DimensionMismatch { expected: self.dim(), got: len })
        }
    }

    pub fn try_multiply<C: GroupScalar>(&self, p: &[C], q: &[C]) -> Result<Vec<C>, GroupError> {
        self.check_dim(p.len())?;
        self.check_dim(q.len())?;
        Ok(self.multiply(p, q))
    }

    pub fn multiply<C: GroupScalar>(&self, p: &[C], q: &[C]) -> Vec<C> {
        debug_assert!(p.len() == self.dim() && q.len() == self.dim());
        let mut xy: Vec<C> = Vec::with_capacity(2 * p.len());
        xy.extend_from_slice(p);
        xy.extend_from_slice(q);
        C::law(&self.law)
            .iter()
            .enumerate()
            .map(|(i, qi)| {
                let base = p[i].clone() + q[i].clone();
                if qi.is_zero() {
                    base
                } else {
                    base + qi.eval(&xy)
                }
            })
            .collect()
    }

    pub fn inverse<C: Scalar>(&self, p: &[C]) -> Vec<C> {
        p.iter().map(|v| -v.clone()).collect()
    }

    pub fn try_dilate<C: Scalar>(&self, lambda: &C, p: &[C]) -> Result<Vec<C>, GroupError> {
        self.check_dim(p.len())?;
        Ok(self.dilate(lambda, p))
    }

    /// `δ_λ p = (λ^{d_i} p_i)`.
    pub fn dilate<C: Scalar>(&self, lambda: &C, p: &[C]) -> Vec<C> {
        p.iter()
            .zip(self.spec.degrees().iter())
            .map(|(v, &d)| v.clone() * lambda.pow(d))
            .collect()
    }

    pub fn dilate_f64(&self, lambda: f64, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.spec.degrees().iter())
            .map(|(v, &d)| v * lambda.powi(d as i32))
            .collect()
    }

    /// `p⁻¹ q`.
    pub fn relative<C: GroupScalar>(&self, p: &[C], q: &[C]) -> Vec<C> {
        self.multiply(&self.inverse(p), q)
    }

    /// Euclidean norm of each layer: `|x^{(j)}|`.
    pub fn layer_norms(&self, p: &[f64]) -> Vec<f64> {
        (1..=self.step())
            .map(|j| self.spec.layer_range(j).map(|i| p[i] * p[i]).sum::<f64>().sqrt())
            .collect()
    }

    /// `‖x‖ = Σ_j |x^{(j)}|^{1/j}`.
    pub fn hom_norm(&self, p: &[f64]) -> f64 {
        self.layer_norms(p)
            .iter()
            .enumerate()
            .map(|(j, &v)| if j == 0 { v } else { v.powf(1.0 / (j as f64 + 1.0)) })
            .sum()
    }

    pub fn quasi_distance(&self, p: &[f64], q: &[f64]) -> f64 {
        self.hom_norm(&self.relative(p, q))
    }

    /// `y ↦ (x0 · δ_r y)_i` as polynomials in `y`, exact.
    pub fn translation_substitution(&self, x0: &[Rational], r: &Rational) -> Vec<Poly<Rational>> {
        let w = self.weights();
        let n = self.dim();
        let scaled: Vec<Poly<Rational>> = (0..n)
            .map(|i| Poly::var(w.clone(), i).scale(&Scalar::pow(r, self.spec.degree(i))))
            .collect();
        let mut subs2 = Vec::with_capacity(2 * n);
        for v in x0 {
            subs2.push(Poly::constant(w.clone(), v.clone()));
        }
        subs2.extend(scaled.iter().cloned());
        (0..n)
            .map(|i| {
                let base = Poly::constant(w.clone(), x0[i].clone()).add(&scaled[i]);
                let qi = &self.law.exact[i];
                if qi.is_zero() {
                    base
                } else {
                    base.add(&qi.compose(&subs2))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::MultiIndex;
    use crate::scalar::rat;
    use proptest::prelude::*;

    #[test]
    fn stratification_invariants() {
        let s = StratificationSpec::new(vec![2, 1, 1]).unwrap();
        assert_eq!(s.dim(), 4);
        assert_eq!(&s.degrees()[..], &[1, 1, 2, 3]);
        assert_eq!(s.hom_dim(), 7);
        assert_eq!(s.cumulative(), &[0, 2, 3, 4]);
        assert!(StratificationSpec::new(vec![]).is_err());
        assert!(StratificationSpec::new(vec![2, 0]).is_err());
    }

    #[test]
    fn heisenberg_correction_is_half_symplectic_form() {
        let g = Group::heisenberg();
        let q = g.law().correction();
        assert!(q[0].is_zero() && q[1].is_zero());
        let w2: Arc<[u32]> = q[2].weights().clone();
        let expected = Poly::from_terms(
            w2,
            vec![
                (MultiIndex::new(vec![1, 0, 0, 0, 1, 0]), rat(1, 2)),
                (MultiIndex::new(vec![0, 1, 0, 1, 0, 0]), rat(-1, 2)),
            ],
        );
        assert_eq!(q[2], expected);
    }

    #[test]
    fn abelian_law_is_trivial() {
        let g = Group::abelian(2);
        assert!(g.law().correction().iter().all(|q| q.is_zero()));
    }

    #[test]
    fn engel_top_correction_has_cubic_term_and_vanishes_on_diagonal() {
        let g = Group::engel();
        let q4 = &g.law().correction()[3];
        assert_eq!(q4.hom_degree(), Some(3));
        assert!(q4.terms().any(|(j, _)| j.order() == 3));
        let n = 4;
        let w = g.weights();
        let subs: Vec<Poly<Rational>> = (0..2 * n).map(|i| Poly::var(w.clone(), i % n)).collect();
        assert!(q4.compose(&subs).is_zero());
    }

    #[test]
    fn heisenberg_product_example() {
        let g = Group::heisenberg();
        let p = g.multiply(&[int(1), int(0), int(0)], &[int(0), int(1), int(0)]);
        assert_eq!(p, vec![int(1), int(1), rat(1, 2)]);
        assert_eq!(g.inverse(&[int(2), int(-3), rat(1, 7)]), vec![int(-2), int(3), rat(-1, 7)]);
        assert_eq!(g.dilate(&int(2), &[int(1), int(1), int(1)]), vec![int(2), int(2), int(4)]);
    }

    #[test]
    fn norms_examples() {
        let g = Group::heisenberg();
        assert_eq!(g.hom_norm(&[0.0, 0.0, 1.0]), 1.0);
        assert_eq!(g.hom_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(g.hom_norm(&[3.0, 4.0, 0.0]), 5.0);
        assert!((g.quasi_distance(&[0.0; 3], &[0.0, 0.0, 0.09]) - 0.3).abs() < 1e-15);
        let a = Group::abelian(3);
        let d = a.quasi_distance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 5.0]);
        assert!((d - 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = Group::heisenberg();
        let e = g.try_multiply(&[1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(e, GroupError::DimensionMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn invalid_constants_are_named() {
        let spec = StratificationSpec::new(vec![2, 1]).unwrap();
        let bad_grade = StructureConstants::from_brackets(3, &[(0, 2, 1, int(1)), (0, 1, 2, int(1))]).unwrap();
        assert!(matches!(Group::new("x", spec.clone(), bad_grade), Err(GroupError::GradingViolation { .. })));
        let non_gen = StructureConstants::zero(3);
        assert!(matches!(Group::new("x", spec, non_gen), Err(GroupError::NonGenerating { layer: 1 })));
        // [[X1,X2],X3] = X7 while the other two cyclic terms vanish.
        let spec7 = StratificationSpec::new(vec![3, 3, 1]).unwrap();
        let sc7 = StructureConstants::from_brackets(
            7,
            &[
                (0, 1, 3, int(1)),
                (0, 2, 4, int(1)),
                (1, 2, 5, int(1)),
                (3, 2, 6, int(1)),
            ],
        )
        .unwrap();
        assert!(matches!(Group::new("x", spec7, sc7), Err(GroupError::JacobiViolation { .. })));
    }

    #[test]
    fn builtin_lookup() {
        assert_eq!(Group::builtin("abelian-3").unwrap().dim(), 3);
        assert_eq!(Group::builtin("engel").unwrap().kind(), GroupKind::General);
        assert_eq!(Group::builtin("heisenberg").unwrap().kind(), GroupKind::Heisenberg);
        assert!(Group::builtin("abelian-0").is_none());
    }

    fn point(n: usize) -> impl Strategy<Value = Vec<Rational>> {
        prop::collection::vec((-30i64..30, 1i64..8).prop_map(|(a, b)| rat(a, b)), n)
    }

    proptest! {
        #[test]
        fn engel_group_axioms(a in point(4), b in point(4), c in point(4), l in (1i64..9, 1i64..9)) {
            let g = Group::engel();
            let lam = rat(l.0, l.1);
            let ab_c = g.multiply(&g.multiply(&a, &b), &c);
            let a_bc = g.multiply(&a, &g.multiply(&b, &c));
            prop_assert_eq!(ab_c, a_bc);
            prop_assert!(g.multiply(&a, &g.inverse(&a)).iter().all(|v| v.is_zero()));
            let ab = g.multiply(&a, &b);
            prop_assert_eq!(g.inverse(&ab), g.multiply(&g.inverse(&b), &g.inverse(&a)));
            prop_assert_eq!(g.dilate(&lam, &ab), g.multiply(&g.dilate(&lam, &a), &g.dilate(&lam, &b)));
            prop_assert_eq!(g.dilate(&lam, &g.inverse(&a)), g.inverse(&g.dilate(&lam, &a)));
        }

        #[test]
        fn quasi_distance_is_left_invariant_and_homogeneous(
            p in prop::collection::vec(-2.0f64..2.0, 3),
            q in prop::collection::vec(-2.0f64..2.0, 3),
            z in prop::collection::vec(-2.0f64..2.0, 3),
            lam in 0.1f64..3.0,
        ) {
            let g = Group::heisenberg();
            let d = g.quasi_distance(&p, &q);
            let dz = g.quasi_distance(&g.multiply(&z, &p), &g.multiply(&z, &q));
            prop_assert!((d - dz).abs() <= 1e-9 * (1.0 + d));
            let dl = g.quasi_distance(&g.dilate_f64(lam, &p), &g.dilate_f64(lam, &q));
            prop_assert!((dl - lam * d).abs() <= 1e-9 * (1.0 + dl));
        }
    }
}
