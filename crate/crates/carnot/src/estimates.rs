//! Inverse estimates for polynomials on large subsets of balls, ball
//! intersections, density cones and continuity of translated distances.
//!
//! Sets are unions of cells of an axis-aligned grid in the normalised chart
//! `y = δ_{1/r}(x0⁻¹ x)`; the chart map has Jacobian `r^{-Q}`, so measures
//! and integrals transport exactly.

use std::fmt::Write as _;

use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::group::{Group, GroupError, Metric};
use crate::jets::BetaTable;
use crate::poly::{left_translate, monomial_value_f64, polish_max, FlatPoly, MultiIndex, Poly, PolyError};
use crate::scalar::{f64_to_rational, rng_for, split_seed, Rational, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("polynomial has homogeneous degree {degree} > k = {k}")]
    DegreeTooHigh { degree: u32, k: u32 },
    #[error("set is empty")]
    EmptySet,
    #[error("set measure {measure:e} is below the required {required:e}")]
    SetTooSmall { measure: f64, required: f64 },
    #[error("cell {0} is not inside the carrier ball")]
    CellOutsideBall(usize),
    #[error("points coincide")]
    CoincidentPoints,
    #[error("{0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    for i in 0..q {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=q {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            if q == 0 {
                break;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Uniform grid on `∏ [−b_i, b_i]`, a box containing the unit ball.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartGrid {
    pub half: Vec<f64>,
    pub res: Vec<usize>,
}

impl ChartGrid {
    pub fn for_unit_ball(group: &Group, metric: Metric, res: usize) -> Self {
        ChartGrid { half: group.unit_ball_box(metric), res: vec![res; group.dim()] }
    }

    pub fn cell_count(&self) -> usize {
        self.res.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.half.iter().zip(&self.res).map(|(b, n)| 2.0 * b / *n as f64).product()
    }

    pub fn cell_bounds(&self, idx: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rem = idx;
        let mut lo = Vec::with_capacity(self.res.len());
        let mut hi = Vec::with_capacity(self.res.len());
        for (b, &n) in self.half.iter().zip(&self.res) {
            let i = rem % n;
            rem /= n;
            let h = 2.0 * b / n as f64;
            lo.push(-b + i as f64 * h);
            hi.push(-b + (i + 1) as f64 * h);
        }
        (lo, hi)
    }

    /// Cells contained in the open unit ball. Exact containment for the
    /// layer-sum norm (each layer norm is convex, so its cell maximum sits at
    /// a corner); corner and centre test for the CC oracle.
    pub fn inner_cells(&self, group: &Group, metric: Metric) -> Vec<usize> {
        let n = self.res.len();
        (0..self.cell_count())
            .filter(|&c| {
                let (lo, hi) = self.cell_bounds(c);
                let corners = (0..1usize << n).map(|m| (0..n).map(|i| if m >> i & 1 == 1 { hi[i] } else { lo[i] }).collect::<Vec<_>>());
                match metric {
                    Metric::Quasi => {
                        let mut layer_max = vec![0.0f64; group.step()];
                        for p in corners {
                            for (j, v) in group.layer_norms(&p).into_iter().enumerate() {
                                layer_max[j] = layer_max[j].max(v);
                            }
                        }
                        let s: f64 = layer_max.iter().enumerate().map(|(j, v)| v.powf(1.0 / (j as f64 + 1.0))).sum();
                        s < 1.0
                    }
                    Metric::CcOracle => {
                        let centre: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
                        corners.chain(std::iter::once(centre)).all(|p| group.norm_with(metric, &p) < 1.0)
                    }
                }
            })
            .collect()
    }
}

/// `E ⊆ B(x0, r)`: whole chart cells plus at most one cell cut to a slab `[lo_0, lo_0 + t h_0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SetSample {
    pub center: Vec<Rational>,
    pub radius: Rational,
    pub grid: ChartGrid,
    pub cells: Vec<usize>,
    pub partial: Option<(usize, f64)>,
    pub a: f64,
}

impl SetSample {
    /// `L^N(E)`, exact cell arithmetic.
    pub fn measure(&self, q: u32) -> f64 {
        let frac = self.partial.map_or(0.0, |p| p.1);
        (self.cells.len() as f64 + frac) * self.grid.cell_volume() * self.radius.to_f64().powi(q as i32)
    }

    pub fn validate(&self, group: &Group, metric: Metric) -> Result<(), EstimateError> {
        if !(self.a > 0.0) {
            return Err(EstimateError::InvalidParameter("A must be positive".into()));
        }
        if self.cells.is_empty() && self.partial.is_none() {
            return Err(EstimateError::EmptySet);
        }
        let inner: std::collections::HashSet<usize> = self.grid.inner_cells(group, metric).into_iter().collect();
        for c in self.cells.iter().chain(self.partial.as_ref().map(|p| &p.0)) {
            if !inner.contains(c) {
                return Err(EstimateError::CellOutsideBall(*c));
            }
        }
        let q = group.hom_dim();
        let required = self.a * self.radius.to_f64().powi(q as i32);
        let measure = self.measure(q);
        if measure < required * (1.0 - 1e-12) {
            return Err(EstimateError::SetTooSmall { measure, required });
        }
        Ok(())
    }
}

struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    fn new(q: usize) -> Self {
        let (nodes, weights) = gauss_legendre(q);
        Quadrature { nodes, weights }
    }

    /// Tensor rule on the box: `(∫|p|, sign change seen)`.
    fn abs_box(&self, p: &FlatPoly, lo: &[f64], hi: &[f64]) -> (f64, bool) {
        let n = lo.len();
        let q = self.nodes.len();
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        let vol: f64 = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).product();
        let (mut sum, mut pos, mut neg) = (0.0, false, false);
        loop {
            let mut w = vol;
            for i in 0..n {
                let (a, b) = (lo[i], hi[i]);
                x[i] = 0.5 * (a + b) + 0.5 * (b - a) * self.nodes[idx[i]];
                w *= self.weights[idx[i]];
            }
            let v = p.eval(&x);
            pos |= v > 0.0;
            neg |= v < 0.0;
            sum += w * v.abs();
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < q {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        if !(pos && neg) {
            // Corners catch crossings between nodes near the faces.
            for m in 0..1usize << n {
                let c: Vec<f64> = (0..n).map(|i| if m >> i & 1 == 1 { hi[i] } else { lo[i] }).collect();
                let v = p.eval(&c);
                pos |= v > 0.0;
                neg |= v < 0.0;
            }
        }
        (sum, pos && neg)
    }

    /// Adaptive bisection of sign-changing boxes until the relative change is
    /// below `tol` or `depth` levels are used; returns `(integral, converged)`.
    fn abs_adaptive(&self, p: &FlatPoly, lo: &[f64], hi: &[f64], depth: u32, tol: f64) -> (f64, bool) {
        let (est, change) = self.abs_box(p, lo, hi);
        if !change {
            return (est, true);
        }
        self.refine(p, lo, hi, est, depth, tol)
    }

    fn refine(&self, p: &FlatPoly, lo: &[f64], hi: &[f64], est: f64, depth: u32, tol: f64) -> (f64, bool) {
        if depth == 0 {
            return (est, false);
        }
        let n = lo.len();
        let mut kids = Vec::with_capacity(1 << n);
        for m in 0..1usize << n {
            let mut a = lo.to_vec();
            let mut b = hi.to_vec();
            for i in 0..n {
                let mid = 0.5 * (lo[i] + hi[i]);
                if m >> i & 1 == 1 {
                    a[i] = mid;
                } else {
                    b[i] = mid;
                }
            }
            let (v, change) = self.abs_box(p, &a, &b);
            kids.push((a, b, v, change));
        }
        let total: f64 = kids.iter().map(|k| k.2).sum();
        if (total - est).abs() <= tol * total.abs().max(f64::MIN_POSITIVE) {
            return (total, true);
        }
        let mut sum = 0.0;
        let mut ok = true;
        for (a, b, v, change) in kids {
            if change {
                let (s, c) = self.refine(p, &a, &b, v, depth - 1, tol);
                sum += s;
                ok &= c;
            } else {
                sum += v;
            }
        }
        (sum, ok)
    }
}

fn default_depth(dim: usize) -> u32 {
    match dim {
        1 => 40,
        2 => 10,
        3 => 5,
        _ => 3,
    }
}

/// Exact for `|P|` of degree `p_degree` on sign-definite boxes, with two spare
/// nodes per axis so a low-degree polynomial cannot vanish on the whole rule.
fn quad_order(p_degree: u32) -> usize {
    p_degree as usize / 2 + 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeGiorgiRatio {
    /// `|X^α P(x0)| r^{Q + |α|_G} / ∫_E |P|`, infinite when the integral vanishes.
    pub value: f64,
    pub numerator: f64,
    /// `∫_E |P| / r^Q`, the chart integral.
    pub integral: f64,
    pub quadrature_converged: bool,
    /// Set when `∫_E |P| = 0` but the numerator is not.
    pub underresolved: bool,
}

/// The inverse-estimate ratio for one polynomial, set and multi-index.
pub fn degiorgi_ratio(
    group: &Group,
    p: &Poly<Rational>,
    e: &SetSample,
    alpha: &MultiIndex,
    k: u32,
    metric: Metric,
) -> Result<DeGiorgiRatio, EstimateError> {
    let degree = p.hom_degree().unwrap_or(0);
    if degree > k {
        return Err(EstimateError::DegreeTooHigh { degree, k });
    }
    e.validate(group, metric)?;
    let s = left_translate(group, p, &e.center, &e.radius)?;
    // X^α S(0) = r^{|α|_G} X^α P(x0).
    let origin = vec![Rational::zero(); group.dim()];
    let numerator = group.fields().apply_xj(alpha, &s).eval(&origin).to_f64().abs();
    let flat = FlatPoly::new(&s);
    let quad = Quadrature::new(quad_order(degree));
    let depth = default_depth(group.dim());
    let mut integral = 0.0;
    let mut converged = true;
    for &c in &e.cells {
        let (lo, hi) = e.grid.cell_bounds(c);
        let (v, ok) = quad.abs_adaptive(&flat, &lo, &hi, depth, 1e-8);
        integral += v;
        converged &= ok;
    }
    if let Some((c, t)) = e.partial {
        let (lo, mut hi) = e.grid.cell_bounds(c);
        hi[0] = lo[0] + t * (hi[0] - lo[0]);
        let (v, ok) = quad.abs_adaptive(&flat, &lo, &hi, depth, 1e-8);
        integral += v;
        converged &= ok;
    }
    let (value, underresolved) = if integral > 0.0 {
        (numerator / integral, false)
    } else if numerator == 0.0 {
        (0.0, false)
    } else {
        (f64::INFINITY, true)
    };
    Ok(DeGiorgiRatio { value, numerator, integral, quadrature_converged: converged, underresolved })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeGiorgiConfig {
    pub k: u32,
    pub a: f64,
    pub trials: usize,
    pub seed: u64,
    pub r: f64,
    /// Grid cells per axis over the unit-ball box.
    pub resolution: usize,
    pub metric: Metric,
    /// Best trials whose coefficients are polished and re-integrated adaptively.
    pub polish: usize,
}

impl DeGiorgiConfig {
    pub fn new(k: u32, a: f64, trials: usize, seed: u64) -> Self {
        DeGiorgiConfig { k, a, trials, seed, r: 1.0, resolution: 16, metric: Metric::Quasi, polish: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeGiorgiWitness {
    /// Chart coefficients of `S(y) = Σ c_J y^J = P(δ_r y)`, in [`BetaTable::indices`] order.
    pub coeffs: Vec<f64>,
    pub alpha: MultiIndex,
    pub cells: usize,
    pub partial: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeGiorgiReport {
    pub k: u32,
    pub q: u32,
    pub a: f64,
    pub r: f64,
    pub trials: usize,
    pub seed: u64,
    pub resolution: usize,
    pub c_emp: f64,
    pub witness: DeGiorgiWitness,
}

impl DeGiorgiReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "k {}", self.k).unwrap();
        writeln!(s, "Q {}", self.q).unwrap();
        writeln!(s, "A {:?}", self.a).unwrap();
        writeln!(s, "r {:?}", self.r).unwrap();
        writeln!(s, "trials {}", self.trials).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "resolution {}", self.resolution).unwrap();
        writeln!(s, "C_emp {:?}", self.c_emp).unwrap();
        let c: Vec<String> = self.witness.coeffs.iter().map(|v| format!("{v:?}")).collect();
        writeln!(s, "witness.coeffs {}", c.join(" ")).unwrap();
        writeln!(s, "witness.alpha {}", self.witness.alpha).unwrap();
        writeln!(s, "witness.cells {}", self.witness.cells).unwrap();
        writeln!(s, "witness.partial {:?}", self.witness.partial).unwrap();
        writeln!(s, "witness.ratio {:?}", self.witness.ratio).unwrap();
        s
    }
}

/// Precomputed monomial values at the quadrature nodes of every inner cell.
struct Screen {
    nmono: usize,
    cell_vol: f64,
    /// Per cell: node weights and monomial rows at one level, and at the bisected level.
    coarse: Vec<(Vec<f64>, Vec<f64>)>,
    fine: Vec<(Vec<f64>, Vec<f64>)>,
}

fn tensor_nodes(quad: &Quadrature, lo: &[f64], hi: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let n = lo.len();
    let q = quad.nodes.len();
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).product();
    let mut out = Vec::with_capacity(q.pow(n as u32));
    let mut idx = vec![0usize; n];
    loop {
        let mut w = vol;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                w *= quad.weights[idx[i]];
                0.5 * (lo[i] + hi[i]) + 0.5 * (hi[i] - lo[i]) * quad.nodes[idx[i]]
            })
            .collect();
        out.push((x, w));
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < q {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            return out;
        }
    }
}

impl Screen {
    fn new(grid: &ChartGrid, cells: &[usize], monos: &[MultiIndex], quad: &Quadrature) -> Self {
        let n = grid.res.len();
        let build = |pts: Vec<(Vec<f64>, f64)>| {
            let mut w = Vec::with_capacity(pts.len());
            let mut m = Vec::with_capacity(pts.len() * monos.len());
            for (x, wt) in pts {
                w.push(wt);
                m.extend(monos.iter().map(|j| monomial_value_f64(j, &x)));
            }
            (w, m)
        };
        let coarse = cells
            .iter()
            .map(|&c| {
                let (lo, hi) = grid.cell_bounds(c);
                build(tensor_nodes(quad, &lo, &hi))
            })
            .collect();
        let fine = cells
            .iter()
            .map(|&c| {
                let (lo, hi) = grid.cell_bounds(c);
                let mut pts = Vec::new();
                for m in 0..1usize << n {
                    let mut a = lo.clone();
                    let mut b = hi.clone();
                    for i in 0..n {
                        let mid = 0.5 * (lo[i] + hi[i]);
                        if m >> i & 1 == 1 {
                            a[i] = mid;
                        } else {
                            b[i] = mid;
                        }
                    }
                    pts.extend(tensor_nodes(quad, &a, &b));
                }
                build(pts)
            })
            .collect();
        Screen { nmono: monos.len(), cell_vol: grid.cell_volume(), coarse, fine }
    }

    fn integrate(level: &(Vec<f64>, Vec<f64>), s: &[f64], nmono: usize) -> (f64, bool) {
        let (w, m) = level;
        let (mut sum, mut pos, mut neg) = (0.0, false, false);
        for (i, wt) in w.iter().enumerate() {
            let row = &m[i * nmono..(i + 1) * nmono];
            let v: f64 = row.iter().zip(s).map(|(a, b)| a * b).sum();
            pos |= v > 0.0;
            neg |= v < 0.0;
            sum += wt * v.abs();
        }
        (sum, pos && neg)
    }

    /// Screened cell integrals of `|Σ s_J y^J|`.
    fn cell_integrals(&self, s: &[f64]) -> Vec<f64> {
        (0..self.coarse.len())
            .map(|c| {
                let (v, change) = Self::integrate(&self.coarse[c], s, self.nmono);
                if change {
                    Self::integrate(&self.fine[c], s, self.nmono).0
                } else {
                    v
                }
            })
            .collect()
    }
}

struct TrialOutcome {
    ratio: f64,
    alpha: usize,
    cells: Vec<usize>,
    partial: Option<(usize, f64)>,
}

struct SearchContext<'a> {
    cfg: &'a DeGiorgiConfig,
    table: BetaTable,
    grid: ChartGrid,
    inner: Vec<usize>,
    screen: Screen,
    quad: Quadrature,
    /// `numer[α][J] = X^α(y^J)(0)`.
    numer: Vec<Vec<f64>>,
}

impl<'a> SearchContext<'a> {
    fn evaluate(&self, c: &[f64]) -> TrialOutcome {
        let s = c;
        let ints = self.screen.cell_integrals(s);
        let mut order: Vec<usize> = (0..ints.len()).collect();
        order.sort_by(|&a, &b| ints[a].total_cmp(&ints[b]).then(a.cmp(&b)));
        let need = self.cfg.a / self.screen.cell_vol;
        let whole = (need.floor() as usize).min(order.len());
        let frac = need - whole as f64;
        let mut integral: f64 = order[..whole].iter().map(|&i| ints[i]).sum();
        let mut partial = None;
        if frac > 1e-15 && whole < order.len() {
            let cell = self.inner[order[whole]];
            let (lo, mut hi) = self.grid.cell_bounds(cell);
            hi[0] = lo[0] + frac * (hi[0] - lo[0]);
            let poly = Poly::from_terms(self.table.weights().clone(), self.table.indices().iter().cloned().zip(s.iter().copied()));
            let (v, _) = self.quad.abs_adaptive(&FlatPoly::new(&poly), &lo, &hi, 1, 1e-8);
            integral += v;
            partial = Some((cell, frac));
        }
        let (mut best, mut alpha) = (0.0f64, 0usize);
        for (a, row) in self.numer.iter().enumerate() {
            let v: f64 = row.iter().zip(s).map(|(x, y)| x * y).sum::<f64>().abs();
            if v > best {
                best = v;
                alpha = a;
            }
        }
        let ratio = if integral > 0.0 { best / integral } else if best == 0.0 { 0.0 } else { f64::INFINITY };
        TrialOutcome { ratio, alpha, cells: order[..whole].iter().map(|&i| self.inner[i]).collect(), partial }
    }
}

fn unit_sphere_coeffs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut c {
        *v /= norm;
    }
    c
}

fn normalized(c: &[f64]) -> Vec<f64> {
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        c.to_vec()
    } else {
        c.iter().map(|v| v / norm).collect()
    }
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Adversarial search for the inverse-estimate constant at centre `0`, radius `r`.
///
/// For a fixed polynomial the worst admissible set collects the cells with the
/// smallest `∫|P|` until the measure reaches `A r^Q` exactly, so each trial
/// draws only the polynomial. Coefficients are drawn on the unit sphere in the
/// chart of `B(0, r)`, where the ratio does not depend on `r`.
pub fn degiorgi_constant_search(group: &Group, cfg: &DeGiorgiConfig) -> Result<DeGiorgiReport, EstimateError> {
    group.require(cfg.metric)?;
    if !(cfg.a > 0.0) || !(cfg.r > 0.0) || cfg.trials == 0 || cfg.resolution == 0 {
        return Err(EstimateError::InvalidParameter("A, r, trials and resolution must be positive".into()));
    }
    let table = BetaTable::new(group, cfg.k).map_err(|e| EstimateError::InvalidParameter(e.to_string()))?;
    let grid = ChartGrid::for_unit_ball(group, cfg.metric, cfg.resolution);
    let inner = grid.inner_cells(group, cfg.metric);
    let available = inner.len() as f64 * grid.cell_volume();
    if cfg.a > available {
        return Err(EstimateError::InvalidParameter(format!(
            "A = {} exceeds the resolvable ball measure {available}",
            cfg.a
        )));
    }
    let monos = table.indices().to_vec();
    let quad = Quadrature::new(quad_order(cfg.k));
    let screen = Screen::new(&grid, &inner, &monos, &quad);
    let numer: Vec<Vec<f64>> = table
        .gram()
        .iter()
        .map(|row| row.iter().zip(&monos).map(|(g, j)| g.to_f64() * Rational::from_integer(j.factorial()).to_f64()).collect())
        .collect();
    let w = group.weights();
    // P has coefficients c_J r^{-|J|_G}.
    let unscale: Vec<Rational> = monos.iter().map(|j| Scalar::pow(&f64_to_rational(1.0 / cfg.r), j.hom_degree(&w))).collect();
    let ctx = SearchContext { cfg, table, grid, inner, screen, quad, numer };

    let mut trials: Vec<(f64, Vec<f64>, usize)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(cfg.seed, t as u64);
            let c = unit_sphere_coeffs(&mut rng, monos.len());
            (ctx.evaluate(&c).ratio, c, t)
        })
        .collect();
    trials.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| lex(&a.1, &b.1)));

    let npolish = cfg.polish.max(1).min(trials.len());
    // Trials that are not re-integrated keep their screened ratios.
    let unrefined_max = trials[npolish..].iter().map(|t| t.0).fold(0.0, f64::max);
    let mut candidates: Vec<(f64, Vec<f64>)> = trials.iter().take(npolish).map(|t| (t.0, t.1.clone())).collect();
    for (ratio, c) in candidates.iter_mut() {
        if cfg.polish == 0 {
            break;
        }
        let objective = |z: &[f64]| ctx.evaluate(&normalized(z)).ratio;
        let (v, z) = polish_max(c, &objective, 400);
        if v > *ratio {
            *ratio = v;
            *c = normalized(&z);
        }
    }
    // Adaptive quadrature on the selected sets.
    let mut best: Option<DeGiorgiWitness> = None;
    let mut c_emp = unrefined_max;
    let origin = vec![Rational::zero(); group.dim()];
    for (_, c) in &candidates {
        let out = ctx.evaluate(c);
        let p = Poly::from_terms(w.clone(), monos.iter().cloned().zip(c.iter().zip(&unscale).map(|(v, u)| f64_to_rational(*v) * u)));
        let e = SetSample {
            center: origin.clone(),
            radius: f64_to_rational(cfg.r),
            grid: ctx.grid.clone(),
            cells: out.cells.clone(),
            partial: out.partial,
            a: cfg.a,
        };
        let alpha = monos[out.alpha].clone();
        let refined = degiorgi_ratio(group, &p, &e, &alpha, cfg.k, cfg.metric)?;
        let ratio = refined.value;
        c_emp = c_emp.max(ratio);
        let better = match &best {
            None => true,
            Some(b) => ratio > b.ratio || (ratio == b.ratio && lex(c, &b.coeffs).is_lt()),
        };
        if better {
            best = Some(DeGiorgiWitness {
                coeffs: c.clone(),
                alpha,
                cells: out.cells.len(),
                partial: out.partial.map_or(0.0, |p| p.1),
                ratio,
            });
        }
    }
    Ok(DeGiorgiReport {
        k: cfg.k,
        q: group.hom_dim(),
        a: cfg.a,
        r: cfg.r,
        trials: cfg.trials,
        seed: cfg.seed,
        resolution: cfg.resolution,
        c_emp,
        witness: best.expect("at least one candidate"),
    })
}

/// `(X^α S)(0) = r^{|α|_G} (X^α W)(x0)` with `S(y) = W(x0 δ_r y)`, exactly.
pub fn scaling_identity_check(
    group: &Group,
    w: &Poly<Rational>,
    x0: &[Rational],
    r: &Rational,
    alpha: &MultiIndex,
) -> Result<bool, EstimateError> {
    let s = left_translate(group, w, x0, r)?;
    let origin = vec![Rational::zero(); group.dim()];
    let f = group.fields();
    let lhs = f.apply_xj(alpha, &s).eval(&origin);
    let rhs = f.apply_xj(alpha, w).eval(x0) * Scalar::pow(r, alpha.hom_degree(&group.weights()));
    Ok(lhs == rhs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
    pub exact: bool,
}

const CHUNK: usize = 1 << 14;

/// Hit fraction of `hit` over uniform samples in `∏[−b_i, b_i]`, chunked by seed stream.
fn mc_box_fraction(half: &[f64], samples: usize, seed: u64, hit: &(dyn Fn(&[f64]) -> bool + Sync)) -> f64 {
    let nchunks = samples.div_ceil(CHUNK);
    let hits: usize = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let m = CHUNK.min(samples - c * CHUNK);
            let mut z = vec![0.0; half.len()];
            let mut k = 0;
            for _ in 0..m {
                for (zi, h) in z.iter_mut().zip(half) {
                    *zi = rng.gen_range(-*h..*h);
                }
                if hit(&z) {
                    k += 1;
                }
            }
            k
        })
        .sum();
    hits as f64 / samples as f64
}

/// `L^N(B(x, d) ∩ B(y, d)) / d^Q` with `d = d(x, y)`, for a geodesic metric.
pub fn ball_intersection_ratio(
    group: &Group,
    x: &[f64],
    y: &[f64],
    metric: Metric,
    samples: usize,
    seed: u64,
) -> Result<McEstimate, EstimateError> {
    if metric == Metric::Quasi {
        return Err(GroupError::MetricUnsupported("quasi: the lower bound needs geodesic midpoints".into()).into());
    }
    group.require(metric)?;
    let d = group.distance(metric, x, y)?;
    if d == 0.0 {
        return Err(EstimateError::CoincidentPoints);
    }
    if group.dim() == 1 {
        // Two intervals of radius d at distance d overlap in length d.
        return Ok(McEstimate { value: 1.0, std_err: 0.0, samples: 0, exact: true });
    }
    let z = group.dilate_f64(1.0 / d, &group.relative(x, y));
    let half = group.unit_ball_box(metric);
    let box_vol: f64 = half.iter().map(|h| 2.0 * h).product();
    let hit = |p: &[f64]| group.norm_with(metric, p) < 1.0 && group.distance_with(metric, &z, p) < 1.0;
    let frac = mc_box_fraction(&half, samples, seed, &hit);
    Ok(McEstimate {
        value: box_vol * frac,
        std_err: box_vol * (frac * (1.0 - frac) / samples as f64).sqrt(),
        samples,
        exact: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeReport {
    pub l: f64,
    pub samples: usize,
    pub violations: usize,
    /// `L^Q`; the lower density bound is `V L^Q`.
    pub l_pow_q: f64,
}

/// Samples `B(δ_{R/2} v, L R)` and counts points outside `B(0, R) ∩ C(v, θ)`,
/// `C(v, θ) = {w : d(w, {δ_t v}) < θ d(w)}`, with `L = θ / (4(1 + θ))`.
pub fn cone_density_check(
    group: &Group,
    v: &[f64],
    theta: f64,
    r: f64,
    metric: Metric,
    samples: usize,
    seed: u64,
) -> Result<ConeReport, EstimateError> {
    group.require(metric)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(EstimateError::InvalidParameter("θ must lie in (0, 1)".into()));
    }
    if !(r > 0.0) {
        return Err(EstimateError::InvalidParameter("R must be positive".into()));
    }
    let dv = group.norm(metric, v)?;
    if (dv - 1.0).abs() > 1e-9 {
        return Err(EstimateError::InvalidParameter(format!("d(v) = {dv}, expected 1")));
    }
    let l = theta / (4.0 * (1.0 + theta));
    let centre = group.dilate_f64(r / 2.0, v);
    let half = group.unit_ball_box(metric);
    let nchunks = samples.div_ceil(CHUNK);
    let violations: usize = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let m = CHUNK.min(samples - c * CHUNK);
            let mut bad = 0;
            let mut done = 0;
            let mut z = vec![0.0; half.len()];
            while done < m {
                for (zi, h) in z.iter_mut().zip(&half) {
                    *zi = rng.gen_range(-*h..*h);
                }
                if group.norm_with(metric, &z) >= 1.0 {
                    continue;
                }
                done += 1;
                let w = group.multiply(&centre, &group.dilate_f64(l * r, &z));
                let dw = group.norm_with(metric, &w);
                if !(dw < r) || !in_cone(group, metric, &w, dw, v, theta, r) {
                    bad += 1;
                }
            }
            bad
        })
        .sum();
    Ok(ConeReport { l, samples, violations, l_pow_q: l.powi(group.hom_dim() as i32) })
}

fn in_cone(group: &Group, metric: Metric, w: &[f64], dw: f64, v: &[f64], theta: f64, r: f64) -> bool {
    let dist_t = |t: f64| group.distance_with(metric, w, &group.dilate_f64(t, v));
    if dist_t(r / 2.0) < theta * dw {
        return true;
    }
    // Minimise over the ray: coarse scan then golden section.
    let hi = 2.0 * (dw + 1.0);
    let n = 64;
    let (mut bt, mut bv) = (r / 2.0, dist_t(r / 2.0));
    for i in 1..=n {
        let t = hi * i as f64 / n as f64;
        let d = dist_t(t);
        if d < bv {
            bt = t;
            bv = d;
        }
    }
    let (mut a, mut b) = ((bt - hi / n as f64).max(0.0), bt + hi / n as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dist_t(c) < dist_t(d) {
            b = d;
        } else {
            a = c;
        }
    }
    bv.min(dist_t(0.5 * (a + b))) < theta * dw
}

#[derive(Clone, Debug, PartialEq)]
pub enum Drift {
    /// `|d(x, x0)^k − d(x, y0)^k|`.
    Distance(u32),
    /// `|(x0⁻¹x)^J − (y0⁻¹x)^J|`.
    Monomial(MultiIndex),
}

/// Sampled `sup_{x ∈ B(y0, r)}` of the chosen drift. Candidates include the
/// two points of the sphere along the direction of `y0⁻¹ x0`.
pub fn drift_sup(
    group: &Group,
    x0: &[f64],
    y0: &[f64],
    r: f64,
    drift: &Drift,
    metric: Metric,
    samples: usize,
    seed: u64,
) -> Result<f64, EstimateError> {
    group.require(metric)?;
    if x0 == y0 {
        return Ok(0.0);
    }
    let n = group.dim();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(samples + 2);
    if let Some(u) = group.normalize_to_sphere(&group.relative(y0, x0), metric) {
        pts.push(u.clone());
        pts.push(group.inverse(&u));
    }
    let mut rng = rng_for(split_seed(seed, 1), 0);
    while pts.len() < samples + 2 {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(s) = group.normalize_to_sphere(&z, metric) {
            let shrink: f64 = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.0..1.0) };
            pts.push(group.dilate_f64(shrink, &s));
        }
    }
    let value = |x: &[f64]| -> f64 {
        match drift {
            Drift::Distance(k) => {
                let a = group.distance_with(metric, x, x0).powi(*k as i32);
                let b = group.distance_with(metric, x, y0).powi(*k as i32);
                (a - b).abs()
            }
            Drift::Monomial(j) => {
                (monomial_value_f64(j, &group.relative(x0, x)) - monomial_value_f64(j, &group.relative(y0, x))).abs()
            }
        }
    };
    Ok(pts
        .par_iter()
        .map(|z| value(&group.multiply(y0, &group.dilate_f64(r, z))))
        .reduce(|| 0.0, f64::max))
}

/// `Σ_J c_J x^J` from coefficients in `indices` order.
pub fn poly_from_coeffs(group: &Group, indices: &[MultiIndex], c: &[Rational]) -> Poly<Rational> {
    Poly::from_terms(group.weights(), indices.iter().cloned().zip(c.iter().cloned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{int, rat};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for q in 1..7 {
            let (x, w) = gauss_legendre(q);
            for deg in 0..(2 * q) {
                let got: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - exact).abs() < 1e-13, "q={q} deg={deg}");
            }
        }
    }

    fn full_interval_set(g: &Group, res: usize) -> SetSample {
        let grid = ChartGrid::for_unit_ball(g, Metric::Quasi, res);
        let cells = grid.inner_cells(g, Metric::Quasi);
        let a = cells.len() as f64 * grid.cell_volume();
        SetSample { center: vec![int(0)], radius: int(1), grid, cells, partial: None, a }
    }

    #[test]
    fn constant_ratio_is_inverse_fraction() {
        let g = Group::heisenberg();
        let grid = ChartGrid::for_unit_ball(&g, Metric::Quasi, 8);
        let inner = grid.inner_cells(&g, Metric::Quasi);
        let cv = grid.cell_volume();
        let a = 5.5 * cv;
        let e = SetSample {
            center: vec![rat(1, 3), int(2), rat(-1, 2)],
            radius: rat(1, 2),
            grid,
            cells: inner[..5].to_vec(),
            partial: Some((inner[5], 0.5)),
            a,
        };
        let p = Poly::constant(g.weights(), rat(-7, 3));
        let r = degiorgi_ratio(&g, &p, &e, &MultiIndex::zero(3), 0, Metric::Quasi).unwrap();
        assert!((r.value - 1.0 / a).abs() < 1e-12 * r.value);
        let high = degiorgi_ratio(&g, &p, &e, &MultiIndex::unit(3, 0), 0, Metric::Quasi).unwrap();
        assert_eq!(high.value, 0.0);
        let cubic = Poly::var(g.weights(), 0).pow(3);
        assert!(matches!(
            degiorgi_ratio(&g, &cubic, &e, &MultiIndex::zero(3), 2, Metric::Quasi),
            Err(EstimateError::DegreeTooHigh { degree: 3, k: 2 })
        ));
    }

    #[test]
    fn linear_on_interval_matches_closed_form() {
        // P = x on E = [−1, 1]: X P(0) = 1 and ∫|x| = 1.
        let g = Group::abelian(1);
        let mut e = full_interval_set(&g, 64);
        assert_eq!(e.cells.len(), 62);
        // Use the whole interval: all 64 cells lie in the closed ball.
        e.cells = (0..64).collect();
        let p = Poly::var(g.weights(), 0);
        let r = degiorgi_ratio(&g, &p, &e, &MultiIndex::unit(1, 0), 1, Metric::Quasi);
        assert!(matches!(r, Err(EstimateError::CellOutsideBall(_))));
        let inner = full_interval_set(&g, 64);
        let r = degiorgi_ratio(&g, &p, &inner, &MultiIndex::unit(1, 0), 1, Metric::Quasi).unwrap();
        // Inner cells span (−31/32, 31/32): ∫|x| = (31/32)².
        let oracle = 1.0 / (31.0f64 / 32.0).powi(2);
        assert!((r.value - oracle).abs() < 1e-12, "{} {oracle}", r.value);
    }

    #[test]
    fn set_validation() {
        let g = Group::abelian(1);
        let mut e = full_interval_set(&g, 16);
        e.cells.clear();
        assert!(matches!(e.validate(&g, Metric::Quasi), Err(EstimateError::EmptySet)));
        let mut e = full_interval_set(&g, 16);
        e.a = 2.0;
        assert!(matches!(e.validate(&g, Metric::Quasi), Err(EstimateError::SetTooSmall { .. })));
    }

    #[test]
    fn search_k0_gives_inverse_fraction() {
        let g = Group::heisenberg();
        let cfg = DeGiorgiConfig::new(0, 0.25, 50, 3);
        let rep = degiorgi_constant_search(&g, &cfg).unwrap();
        assert!((rep.c_emp - 4.0).abs() < 1e-9, "{}", rep.c_emp);
        let again = degiorgi_constant_search(&g, &cfg).unwrap();
        assert_eq!(rep.to_text(), again.to_text());
    }

    #[test]
    fn search_k2_is_finite_and_scale_stable() {
        let g = Group::heisenberg();
        let v = PI / 3.0;
        let a = v / 2f64.powi(5);
        let mut vals = Vec::new();
        for (r, seed) in [(0.5, 1), (1.0, 1), (2.0, 1), (1.0, 2), (1.0, 3)] {
            let mut cfg = DeGiorgiConfig::new(2, a, 1000, seed);
            cfg.r = r;
            cfg.resolution = 12;
            let rep = degiorgi_constant_search(&g, &cfg).unwrap();
            assert!(rep.c_emp.is_finite() && rep.c_emp > 0.0);
            vals.push(rep.c_emp);
        }
        let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo < 2.0, "{vals:?}");
    }

    #[test]
    fn scaling_identity_examples() {
        let a = Group::abelian(1);
        let w = Poly::var(a.weights(), 0).pow(2);
        assert!(scaling_identity_check(&a, &w, &[int(1)], &int(2), &MultiIndex::unit(1, 0)).unwrap());
        // By hand: S(y) = (1 + 2y)², S'(0) = 4 = 2 · W'(1).
        let s = left_translate(&a, &w, &[int(1)], &int(2)).unwrap();
        assert_eq!(s.derivative(0).eval(&[int(0)]), int(4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]
        #[test]
        fn scaling_identity_holds(
            gi in 0usize..2,
            coeffs in prop::collection::vec(-6i64..7, 30),
            x0 in prop::collection::vec((-4i64..5, 1i64..4), 4),
            r in (1i64..5, 1i64..4),
        ) {
            let g = if gi == 0 { Group::heisenberg() } else { Group::engel() };
            let idx = MultiIndex::all_up_to(&g.weights(), 3);
            let w = Poly::from_terms(g.weights(), idx.iter().cloned().zip(coeffs.iter().map(|&c| int(c))));
            let x0: Vec<Rational> = x0.iter().take(g.dim()).map(|&(a, b)| rat(a, b)).collect();
            let r = rat(r.0, r.1);
            for alpha in &idx {
                prop_assert!(scaling_identity_check(&g, &w, &x0, &r, alpha).unwrap());
            }
        }

        #[test]
        fn ratio_is_transport_invariant(
            coeffs in prop::collection::vec(-6i64..7, 7),
            x0 in prop::collection::vec((-4i64..5, 1i64..4), 3),
        ) {
            // Same chart set, two carriers: (0, 1) and (x0, 1/2) with W transported.
            let g = Group::heisenberg();
            let idx = MultiIndex::all_up_to(&g.weights(), 2);
            let s = Poly::from_terms(g.weights(), idx.iter().cloned().zip(coeffs.iter().map(|&c| int(c))));
            prop_assume!(!s.is_zero());
            let x0: Vec<Rational> = x0.iter().map(|&(a, b)| rat(a, b)).collect();
            let r = rat(1, 2);
            // W(x) = S(δ_{1/r}(x0⁻¹ x)) so that W(x0 δ_r y) = S(y).
            let inv = crate::jets::inverse_translation(&g, &x0);
            let scaled: Vec<Poly<Rational>> = inv.iter().enumerate().map(|(i, p)| p.scale(&Scalar::pow(&int(2), g.spec().degree(i)))).collect();
            let w = s.compose(&scaled);
            let grid = ChartGrid::for_unit_ball(&g, Metric::Quasi, 8);
            let cells = grid.inner_cells(&g, Metric::Quasi);
            let mk = |center: Vec<Rational>, radius: Rational| SetSample { center, radius, grid: grid.clone(), cells: cells.clone(), partial: None, a: 0.01 };
            for alpha in &idx {
                let a = degiorgi_ratio(&g, &s, &mk(vec![int(0); 3], int(1)), alpha, 2, Metric::Quasi).unwrap();
                let b = degiorgi_ratio(&g, &w, &mk(x0.clone(), r.clone()), alpha, 2, Metric::Quasi).unwrap();
                prop_assert!((a.value - b.value).abs() <= 1e-6 * a.value.max(1e-300));
            }
        }
    }

    #[test]
    fn ball_intersections() {
        let r1 = Group::abelian(1);
        let e = ball_intersection_ratio(&r1, &[0.3], &[1.3], Metric::CcOracle, 0, 0).unwrap();
        assert_eq!(e.value, 1.0);
        let r2 = Group::abelian(2);
        let e = ball_intersection_ratio(&r2, &[0.0, 0.0], &[1.0, 0.0], Metric::CcOracle, 400_000, 4).unwrap();
        let lens = 2.0 * PI / 3.0 - 3f64.sqrt() / 2.0;
        assert!((e.value - lens).abs() < 0.01 * lens, "{} {lens}", e.value);
        let h = Group::heisenberg();
        assert!(matches!(
            ball_intersection_ratio(&h, &[0.0; 3], &[1.0, 0.0, 0.0], Metric::Quasi, 10, 0),
            Err(EstimateError::Group(GroupError::MetricUnsupported(_)))
        ));
        assert!(matches!(
            ball_intersection_ratio(&h, &[0.5; 3], &[0.5; 3], Metric::CcOracle, 10, 0),
            Err(EstimateError::CoincidentPoints)
        ));
    }

    #[test]
    fn ball_intersection_is_invariant() {
        let h = Group::heisenberg();
        let x = [0.0, 0.0, 0.0];
        let y = [0.7, -0.2, 0.1];
        let base = ball_intersection_ratio(&h, &x, &y, Metric::CcOracle, 100_000, 9).unwrap();
        let g = [0.4, 1.1, -0.3];
        let (tx, ty) = (h.dilate_f64(1.7, &h.multiply(&g, &x)), h.dilate_f64(1.7, &h.multiply(&g, &y)));
        let moved = ball_intersection_ratio(&h, &tx, &ty, Metric::CcOracle, 100_000, 10).unwrap();
        let se = base.std_err.hypot(moved.std_err);
        assert!((base.value - moved.value).abs() < 3.0 * se);
    }

    #[test]
    fn cone_checks() {
        let r1 = Group::abelian(1);
        for theta in [0.1, 0.5, 0.9] {
            let rep = cone_density_check(&r1, &[1.0], theta, 1.0, Metric::CcOracle, 2000, 1).unwrap();
            assert_eq!(rep.violations, 0);
        }
        assert!(cone_density_check(&r1, &[1.0], 1.0, 1.0, Metric::CcOracle, 10, 1).is_err());
        let rep = cone_density_check(&r1, &[1.0], 0.5, 1.0, Metric::CcOracle, 10, 1).unwrap();
        assert!((rep.l - 1.0 / 12.0).abs() < 1e-15);
        let h = Group::heisenberg();
        let rep = cone_density_check(&h, &[1.0, 0.0, 0.0], 0.5, 1.0, Metric::CcOracle, 20_000, 2).unwrap();
        assert_eq!(rep.violations, 0);
        let rep2 = cone_density_check(&h, &[1.0, 0.0, 0.0], 0.5, 0.01, Metric::CcOracle, 100, 2).unwrap();
        assert_eq!(rep.l_pow_q, rep2.l_pow_q);
        assert!(cone_density_check(&h, &[2.0, 0.0, 0.0], 0.5, 1.0, Metric::CcOracle, 10, 1).is_err());
    }

    #[test]
    fn drift_examples() {
        let a = Group::abelian(2);
        let x0 = [0.2, -0.1];
        assert_eq!(drift_sup(&a, &x0, &x0, 1.0, &Drift::Distance(1), Metric::Quasi, 100, 1).unwrap(), 0.0);
        let y0 = [0.5, 0.3];
        let s = drift_sup(&a, &x0, &y0, 1.0, &Drift::Distance(1), Metric::Quasi, 100, 1).unwrap();
        assert!((s - 0.5).abs() < 1e-12, "{s}");
        let h = Group::heisenberg();
        let x0 = [0.1, 0.2, 0.3];
        let mut prev = f64::INFINITY;
        for eps in [0.5, 0.25, 0.125] {
            let y0 = h.multiply(&x0, &h.dilate_f64(eps, &[1.0, 0.0, 0.0]));
            let v = drift_sup(&h, &x0, &y0, 1.0, &Drift::Monomial(MultiIndex::unit(3, 2)), Metric::Quasi, 4000, 5).unwrap();
            assert!(v < prev, "{v} !< {prev}");
            prev = v;
        }
    }

    #[test]
    fn random_rational_polynomials_have_finite_ratio() {
        let g = Group::heisenberg();
        let mut rng = rng_for(1, 1);
        let idx = MultiIndex::all_up_to(&g.weights(), 2);
        let c: Vec<Rational> = idx.iter().map(|_| rat(rng.gen_range(-5..6), 3)).collect();
        let p = poly_from_coeffs(&g, &idx, &c);
        let grid = ChartGrid::for_unit_ball(&g, Metric::Quasi, 8);
        let cells = grid.inner_cells(&g, Metric::Quasi);
        let e = SetSample { center: vec![int(0); 3], radius: int(1), grid, cells, partial: None, a: 0.05 };
        let r = degiorgi_ratio(&g, &p, &e, &MultiIndex::unit(3, 0), 2, Metric::Quasi).unwrap();
        assert!(r.value.is_finite());
    }
}
