//! Sampled functions on coordinate grids: density, approximate limits, local
//! jet fits and the bad sets of the Lusin construction.
//!
//! Samples sit at cell centres; a cell belongs to a ball when its centre does.
//! The grid box is an observation window: every measure is taken over the
//! observed part of a ball, and inside the window the mask is `D`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::diffops::PointEvaluator;
use crate::group::{Group, GroupError, Metric};
use crate::jets::{BetaTable, JetError};
use crate::poly::{monomial_value_f64, FlatPoly, MultiIndex};
use crate::scalar::rng_for;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("radius {radius} covers {cells} cells, fewer than {required}")]
    RadiusUnderResolved { radius: f64, cells: usize, required: usize },
    #[error("{got} samples for {coeffs} coefficients, need {need}")]
    TooFewSamples { got: usize, coeffs: usize, need: usize },
    #[error("{0}")]
    Shape(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// Axis-aligned box `∏[lo_i, hi_i]` cut into `res_i` cells per axis; axis 0 varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

impl SampleGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Result<Self, ApproxError> {
        if lo.len() != hi.len() || lo.len() != res.len() || lo.is_empty() {
            return Err(ApproxError::Shape("box and resolution lengths differ".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) || res.contains(&0) {
            return Err(ApproxError::Shape("empty box or zero resolution".into()));
        }
        Ok(SampleGrid { lo, hi, res })
    }

    pub fn cube(n: usize, half: f64, res: usize) -> Self {
        SampleGrid { lo: vec![-half; n], hi: vec![half; n], res: vec![res; n] }
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, i: usize) -> f64 {
        (self.hi[i] - self.lo[i]) / self.res[i] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).product()
    }

    pub fn multi(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        self.res
            .iter()
            .map(|&n| {
                let m = rem % n;
                rem /= n;
                m
            })
            .collect()
    }

    pub fn index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.res).rev().fold(0, |acc, (&mi, &n)| acc * n + mi)
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.multi(idx).iter().enumerate().map(|(i, &m)| self.lo[i] + (m as f64 + 0.5) * self.spacing(i)).collect()
    }

    /// The cell containing `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let t = ((x[i] - self.lo[i]) / self.spacing(i)).floor();
            if !(t >= 0.0 && t < self.res[i] as f64) {
                return None;
            }
            m.push(t as usize);
        }
        Some(self.index(&m))
    }

    /// In-window face neighbours of a cell.
    pub fn neighbours(&self, idx: usize) -> Vec<usize> {
        let m = self.multi(idx);
        let mut out = Vec::with_capacity(2 * self.dim());
        let mut stride = 1;
        for (i, &n) in self.res.iter().enumerate() {
            if m[i] > 0 {
                out.push(idx - stride);
            }
            if m[i] + 1 < n {
                out.push(idx + stride);
            }
            stride *= n;
        }
        out
    }
}

/// Values at every cell centre; `mask` marks the cells of `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFunction {
    pub grid: SampleGrid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SampledFunction {
    pub fn new(grid: SampleGrid, values: Vec<f64>, mask: Vec<bool>) -> Result<Self, ApproxError> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(ApproxError::Shape(format!("{} cells, {} values, {} mask bits", grid.len(), values.len(), mask.len())));
        }
        if values.iter().zip(&mask).any(|(v, m)| *m && !v.is_finite()) {
            return Err(ApproxError::Shape("non-finite value on the mask".into()));
        }
        Ok(SampledFunction { grid, values, mask })
    }

    /// Samples `f` at every cell centre with a full mask.
    pub fn from_fn(grid: SampleGrid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|i| f(&grid.center(i))).collect();
        let mask = vec![true; grid.len()];
        SampledFunction { grid, values, mask }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn masked_measure(&self) -> f64 {
        self.masked_count() as f64 * self.grid.cell_volume()
    }
}

impl PointEvaluator for SampledFunction {
    fn value_at(&self, x: &[f64]) -> Option<f64> {
        self.grid.locate(x).filter(|&c| self.mask[c]).map(|c| self.values[c])
    }
}

/// Lattice cells whose centres lie in `B(x0, r)`.
#[derive(Clone, Debug, Default)]
pub struct BallScan {
    /// In-window cells sorted by distance.
    pub index: Vec<usize>,
    pub dist: Vec<f64>,
    /// `x0⁻¹ c` per in-window cell, stride `N`.
    pub rel: Vec<f64>,
}

impl BallScan {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// In-window cells with `d < r`; they form a prefix.
    pub fn within(&self, r: f64) -> usize {
        self.dist.partition_point(|&d| d < r)
    }

    pub fn rel(&self, i: usize, n: usize) -> &[f64] {
        &self.rel[i * n..(i + 1) * n]
    }
}

/// Enumerates lattice balls layer by layer: for fixed lower layers the
/// coordinates of `x0⁻¹ c` in the next layer are translates of `c`.
pub struct Scanner<'a> {
    group: &'a Group,
    grid: &'a SampleGrid,
    metric: Metric,
    law: Vec<FlatPoly>,
    layers: Vec<std::ops::Range<usize>>,
    half: Vec<f64>,
}

impl<'a> Scanner<'a> {
    pub fn new(group: &'a Group, grid: &'a SampleGrid, metric: Metric) -> Result<Self, ApproxError> {
        group.require(metric)?;
        if grid.dim() != group.dim() {
            return Err(ApproxError::Shape(format!("grid dimension {} for a group of dimension {}", grid.dim(), group.dim())));
        }
        let law = group.law().correction_f64().iter().map(FlatPoly::new).collect();
        let layers = (1..=group.step()).map(|j| group.spec().layer_range(j)).collect();
        Ok(Scanner { group, grid, metric, law, layers, half: group.unit_ball_box(metric) })
    }

    pub fn grid(&self) -> &SampleGrid {
        self.grid
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Lattice cells in `B(x0, r)`, all lattice cells counted, in-window ones recorded.
    pub fn scan(&self, x0: &[f64], r: f64) -> (BallScan, usize) {
        let n = self.grid.dim();
        let mut st = ScanState {
            arg: vec![0.0; 2 * n],
            z: vec![0.0; n],
            m: vec![0i64; n],
            out: Vec::new(),
            lattice: 0,
        };
        for i in 0..n {
            st.arg[i] = -x0[i];
        }
        self.layer(0, 0.0, x0, r, &mut st);
        let mut out = st.out;
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut scan = BallScan {
            index: Vec::with_capacity(out.len()),
            dist: Vec::with_capacity(out.len()),
            rel: Vec::with_capacity(out.len() * n),
        };
        for (c, d, z) in out {
            scan.index.push(c);
            scan.dist.push(d);
            scan.rel.extend_from_slice(&z);
        }
        (scan, st.lattice)
    }

    /// Lattice-cell count of a ball about the middle cell, window ignored.
    pub fn lattice_count(&self, r: f64) -> usize {
        let mid: Vec<usize> = self.grid.res.iter().map(|n| n / 2).collect();
        self.scan(&self.grid.center(self.grid.index(&mid)), r).1
    }

    fn layer(&self, j: usize, s: f64, x0: &[f64], r: f64, st: &mut ScanState) {
        if j == self.layers.len() {
            let d = match self.metric {
                Metric::Quasi => s,
                Metric::CcOracle => self.group.norm_with(self.metric, &st.z),
            };
            if d < r {
                st.lattice += 1;
                let inside = st.m.iter().zip(&self.grid.res).all(|(&m, &n)| m >= 0 && (m as usize) < n);
                if inside {
                    let mu: Vec<usize> = st.m.iter().map(|&m| m as usize).collect();
                    st.out.push((self.grid.index(&mu), d, st.z.clone()));
                }
            }
            return;
        }
        let range = self.layers[j].clone();
        let n = self.grid.dim();
        let deg = j as i32 + 1;
        // z_i = c_i + shift_i with shift_i fixed by lower layers.
        let shift: Vec<f64> = range.clone().map(|i| -x0[i] + self.law[i].eval(&st.arg)).collect();
        let bound = match self.metric {
            Metric::Quasi => (r - s).max(0.0).powi(deg),
            Metric::CcOracle => f64::INFINITY,
        };
        let bounds: Vec<f64> = range.clone().map(|i| bound.min(r.powi(deg) * self.half[i])).collect();
        let spans: Vec<(i64, i64)> = range
            .clone()
            .enumerate()
            .map(|(k, i)| {
                let h = self.grid.spacing(i);
                let a = ((-bounds[k] - shift[k] - self.grid.lo[i]) / h - 0.5).ceil() as i64;
                let b = ((bounds[k] - shift[k] - self.grid.lo[i]) / h - 0.5).floor() as i64;
                (a, b)
            })
            .collect();
        if spans.iter().any(|(a, b)| a > b) {
            return;
        }
        let mut cur: Vec<i64> = spans.iter().map(|s| s.0).collect();
        loop {
            let mut sq = 0.0;
            for (k, i) in range.clone().enumerate() {
                let c = self.grid.lo[i] + (cur[k] as f64 + 0.5) * self.grid.spacing(i);
                st.m[i] = cur[k];
                st.arg[n + i] = c;
                st.z[i] = c + shift[k];
                sq += st.z[i] * st.z[i];
            }
            let norm = sq.sqrt();
            let keep = match self.metric {
                Metric::Quasi => norm <= bound,
                Metric::CcOracle => true,
            };
            if keep {
                let s2 = s + norm.powf(1.0 / deg as f64);
                self.layer(j + 1, s2, x0, r, st);
            }
            let mut k = 0;
            while k < cur.len() {
                cur[k] += 1;
                if cur[k] <= spans[k].1 {
                    break;
                }
                cur[k] = spans[k].0;
                k += 1;
            }
            if k == cur.len() {
                break;
            }
        }
        for i in range {
            st.arg[n + i] = 0.0;
        }
    }
}

struct ScanState {
    arg: Vec<f64>,
    z: Vec<f64>,
    m: Vec<i64>,
    out: Vec<(usize, f64, Vec<f64>)>,
    lattice: usize,
}

/// Minimum observed cells for a resolvable radius.
pub const MIN_BALL_CELLS: usize = 50;

/// `(r, L(B(x0, r) ∩ D) / L(B(x0, r)))` over the observed part of each ball.
pub fn density(scanner: &Scanner, mask: &[bool], x0: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>, ApproxError> {
    radii
        .iter()
        .map(|&r| {
            let (scan, _) = scanner.scan(x0, r);
            if scan.len() < MIN_BALL_CELLS {
                return Err(ApproxError::RadiusUnderResolved { radius: r, cells: scan.len(), required: MIN_BALL_CELLS });
            }
            let hits = scan.index.iter().filter(|&&c| mask[c]).count();
            Ok((r, hits as f64 / scan.len() as f64))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AplimsupReport {
    /// `-∞` when `D` itself has density below `τ`.
    pub value: f64,
    pub tau: f64,
    /// `(r, λ_r)` at the finest radii.
    pub per_radius: Vec<(f64, f64)>,
}

/// Smallest sample value `λ` with `{g > λ} ∩ D` of density below `τ` at the two finest radii.
pub fn aplimsup(scanner: &Scanner, g: &SampledFunction, x0: &[f64], radii: &[f64], tau: f64) -> Result<AplimsupReport, ApproxError> {
    let mut rs = radii.to_vec();
    rs.sort_by(f64::total_cmp);
    rs.truncate(2);
    let mut per_radius = Vec::new();
    for r in rs {
        let (scan, _) = scanner.scan(x0, r);
        if scan.len() < MIN_BALL_CELLS {
            return Err(ApproxError::RadiusUnderResolved { radius: r, cells: scan.len(), required: MIN_BALL_CELLS });
        }
        let mut vals: Vec<f64> = scan.index.iter().filter(|&&c| g.mask[c]).map(|&c| g.values[c]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        // Largest count strictly below τ n.
        let limit = tau * scan.len() as f64;
        let allowed = if limit.fract() == 0.0 { (limit as usize).saturating_sub(1) } else { limit.floor() as usize };
        let lambda = vals.get(allowed).copied().unwrap_or(f64::NEG_INFINITY);
        per_radius.push((r, lambda));
    }
    let value = per_radius.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(AplimsupReport { value, tau, per_radius })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub radius: f64,
    /// Robust re-fits after discarding residual outliers.
    pub refits: usize,
    /// Outliers exceed this many robust standard deviations.
    pub outlier_factor: f64,
    /// Residuals below `abs_tol (1 + max|f|)` are never outliers.
    pub abs_tol: f64,
    pub max_condition: f64,
}

impl FitConfig {
    pub fn new(radius: f64) -> Self {
        FitConfig { radius, refits: 1, outlier_factor: 6.0, abs_tol: 1e-9, max_condition: 1e8 }
    }
}

/// Least-squares Taylor polynomial `Σ a_J (x0⁻¹x)^J / J!` at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxJetFit {
    pub center: Vec<f64>,
    pub k: u32,
    /// `a_J` in the table's index order.
    pub coeffs: Vec<f64>,
    /// `X^J p(x0) = f_J`.
    pub jets: Vec<f64>,
    pub radius: f64,
    pub samples: usize,
    pub outliers: usize,
    pub residual_max: f64,
    pub residual_rms: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

impl ApproxJetFit {
    /// `p(x0, x)` for `z = x0⁻¹ x`.
    pub fn eval_rel(&self, basis: &LocalBasis, z: &[f64]) -> f64 {
        basis.eval(&self.coeffs, z)
    }
}

/// Monomials `z^J / J!` of a table with precomputed factorials.
#[derive(Clone, Debug)]
pub struct LocalBasis {
    exps: Vec<Vec<u32>>,
    inv_fact: Vec<f64>,
    degs: Vec<i32>,
}

impl LocalBasis {
    pub fn new(table: &BetaTable) -> Self {
        let w = table.weights();
        LocalBasis {
            exps: table.indices().iter().map(|j| j.entries().to_vec()).collect(),
            inv_fact: table.indices().iter().map(|j| 1.0 / j.factorial().to_f64().unwrap_or(f64::INFINITY)).collect(),
            degs: table.indices().iter().map(|j| j.hom_degree(w) as i32).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn degrees(&self) -> &[i32] {
        &self.degs
    }

    pub fn value(&self, t: usize, z: &[f64]) -> f64 {
        let mut acc = self.inv_fact[t];
        for (e, x) in self.exps[t].iter().zip(z) {
            if *e > 0 {
                acc *= x.powi(*e as i32);
            }
        }
        acc
    }

    /// `Σ α_J z^J / J!`.
    pub fn eval(&self, alpha: &[f64], z: &[f64]) -> f64 {
        alpha.iter().enumerate().map(|(t, a)| a * self.value(t, z)).sum()
    }
}

/// Positions in `from` of every index of `to`; `to` must be a sub-table.
pub fn sub_positions(from: &BetaTable, to: &BetaTable) -> Vec<usize> {
    to.indices().iter().map(|j| from.position(j).expect("sub-table")).collect()
}

/// Fits on the in-window masked cells of `scan` with `d < cfg.radius`.
pub fn fit_from_scan(
    group: &Group,
    table: &BetaTable,
    f: &SampledFunction,
    x0: &[f64],
    scan: &BallScan,
    cfg: &FitConfig,
) -> Result<ApproxJetFit, ApproxError> {
    let n = group.dim();
    let m = table.indices().len();
    let basis = LocalBasis::new(table);
    let r = cfg.radius;
    let rows: Vec<usize> = (0..scan.within(r)).filter(|&i| f.mask[scan.index[i]]).collect();
    let need = 3 * m;
    if rows.len() < need {
        return Err(ApproxError::TooFewSamples { got: rows.len(), coeffs: m, need });
    }
    let inv_r: Vec<f64> = group.spec().degrees().iter().map(|&d| r.powi(-(d as i32))).collect();
    let row_of = |i: usize| -> Vec<f64> {
        let u: Vec<f64> = scan.rel(i, n).iter().zip(&inv_r).map(|(z, s)| z * s).collect();
        (0..m).map(|t| basis.value(t, &u)).collect()
    };
    let all_rows: Vec<Vec<f64>> = rows.iter().map(|&i| row_of(i)).collect();
    let fmax = rows.iter().map(|&i| f.values[scan.index[i]].abs()).fold(0.0, f64::max);
    let mut keep: Vec<usize> = (0..rows.len()).collect();
    let mut outliers = 0;
    let mut pass = 0;
    loop {
        let (b, condition) = solve_ls(&keep, &all_rows, &rows, scan, f, m);
        let resid: Vec<f64> = (0..rows.len())
            .map(|t| f.values[scan.index[rows[t]]] - all_rows[t].iter().zip(&b).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        let mut excluded = Vec::new();
        if pass < cfg.refits {
            let mut abs: Vec<f64> = keep.iter().map(|&t| resid[t].abs()).collect();
            abs.sort_by(f64::total_cmp);
            let mad = abs[abs.len() / 2];
            let thr = (cfg.outlier_factor * 1.4826 * mad).max(cfg.abs_tol * (1.0 + fmax));
            excluded = keep.iter().copied().filter(|&t| resid[t].abs() > thr).collect();
        }
        if excluded.is_empty() || keep.len() - excluded.len() < need {
            let kept_res: Vec<f64> = keep.iter().map(|&t| resid[t]).collect();
            let residual_max = kept_res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let residual_rms = (kept_res.iter().map(|v| v * v).sum::<f64>() / kept_res.len() as f64).sqrt();
            let coeffs: Vec<f64> = b.iter().zip(&basis.degs).map(|(c, &d)| c * r.powi(-d)).collect();
            let jets = table.jet_from_alpha(&coeffs);
            return Ok(ApproxJetFit {
                center: x0.to_vec(),
                k: table.order(),
                coeffs,
                jets,
                radius: r,
                samples: keep.len(),
                outliers,
                residual_max,
                residual_rms,
                condition,
                ill_conditioned: !(condition <= cfg.max_condition),
            });
        }
        outliers += excluded.len();
        keep.retain(|t| !excluded.contains(t));
        pass += 1;
    }
}

/// Householder least squares; condition estimated from the diagonal of `R`.
fn solve_ls(keep: &[usize], rows: &[Vec<f64>], idx: &[usize], scan: &BallScan, f: &SampledFunction, m: usize) -> (Vec<f64>, f64) {
    let a = DMatrix::from_fn(keep.len(), m, |i, j| rows[keep[i]][j]);
    let mut rhs = DVector::from_fn(keep.len(), |i, _| f.values[scan.index[idx[keep[i]]]]);
    let qr = a.qr();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    let diag: Vec<f64> = (0..m).map(|i| r[(i, i)].abs()).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let rhs_top = rhs.rows(0, m).into_owned();
    let sol = r.solve_upper_triangular(&rhs_top).map(|v| v.iter().copied().collect()).unwrap_or_else(|| vec![0.0; m]);
    (sol, condition)
}

pub fn fit_jet(
    scanner: &Scanner,
    group: &Group,
    table: &BetaTable,
    f: &SampledFunction,
    x0: &[f64],
    cfg: &FitConfig,
) -> Result<ApproxJetFit, ApproxError> {
    let (scan, _) = scanner.scan(x0, cfg.radius);
    fit_from_scan(group, table, f, x0, &scan, cfg)
}

/// `L^N(W_δ(x0, r))`: observed cells of `B(x0, r)` outside `{y ∈ D : |f(y) − p(x0, y)| ≤ δ d^k}`.
#[allow(clippy::too_many_arguments)]
pub fn bad_set_measure(
    scanner: &Scanner,
    table: &BetaTable,
    f: &SampledFunction,
    fit: &ApproxJetFit,
    delta: f64,
    r: f64,
    k: u32,
    tol: f64,
) -> Result<f64, ApproxError> {
    let (scan, _) = scanner.scan(&fit.center, r);
    if scan.len() < MIN_BALL_CELLS {
        return Err(ApproxError::RadiusUnderResolved { radius: r, cells: scan.len(), required: MIN_BALL_CELLS });
    }
    let n = scanner.grid.dim();
    let basis = LocalBasis::new(table);
    let bad = (0..scan.len())
        .filter(|&i| {
            let c = scan.index[i];
            !(f.mask[c] && (f.values[c] - fit.eval_rel(&basis, scan.rel(i, n))).abs() <= delta * scan.dist[i].powi(k as i32) + tol)
        })
        .count();
    Ok(bad as f64 * scanner.grid.cell_volume())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassMode {
    /// `|f − p| ≤ δ d^k` with the order-`k` polynomial.
    Differentiability { delta: f64 },
    /// `|f − p| ≤ j d^k` with the order-`k − 1` polynomial.
    Taylor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyConfig {
    pub mode: ClassMode,
    /// Exponent `k` of `d^k`.
    pub k: u32,
    pub j_min: u32,
    pub j_max: u32,
    /// Radii below this are not resolved; it stands in for every `r < r_floor`.
    pub r_floor: f64,
    pub tol: f64,
}

impl ClassifyConfig {
    /// Radii tested for `A_j`: `max(1/i, r_floor)` for `j ≤ i ≤ j_max`.
    pub fn radii_for(&self, j: u32) -> Vec<f64> {
        let mut rs: Vec<f64> = (j.max(self.j_min)..=self.j_max).map(|i| (1.0 / i as f64).max(self.r_floor)).collect();
        if rs.is_empty() {
            rs.push(self.r_floor);
        }
        rs.dedup();
        rs
    }
}

/// Per-`j` masks over all grid cells; `C_j = A_j ∩ B_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub js: Vec<u32>,
    pub a: Vec<Vec<bool>>,
    pub b: Vec<Vec<bool>>,
    pub c: Vec<Vec<bool>>,
}

impl Classification {
    pub fn c_mask(&self, j: u32) -> Option<&[bool]> {
        self.js.iter().position(|&x| x == j).map(|i| self.c[i].as_slice())
    }
}

/// Classifies masked cells from their fits; `poly_table` is the table of the
/// polynomial `p(x, ·)` and must be a sub-table of each fit's table.
pub fn classify(
    scanner: &Scanner,
    fit_table: &BetaTable,
    poly_table: &BetaTable,
    f: &SampledFunction,
    fits: &[Option<ApproxJetFit>],
    cfg: &ClassifyConfig,
) -> Result<Classification, ApproxError> {
    if cfg.j_min == 0 || cfg.j_min > cfg.j_max {
        return Err(ApproxError::Shape("need 1 ≤ j_min ≤ j_max".into()));
    }
    let js: Vec<u32> = (cfg.j_min..=cfg.j_max).collect();
    let r_max = (1.0 / cfg.j_min as f64).max(cfg.r_floor);
    let q = scanner.group.hom_dim();
    let frac = 1.0 / 2f64.powi(q as i32 + 2);
    let pos = sub_positions(fit_table, poly_table);
    let n = scanner.grid.dim();
    let cells = f.grid.len();
    let basis = LocalBasis::new(poly_table);
    // Lattice counts depend only weakly on the centre; one reference count per radius.
    let mut lattice: Vec<(f64, usize)> = js.iter().flat_map(|&j| cfg.radii_for(j)).map(|r| (r, 0)).collect();
    lattice.sort_by(|a, b| a.0.total_cmp(&b.0));
    lattice.dedup_by(|a, b| a.0 == b.0);
    for l in lattice.iter_mut() {
        l.1 = scanner.lattice_count(l.0);
    }
    let lattice_at = |r: f64| lattice.iter().find(|l| l.0 == r).map_or(0, |l| l.1);
    let per_cell: Vec<Option<(Vec<bool>, Vec<bool>)>> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let fit = fits[c].as_ref()?;
            if !f.mask[c] {
                return None;
            }
            let alpha: Vec<f64> = pos.iter().map(|&p| fit.coeffs[p]).collect();
            let jets: Vec<f64> = pos.iter().map(|&p| fit.jets[p]).collect();
            let (scan, _) = scanner.scan(&fit.center, r_max);
            let err: Vec<f64> = (0..scan.len())
                .map(|i| {
                    let cell = scan.index[i];
                    if f.mask[cell] {
                        (f.values[cell] - basis.eval(&alpha, scan.rel(i, n))).abs()
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            let jet_max = jets.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut a_row = Vec::with_capacity(js.len());
            let mut b_row = Vec::with_capacity(js.len());
            for &j in &js {
                let thr = match cfg.mode {
                    ClassMode::Differentiability { delta } => delta,
                    ClassMode::Taylor => j as f64,
                };
                let ok = cfg.radii_for(j).iter().all(|&rho| {
                    let m = scan.within(rho);
                    let bad = (0..m).filter(|&i| !(err[i] <= thr * scan.dist[i].powi(cfg.k as i32) + cfg.tol)).count();
                    bad as f64 <= frac * lattice_at(rho) as f64
                });
                a_row.push(ok);
                b_row.push(jet_max <= j as f64);
            }
            Some((a_row, b_row))
        })
        .collect();
    let mut a = vec![vec![false; cells]; js.len()];
    let mut b = vec![vec![false; cells]; js.len()];
    for (c, row) in per_cell.into_iter().enumerate() {
        if let Some((ar, br)) = row {
            for t in 0..js.len() {
                a[t][c] = ar[t];
                b[t][c] = br[t];
            }
        }
    }
    let cm = a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| *p && *q).collect()).collect();
    Ok(Classification { js, a, b, c: cm })
}

/// Inputs to the coefficient-interval criterion; coefficients multiply raw monomials `(x0⁻¹x)^J`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionInput {
    pub x0: Vec<f64>,
    pub k: u32,
    /// `a_J` for `|J|_G ≤ k − 1`.
    pub lower: Vec<(MultiIndex, f64)>,
    /// `(J, B_J)` for `|J|_G = k`.
    pub top: Vec<(MultiIndex, (f64, f64))>,
    /// Candidate rationals per top index, filtered to `B_J`.
    pub q_grid: Vec<Vec<f64>>,
    pub eps_grid: Vec<f64>,
    pub big_r_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionVerdict {
    pub holds: bool,
    /// `(ε, R, q)` per ε that succeeded.
    pub witnesses: Vec<(f64, f64, Vec<f64>)>,
    pub failed_eps: Option<f64>,
}

/// True iff every grid `ε` has a grid `R` and grid `q_J ∈ B_J` with
/// `L{x ∈ B(x0, r) : |f − Σ_{<k} a_J z^J − Σ_{=k} q_J z^J| / d^k > ε} < ε r^Q`
/// for every grid `r < R`. `R` must admit at least one grid `r`.
pub fn decomposition_check(scanner: &Scanner, f: &SampledFunction, input: &DecompositionInput) -> DecompositionVerdict {
    let n = scanner.grid.dim();
    let q = scanner.group.hom_dim() as i32;
    let cands: Vec<Vec<f64>> = input
        .top
        .iter()
        .zip(&input.q_grid)
        .map(|((_, (lo, hi)), g)| g.iter().copied().filter(|v| lo <= v && v <= hi).collect())
        .collect();
    let fail = |eps: Option<f64>| DecompositionVerdict { holds: false, witnesses: Vec::new(), failed_eps: eps };
    if input.eps_grid.is_empty() || input.top.is_empty() || cands.iter().any(|c| c.is_empty()) {
        return fail(input.eps_grid.first().copied());
    }
    let mut rs = input.r_grid.clone();
    rs.sort_by(f64::total_cmp);
    let r_top = rs.last().copied().unwrap_or(0.0);
    let (scan, _) = scanner.scan(&input.x0, r_top * (1.0 + 1e-12));
    // Residual after the lower-order part, and top monomials, per cell.
    let base: Vec<f64> = (0..scan.len())
        .map(|i| {
            let c = scan.index[i];
            if !f.mask[c] {
                return f64::NAN;
            }
            let z = scan.rel(i, n);
            f.values[c] - input.lower.iter().map(|(j, a)| a * monomial_value_f64(j, z)).sum::<f64>()
        })
        .collect();
    let tops: Vec<Vec<f64>> = (0..scan.len()).map(|i| input.top.iter().map(|(j, _)| monomial_value_f64(j, scan.rel(i, n))).collect()).collect();
    let cell_vol = scanner.grid.cell_volume();
    let mut witnesses = Vec::new();
    for &eps in &input.eps_grid {
        let violation = |qv: &[f64], r: f64| -> bool {
            let m = scan.within(r);
            let bad = (0..m)
                .filter(|&i| {
                    if base[i].is_nan() {
                        return true;
                    }
                    let v = (base[i] - tops[i].iter().zip(qv).map(|(a, b)| a * b).sum::<f64>()).abs();
                    let d = scan.dist[i];
                    if d == 0.0 {
                        v > 0.0
                    } else {
                        v / d.powi(input.k as i32) > eps
                    }
                })
                .count();
            !(bad as f64 * cell_vol < eps * r.powi(q))
        };
        let mut found = None;
        let mut idx = vec![0usize; cands.len()];
        'combos: loop {
            let qv: Vec<f64> = idx.iter().zip(&cands).map(|(&i, c)| c[i]).collect();
            let mut big: Vec<f64> = input.big_r_grid.clone();
            big.sort_by(f64::total_cmp);
            for &big_r in &big {
                let below: Vec<f64> = rs.iter().copied().filter(|&r| r < big_r).collect();
                if below.is_empty() {
                    continue;
                }
                if below.iter().all(|&r| !violation(&qv, r)) {
                    found = Some((eps, big_r, qv.clone()));
                    break 'combos;
                }
            }
            let mut t = 0;
            while t < idx.len() {
                idx[t] += 1;
                if idx[t] < cands[t].len() {
                    break;
                }
                idx[t] = 0;
                t += 1;
            }
            if t == idx.len() {
                break;
            }
        }
        match found {
            Some(w) => witnesses.push(w),
            None => return DecompositionVerdict { holds: false, witnesses, failed_eps: Some(eps) },
        }
    }
    DecompositionVerdict { holds: true, witnesses, failed_eps: None }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    /// `max |a_J − a'_J| s^{|J|_G}` over fit pairs, `s` the smaller fit radius.
    pub spread: f64,
    pub fits: usize,
    pub flagged: bool,
}

/// Fits at each scale on the full ball and on seeded subsamples keeping each
/// cell with probability `keep`; compares every pair of fits.
#[allow(clippy::too_many_arguments)]
pub fn uniqueness_probe(
    scanner: &Scanner,
    group: &Group,
    table: &BetaTable,
    f: &SampledFunction,
    x0: &[f64],
    scales: &[f64],
    seeds: &[u64],
    keep: f64,
    base: &FitConfig,
    flag_above: f64,
) -> Result<UniquenessReport, ApproxError> {
    if scales.len() < 3 {
        return Err(ApproxError::Shape("need at least three scales".into()));
    }
    let degs: Vec<i32> = table.indices().iter().map(|j| j.hom_degree(table.weights()) as i32).collect();
    let mut fits: Vec<(f64, Vec<f64>)> = Vec::new();
    for &r in scales {
        let cfg = FitConfig { radius: r, ..base.clone() };
        let (scan, _) = scanner.scan(x0, r);
        fits.push((r, fit_from_scan(group, table, f, x0, &scan, &cfg)?.coeffs));
        for &seed in seeds {
            let mut rng = rng_for(seed, 0);
            let mut sub = f.clone();
            for &c in &scan.index {
                if rng.gen::<f64>() >= keep {
                    sub.mask[c] = false;
                }
            }
            fits.push((r, fit_from_scan(group, table, &sub, x0, &scan, &cfg)?.coeffs));
        }
    }
    let mut spread = 0.0f64;
    for a in 0..fits.len() {
        for b in a + 1..fits.len() {
            let s = fits[a].0.min(fits[b].0);
            for (t, d) in degs.iter().enumerate() {
                spread = spread.max((fits[a].1[t] - fits[b].1[t]).abs() * s.powi(*d));
            }
        }
    }
    Ok(UniquenessReport { spread, fits: fits.len(), flagged: spread > flag_above })
}

/// Dataset text: header lines then `cell_index value mask_bit` rows.
pub fn write_dataset(group_name: &str, k: u32, f: &SampledFunction) -> String {
    let mut s = String::new();
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    writeln!(s, "carnot-dataset 1").unwrap();
    writeln!(s, "group {group_name}").unwrap();
    writeln!(s, "lo {}", join(&f.grid.lo)).unwrap();
    writeln!(s, "hi {}", join(&f.grid.hi)).unwrap();
    writeln!(s, "res {}", f.grid.res.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ")).unwrap();
    writeln!(s, "k {k}").unwrap();
    for (i, (v, m)) in f.values.iter().zip(&f.mask).enumerate() {
        writeln!(s, "{i} {v:?} {}", u8::from(*m)).unwrap();
    }
    s
}

/// Returns `(group name, k, function)`.
pub fn read_dataset(text: &str) -> Result<(String, u32, SampledFunction), ApproxError> {
    let mut lines = text.lines().enumerate();
    let mut next_header = |key: &str| -> Result<(usize, Vec<String>), ApproxError> {
        let (i, l) = lines.next().ok_or(ApproxError::Parse { line: 0, msg: format!("missing `{key}`") })?;
        let mut toks = l.split_whitespace();
        if toks.next() != Some(key) {
            return Err(ApproxError::Parse { line: i + 1, msg: format!("expected `{key}`") });
        }
        Ok((i + 1, toks.map(str::to_string).collect()))
    };
    let (l, v) = next_header("carnot-dataset")?;
    if v != ["1"] {
        return Err(ApproxError::Parse { line: l, msg: "unsupported version".into() });
    }
    let (_, name) = next_header("group")?;
    let floats = |(l, v): (usize, Vec<String>)| -> Result<Vec<f64>, ApproxError> {
        v.iter().map(|t| t.parse::<f64>().map_err(|_| ApproxError::Parse { line: l, msg: format!("bad number `{t}`") })).collect()
    };
    let lo = floats(next_header("lo")?)?;
    let hi = floats(next_header("hi")?)?;
    let (l, rv) = next_header("res")?;
    let res: Vec<usize> = rv.iter().map(|t| t.parse().map_err(|_| ApproxError::Parse { line: l, msg: "bad resolution".into() })).collect::<Result<_, _>>()?;
    let (l, kv) = next_header("k")?;
    let k: u32 = kv.first().and_then(|t| t.parse().ok()).ok_or(ApproxError::Parse { line: l, msg: "bad k".into() })?;
    let grid = SampleGrid::new(lo, hi, res)?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut mask = vec![false; grid.len()];
    let mut seen = vec![false; grid.len()];
    for (i, line) in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        let err = |msg: &str| ApproxError::Parse { line: i + 1, msg: msg.into() };
        if t.len() != 3 {
            return Err(err("expected `cell_index value mask_bit`"));
        }
        let c: usize = t[0].parse().map_err(|_| err("bad cell index"))?;
        if c >= grid.len() || seen[c] {
            return Err(err("cell index out of range or repeated"));
        }
        seen[c] = true;
        values[c] = t[1].parse().map_err(|_| err("bad value"))?;
        mask[c] = match t[2] {
            "0" => false,
            "1" => true,
            _ => return Err(err("mask bit must be 0 or 1")),
        };
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(ApproxError::Parse { line: 0, msg: format!("cell {c} missing") });
    }
    let f = SampledFunction::new(grid, values, mask)?;
    Ok((name.join(" "), k, f))
}
