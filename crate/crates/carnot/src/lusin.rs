//! Lusin pipeline on sampled data: fit jets, classify, select `F`, audit the
//! pairwise remainders and certify the Whitney or Lip hypotheses on `F`.
//!
//! The extension itself is never built; the certificate records that the
//! hypotheses of the extension theorems hold at the tested scales.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::approx::{
    classify, fit_from_scan, sub_positions, ApproxError, LocalBasis, ApproxJetFit, ClassMode, Classification, ClassifyConfig, FitConfig,
    SampleGrid, SampledFunction, Scanner,
};
use crate::group::{Group, Metric};
use crate::jets::{jet_of_f64, lip_constant, remainders, whitney_modulus, whitney_ratios, BetaTable, JetError, JetSet};
use crate::poly::{MultiIndex, Poly};
use crate::scalar::rng_for;
use crate::Rational;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LusinError {
    #[error("no j0 reaches the target; achievable ε = {achievable}")]
    CoverageShortfall { achievable: f64, best: Box<Selection> },
    #[error("F is empty")]
    EmptyF,
    #[error("Lip constant is not finite")]
    InfiniteM,
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Approximate differentiability of order `k`, `C^k` approximation.
    Ck,
    /// Approximate Taylor bounds of order `k − 1`, `Lip(k)` approximation.
    Lip,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ck => "ck",
            Mode::Lip => "lip",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub j0: u32,
    /// Erosion of `C_{j0}` by one cell.
    pub f_mask: Vec<bool>,
    pub coverage_deficit: f64,
    /// `L(D ∖ F)`.
    pub deficit: f64,
}

/// Keeps cells of `c` whose face neighbours are in `c` or unobserved.
fn erode(grid: &SampleGrid, c: &[bool], unobserved: &[bool]) -> Vec<bool> {
    (0..grid.len()).map(|i| c[i] && grid.neighbours(i).iter().all(|&n| c[n] || unobserved[n])).collect()
}

fn deficit(grid: &SampleGrid, d: &[bool], keep: &[bool]) -> f64 {
    d.iter().zip(keep).filter(|(a, b)| **a && !**b).count() as f64 * grid.cell_volume()
}

/// Minimal `j0` with `L(D ∖ C_{j0}) ≤ ε/2`; `F` is `C_{j0}` eroded and must satisfy `L(D ∖ F) < ε`.
/// Cells flagged `unobserved` are outside `D` and do not erode their neighbours.
/// On failure the error carries the smallest attainable `ε` and the selection attaining it.
pub fn select_f(grid: &SampleGrid, classes: &Classification, d: &[bool], unobserved: &[bool], eps: f64) -> Result<Selection, LusinError> {
    let mut best: Option<(f64, Selection)> = None;
    for (t, &j) in classes.js.iter().enumerate() {
        let c: Vec<bool> = classes.c[t].iter().zip(unobserved).map(|(a, u)| *a && !*u).collect();
        let coverage_deficit = deficit(grid, d, &c);
        let f_mask = erode(grid, &c, unobserved);
        let def = deficit(grid, d, &f_mask);
        let sel = Selection { j0: j, f_mask, coverage_deficit, deficit: def };
        if coverage_deficit <= eps / 2.0 && def < eps {
            return Ok(sel);
        }
        let need = (2.0 * coverage_deficit).max(def);
        if best.as_ref().map_or(true, |b| need < b.0) {
            best = Some((need, sel));
        }
    }
    let (achievable, sel) = best.ok_or(LusinError::EmptyF)?;
    Err(LusinError::CoverageShortfall { achievable, best: Box::new(sel) })
}

/// Pair sampling: all ordered pairs below `full_sweep_below` points,
/// otherwise `per_scale` local pairs per scale plus `global` uniform pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPlan {
    pub full_sweep_below: usize,
    pub per_scale: usize,
    pub global: usize,
    pub seed: u64,
}

impl PairPlan {
    pub fn new(seed: u64) -> Self {
        PairPlan { full_sweep_below: 10_000, per_scale: 2000, global: 2000, seed }
    }
}

/// Ordered pairs of positions into `cells`; local pairs have `d < t`.
pub fn sample_pairs(scanner: &Scanner, cells: &[usize], scales: &[f64], plan: &PairPlan) -> Vec<(usize, usize)> {
    let n = cells.len();
    if n < 2 {
        return Vec::new();
    }
    if n < plan.full_sweep_below && n * n <= 4 * plan.full_sweep_below * plan.full_sweep_below {
        return (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    }
    let pos: HashMap<usize, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let grid = scanner.grid();
    let mut out = Vec::new();
    for (s, &t) in scales.iter().enumerate() {
        let mut rng = rng_for(plan.seed, 1 + s as u64);
        for _ in 0..plan.per_scale {
            let a = rng.gen_range(0..n);
            let (scan, _) = scanner.scan(&grid.center(cells[a]), t);
            let near: Vec<usize> = scan.index.iter().filter_map(|c| pos.get(c).copied()).filter(|&b| b != a).collect();
            if !near.is_empty() {
                out.push((a, near[rng.gen_range(0..near.len())]));
            }
        }
    }
    let mut rng = rng_for(plan.seed, 0);
    for _ in 0..plan.global {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            out.push((a, b));
        }
    }
    out
}

/// Jets restricted to the points used by `pairs`, with pairs re-indexed.
fn pair_jets(
    grid: &SampleGrid,
    cells: &[usize],
    jets: &[Vec<f64>],
    table: &BetaTable,
    pairs: &[(usize, usize)],
) -> Result<(JetSet, Vec<(usize, usize)>, Vec<usize>), JetError> {
    let mut used: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    used.sort_unstable();
    used.dedup();
    let at: HashMap<usize, usize> = used.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let set = JetSet::new(table, used.iter().map(|&p| grid.center(cells[p])).collect(), used.iter().map(|&p| jets[p].clone()).collect())?;
    let re = pairs.iter().map(|&(a, b)| (at[&a], at[&b])).collect();
    Ok((set, re, used))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub j: MultiIndex,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    pub mode: Mode,
    pub k: u32,
    /// `δ` in differentiability mode, `j0` in Taylor mode.
    pub threshold: f64,
    pub j0: u32,
    pub c_emp: f64,
    pub r_floor: f64,
    pub tol: f64,
    pub max_listed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditStats {
    pub pairs: usize,
    /// Pairs whose ball `B(x, r)` is fully observed; (a) and (b) are checked on those.
    pub observed_pairs: usize,
    pub small_s: usize,
    pub q_violations: usize,
    pub max_q_ratio: f64,
    pub remainder_violations: usize,
    pub violation_rate: f64,
    /// Worst violations first, by `value / bound`.
    pub worst: Vec<Violation>,
}

/// Audits pairs `x, y ∈ F` with `d(x, y) ≤ 1/j0` at `r = max(d, r_floor)`:
/// (a) `L(S) ≥ V r^Q / 2^{Q+1}`, (b) `|p(y, ·) − p(x, ·)| ≤ 2 θ r^k` on `S`,
/// (c) `|f_I(y) − X^I p(x, ·)(y)| ≤ C θ r^{k − |I|_G}`.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_remainder_audit(
    scanner: &Scanner,
    group: &Group,
    poly_table: &BetaTable,
    f: &SampledFunction,
    cells: &[usize],
    alphas: &[Vec<f64>],
    jets: &[Vec<f64>],
    pairs: &[(usize, usize)],
    cfg: &AuditConfig,
) -> Result<AuditStats, LusinError> {
    let grid = scanner.grid();
    let n = group.dim();
    let q = group.hom_dim() as i32;
    let k = cfg.k as i32;
    let near: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(a, b)| group.distance_with(Metric::Quasi, &grid.center(cells[a]), &grid.center(cells[b])) <= 1.0 / cfg.j0 as f64)
        .collect();
    let basis = LocalBasis::new(poly_table);
    let degs = basis.degrees();
    let eval = |alpha: &[f64], z: &[f64]| basis.eval(alpha, z);
    let metric = scanner.metric();
    let per_pair: Vec<(bool, usize, usize, f64, Vec<(usize, f64, f64)>)> = near
        .par_iter()
        .map(|&(a, b)| {
            let x = grid.center(cells[a]);
            let y = grid.center(cells[b]);
            let d = group.distance_with(metric, &x, &y);
            let r = d.max(cfg.r_floor);
            let (scan, lattice) = scanner.scan(&x, r);
            let observed = lattice == scan.len();
            let (mut s_count, mut q_bad, mut q_ratio) = (0usize, 0usize, 0.0f64);
            if observed {
                let bound_q = 2.0 * cfg.threshold * r.powi(k) + cfg.tol;
                for i in 0..scan.len() {
                    let c = scan.index[i];
                    if !f.mask[c] {
                        continue;
                    }
                    let zy = group.relative(&y, &grid.center(c));
                    let dy = group.norm_with(metric, &zy);
                    if dy >= r {
                        continue;
                    }
                    let px = eval(&alphas[a], scan.rel(i, n));
                    let py = eval(&alphas[b], &zy);
                    let ok_x = (f.values[c] - px).abs() <= cfg.threshold * scan.dist[i].powi(k) + cfg.tol;
                    let ok_y = (f.values[c] - py).abs() <= cfg.threshold * dy.powi(k) + cfg.tol;
                    if ok_x && ok_y {
                        s_count += 1;
                        let qv = (py - px).abs();
                        q_ratio = q_ratio.max(qv / bound_q);
                        if qv > bound_q {
                            q_bad += 1;
                        }
                    }
                }
            }
            let small = observed && (s_count as f64) < lattice as f64 / 2f64.powi(q + 1);
            // (c) on the jets.
            let zxy = group.relative(&x, &y);
            let pd = poly_table.local_derivatives_f64(&alphas[a], &zxy);
            let rem: Vec<(usize, f64, f64)> = (0..degs.len())
                .filter_map(|t| {
                    let v = (jets[b][t] - pd[t]).abs();
                    let bound = cfg.c_emp * cfg.threshold * d.powi(k - degs[t]) + cfg.tol;
                    (v > bound).then_some((t, v, bound))
                })
                .collect();
            (observed, usize::from(small), q_bad, q_ratio, rem)
        })
        .collect();
    let mut stats = AuditStats {
        pairs: near.len(),
        observed_pairs: 0,
        small_s: 0,
        q_violations: 0,
        max_q_ratio: 0.0,
        remainder_violations: 0,
        violation_rate: 0.0,
        worst: Vec::new(),
    };
    let mut all: Vec<(f64, Violation)> = Vec::new();
    for (t, (obs, small, qb, qr, rem)) in per_pair.into_iter().enumerate() {
        stats.observed_pairs += usize::from(obs);
        stats.small_s += small;
        stats.q_violations += qb;
        stats.max_q_ratio = stats.max_q_ratio.max(qr);
        if !rem.is_empty() {
            stats.remainder_violations += 1;
        }
        let (a, b) = near[t];
        for (i, v, bound) in rem {
            all.push((
                v / bound,
                Violation { x: grid.center(cells[a]), y: grid.center(cells[b]), j: poly_table.indices()[i].clone(), value: v, bound },
            ));
        }
    }
    stats.violation_rate = if stats.pairs == 0 { 0.0 } else { stats.remainder_violations as f64 / stats.pairs as f64 };
    all.sort_by(|p, q| q.0.total_cmp(&p.0));
    stats.worst = all.into_iter().take(cfg.max_listed).map(|p| p.1).collect();
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WhitneyCertificate {
    pub modulus: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub max_jet: f64,
    /// `ω` strictly increases in `t` over the three finest scales, or vanishes to roundoff.
    pub decreasing_finest: bool,
    pub pass: bool,
    /// Pair with the largest Whitney ratio at the largest scale.
    pub worst_pair: Option<(Vec<f64>, Vec<f64>, f64)>,
}

/// Relative size below which a Whitney modulus is treated as zero.
pub const MODULUS_FLOOR: f64 = 1e-9;

/// `ω(t_ℓ) ≤ θ_ℓ` at every scale and `max |f_J|` finite.
pub fn whitney_certificate(
    group: &Group,
    table: &BetaTable,
    jets: &JetSet,
    pairs: &[(usize, usize)],
    scales: &[f64],
    thresholds: &[f64],
    metric: Metric,
) -> Result<WhitneyCertificate, LusinError> {
    if jets.is_empty() {
        return Err(LusinError::EmptyF);
    }
    let rem = remainders(group, table, jets, metric, Some(pairs))?;
    let modulus = whitney_modulus(table, &rem, scales);
    let max_jet = jets.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let t_max = scales.iter().copied().fold(0.0, f64::max);
    let worst_pair = whitney_ratios(table, &rem)
        .into_iter()
        .filter(|r| r.0 <= t_max)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|r| (jets.points[r.2].clone(), jets.points[r.3].clone(), r.1));
    let mut sorted = modulus.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // A modulus at roundoff level everywhere counts as vanishing.
    let floor = MODULUS_FLOOR * max_jet.max(1.0);
    let vanishing = sorted.iter().all(|m| m.1 <= floor);
    let decreasing_finest = sorted.len() >= 3 && (vanishing || (sorted[0].1 < sorted[1].1 && sorted[1].1 < sorted[2].1));
    let pass = max_jet.is_finite() && modulus.iter().zip(thresholds).all(|((_, w), th)| w <= th);
    Ok(WhitneyCertificate { modulus, thresholds: thresholds.to_vec(), max_jet, decreasing_finest, pass, worst_pair })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipCertificate {
    pub m: f64,
    pub value_bound: f64,
    pub remainder_bound: f64,
    /// `max |a_J − (β f)_J|` over the checked points.
    pub coefficient_error: f64,
}

/// `M` for order-`k − 1` jets at `γ = k`; `coeffs` are the fitted Taylor
/// coefficients, checked against `β` applied to the jets.
pub fn lip_certificate(
    group: &Group,
    table: &BetaTable,
    jets: &JetSet,
    coeffs: &[Vec<f64>],
    k: u32,
    pairs: &[(usize, usize)],
    metric: Metric,
) -> Result<LipCertificate, LusinError> {
    if jets.is_empty() {
        return Err(LusinError::EmptyF);
    }
    let lip = lip_constant(group, table, jets, k as f64, metric, Some(pairs))?;
    if !lip.m.is_finite() {
        return Err(LusinError::InfiniteM);
    }
    let coefficient_error = jets
        .values
        .iter()
        .zip(coeffs)
        .map(|(v, a)| table.alpha_f64(v).iter().zip(a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
        .fold(0.0, f64::max);
    Ok(LipCertificate { m: lip.m, value_bound: lip.value_bound, remainder_bound: lip.remainder_bound, coefficient_error })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConverseVerdict {
    pub x0: Vec<f64>,
    /// `(r, λ_r)`: the `(1 − τ)` quantile of `|f − P(x0, ·)| / d^k` over `B(x0, r) ∩ D`.
    pub ratios: Vec<(f64, f64)>,
    pub holds: bool,
}

/// For `f = u` on the mask: order-`k` mode expects ratios shrinking to 0,
/// Taylor mode (order `k − 1`) expects them bounded.
#[allow(clippy::too_many_arguments)]
pub fn converse_probe(
    scanner: &Scanner,
    group: &Group,
    u: &Poly<Rational>,
    mask: &[bool],
    x0s: &[Vec<f64>],
    k: u32,
    mode: Mode,
    radii: &[f64],
    tau: f64,
) -> Result<Vec<ConverseVerdict>, LusinError> {
    let order = match mode {
        Mode::Ck => k,
        Mode::Lip => k.checked_sub(1).ok_or(ApproxError::Shape("Taylor mode needs k ≥ 1".into()))?,
    };
    let table = BetaTable::new(group, order)?;
    let uf = u.to_f64();
    let basis = LocalBasis::new(&table);
    let grid = scanner.grid();
    let mut rs = radii.to_vec();
    rs.sort_by(|a, b| b.total_cmp(a));
    let n = group.dim();
    x0s.iter()
        .map(|x0| {
            let alpha = table.alpha_f64(&jet_of_f64(group, &table, u, x0));
            let (scan, _) = scanner.scan(x0, rs[0]);
            let ratio: Vec<f64> = (0..scan.len())
                .map(|i| {
                    let c = scan.index[i];
                    if !mask[c] || scan.dist[i] == 0.0 {
                        return f64::NAN;
                    }
                    let p = basis.eval(&alpha, scan.rel(i, n));
                    (uf.eval_f64(&grid.center(c)) - p).abs() / scan.dist[i].powi(k as i32)
                })
                .collect();
            let ratios: Vec<(f64, f64)> = rs
                .iter()
                .map(|&r| {
                    let m = scan.within(r);
                    let mut v: Vec<f64> = ratio[..m].iter().copied().filter(|x| !x.is_nan()).collect();
                    v.sort_by(|a, b| b.total_cmp(a));
                    let allowed = (tau * m as f64).floor() as usize;
                    (r, v.get(allowed).copied().unwrap_or(0.0))
                })
                .collect();
            let first = ratios[0].1;
            let last = ratios[ratios.len() - 1].1;
            let scale = uf.abs_bound(&vec![1.0; n]).max(1.0);
            let holds = match mode {
                Mode::Ck => last <= 1e-12 * scale || (last < first && ratios.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9))),
                Mode::Lip => last.is_finite() && last <= 2.0 * first.max(1e-12 * scale),
            };
            Ok(ConverseVerdict { x0: x0.clone(), ratios, holds })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LusinConfig {
    pub mode: Mode,
    pub k: u32,
    /// Target as a fraction of `L(D)`.
    pub eps_fraction: f64,
    /// `δ` for the differentiability classes.
    pub delta: f64,
    pub fit_radius: f64,
    pub refits: usize,
    pub j_min: u32,
    pub j_max: u32,
    pub r_floor: f64,
    pub tol: f64,
    pub metric: Metric,
    pub seed: u64,
    pub pairs: PairPlan,
    /// Whitney modulus scales, ascending.
    pub scales: Vec<f64>,
    pub whitney_threshold: f64,
    pub c_emp: f64,
}

impl LusinConfig {
    pub fn new(mode: Mode, k: u32, eps_fraction: f64, seed: u64) -> Self {
        LusinConfig {
            mode,
            k,
            eps_fraction,
            delta: 0.1,
            fit_radius: 0.2,
            refits: 3,
            j_min: 3,
            j_max: 12,
            r_floor: 0.2,
            tol: 1e-9,
            metric: Metric::Quasi,
            seed,
            pairs: PairPlan::new(seed),
            scales: vec![0.1, 0.15, 0.2, 0.3],
            whitney_threshold: 1.0,
            c_emp: 4.0e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LusinReport {
    pub mode: Mode,
    pub k: u32,
    pub eps_fraction: f64,
    pub eps: f64,
    pub d_measure: f64,
    pub j0: u32,
    /// Smallest attainable `ε` when selection fell short.
    pub achievable_eps: Option<f64>,
    pub coverage_deficit: f64,
    pub deficit: f64,
    pub f_cells: usize,
    /// Masked cells without a well-conditioned fit; excluded from `D` for selection.
    pub ring_cells: usize,
    pub fit_failures: usize,
    pub ill_conditioned: usize,
    /// Max jet error on `F` against the supplied truth.
    pub jet_error: Option<f64>,
    pub audit: Option<AuditStats>,
    pub whitney: Option<WhitneyCertificate>,
    pub lip: Option<LipCertificate>,
    pub selection_ok: bool,
    pub pass: bool,
    pub provenance: Vec<(String, String)>,
    pub f_mask: Vec<bool>,
}

impl LusinReport {
    /// Versioned structured text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "carnot-lusin-report {REPORT_VERSION}").unwrap();
        for (key, v) in &self.provenance {
            writeln!(w, "provenance {key} {v}").unwrap();
        }
        writeln!(w, "mode {}", self.mode.name()).unwrap();
        writeln!(w, "k {}", self.k).unwrap();
        writeln!(w, "eps_fraction {:?}", self.eps_fraction).unwrap();
        writeln!(w, "eps {:?}", self.eps).unwrap();
        writeln!(w, "d_measure {:?}", self.d_measure).unwrap();
        writeln!(w, "j0 {}", self.j0).unwrap();
        match self.achievable_eps {
            Some(a) => writeln!(w, "achievable_eps {a:?} fraction {:?}", a / self.d_measure).unwrap(),
            None => writeln!(w, "achievable_eps none").unwrap(),
        }
        writeln!(w, "coverage_deficit {:?}", self.coverage_deficit).unwrap();
        writeln!(w, "deficit {:?} fraction {:?}", self.deficit, self.deficit / self.d_measure).unwrap();
        writeln!(w, "f_cells {}", self.f_cells).unwrap();
        writeln!(w, "ring_cells {}", self.ring_cells).unwrap();
        writeln!(w, "fit_failures {}", self.fit_failures).unwrap();
        writeln!(w, "ill_conditioned {}", self.ill_conditioned).unwrap();
        match self.jet_error {
            Some(e) => writeln!(w, "jet_error {e:?}").unwrap(),
            None => writeln!(w, "jet_error none").unwrap(),
        }
        if let Some(a) = &self.audit {
            writeln!(w, "audit pairs {} observed {} small_s {} q_violations {} max_q_ratio {:?} remainder_violations {} rate {:?}", a.pairs, a.observed_pairs, a.small_s, a.q_violations, a.max_q_ratio, a.remainder_violations, a.violation_rate).unwrap();
            for v in &a.worst {
                writeln!(w, "violation {:?} {:?} {:?} {:?} {:?}", v.x, v.y, v.j.entries(), v.value, v.bound).unwrap();
            }
        }
        if let Some(c) = &self.whitney {
            writeln!(w, "whitney max_jet {:?} decreasing_finest {} pass {}", c.max_jet, c.decreasing_finest, c.pass).unwrap();
            for ((t, om), th) in c.modulus.iter().zip(&c.thresholds) {
                writeln!(w, "modulus {t:?} {om:?} threshold {th:?}").unwrap();
            }
            if let Some((x, y, r)) = &c.worst_pair {
                writeln!(w, "whitney_worst {x:?} {y:?} {r:?}").unwrap();
            }
        }
        if let Some(l) = &self.lip {
            writeln!(w, "lip m {:?} value_bound {:?} remainder_bound {:?} coefficient_error {:?}", l.m, l.value_bound, l.remainder_bound, l.coefficient_error).unwrap();
        }
        writeln!(w, "selection_ok {}", self.selection_ok).unwrap();
        writeln!(w, "pass {}", self.pass).unwrap();
        s
    }
}

/// Fits at every masked cell, in cell order.
pub fn fit_all(
    scanner: &Scanner,
    group: &Group,
    table: &BetaTable,
    f: &SampledFunction,
    cfg: &FitConfig,
) -> Vec<Option<ApproxJetFit>> {
    let grid = &f.grid;
    (0..grid.len())
        .into_par_iter()
        .map(|c| {
            if !f.mask[c] {
                return None;
            }
            let x0 = grid.center(c);
            let (scan, _) = scanner.scan(&x0, cfg.radius);
            fit_from_scan(group, table, f, &x0, &scan, cfg).ok()
        })
        .collect()
}

/// Fit, classify, select `F`, audit and certify. A coverage shortfall still
/// yields a report, built on the best attainable `j0` and marked failed.
pub fn run_pipeline(group: &Group, f: &SampledFunction, cfg: &LusinConfig, truth: Option<&Poly<Rational>>) -> Result<LusinReport, LusinError> {
    let grid = &f.grid;
    let (fit_order, poly_order) = match cfg.mode {
        Mode::Ck => (cfg.k + 1, cfg.k),
        Mode::Lip => (cfg.k, cfg.k.checked_sub(1).ok_or(ApproxError::Shape("lip mode needs k ≥ 1".into()))?),
    };
    let fit_table = BetaTable::new(group, fit_order)?;
    let poly_table = BetaTable::new(group, poly_order)?;
    let scanner = Scanner::new(group, grid, cfg.metric)?;
    let fit_cfg = FitConfig { refits: cfg.refits, ..FitConfig::new(cfg.fit_radius) };
    let fits = fit_all(&scanner, group, &fit_table, f, &fit_cfg);
    let fit_failures = fits.iter().zip(&f.mask).filter(|(p, m)| **m && p.is_none()).count();
    let ill_conditioned = fits.iter().flatten().filter(|p| p.ill_conditioned).count();
    let mode = match cfg.mode {
        Mode::Ck => ClassMode::Differentiability { delta: cfg.delta },
        Mode::Lip => ClassMode::Taylor,
    };
    let ccfg = ClassifyConfig { mode, k: cfg.k, j_min: cfg.j_min, j_max: cfg.j_max, r_floor: cfg.r_floor, tol: cfg.tol };
    let classes = classify(&scanner, &fit_table, &poly_table, f, &fits, &ccfg)?;
    // Boundary ring: masked cells without a well-conditioned fit.
    let ring: Vec<bool> = fits.iter().zip(&f.mask).map(|(p, m)| *m && p.as_ref().map_or(true, |p| p.ill_conditioned)).collect();
    let interior: Vec<bool> = f.mask.iter().zip(&ring).map(|(m, r)| *m && !*r).collect();
    let ring_cells = ring.iter().filter(|r| **r).count();
    let d_measure = f.masked_measure();
    let eps = cfg.eps_fraction * d_measure;
    let (sel, achievable) = match select_f(grid, &classes, &interior, &ring, eps) {
        Ok(s) => (s, None),
        Err(LusinError::CoverageShortfall { achievable, best }) => (*best, Some(achievable)),
        Err(e) => return Err(e),
    };
    let cells: Vec<usize> = (0..grid.len()).filter(|&c| sel.f_mask[c]).collect();
    let mut report = LusinReport {
        mode: cfg.mode,
        k: cfg.k,
        eps_fraction: cfg.eps_fraction,
        eps,
        d_measure,
        j0: sel.j0,
        achievable_eps: achievable,
        coverage_deficit: sel.coverage_deficit,
        deficit: sel.deficit,
        f_cells: cells.len(),
        ring_cells,
        fit_failures,
        ill_conditioned,
        jet_error: None,
        audit: None,
        whitney: None,
        lip: None,
        selection_ok: achievable.is_none(),
        pass: false,
        provenance: provenance(group, grid, cfg),
        f_mask: sel.f_mask.clone(),
    };
    if cells.is_empty() {
        return Ok(report);
    }
    let pos = sub_positions(&fit_table, &poly_table);
    let alphas: Vec<Vec<f64>> = cells.iter().map(|&c| pos.iter().map(|&p| fits[c].as_ref().unwrap().coeffs[p]).collect()).collect();
    let jets: Vec<Vec<f64>> = cells.iter().map(|&c| pos.iter().map(|&p| fits[c].as_ref().unwrap().jets[p]).collect()).collect();
    if let Some(u) = truth {
        report.jet_error = Some(truth_jet_error(group, &poly_table, u, grid, &cells, &jets)?);
    }
    let pairs = sample_pairs(&scanner, &cells, &cfg.scales, &cfg.pairs);
    let threshold = match cfg.mode {
        Mode::Ck => cfg.delta,
        Mode::Lip => sel.j0 as f64,
    };
    let acfg = AuditConfig { mode: cfg.mode, k: cfg.k, threshold, j0: sel.j0, c_emp: cfg.c_emp, r_floor: cfg.r_floor, tol: cfg.tol, max_listed: 10 };
    report.audit = Some(pairwise_remainder_audit(&scanner, group, &poly_table, f, &cells, &alphas, &jets, &pairs, &acfg)?);
    let (set, re, used) = pair_jets(grid, &cells, &jets, &poly_table, &pairs)?;
    match cfg.mode {
        Mode::Ck => {
            let th = vec![cfg.whitney_threshold; cfg.scales.len()];
            let cert = whitney_certificate(group, &poly_table, &set, &re, &cfg.scales, &th, cfg.metric)?;
            report.pass = report.selection_ok && cert.pass && cert.decreasing_finest;
            report.whitney = Some(cert);
        }
        Mode::Lip => {
            let coeffs: Vec<Vec<f64>> = used.iter().map(|&p| alphas[p].clone()).collect();
            let cert = lip_certificate(group, &poly_table, &set, &coeffs, cfg.k, &re, cfg.metric)?;
            report.pass = report.selection_ok && cert.m.is_finite();
            report.lip = Some(cert);
        }
    }
    Ok(report)
}

/// Max over `F` of `|f_J − X^J u|` for a polynomial truth `u`.
pub fn truth_jet_error(
    group: &Group,
    table: &BetaTable,
    u: &Poly<Rational>,
    grid: &SampleGrid,
    cells: &[usize],
    jets: &[Vec<f64>],
) -> Result<f64, LusinError> {
    let deg = u.hom_degree().unwrap_or(0).max(table.order());
    let big = BetaTable::new(group, deg)?;
    let alpha0 = big.alpha_f64(&jet_of_f64(group, &big, u, &vec![0.0; group.dim()]));
    let pos = sub_positions(&big, table);
    Ok(cells
        .par_iter()
        .zip(jets)
        .map(|(&c, v)| {
            let d = big.local_derivatives_f64(&alpha0, &grid.center(c));
            pos.iter().zip(v).fold(0.0f64, |m, (&p, a)| m.max((d[p] - a).abs()))
        })
        .reduce(|| 0.0, f64::max))
}

fn provenance(group: &Group, grid: &SampleGrid, cfg: &LusinConfig) -> Vec<(String, String)> {
    let p = |k: &str, v: String| (k.to_string(), v);
    vec![
        p("group", group.name().to_string()),
        p("grid_lo", format!("{:?}", grid.lo)),
        p("grid_hi", format!("{:?}", grid.hi)),
        p("grid_res", format!("{:?}", grid.res)),
        p("metric", format!("{:?}", cfg.metric)),
        p("seed", cfg.seed.to_string()),
        p("delta", format!("{:?}", cfg.delta)),
        p("fit_radius", format!("{:?}", cfg.fit_radius)),
        p("refits", cfg.refits.to_string()),
        p("j_range", format!("{} {}", cfg.j_min, cfg.j_max)),
        p("r_floor", format!("{:?}", cfg.r_floor)),
        p("tol", format!("{:?}", cfg.tol)),
        p("pairs", format!("{} {} {} {}", cfg.pairs.full_sweep_below, cfg.pairs.per_scale, cfg.pairs.global, cfg.pairs.seed)),
        p("scales", format!("{:?}", cfg.scales)),
        p("whitney_threshold", format!("{:?}", cfg.whitney_threshold)),
        p("c_emp", format!("{:?}", cfg.c_emp)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;

    fn h_grid(res: usize) -> SampleGrid {
        SampleGrid::new(vec![-1.0, -1.0, -0.25], vec![1.0, 1.0, 0.25], vec![res, res, res]).unwrap()
    }

    fn poly_h(c: &[(u32, u32, u32, i64)]) -> Poly<Rational> {
        let g = Group::heisenberg();
        Poly::from_terms(g.weights(), c.iter().map(|&(a, b, t, v)| (MultiIndex::new(vec![a, b, t]), rat(v, 4))))
    }

    fn quadratic() -> Poly<Rational> {
        poly_h(&[(0, 0, 0, 2), (1, 0, 0, 1), (0, 1, 0, -1), (2, 0, 0, 1), (1, 1, 0, 2), (0, 2, 0, -1), (0, 0, 1, 3)])
    }

    #[test]
    fn selection_on_full_classes() {
        let grid = SampleGrid::cube(2, 1.0, 10);
        let all = vec![true; grid.len()];
        let none0 = vec![false; grid.len()];
        let cl = Classification { js: vec![1, 2], a: vec![all.clone(); 2], b: vec![all.clone(); 2], c: vec![all.clone(); 2] };
        let sel = select_f(&grid, &cl, &all, &none0, 1e-9).unwrap();
        assert_eq!((sel.j0, sel.deficit), (1, 0.0));
        // Punch a 2×2 hole in C_1 only.
        let mut c1 = all.clone();
        for m in [[4, 4], [4, 5], [5, 4], [5, 5]] {
            c1[grid.index(&m)] = false;
        }
        let cl = Classification { js: vec![1, 2], a: vec![c1.clone(), all.clone()], b: vec![all.clone(); 2], c: vec![c1, all.clone()] };
        let v = grid.cell_volume();
        let sel = select_f(&grid, &cl, &all, &none0, 100.0 * v).unwrap();
        assert_eq!(sel.j0, 1);
        // Hole plus its 8 face neighbours.
        assert!((sel.deficit - 12.0 * v).abs() < 1e-12);
        assert_eq!(select_f(&grid, &cl, &all, &none0, 4.0 * v).unwrap().j0, 2);
        let none = vec![false; grid.len()];
        let cl = Classification { js: vec![1], a: vec![none.clone()], b: vec![none.clone()], c: vec![none] };
        match select_f(&grid, &cl, &all, &none0, 0.5) {
            Err(LusinError::CoverageShortfall { achievable, .. }) => assert!((achievable - 2.0 * 4.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    fn run(f: &SampledFunction, mode: Mode, eps: f64, truth: Option<&Poly<Rational>>) -> LusinReport {
        let g = Group::heisenberg();
        let mut cfg = LusinConfig::new(mode, 2, eps, 7);
        cfg.fit_radius = 0.45;
        cfg.r_floor = 0.45;
        cfg.j_min = 2;
        cfg.j_max = 6;
        cfg.scales = vec![0.3, 0.4, 0.5, 0.6];
        cfg.pairs = PairPlan { full_sweep_below: 10, per_scale: 150, global: 150, seed: 7 };
        run_pipeline(&g, f, &cfg, truth).unwrap()
    }

    #[test]
    fn polynomial_data_passes() {
        let p = quadratic();
        let pf = p.to_f64();
        let f = SampledFunction::from_fn(h_grid(16), |x| pf.eval_f64(x));
        let rep = run(&f, Mode::Ck, 1e-6, Some(&p));
        assert!(rep.selection_ok, "{}", rep.to_text());
        assert_eq!(rep.deficit, 0.0);
        assert!(rep.jet_error.unwrap() < 1e-8);
        let w = rep.whitney.as_ref().unwrap();
        assert!(w.modulus.iter().all(|m| m.1 < 1e-8));
        assert!(w.decreasing_finest && rep.pass);
        let a = rep.audit.as_ref().unwrap();
        assert_eq!((a.remainder_violations, a.q_violations), (0, 0));
        assert!(a.max_q_ratio < 1e-6);
        // Replay is byte-identical.
        assert_eq!(rep.to_text(), run(&f, Mode::Ck, 1e-6, Some(&p)).to_text());
        let lip = run(&f, Mode::Lip, 1e-6, None);
        assert!(lip.pass && lip.lip.as_ref().unwrap().m.is_finite());
        assert!(lip.lip.as_ref().unwrap().coefficient_error < 1e-9);
    }

    #[test]
    fn cubic_modulus_decays() {
        // A cubic perturbation gives ω(t) ∝ t.
        let p = quadratic().add(&poly_h(&[(3, 0, 0, 1), (1, 0, 1, -1)]));
        let pf = p.to_f64();
        let f = SampledFunction::from_fn(h_grid(16), |x| pf.eval_f64(x));
        let rep = run(&f, Mode::Ck, 0.5, Some(&p));
        let w = rep.whitney.as_ref().unwrap();
        assert!(w.decreasing_finest, "{:?}", w.modulus);
        assert!(rep.jet_error.unwrap() < 1e-8);
    }

    #[test]
    fn corrupted_jet_is_localized() {
        let g = Group::heisenberg();
        let table = BetaTable::new(&g, 2).unwrap();
        let p = quadratic();
        let grid = h_grid(8);
        let cells: Vec<usize> = (0..grid.len()).step_by(5).collect();
        let mut jets: Vec<Vec<f64>> = cells.iter().map(|&c| jet_of_f64(&g, &table, &p, &grid.center(c))).collect();
        jets[17][0] += 0.5;
        let alphas: Vec<Vec<f64>> = jets.iter().map(|v| table.alpha_f64(v)).collect();
        let f = SampledFunction::from_fn(grid.clone(), |x| p.to_f64().eval_f64(x));
        let sc = Scanner::new(&g, &grid, Metric::Quasi).unwrap();
        let pairs = sample_pairs(&sc, &cells, &[0.5], &PairPlan::new(1));
        let cfg = AuditConfig { mode: Mode::Ck, k: 2, threshold: 0.1, j0: 1, c_emp: 10.0, r_floor: 0.6, tol: 1e-9, max_listed: 20 };
        let stats = pairwise_remainder_audit(&sc, &g, &table, &f, &cells, &alphas, &jets, &pairs, &cfg).unwrap();
        let bad = grid.center(cells[17]);
        assert!(!stats.worst.is_empty());
        assert!(stats.worst.iter().all(|v| v.x == bad || v.y == bad));
        let (set, re, _) = pair_jets(&grid, &cells, &jets, &table, &pairs).unwrap();
        let cert = whitney_certificate(&g, &table, &set, &re, &[0.5, 1.0], &[1.0, 1.0], Metric::Quasi).unwrap();
        assert!(!cert.pass);
        let (x, y, _) = cert.worst_pair.unwrap();
        assert!(x == bad || y == bad);
    }

    #[test]
    fn whitney_one_dimensional_power() {
        // f = x³ with exact 2-jets: ω(t) = sup |R_J| / d^{2 − j} = t on pairs up to t.
        let g = Group::abelian(1);
        let table = BetaTable::new(&g, 2).unwrap();
        let pts: Vec<Vec<f64>> = (0..41).map(|i| vec![i as f64 / 40.0]).collect();
        let vals: Vec<Vec<f64>> = pts.iter().map(|x| vec![x[0].powi(3), 3.0 * x[0].powi(2), 6.0 * x[0]]).collect();
        let set = JetSet::new(&table, pts, vals).unwrap();
        let pairs: Vec<(usize, usize)> = (0..41).flat_map(|a| (0..41).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        let ts = [0.1, 0.2, 0.4];
        let cert = whitney_certificate(&g, &table, &set, &pairs, &ts, &[1.0; 3], Metric::Quasi).unwrap();
        // Oracle: R_1 = 3(y² − x²) − 6x(y − x) = 3 h², ratio 3h; R_0 = h³ + 3x h² ≤ (1 + 3) h² ⇒ ratio ≤ h + 3x.
        // Independent maximisation over the 1-D grid.
        for (t, w) in &cert.modulus {
            let mut best = 0.0f64;
            for a in 0..41 {
                for b in 0..41 {
                    let (x, y) = (a as f64 / 40.0, b as f64 / 40.0);
                    let h = (y - x).abs();
                    if a == b || h > *t + 1e-12 {
                        continue;
                    }
                    let r0 = (y.powi(3) - (x.powi(3) + 3.0 * x * x * (y - x) + 3.0 * x * (y - x).powi(2))).abs() / (h * h);
                    let r1 = (3.0 * y * y - (3.0 * x * x + 6.0 * x * (y - x))).abs() / h;
                    let r2 = (6.0 * y - 6.0 * x).abs();
                    best = best.max(r0).max(r1).max(r2);
                }
            }
            assert!((w - best).abs() < 1e-9 * best.max(1.0), "{t} {w} {best}");
        }
        assert!(cert.decreasing_finest);
    }

    #[test]
    fn lip_constant_grows_with_box() {
        let g = Group::abelian(1);
        let table = BetaTable::new(&g, 1).unwrap();
        let mut ms = Vec::new();
        for half in [1.0, 4.0, 16.0] {
            let pts: Vec<Vec<f64>> = (0..33).map(|i| vec![-half + 2.0 * half * i as f64 / 32.0]).collect();
            let vals: Vec<Vec<f64>> = pts.iter().map(|x| vec![x[0] * x[0], 2.0 * x[0]]).collect();
            let coeffs: Vec<Vec<f64>> = vals.clone();
            let set = JetSet::new(&table, pts, vals).unwrap();
            let pairs: Vec<(usize, usize)> = (0..33).flat_map(|a| (0..33).filter(move |&b| b != a).map(move |b| (a, b))).collect();
            ms.push(lip_certificate(&g, &table, &set, &coeffs, 2, &pairs, Metric::Quasi).unwrap().m);
        }
        assert!(ms[0] < ms[1] && ms[1] < ms[2], "{ms:?}");
        // max |f| = half² dominates.
        assert!((ms[2] - 256.0).abs() < 1e-9);
    }

    #[test]
    fn converse_examples() {
        let g = Group::heisenberg();
        let grid = h_grid(24);
        let sc = Scanner::new(&g, &grid, Metric::Quasi).unwrap();
        let full = vec![true; grid.len()];
        let x0s = vec![grid.center(grid.index(&[12, 12, 12])), grid.center(grid.index(&[9, 14, 11]))];
        let radii = [0.5, 0.4, 0.3];
        let v = converse_probe(&sc, &g, &quadratic(), &full, &x0s, 2, Mode::Ck, &radii, 0.01).unwrap();
        assert!(v.iter().all(|c| c.holds && c.ratios.iter().all(|r| r.1 < 1e-9)));
        let cube = poly_h(&[(3, 0, 0, 4)]);
        let v = converse_probe(&sc, &g, &cube, &full, &x0s[..1], 2, Mode::Ck, &radii, 0.01).unwrap();
        assert!(v[0].holds && v[0].ratios[2].1 < v[0].ratios[0].1, "{:?}", v[0].ratios);
        let sq = poly_h(&[(2, 0, 0, 4)]);
        let v = converse_probe(&sc, &g, &sq, &full, &x0s[..1], 2, Mode::Lip, &radii, 0.01).unwrap();
        assert!(v[0].holds && v[0].ratios.iter().all(|r| r.1 > 0.0), "{:?}", v[0].ratios);
    }
}
