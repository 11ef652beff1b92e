//! Distances on a Carnot group: the homogeneous quasi-distance, the exact
//! CC distance where a closed form is known, horizontal-path upper bounds,
//! Monte-Carlo ball volumes and empirical equivalence constants.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{Group, GroupError, GroupKind};
use crate::scalar::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    /// `‖p⁻¹q‖` with the layer-sum homogeneous norm.
    Quasi,
    /// Exact CC distance: Euclidean for step 1, closed form on the Heisenberg group.
    CcOracle,
}

impl FromStr for Metric {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quasi" => Ok(Metric::Quasi),
            "cc-oracle" | "cc" => Ok(Metric::CcOracle),
            other => Err(GroupError::MetricUnsupported(other.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Quasi => "quasi",
            Metric::CcOracle => "cc-oracle",
        })
    }
}

/// CC distance from the origin on the Heisenberg group with `Q_3 = (x1 y2 − x2 y1)/2`.
///
/// Geodesics project to circular arcs; the third coordinate is the area
/// between the arc and its chord. With `φ` the arc angle and `r` the chord,
/// `|t| / r² = (φ − sin φ) / (8 sin²(φ/2))`.
pub fn heisenberg_cc_norm(p: &[f64]) -> f64 {
    let r = p[0].hypot(p[1]);
    let t = p[2].abs();
    if t == 0.0 {
        return r;
    }
    if r == 0.0 {
        return 2.0 * (PI * t).sqrt();
    }
    let target = t / (r * r);
    let mu = |phi: f64| {
        let s = (phi / 2.0).sin();
        (phi - phi.sin()) / (8.0 * s * s)
    };
    let dmu = |phi: f64| {
        let s2 = (phi / 2.0).sin().powi(2);
        let num = phi - phi.sin();
        let d = 8.0 * s2;
        (2.0 * s2 * d - num * 4.0 * phi.sin()) / (d * d)
    };
    let (mut lo, mut hi) = (0.0f64, 2.0 * PI);
    let mut phi = if target < 0.05 {
        12.0 * target
    } else {
        (2.0 * PI - (PI / target).sqrt()).clamp(0.1, 2.0 * PI - 1e-12)
    };
    for _ in 0..100 {
        let f = mu(phi) - target;
        if f > 0.0 {
            hi = phi;
        } else {
            lo = phi;
        }
        let step = f / dmu(phi);
        let mut next = phi - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - phi).abs() <= 1e-15 * phi.max(1e-300) {
            phi = next;
            break;
        }
        phi = next;
    }
    if phi < 1.0 {
        r * phi / (2.0 * (phi / 2.0).sin())
    } else {
        phi * (2.0 * t / (phi - phi.sin())).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcEstimate {
    pub lower: f64,
    pub upper: f64,
    /// Whether `lower` rests on a certified equivalence constant.
    pub lower_certified: bool,
    /// Set when no candidate path met the endpoint constraint; `upper` is then infinite.
    pub warning: Option<GroupError>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    /// `inf d(x,y) / |x − y|`.
    pub c1: f64,
    /// `sup d(x,y) / |x − y|^{1/s}`.
    pub c2: f64,
    /// `sup max(d/‖·‖, ‖·‖/d)` over the sampled increments.
    pub c: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 1 << 16;

impl Group {
    pub fn supports(&self, metric: Metric) -> bool {
        match metric {
            Metric::Quasi => true,
            Metric::CcOracle => matches!(self.kind(), GroupKind::Abelian | GroupKind::Heisenberg),
        }
    }

    pub fn require(&self, metric: Metric) -> Result<(), GroupError> {
        if self.supports(metric) {
            Ok(())
        } else {
            Err(GroupError::MetricUnsupported(format!("{metric} on {}", self.name())))
        }
    }

    /// `d(0, z)`; callers check [`Group::supports`] first.
    pub fn norm_with(&self, metric: Metric, z: &[f64]) -> f64 {
        match (metric, self.kind()) {
            (Metric::Quasi, _) => self.hom_norm(z),
            (Metric::CcOracle, GroupKind::Abelian) => z.iter().map(|v| v * v).sum::<f64>().sqrt(),
            (Metric::CcOracle, GroupKind::Heisenberg) => heisenberg_cc_norm(z),
            (Metric::CcOracle, GroupKind::General) => f64::NAN,
        }
    }

    pub fn norm(&self, metric: Metric, z: &[f64]) -> Result<f64, GroupError> {
        self.require(metric)?;
        Ok(self.norm_with(metric, z))
    }

    pub fn distance_with(&self, metric: Metric, p: &[f64], q: &[f64]) -> f64 {
        self.norm_with(metric, &self.relative(p, q))
    }

    pub fn distance(&self, metric: Metric, p: &[f64], q: &[f64]) -> Result<f64, GroupError> {
        self.require(metric)?;
        Ok(self.distance_with(metric, p, q))
    }

    /// `δ_{1/d(z)} z`, or `None` at the origin.
    pub fn normalize_to_sphere(&self, z: &[f64], metric: Metric) -> Option<Vec<f64>> {
        let d = self.norm_with(metric, z);
        if d > 0.0 && d.is_finite() {
            Some(self.dilate_f64(1.0 / d, z))
        } else {
            None
        }
    }

    /// Half-widths of a coordinate box containing `B(0, 1)`.
    pub fn unit_ball_box(&self, metric: Metric) -> Vec<f64> {
        let mut b = vec![1.0; self.dim()];
        if metric == Metric::CcOracle && self.kind() == GroupKind::Heisenberg {
            // Semicircle of unit length closed by its chord.
            b[2] = 1.0 / (2.0 * PI);
        }
        b
    }

    /// `V = L^N(B(0, 1))`: closed form in step 1, Monte Carlo otherwise.
    pub fn unit_ball_volume(&self, metric: Metric, samples: usize, seed: u64) -> Result<VolumeEstimate, GroupError> {
        self.ball_volume(metric, 1.0, samples, seed)
    }

    /// `L^N(B(0, r))` by the same estimator, sampling in the dilated box.
    pub fn ball_volume(&self, metric: Metric, r: f64, samples: usize, seed: u64) -> Result<VolumeEstimate, GroupError> {
        self.require(metric)?;
        let q = self.hom_dim() as i32;
        if self.step() == 1 {
            return Ok(VolumeEstimate {
                value: euclidean_ball_volume(self.dim()) * r.powi(q),
                std_err: 0.0,
                samples: 0,
                exact: true,
            });
        }
        let half: Vec<f64> = self
            .unit_ball_box(metric)
            .iter()
            .zip(self.spec().degrees().iter())
            .map(|(h, &d)| h * r.powi(d as i32))
            .collect();
        let box_vol: f64 = half.iter().map(|h| 2.0 * h).product();
        let nchunks = samples.div_ceil(MC_CHUNK);
        let hits: usize = (0..nchunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = rng_for(seed, c as u64);
                let m = MC_CHUNK.min(samples - c * MC_CHUNK);
                let mut z = vec![0.0; half.len()];
                let mut k = 0;
                for _ in 0..m {
                    for (zi, h) in z.iter_mut().zip(&half) {
                        *zi = rng.gen_range(-*h..*h);
                    }
                    if self.norm_with(metric, &z) < r {
                        k += 1;
                    }
                }
                k
            })
            .sum();
        let p = hits as f64 / samples as f64;
        Ok(VolumeEstimate {
            value: box_vol * p,
            std_err: box_vol * (p * (1.0 - p) / samples as f64).sqrt(),
            samples,
            exact: false,
        })
    }

    /// Constant `c_est` with `‖x‖ ≤ c_est · d_cc(x)`; certified for step 1 and
    /// the Heisenberg group, calibrated from path upper bounds otherwise.
    pub fn quasi_over_cc_constant(&self) -> (f64, bool) {
        match self.kind() {
            GroupKind::Abelian => (1.0, true),
            GroupKind::Heisenberg => {
                // Rotational symmetry reduces the quasi-sphere to (a, 0, (1−a)²).
                let f = |a: f64| heisenberg_cc_norm(&[a, 0.0, (1.0 - a) * (1.0 - a)]);
                let n = 20_000;
                let (mut best_a, mut best) = (0.0, f64::INFINITY);
                for i in 0..=n {
                    let a = i as f64 / n as f64;
                    let v = f(a);
                    if v < best {
                        best = v;
                        best_a = a;
                    }
                }
                let (mut lo, mut hi) = ((best_a - 1.0 / n as f64).max(0.0), (best_a + 1.0 / n as f64).min(1.0));
                for _ in 0..200 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if f(m1) < f(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                let min_cc = f(0.5 * (lo + hi)).min(best);
                (1.0 / min_cc * (1.0 + 1e-9), true)
            }
            GroupKind::General => {
                let mut rng = rng_for(0x5EED, 0);
                let mut c: f64 = 0.0;
                for _ in 0..48 {
                    let z: Vec<f64> = (0..self.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    if let Some(s) = self.normalize_to_sphere(&z, Metric::Quasi) {
                        let up = self.horizontal_path_upper(&s, 12).0;
                        if up.is_finite() && up > 0.0 {
                            c = c.max(1.0 / up);
                        }
                    }
                }
                (c.max(1.0), false)
            }
        }
    }

    /// Bounds on `d_cc(p, q)`: an optimised piecewise-horizontal path gives
    /// the upper bound; `quasi / c_est` and the horizontal projection give the lower.
    pub fn cc_distance_estimate(&self, p: &[f64], q: &[f64], resolution: usize) -> Result<CcEstimate, GroupError> {
        if resolution < 2 {
            return Err(GroupError::InvalidSpec("resolution must be at least 2".into()));
        }
        if p.len() != self.dim() || q.len() != self.dim() {
            return Err(GroupError::DimensionMismatch { expected: self.dim(), got: p.len().min(q.len()) });
        }
        let tau = self.relative(p, q);
        if tau.iter().all(|v| *v == 0.0) {
            return Ok(CcEstimate { lower: 0.0, upper: 0.0, lower_certified: true, warning: None });
        }
        let (upper, residual) = self.horizontal_path_upper(&tau, resolution);
        let (c_est, certified) = self.quasi_over_cc_constant();
        let horiz = self.layer_norms(&tau)[0];
        let lower = (self.hom_norm(&tau) / c_est).max(horiz).min(upper);
        let warning = if upper.is_finite() { None } else { Some(GroupError::OptimizationDidNotConverge { residual }) };
        Ok(CcEstimate { lower, upper, lower_certified: certified, warning })
    }

    /// Shortest feasible piecewise-constant horizontal path found from `0` to `tau`;
    /// returns `(length, best constraint residual)`, length infinite if none was feasible.
    fn horizontal_path_upper(&self, tau: &[f64], n: usize) -> (f64, f64) {
        let m1 = self.spec().layer_dims()[0];
        let dim = self.dim();
        let scale = self.hom_norm(tau).max(1e-300);
        let tol = 1e-11 * (1.0 + tau.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut inits: Vec<Vec<f64>> = Vec::new();
        let straight: Vec<f64> = (0..n).flat_map(|_| (0..m1).map(|i| tau[i] / n as f64)).collect();
        inits.push(straight.clone());
        if dim > m1 && m1 >= 2 {
            for (a, b) in [(0usize, 1usize), (1, 0)] {
                for rho in [0.3, 1.0] {
                    let mut w = straight.clone();
                    for k in 0..n {
                        let th = 2.0 * PI * k as f64 / n as f64;
                        let len = rho * scale * 2.0 * PI / n as f64;
                        w[k * m1 + a] += len * th.cos();
                        w[k * m1 + b] += len * th.sin();
                    }
                    inits.push(w);
                }
            }
        }
        let mut best = f64::INFINITY;
        let mut best_res = f64::INFINITY;
        for w0 in inits {
            let (w, res) = self.project_path(&w0, tau, m1, tol);
            best_res = best_res.min(res);
            if res > tol {
                continue;
            }
            let w = self.descend_path(w, tau, m1, tol);
            best = best.min(path_length(&w, m1));
        }
        (best, best_res)
    }

    fn path_endpoint(&self, w: &[f64], m1: usize) -> Vec<f64> {
        let dim = self.dim();
        let mut p = vec![0.0; dim];
        let mut seg = vec![0.0; dim];
        for chunk in w.chunks(m1) {
            seg[..m1].copy_from_slice(chunk);
            p = self.multiply(&p, &seg);
        }
        p
    }

    fn path_jacobian(&self, w: &[f64], m1: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let mut jac = DMatrix::zeros(dim, w.len());
        let mut wp = w.to_vec();
        for k in 0..w.len() {
            let h = 1e-6 * (1.0 + w[k].abs());
            wp[k] = w[k] + h;
            let fp = self.path_endpoint(&wp, m1);
            wp[k] = w[k] - h;
            let fm = self.path_endpoint(&wp, m1);
            wp[k] = w[k];
            for i in 0..dim {
                jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Minimum-norm Newton projection onto `endpoint(w) = tau`.
    fn project_path(&self, w0: &[f64], tau: &[f64], m1: usize, tol: f64) -> (Vec<f64>, f64) {
        let mut w = w0.to_vec();
        let mut res = f64::INFINITY;
        for _ in 0..60 {
            let e = self.path_endpoint(&w, m1);
            let f = DVector::from_iterator(e.len(), e.iter().zip(tau).map(|(a, b)| a - b));
            res = f.amax();
            if res <= tol {
                break;
            }
            let jac = self.path_jacobian(&w, m1);
            let svd = jac.svd(true, true);
            let Ok(step) = svd.solve(&f, 1e-12) else { break };
            for (wi, s) in w.iter_mut().zip(step.iter()) {
                *wi -= s;
            }
        }
        (w, res)
    }

    /// Projected gradient descent on the smoothed length, staying on the constraint.
    fn descend_path(&self, mut w: Vec<f64>, tau: &[f64], m1: usize, tol: f64) -> Vec<f64> {
        let mut len = path_length(&w, m1);
        let mut alpha = 0.05 * len.max(1e-12);
        for _ in 0..400 {
            let eta = 1e-9 * len.max(1e-300);
            let mut g = DVector::zeros(w.len());
            for (k, chunk) in w.chunks(m1).enumerate() {
                let nrm = (chunk.iter().map(|v| v * v).sum::<f64>() + eta * eta).sqrt();
                for (i, v) in chunk.iter().enumerate() {
                    g[k * m1 + i] = v / nrm;
                }
            }
            let jac = self.path_jacobian(&w, m1);
            let jg = &jac * &g;
            let svd = jac.svd(true, true);
            let Ok(corr) = svd.solve(&jg, 1e-12) else { break };
            let gt = g - corr;
            if gt.amax() < 1e-12 {
                break;
            }
            let mut accepted = false;
            while alpha > 1e-14 * len.max(1e-300) {
                let trial: Vec<f64> = w.iter().zip(gt.iter()).map(|(a, b)| a - alpha * b).collect();
                let (proj, res) = self.project_path(&trial, tau, m1, tol);
                let l2 = path_length(&proj, m1);
                if res <= tol && l2 < len - 1e-15 * len {
                    w = proj;
                    len = l2;
                    alpha *= 1.5;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        w
    }

    /// Empirical constants from random pairs in the box `[lo, hi]`.
    pub fn equivalence_constants(
        &self,
        lo: &[f64],
        hi: &[f64],
        samples: usize,
        seed: u64,
        metric: Metric,
    ) -> Result<EquivalenceReport, GroupError> {
        self.require(metric)?;
        if lo.len() != self.dim() || hi.len() != self.dim() {
            return Err(GroupError::DimensionMismatch { expected: self.dim(), got: lo.len() });
        }
        if lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(GroupError::InvalidSpec("box must be nondegenerate".into()));
        }
        let mut rng = rng_for(seed, 0);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..samples)
            .map(|_| {
                let x: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
                let y: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
                (x, y)
            })
            .collect();
        Ok(self.equivalence_constants_from_pairs(&pairs, metric))
    }

    pub fn equivalence_constants_from_pairs(&self, pairs: &[(Vec<f64>, Vec<f64>)], metric: Metric) -> EquivalenceReport {
        let s = self.step() as f64;
        let mut c1 = f64::INFINITY;
        let mut c2: f64 = 0.0;
        let mut c: f64 = 1.0;
        let mut used = 0;
        for (x, y) in pairs {
            let e: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if e == 0.0 {
                continue;
            }
            used += 1;
            let z = self.relative(x, y);
            let d = self.norm_with(metric, &z);
            c1 = c1.min(d / e);
            c2 = c2.max(d / e.powf(1.0 / s));
            let hn = self.hom_norm(&z);
            if metric != Metric::Quasi {
                c = c.max(d / hn).max(hn / d);
            }
        }
        EquivalenceReport { c1, c2, c, samples: used }
    }
}

fn path_length(w: &[f64], m1: usize) -> f64 {
    w.chunks(m1).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum()
}

/// `π^{N/2} / Γ(N/2 + 1)`.
pub fn euclidean_ball_volume(n: usize) -> f64 {
    let mut v = [1.0, 2.0].to_vec();
    for k in 2..=n {
        let next = v[k - 2] * 2.0 * PI / k as f64;
        v.push(next);
    }
    v[n]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle: trace circular arcs as polygons through the numeric group law and
    /// scan the arc angle until the endpoint height matches.
    fn arc_oracle(g: &Group, a: f64, t: f64) -> f64 {
        let segs = 4000;
        let endpoint = |phi: f64| -> (Vec<f64>, f64) {
            // Arc from 0 to (a, 0) bulging to one side, total turning phi.
            let rho = if phi == 0.0 { f64::INFINITY } else { a / (2.0 * (phi / 2.0).sin()) };
            let mut p = vec![0.0, 0.0, 0.0];
            let mut len = 0.0;
            for k in 0..segs {
                let th0 = -phi / 2.0 + phi * k as f64 / segs as f64;
                let th1 = -phi / 2.0 + phi * (k + 1) as f64 / segs as f64;
                let (dx, dy) = if rho.is_infinite() {
                    (a / segs as f64, 0.0)
                } else {
                    (rho * (th1.sin() - th0.sin()), -rho * (th1.cos() - th0.cos()))
                };
                len += dx.hypot(dy);
                p = g.multiply(&p, &[dx, dy, 0.0]);
            }
            (p, len)
        };
        let (mut lo, mut hi) = (1e-9, 2.0 * PI - 1e-9);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if endpoint(mid).0[2].abs() < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        endpoint(0.5 * (lo + hi)).1
    }

    #[test]
    fn heisenberg_vertical_distance() {
        assert!((heisenberg_cc_norm(&[0.0, 0.0, 1.0]) - 2.0 * PI.sqrt()).abs() < 1e-12);
        // The full-circle limit from the arc family.
        let g = Group::heisenberg();
        let full = {
            let rho = (1.0 / PI).sqrt();
            let segs = 20_000;
            let mut p = vec![0.0; 3];
            let mut len = 0.0;
            for k in 0..segs {
                let t0 = 2.0 * PI * k as f64 / segs as f64;
                let t1 = 2.0 * PI * (k + 1) as f64 / segs as f64;
                let d = [rho * (t1.cos() - t0.cos()), rho * (t1.sin() - t0.sin()), 0.0];
                len += d[0].hypot(d[1]);
                p = g.multiply(&p, &d);
            }
            assert!((p[2] - 1.0).abs() < 1e-6);
            len
        };
        assert!((full - 2.0 * PI.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn heisenberg_closed_form_matches_arc_oracle() {
        let g = Group::heisenberg();
        for (a, t) in [(1.0, 0.05), (0.7, 0.3), (0.2, 0.9), (1.5, 1e-3)] {
            let exact = heisenberg_cc_norm(&[a, 0.0, t]);
            let oracle = arc_oracle(&g, a, t);
            assert!((exact - oracle).abs() < 1e-5 * exact, "{a} {t}: {exact} vs {oracle}");
            let rotated = heisenberg_cc_norm(&[a * 0.6, a * 0.8, -t]);
            assert!((exact - rotated).abs() < 1e-12 * exact);
        }
    }

    #[test]
    fn abelian_estimate_is_exact() {
        let g = Group::abelian(3);
        let e = g.cc_distance_estimate(&[0.5, -1.0, 2.0], &[1.5, 1.0, 0.0], 4).unwrap();
        let exact = 3.0;
        assert!((e.lower - exact).abs() < 1e-9 && (e.upper - exact).abs() < 1e-9, "{e:?}");
        let z = g.cc_distance_estimate(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!((z.lower, z.upper), (0.0, 0.0));
    }

    #[test]
    fn heisenberg_estimate_brackets_true_distance() {
        let g = Group::heisenberg();
        let truth = 2.0 * PI.sqrt();
        let e = g.cc_distance_estimate(&[0.0; 3], &[0.0, 0.0, 1.0], 24).unwrap();
        assert!(e.warning.is_none());
        assert!(e.lower <= truth && truth <= e.upper, "{e:?}");
        assert!(e.upper < truth * 1.02, "{e:?}");
        let p = [0.3, -0.2, 0.1];
        let q = [0.9, 0.4, -0.3];
        let truth = g.distance(Metric::CcOracle, &p, &q).unwrap();
        let e = g.cc_distance_estimate(&p, &q, 16).unwrap();
        assert!(e.lower <= truth + 1e-12 && truth <= e.upper + 1e-9, "{e:?} vs {truth}");
        assert!(g.cc_distance_estimate(&p, &q, 1).is_err());
    }

    #[test]
    fn engel_estimate_is_finite() {
        let g = Group::engel();
        let e = g.cc_distance_estimate(&[0.0; 4], &[0.2, 0.1, 0.05, 0.02], 10).unwrap();
        assert!(e.upper.is_finite() && e.lower <= e.upper);
        assert!(!e.lower_certified);
    }

    #[test]
    fn closed_form_volumes() {
        let r1 = Group::abelian(1).unit_ball_volume(Metric::Quasi, 0, 0).unwrap();
        assert_eq!(r1.value, 2.0);
        let r2 = Group::abelian(2).unit_ball_volume(Metric::Quasi, 0, 0).unwrap();
        assert!((r2.value - PI).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_volume_scales_with_q() {
        let g = Group::heisenberg();
        let v = g.unit_ball_volume(Metric::Quasi, 400_000, 11).unwrap();
        // The quasi ball is {|x'| + |x3|^{1/2} ≤ 1}, of volume π/3.
        assert!((v.value - PI / 3.0).abs() < 4.0 * v.std_err);
        for (i, r) in [0.5f64, 2.0].into_iter().enumerate() {
            let b = g.ball_volume(Metric::Quasi, r, 400_000, 20 + i as u64).unwrap();
            let ratio = b.value / r.powi(4);
            let se = (b.std_err / r.powi(4)).hypot(v.std_err);
            assert!((ratio - v.value).abs() < 3.0 * se, "r={r}: {ratio} vs {}", v.value);
        }
    }

    #[test]
    fn cc_unsupported_on_engel() {
        let g = Group::engel();
        assert!(matches!(g.norm(Metric::CcOracle, &[0.0; 4]), Err(GroupError::MetricUnsupported(_))));
    }

    #[test]
    fn equivalence_constants_behave() {
        let a = Group::abelian(2);
        let r = a.equivalence_constants(&[-1.0, -1.0], &[1.0, 1.0], 500, 1, Metric::Quasi).unwrap();
        assert!((r.c1 - 1.0).abs() < 1e-12 && (r.c2 - 1.0).abs() < 1e-12 && r.c == 1.0);
        let h = Group::heisenberg();
        let big = h.equivalence_constants(&[-1.0; 3], &[1.0; 3], 4000, 2, Metric::CcOracle).unwrap();
        assert!(big.c1 > 0.0 && big.c2.is_finite() && big.c >= 1.0);
        // Nested boxes: restrict the pairs of the big box to the small one.
        let mut rng = rng_for(3, 0);
        let pairs: Vec<_> = (0..4000)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (x, y)
            })
            .collect();
        let inner: Vec<_> = pairs
            .iter()
            .filter(|(x, y)| x.iter().chain(y).all(|v| v.abs() < 0.5))
            .cloned()
            .collect();
        let outer = h.equivalence_constants_from_pairs(&pairs, Metric::CcOracle);
        let small = h.equivalence_constants_from_pairs(&inner, Metric::CcOracle);
        assert!(outer.c1 <= small.c1 && outer.c2 >= small.c2);
    }

    #[test]
    fn metric_names_roundtrip() {
        for m in [Metric::Quasi, Metric::CcOracle] {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
    }
}
