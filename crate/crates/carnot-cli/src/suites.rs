//! Verification suites, one per lemma-level property.
//!
//! Exact suites (`group-law`, `operator`, `taylor`, `scaling`,
//! `decomposition`) draw their instances from the seed, defaulting to 0; their
//! verdicts do not depend on it. Monte Carlo suites (`balls`, `cone`, `drift`,
//! and `degiorgi` for `k > 0`) refuse to run without one.

use std::f64::consts::PI;

use num_traits::Zero;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use carnot::approx::{decomposition_check, DecompositionInput, SampleGrid, SampledFunction, Scanner};
use carnot::diffops::expand_operator;
use carnot::estimates::{
    ball_intersection_ratio, cone_density_check, degiorgi_constant_search, drift_sup, scaling_identity_check,
    DeGiorgiConfig, Drift,
};
use carnot::jets::{jet_of, taylor_decay_probe, taylor_poly, BetaTable};
use carnot::poly::left_translate;
use carnot::scalar::{f64_to_rational, rat, rational_to_f64, rng_for};
use carnot::{Group, GroupKind, Metric, MultiIndex, Poly, Rational};

use crate::config::{metric_name, sub_seed, RunConfig};
use crate::groupcheck::check_group;
use crate::report::Report;
use crate::{CliError, Result};

pub const SUITES: [&str; 9] =
    ["group-law", "operator", "taylor", "degiorgi", "scaling", "balls", "cone", "drift", "decomposition"];

/// Default Monte Carlo budget for `cone`, per `(v, θ)` pair.
pub const CONE_SAMPLES: usize = 1_000_000;

pub fn run_suite(cfg: &RunConfig) -> Result<Report> {
    let group = match &cfg.group {
        Some(src) => Some(src.load()?.0),
        None => None,
    };
    let g = group.as_ref();
    match cfg.suite.as_str() {
        "group-law" => group_law(cfg, g),
        "operator" => operator(cfg, g),
        "taylor" => taylor(cfg, g),
        "degiorgi" => degiorgi(cfg, g),
        "scaling" => scaling(cfg, g),
        "balls" => balls(cfg, g),
        "cone" => cone(cfg, g),
        "drift" => drift(cfg, g),
        "decomposition" => decomposition(cfg, g),
        other => Err(CliError::UnknownSuite(other.to_string())),
    }
}

fn groups_or(g: Option<&Group>, defaults: &[&str]) -> Vec<Group> {
    match g {
        Some(g) => vec![g.clone()],
        None => defaults.iter().map(|n| Group::builtin(n).expect("builtin")).collect(),
    }
}

fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    rng_for(sub_seed(seed, label), 0)
}

fn random_rat(rng: &mut impl Rng, span: i64, den: i64) -> Rational {
    rat(rng.gen_range(-span..=span), rng.gen_range(1..=den))
}

pub fn random_point(rng: &mut impl Rng, n: usize) -> Vec<Rational> {
    (0..n).map(|_| random_rat(rng, 6, 4)).collect()
}

/// Random polynomial of homogeneous degree at most `k`, roughly a third of the
/// coefficients zero. With `top` set, some degree-`k` coefficient is nonzero.
pub fn random_poly(g: &Group, k: u32, top: bool, rng: &mut impl Rng) -> Poly<Rational> {
    let w = g.weights();
    let idx = MultiIndex::all_up_to(&w, k);
    let mut terms: Vec<(MultiIndex, Rational)> = Vec::new();
    for j in idx {
        if rng.gen_range(0..3) > 0 {
            let c = random_rat(rng, 5, 3);
            if !c.is_zero() {
                terms.push((j, c));
            }
        }
    }
    if top && !terms.iter().any(|(j, _)| j.hom_degree(&w) == k) {
        let tops = MultiIndex::all_of_degree(&w, k);
        let j = tops[rng.gen_range(0..tops.len())].clone();
        terms.push((j, rat(rng.gen_range(1..=5), rng.gen_range(1..=3))));
    }
    Poly::from_terms(w, terms)
}

fn group_law(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.seed_or_default();
    let tuples = cfg.trials.unwrap_or(1000);
    let mut rep = Report::new("group-law");
    for g in groups_or(g, &["abelian-3", "heisenberg", "engel"]) {
        let r = check_group(&g, tuples, sub_seed(seed, &format!("group-law/{}", g.name())));
        rep.lines.extend(r.lines);
        for c in r.checks {
            rep.check(&format!("{}/{}", g.name(), c.name), c.pass, c.detail);
        }
    }
    Ok(rep)
}

fn operator(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.seed_or_default();
    let mut rep = Report::new("operator");
    for g in groups_or(g, &["heisenberg", "engel"]) {
        let w = g.weights();
        let n = g.dim();
        let mut rng = rng(seed, &format!("operator/{}", g.name()));
        let polys: Vec<Poly<Rational>> = (0..2).map(|_| random_poly(&g, 5, true, &mut rng)).collect();
        let alphas = MultiIndex::all_up_to(&w, 4);
        let (mut structural, mut agree) = (Vec::new(), 0usize);
        for alpha in &alphas {
            let e = expand_operator(&g, alpha);
            if let Err(msg) = e.check_invariants(&w) {
                structural.push(format!("{alpha}: {msg}"));
            }
            for p in &polys {
                if e.apply(p) != g.fields().apply_xj(alpha, p) {
                    agree += 1;
                }
            }
        }
        rep.line(format!("{} operators {}", g.name(), alphas.len()));
        rep.check(&format!("{}/structure", g.name()), structural.is_empty(), structural.join("; "));
        rep.check(&format!("{}/expansion_agrees", g.name()), agree == 0, format!("mismatches {agree}"));
        // [X_i, X_j] = Σ_l c^l_ij X_l as operators on the test polynomials.
        let f = g.fields();
        let mut bad = 0usize;
        for i in 0..n {
            for j in 0..n {
                for p in &polys {
                    let lhs = f.apply(i, &f.apply(j, p)).sub(&f.apply(j, &f.apply(i, p)));
                    let mut rhs = Poly::zero(w.clone());
                    for l in 0..n {
                        let c = g.constants().get(l, i, j);
                        if !c.is_zero() {
                            rhs = rhs.add(&f.apply(l, p).scale(c));
                        }
                    }
                    if lhs != rhs {
                        bad += 1;
                    }
                }
            }
        }
        rep.check(&format!("{}/bracket_roundtrip", g.name()), bad == 0, format!("mismatches {bad}"));
    }
    Ok(rep)
}

const DECAY_RADII: [f64; 8] = [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125, 0.0009765625];

fn taylor(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.seed_or_default();
    let per = cfg.trials.unwrap_or(100);
    let samples = cfg.samples.unwrap_or(2000);
    let metric = cfg.metric.unwrap_or(Metric::Quasi);
    let mut rep = Report::new("taylor");
    for g in groups_or(g, &["heisenberg", "engel"]) {
        let n = g.dim();
        let mut rng = rng(seed, &format!("taylor/exact/{}", g.name()));
        for k in 1..=3 {
            let table = BetaTable::new(&g, k)?;
            let mut bad = 0usize;
            for _ in 0..per {
                let p = random_poly(&g, k, false, &mut rng);
                let x0 = random_point(&mut rng, n);
                let tp = taylor_poly(&table, &x0, &jet_of(&g, &table, &p, &x0))?;
                if tp.to_poly(&g, &table) != p {
                    bad += 1;
                }
            }
            rep.check(&format!("{}/reconstruct_k{k}", g.name()), bad == 0, format!("failures {bad}/{per}"));
        }
    }
    let decay_group = g.cloned().unwrap_or_else(Group::heisenberg);
    let g = &decay_group;
    let mut rng = rng(seed, &format!("taylor/decay/{}", g.name()));
    for k in 1..=3u32 {
        let (mut worst_slope, mut worst_growth) = (f64::INFINITY, 0.0f64);
        for t in 0..10 {
            let x0 = random_point(&mut rng, g.dim());
            // Structure k+1: the order-k remainder is homogeneous of degree k+1.
            let u = random_poly(g, k + 1, true, &mut rng);
            let s = sub_seed(seed, &format!("taylor/decay/{k}/{t}"));
            let d = taylor_decay_probe(g, &u, &x0, k, &DECAY_RADII, metric, samples, s)?;
            let slope = d.slope.unwrap_or(f64::NAN);
            worst_slope = worst_slope.min(slope);
            rep.line(format!("decay k {k} fn {t} slope {slope}"));
            // Structure k: order k−1, so sup / r^k should stay flat.
            let u = random_poly(g, k, true, &mut rng);
            let d = taylor_decay_probe(g, &u, &x0, k - 1, &DECAY_RADII, metric, samples, s)?;
            let fine: Vec<f64> = d.sups[d.sups.len() - 3..].iter().map(|(r, v)| v / r.powi(k as i32)).collect();
            let growth = fine.iter().cloned().fold(0.0f64, f64::max) / fine.iter().cloned().fold(f64::INFINITY, f64::min);
            worst_growth = worst_growth.max(growth);
            rep.line(format!("bounded k {k} fn {t} normalized {fine:?}"));
        }
        rep.check(&format!("decay_k{k}"), worst_slope >= k as f64 + 0.8, format!("min slope {worst_slope}"));
        rep.check(&format!("bounded_k{k}"), worst_growth <= 1.0 + 1e-6, format!("max growth {worst_growth}"));
    }
    Ok(rep)
}

/// Exact unit-ball volume where known.
fn known_volume(g: &Group, metric: Metric) -> Option<f64> {
    match (g.kind(), metric) {
        (GroupKind::Heisenberg, Metric::Quasi) => Some(PI / 3.0),
        _ => None,
    }
}

fn degiorgi(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let g = g.cloned().unwrap_or_else(Group::heisenberg);
    let metric = cfg.metric.unwrap_or(Metric::Quasi);
    let mut rep = Report::new("degiorgi");
    let resolution = cfg.resolution.unwrap_or(12);
    if cfg.k == 0 {
        let a = cfg.a.unwrap_or(0.25);
        let mut dc = DeGiorgiConfig::new(0, a, cfg.trials.unwrap_or(100), cfg.seed_or_default());
        dc.metric = metric;
        dc.resolution = resolution;
        let r = degiorgi_constant_search(&g, &dc)?;
        rep.line(format!("c_emp {}", r.c_emp));
        rep.check("inverse_fraction", (r.c_emp - 1.0 / a).abs() <= 1e-6, format!("c_emp {} 1/A {}", r.c_emp, 1.0 / a));
        return Ok(rep);
    }
    let seed = cfg.require_seed()?;
    let q = g.hom_dim() as i32;
    let a = match cfg.a {
        Some(a) => a,
        None => {
            let v = match known_volume(&g, metric) {
                Some(v) => v,
                None => g.unit_ball_volume(metric, cfg.samples.unwrap_or(200_000), sub_seed(seed, "degiorgi/volume"))?.value,
            };
            v / 2f64.powi(q + 1)
        }
    };
    let trials = cfg.trials.unwrap_or(10_000);
    rep.line(format!("A {a} trials {trials} resolution {resolution}"));
    let mut vals = Vec::new();
    for r in [0.5, 1.0, 2.0] {
        for s in 0..3 {
            let mut dc = DeGiorgiConfig::new(cfg.k, a, trials, sub_seed(seed, &format!("degiorgi/{s}")));
            dc.r = r;
            dc.metric = metric;
            dc.resolution = resolution;
            let out = degiorgi_constant_search(&g, &dc)?;
            rep.line(format!("r {r} seed {s} c_emp {}", out.c_emp));
            vals.push(out.c_emp);
        }
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(0.0f64, f64::max);
    rep.check("finite", vals.iter().all(|v| v.is_finite() && *v > 0.0), "");
    rep.check("stable_factor_2", hi / lo < 2.0, format!("max/min {}", hi / lo));
    Ok(rep)
}

fn scaling(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.seed_or_default();
    let count = cfg.trials.unwrap_or(200);
    let mut rep = Report::new("scaling");
    for g in groups_or(g, &["heisenberg", "engel"]) {
        let w = g.weights();
        let alphas = MultiIndex::all_up_to(&w, 3);
        let mut rng = rng(seed, &format!("scaling/{}", g.name()));
        let mut bad = 0usize;
        for _ in 0..count {
            let p = random_poly(&g, 3, false, &mut rng);
            let x0 = random_point(&mut rng, g.dim());
            let r = rat(rng.gen_range(1..=7), rng.gen_range(1..=4));
            let alpha = &alphas[rng.gen_range(0..alphas.len())];
            if !scaling_identity_check(&g, &p, &x0, &r, alpha)? {
                bad += 1;
            }
        }
        rep.check(&format!("{}/identity", g.name()), bad == 0, format!("failures {bad}/{count}"));
    }
    Ok(rep)
}

fn balls(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.require_seed()?;
    let metric = cfg.metric.unwrap_or(Metric::CcOracle);
    let samples = cfg.samples.unwrap_or(1_000_000);
    let mut rep = Report::new("balls");
    for g in groups_or(g, &["abelian-1", "abelian-2", "heisenberg"]) {
        let name = g.name().to_string();
        let s = |label: &str| sub_seed(seed, &format!("balls/{name}/{label}"));
        match (g.kind(), g.dim()) {
            (GroupKind::Abelian, 1) => {
                let e = ball_intersection_ratio(&g, &[0.0], &[0.7], metric, samples, s("pair"))?;
                rep.check(&format!("{name}/exact"), e.exact && e.value == 1.0, format!("ratio {}", e.value));
            }
            (GroupKind::Abelian, 2) => {
                // Two unit discs at distance one.
                let lens = 2.0 * PI / 3.0 - 3f64.sqrt() / 2.0;
                let e = ball_intersection_ratio(&g, &[0.1, -0.2], &[0.4, 0.2], metric, samples, s("pair"))?;
                let rel = (e.value - lens).abs() / lens;
                rep.line(format!("{name} value {} std_err {} lens {lens}", e.value, e.std_err));
                rep.check(&format!("{name}/lens"), rel < 0.01, format!("relative error {rel}"));
            }
            _ => {
                let n = g.dim();
                let vol = g.unit_ball_volume(metric, samples, s("volume"))?;
                let q = g.hom_dim() as i32;
                rep.line(format!("{name} V {} std_err {}", vol.value, vol.std_err));
                let mut e1 = vec![0.0; n];
                e1[0] = 1.0;
                let mut top = vec![0.0; n];
                top[n - 1] = 1.0;
                let pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![
                    (vec![0.0; n], e1),
                    (vec![0.0; n], top),
                    ((0..n).map(|i| 0.1 * (i as f64 + 1.0)).collect(), (0..n).map(|i| -0.2 + 0.15 * i as f64).collect()),
                ];
                for (t, (x, y)) in pairs.iter().enumerate() {
                    let e = ball_intersection_ratio(&g, x, y, metric, samples, s(&format!("pair{t}")))?;
                    let lo = vol.value / 2f64.powi(q);
                    let sig_lo = (e.std_err.powi(2) + (vol.std_err / 2f64.powi(q)).powi(2)).sqrt();
                    let sig_hi = (e.std_err.powi(2) + vol.std_err.powi(2)).sqrt();
                    let ok = e.value >= lo - 3.0 * sig_lo && e.value <= vol.value + 3.0 * sig_hi;
                    rep.line(format!("{name} pair {t} value {} std_err {}", e.value, e.std_err));
                    rep.check(&format!("{name}/pair{t}"), ok, format!("{} in [{lo}, {}]", e.value, vol.value));
                }
            }
        }
    }
    Ok(rep)
}

fn cone_directions(g: &Group, metric: Metric) -> Vec<Vec<f64>> {
    let n = g.dim();
    let raw: Vec<Vec<f64>> = vec![
        (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        (0..n).map(|i| if i < 2 { 1.0 } else { 0.0 }).collect(),
        (0..n).map(|i| [0.5, -0.3, 0.2, 0.1][i % 4]).collect(),
    ];
    raw.iter().filter_map(|z| g.normalize_to_sphere(z, metric)).collect()
}

fn cone(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.require_seed()?;
    let g = g.cloned().unwrap_or_else(Group::heisenberg);
    let metric = cfg.metric.unwrap_or(Metric::CcOracle);
    let samples = cfg.samples.unwrap_or(CONE_SAMPLES);
    let mut rep = Report::new("cone");
    rep.line(format!("metric {} samples_per_pair {samples}", metric_name(metric)));
    for (i, v) in cone_directions(&g, metric).iter().enumerate() {
        for theta in [0.25, 0.5, 0.75] {
            let c = cone_density_check(&g, v, theta, 1.0, metric, samples, sub_seed(seed, &format!("cone/{i}/{theta}")))?;
            rep.check(&format!("v{i}/theta{theta}"), c.violations == 0, format!("L {} violations {}/{}", c.l, c.violations, c.samples));
        }
    }
    Ok(rep)
}

fn drift(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.require_seed()?;
    let g = g.cloned().unwrap_or_else(Group::heisenberg);
    let metric = cfg.metric.unwrap_or(Metric::CcOracle);
    let samples = cfg.samples.unwrap_or(20_000);
    let n = g.dim();
    let k = cfg.k.max(1);
    let x0: Vec<f64> = (0..n).map(|i| [0.2, -0.1, 0.3, 0.05][i % 4]).collect();
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    let mut drifts = vec![(format!("distance{k}"), Drift::Distance(k))];
    for j in MultiIndex::all_of_degree(&g.weights(), k) {
        drifts.push((format!("monomial{j}"), Drift::Monomial(j)));
    }
    let mut rep = Report::new("drift");
    for (name, d) in &drifts {
        let mut seq = Vec::new();
        for eps in [0.5, 0.25, 0.125] {
            let y0 = g.multiply(&x0, &g.dilate_f64(eps, &e1));
            let v = drift_sup(&g, &x0, &y0, 1.0, d, metric, samples, sub_seed(seed, &format!("drift/{name}/{eps}")))?;
            seq.push(v);
        }
        // Strict decrease, or a drift that vanishes identically along this direction.
        let dec = seq.windows(2).all(|w| w[1] < w[0]) || seq.iter().all(|v| *v == 0.0);
        rep.check(name, dec, format!("{seq:?}"));
    }
    Ok(rep)
}

const DECOMP_EPS: [f64; 2] = [0.5, 0.3];
const DECOMP_BIG_R: [f64; 2] = [0.45, 0.6];
const DECOMP_R: [f64; 3] = [0.3, 0.4, 0.5];

fn decomposition(cfg: &RunConfig, g: Option<&Group>) -> Result<Report> {
    let seed = cfg.seed_or_default();
    let g = g.cloned().unwrap_or_else(Group::heisenberg);
    let metric = cfg.metric.unwrap_or(Metric::Quasi);
    let k = cfg.k.max(1);
    let count = cfg.trials.unwrap_or(20);
    let res = cfg.resolution.unwrap_or(32).max(8);
    let n = g.dim();
    let w = g.weights();
    let grid = SampleGrid::cube(n, 1.0, res);
    let scanner = Scanner::new(&g, &grid, metric)?;
    let q_grid: Vec<f64> = (-160..=160).map(|i| i as f64 / 16.0).collect();
    let mut rng = rng(seed, "decomposition");
    let one = rat(1, 1);
    let (mut missed, mut false_pos) = (0usize, 0usize);
    let mut rep = Report::new("decomposition");
    for t in 0..count {
        let p = random_poly(&g, k, true, &mut rng);
        // A cell centre near the middle, exact as a rational.
        let lo = res * 3 / 8;
        let cell: Vec<usize> = (0..n).map(|_| rng.gen_range(lo..res - lo)).collect();
        let x0 = grid.center(grid.index(&cell));
        let x0q: Vec<Rational> = x0.iter().map(|&v| f64_to_rational(v)).collect();
        let local = left_translate(&g, &p, &x0q, &one).expect("same ring");
        let mut lower = Vec::new();
        let mut top = Vec::new();
        for j in MultiIndex::all_up_to(&w, k) {
            let a = rational_to_f64(&local.coeff(&j));
            if j.hom_degree(&w) < k {
                lower.push((j, a));
            } else {
                top.push((j, (a - 0.1, a + 0.1)));
            }
        }
        let pf = p.to_f64();
        let f = SampledFunction::from_fn(grid.clone(), |x| pf.eval_f64(x));
        let input = DecompositionInput {
            x0: x0.clone(),
            k,
            lower,
            top: top.clone(),
            q_grid: vec![q_grid.clone(); top.len()],
            eps_grid: DECOMP_EPS.to_vec(),
            big_r_grid: DECOMP_BIG_R.to_vec(),
            r_grid: DECOMP_R.to_vec(),
        };
        let good = decomposition_check(&scanner, &f, &input);
        // Move the box of the first top index two units away from the truth.
        let mut shifted = input.clone();
        let (lo_b, hi_b) = shifted.top[0].1;
        shifted.top[0].1 = (lo_b + 2.0, hi_b + 2.0);
        let bad = decomposition_check(&scanner, &f, &shifted);
        if !good.holds {
            missed += 1;
        }
        if bad.holds {
            false_pos += 1;
        }
        rep.line(format!("instance {t} holds {} shifted_holds {}", good.holds, bad.holds));
    }
    rep.check("witness_found", missed == 0, format!("missed {missed}/{count}"));
    rep.check("violation_rejected", false_pos == 0, format!("accepted {false_pos}/{count}"));
    Ok(rep)
}
