//! Synthetic datasets with ground-truth sidecars.
//!
//! Sidecar format:
//!
//! ```text
//! carnot-truth 1
//! group heisenberg
//! k 2
//! note <key> <value>
//! piece <name>
//! term <e1,...,eN> <num/den>
//! salt <cell> <cell> ...
//! ```
//!
//! `term` lines belong to the latest `piece`. Salt lines may repeat; cells are
//! dataset row indices.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use carnot::approx::{SampleGrid, SampledFunction};
use carnot::scalar::{rat, rng_for};
use carnot::{Group, MultiIndex, Poly, Rational};

use crate::config::sub_seed;
use crate::suites::random_poly;
use crate::{CliError, Result};

pub const CONSTRUCTIONS: [&str; 4] = ["polynomial", "salt", "glued-cone", "lip-jet"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaltLayout {
    /// The cells closest to the grid centre, in index space.
    Blob,
    Scattered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub group: String,
    pub k: u32,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
    pub seed: u64,
    /// Salted fraction of cells.
    pub fraction: f64,
    pub amplitude: f64,
    pub layout: SaltLayout,
    /// Scale of the degree `k + 1` perturbation added by `salt`.
    pub eta: Rational,
    /// Cone aperture for `glued-cone`.
    pub theta: f64,
}

impl SynthParams {
    /// Heisenberg defaults: a box twice as thin in the degree-2 direction.
    pub fn new(seed: u64) -> Self {
        SynthParams {
            group: "heisenberg".into(),
            k: 2,
            lo: vec![-1.0, -1.0, -0.25],
            hi: vec![1.0, 1.0, 0.25],
            res: vec![32; 3],
            seed,
            fraction: 0.1,
            amplitude: 1.0,
            layout: SaltLayout::Blob,
            eta: rat(1, 400),
            theta: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    pub group: String,
    pub k: u32,
    pub notes: Vec<(String, String)>,
    pub pieces: Vec<(String, Poly<Rational>)>,
    pub salt: Vec<usize>,
}

impl Sidecar {
    pub fn piece(&self, name: &str) -> Option<&Poly<Rational>> {
        self.pieces.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "carnot-truth 1").unwrap();
        writeln!(s, "group {}", self.group).unwrap();
        writeln!(s, "k {}", self.k).unwrap();
        for (k, v) in &self.notes {
            writeln!(s, "note {k} {v}").unwrap();
        }
        for (name, p) in &self.pieces {
            writeln!(s, "piece {name}").unwrap();
            for (j, c) in p.canonical_terms() {
                let e: Vec<String> = j.entries().iter().map(|v| v.to_string()).collect();
                writeln!(s, "term {} {}/{}", e.join(","), c.numer(), c.denom()).unwrap();
            }
        }
        for chunk in self.salt.chunks(32) {
            let cells: Vec<String> = chunk.iter().map(|c| c.to_string()).collect();
            writeln!(s, "salt {}", cells.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Sidecar> {
        let bad = |line: usize, msg: &str| CliError::BadParams(format!("sidecar line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "carnot-truth 1")) => {}
            Some((i, _)) => return Err(bad(i, "expected `carnot-truth 1`")),
            None => return Err(bad(0, "empty")),
        }
        let mut sc = Sidecar::default();
        let mut group: Option<Group> = None;
        for (i, line) in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "group" => {
                    sc.group = rest.to_string();
                    group = Some(Group::builtin(rest).ok_or_else(|| bad(i, "unknown group"))?);
                }
                "k" => sc.k = rest.parse().map_err(|_| bad(i, "bad k"))?,
                "note" => {
                    let (a, b) = rest.split_once(' ').unwrap_or((rest, ""));
                    sc.notes.push((a.to_string(), b.to_string()));
                }
                "piece" => {
                    let g = group.as_ref().ok_or_else(|| bad(i, "piece before group"))?;
                    sc.pieces.push((rest.to_string(), Poly::zero(g.weights())));
                }
                "term" => {
                    let (e, c) = rest.split_once(' ').ok_or_else(|| bad(i, "term needs exponents and coefficient"))?;
                    let e: Vec<u32> = e.split(',').map(|v| v.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad(i, "bad exponents"))?;
                    let c = Rational::from_str(c).map_err(|_| bad(i, "bad coefficient"))?;
                    let (_, p) = sc.pieces.last_mut().ok_or_else(|| bad(i, "term before piece"))?;
                    if e.len() != p.nvars() {
                        return Err(bad(i, "exponent count"));
                    }
                    p.add_term(MultiIndex::new(e), c);
                }
                "salt" => {
                    for v in rest.split_whitespace() {
                        sc.salt.push(v.parse().map_err(|_| bad(i, "bad cell"))?);
                    }
                }
                _ => return Err(bad(i, "unknown key")),
            }
        }
        Ok(sc)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub f: SampledFunction,
    pub sidecar: Sidecar,
}

fn params_grid(p: &SynthParams, g: &Group) -> Result<SampleGrid> {
    let grid = SampleGrid::new(p.lo.clone(), p.hi.clone(), p.res.clone())?;
    if grid.dim() != g.dim() {
        return Err(CliError::BadParams(format!("grid dimension {} for group dimension {}", grid.dim(), g.dim())));
    }
    Ok(grid)
}

fn sampled(grid: &SampleGrid, p: &Poly<Rational>) -> SampledFunction {
    let pf = p.to_f64();
    SampledFunction::from_fn(grid.clone(), |x| pf.eval_f64(x))
}

/// Base polynomial with coefficients shrunk by four, so the degree-`k` part
/// stays of order one on the default box.
fn base_poly(g: &Group, k: u32, seed: u64, label: &str) -> Poly<Rational> {
    let mut rng = rng_for(sub_seed(seed, label), 0);
    random_poly(g, k, true, &mut rng).scale(&rat(1, 4))
}

pub fn synth(name: &str, p: &SynthParams) -> Result<Dataset> {
    let g = Group::builtin(&p.group).ok_or_else(|| CliError::BadParams(format!("unknown group `{}`", p.group)))?;
    let grid = params_grid(p, &g)?;
    let mut sc = Sidecar { group: p.group.clone(), k: p.k, ..Default::default() };
    sc.notes.push(("construction".into(), name.into()));
    sc.notes.push(("seed".into(), p.seed.to_string()));
    match name {
        "polynomial" => {
            let truth = base_poly(&g, p.k, p.seed, "synth/polynomial");
            let f = sampled(&grid, &truth);
            sc.pieces.push(("truth".into(), truth));
            Ok(Dataset { f, sidecar: sc })
        }
        "salt" => {
            if !(0.0..1.0).contains(&p.fraction) {
                return Err(CliError::BadParams("salt fraction must lie in [0, 1)".into()));
            }
            let base = base_poly(&g, p.k, p.seed, "synth/polynomial");
            let mut rng = rng_for(sub_seed(p.seed, "synth/perturbation"), 0);
            let bump = Poly::from_terms(
                g.weights(),
                random_poly(&g, p.k + 1, true, &mut rng).filter_degree(|d| d == p.k + 1).canonical_terms().into_iter().map(|(j, c)| (j.clone(), c.clone())),
            )
            .scale(&p.eta);
            let truth = base.add(&bump);
            let mut f = sampled(&grid, &truth);
            let n = grid.len();
            let want = (p.fraction * n as f64).round() as usize;
            let mut rng = rng_for(sub_seed(p.seed, "synth/salt"), 0);
            let mut cells: Vec<usize> = match p.layout {
                SaltLayout::Blob => {
                    let mid: Vec<f64> = grid.res.iter().map(|&r| (r as f64 - 1.0) / 2.0).collect();
                    let mut by: Vec<(f64, usize)> = (0..n)
                        .map(|i| (grid.multi(i).iter().zip(&mid).map(|(&v, m)| (v as f64 - m).powi(2)).sum::<f64>(), i))
                        .collect();
                    by.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    by[..want].iter().map(|e| e.1).collect()
                }
                SaltLayout::Scattered => sample(&mut rng, n, want).into_vec(),
            };
            cells.sort_unstable();
            for &c in &cells {
                f.values[c] += rng.gen_range(-p.amplitude..p.amplitude);
            }
            sc.notes.push(("salt_fraction".into(), format!("{:?}", p.fraction)));
            sc.notes.push(("salt_layout".into(), format!("{:?}", p.layout).to_lowercase()));
            sc.pieces.push(("truth".into(), truth));
            sc.salt = cells;
            Ok(Dataset { f, sidecar: sc })
        }
        "glued-cone" => {
            let outside = base_poly(&g, p.k, p.seed, "synth/cone/outside");
            let inside = base_poly(&g, p.k, p.seed, "synth/cone/inside");
            if !(p.theta > 0.0 && p.theta < 1.0) {
                return Err(CliError::BadParams("θ must lie in (0, 1)".into()));
            }
            let apex = grid.center(grid.index(&grid.res.iter().map(|r| r / 2).collect::<Vec<_>>()));
            let mut v = vec![0.0; g.dim()];
            v[0] = 1.0;
            let (fo, fi) = (outside.to_f64(), inside.to_f64());
            let in_cone = |x: &[f64]| {
                let z = g.relative(&apex, x);
                let t = g.hom_norm(&z);
                t > 0.0 && g.hom_norm(&g.relative(&g.dilate_f64(t, &v), &z)) < p.theta * t
            };
            let f = SampledFunction::from_fn(grid.clone(), |x| if in_cone(x) { fi.eval_f64(x) } else { fo.eval_f64(x) });
            sc.notes.push(("apex".into(), format!("{apex:?}")));
            sc.notes.push(("axis".into(), format!("{v:?}")));
            sc.notes.push(("theta".into(), format!("{:?}", p.theta)));
            sc.pieces.push(("outside".into(), outside));
            sc.pieces.push(("cone".into(), inside));
            Ok(Dataset { f, sidecar: sc })
        }
        "lip-jet" => {
            if p.k == 0 {
                return Err(CliError::BadParams("lip-jet needs k ≥ 1".into()));
            }
            let smooth = base_poly(&g, p.k, p.seed, "synth/lip");
            let sf = smooth.to_f64();
            let k = p.k as i32;
            let f = SampledFunction::from_fn(grid.clone(), |x| x[0].powi(k - 1) * x[0].abs() + sf.eval_f64(x));
            sc.notes.push(("kink".into(), format!("x1^{}*|x1|", k - 1)));
            sc.pieces.push(("smooth".into(), smooth));
            Ok(Dataset { f, sidecar: sc })
        }
        other => Err(CliError::UnknownConstruction(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthParams {
        let mut p = SynthParams::new(seed);
        p.res = vec![10, 10, 10];
        p
    }

    #[test]
    fn polynomial_sidecar_matches_values() {
        let d = synth("polynomial", &small(1)).unwrap();
        let truth = d.sidecar.piece("truth").unwrap().to_f64();
        for c in [0, 17, 999] {
            assert_eq!(d.f.values[c], truth.eval_f64(&d.f.grid.center(c)));
        }
        let back = Sidecar::parse(&d.sidecar.to_text()).unwrap();
        assert_eq!(back, d.sidecar);
    }

    #[test]
    fn salt_fraction_is_exact() {
        for layout in [SaltLayout::Blob, SaltLayout::Scattered] {
            let mut p = small(2);
            p.layout = layout;
            let d = synth("salt", &p).unwrap();
            assert_eq!(d.sidecar.salt.len(), 100);
            let truth = d.sidecar.piece("truth").unwrap().to_f64();
            let changed: Vec<usize> =
                (0..d.f.grid.len()).filter(|&c| d.f.values[c] != truth.eval_f64(&d.f.grid.center(c))).collect();
            assert_eq!(changed, d.sidecar.salt);
        }
    }

    #[test]
    fn glued_cone_pieces_differ() {
        let d = synth("glued-cone", &small(3)).unwrap();
        assert_eq!(d.sidecar.pieces.len(), 2);
        assert_ne!(d.sidecar.pieces[0].1, d.sidecar.pieces[1].1);
        let out = d.sidecar.piece("outside").unwrap().to_f64();
        let inside = d.sidecar.piece("cone").unwrap().to_f64();
        let (mut a, mut b) = (0, 0);
        for c in 0..d.f.grid.len() {
            let x = d.f.grid.center(c);
            if d.f.values[c] == out.eval_f64(&x) {
                a += 1;
            } else if d.f.values[c] == inside.eval_f64(&x) {
                b += 1;
            }
        }
        assert_eq!(a + b, d.f.grid.len());
        assert!(b > 0 && a > b);
    }

    #[test]
    fn bad_params() {
        assert!(matches!(synth("nope", &small(1)), Err(CliError::UnknownConstruction(_))));
        let mut p = small(1);
        p.res = vec![4, 4];
        assert!(synth("polynomial", &p).is_err());
        assert!(Sidecar::parse("carnot-truth 1\nterm 1,0,0 1/2\n").is_err());
    }
}
