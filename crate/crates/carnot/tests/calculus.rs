//! Cross-module checks: spec files, the group law, fields and Taylor jets.

use carnot::approx::{read_dataset, write_dataset, SampleGrid, SampledFunction};
use carnot::group::parse_group_spec;
use carnot::group::GroupSpecFile;
use carnot::jets::{jet_of, taylor_poly, BetaTable};
use carnot::scalar::{int, rat};
use carnot::{Group, MultiIndex, Poly, Rational};

fn points(n: usize) -> Vec<Vec<Rational>> {
    let vals = [rat(-3, 2), rat(0, 1), rat(1, 3), rat(2, 1)];
    (0..16).map(|s| (0..n).map(|i| vals[(s * (i + 3) + i) % 4].clone()).collect()).collect()
}

#[test]
fn heisenberg_law_matches_closed_form() {
    let g = Group::heisenberg();
    let half = rat(1, 2);
    for p in points(3) {
        for q in points(3).iter().rev() {
            let want = vec![
                &p[0] + &q[0],
                &p[1] + &q[1],
                &p[2] + &q[2] + &half * (&p[0] * &q[1] - &p[1] * &q[0]),
            ];
            assert_eq!(g.multiply(&p, q), want);
        }
        let neg: Vec<Rational> = p.iter().map(|v| -v).collect();
        assert_eq!(g.inverse(&p), neg);
    }
}

#[test]
fn spec_text_rebuilds_the_same_law() {
    for g in [Group::heisenberg(), Group::engel(), Group::abelian(3)] {
        let text = GroupSpecFile::from_group(&g).to_text();
        let h = parse_group_spec(&text).unwrap().build().unwrap();
        assert_eq!(h.weights(), g.weights());
        let pts = points(g.dim());
        for (p, q) in pts.iter().zip(pts.iter().skip(5)) {
            assert_eq!(h.multiply(p, q), g.multiply(p, q), "{}", g.name());
        }
    }
}

fn sample_poly(g: &Group, k: u32) -> Poly<Rational> {
    let w = g.weights();
    let terms = MultiIndex::all_up_to(&w, k).into_iter().enumerate().map(|(i, j)| (j, rat(i as i64 % 5 - 2, 1 + i as i64 % 3)));
    Poly::from_terms(w.clone(), terms)
}

#[test]
fn taylor_polynomial_reproduces_polynomials() {
    for (g, k) in [(Group::heisenberg(), 3), (Group::engel(), 4)] {
        let table = BetaTable::new(&g, k).unwrap();
        let p = sample_poly(&g, k);
        for x0 in points(g.dim()).into_iter().take(4) {
            let jet = jet_of(&g, &table, &p, &x0);
            let t = taylor_poly(&table, &x0, &jet).unwrap();
            assert_eq!(t.to_poly(&g, &table), p, "{} at {x0:?}", g.name());
        }
    }
}

#[test]
fn fields_commute_with_left_translation() {
    let g = Group::engel();
    let p = sample_poly(&g, 3);
    for a in points(g.dim()).into_iter().take(3) {
        let subs = g.translation_substitution(&a, &int(1));
        for i in 0..2 {
            let lhs = g.fields().apply(i, &p.compose(&subs));
            let rhs = g.fields().apply(i, &p).compose(&subs);
            assert_eq!(lhs, rhs, "X{} at {a:?}", i + 1);
        }
    }
}

#[test]
fn dataset_text_round_trips() {
    let grid = SampleGrid::new(vec![-1.0, -1.0, -0.5], vec![1.0, 1.0, 0.5], vec![5, 4, 3]).unwrap();
    let f = SampledFunction::from_fn(grid, |x| x[0] * x[1] - 0.25 * x[2]);
    let text = write_dataset("heisenberg", 2, &f);
    let (name, k, back) = read_dataset(&text).unwrap();
    assert_eq!((name.as_str(), k), ("heisenberg", 2));
    assert_eq!(write_dataset(&name, k, &back), text);
}
