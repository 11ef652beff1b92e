use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carnot-jet"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("carnot-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fit settings sized for a 16-cell grid.
const SMALL_GRID: &[&str] = &["--fit-radius", "0.45", "--r-floor", "0.45", "--j-min", "2", "--j-max", "6", "--scales", "0.3,0.4,0.5,0.6"];

fn lusin(head: &[&str]) -> Output {
    bin().args(head).args(SMALL_GRID).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn group_check_heisenberg_spec() {
    let d = scratch("h1");
    let spec = write(&d, "h1.grp", "# first Heisenberg group\nname h1\nstep 2\nlayer_dims 2 1\nbracket 1 2 3 1 1\n");
    let o = run(&["group", "check", &spec]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Q3 = -1/2*x2*y1 + 1/2*x1*y2"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn group_check_abelian_and_broken_jacobi() {
    let d = scratch("jacobi");
    let ab = write(&d, "ab.grp", "step 1\nlayer_dims 3\n");
    let o = run(&["group", "check", &ab]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with('Q')).collect::<Vec<_>>(), ["Q1 = 0", "Q2 = 0", "Q3 = 0"]);
    let bad = write(
        &d,
        "bad.grp",
        "step 3\nlayer_dims 3 3 1\nbracket 1 2 4 1 1\nbracket 1 3 5 1 1\nbracket 2 3 6 1 1\nbracket 4 3 7 1 1\n",
    );
    let o = run(&["group", "check", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Jacobi"), "{}", stderr(&o));
    let garbled = write(&d, "garbled.grp", "step 2\nlayer_dims 2 1\nbracket 1 two 3 1 1\n");
    let o = run(&["group", "check", &garbled]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn verify_writes_then_replays() {
    let d = scratch("verify");
    let out = d.join("reports").display().to_string();
    let o = run(&["verify", "taylor", "--group", "heisenberg", "--trials", "10", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("wrote"));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 1);
    let o2 = run(&["verify", "taylor", "--group", "heisenberg", "--trials", "10", "--out", &out]);
    assert!(o2.status.success());
    assert!(stderr(&o2).contains("replayed"), "{}", stderr(&o2));
    assert_eq!(stdout(&o), stdout(&o2));
}

#[test]
fn verify_degiorgi_k0() {
    let d = scratch("dg");
    let out = d.display().to_string();
    let o = run(&["verify", "degiorgi", "--k", "0", "--A", "0.25", "--trials", "10", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("check inverse_fraction pass c_emp 4.0"), "{}", stdout(&o));
}

#[test]
fn verify_balls_on_the_plane() {
    let d = scratch("balls");
    let out = d.display().to_string();
    let o = run(&["verify", "balls", "--group", "abelian-2", "--seed", "3", "--samples", "400000", "--out", &out]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("check abelian-2/lens pass"));
}

#[test]
fn verify_errors() {
    let d = scratch("verr");
    let out = d.display().to_string();
    let o = run(&["verify", "nope", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown suite"));
    let o = run(&["verify", "cone", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("needs --seed"));
}

#[test]
fn synth_and_lusin_on_polynomial_data() {
    let d = scratch("poly");
    let data = d.join("p.dat").display().to_string();
    let o = run(&["synth", "polynomial", "--seed", "4", "--res", "16", "--out", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let truth = d.join("p.truth").display().to_string();
    assert!(std::fs::read_to_string(&truth).unwrap().starts_with("carnot-truth 1\n"));
    let out = d.join("r").display().to_string();
    let o = lusin(&["lusin", &data, "--eps", "0.2", "--mode", "ck", "--truth", &truth, "--out", &out]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("pass true"));
    let err: f64 = text.lines().find_map(|l| l.strip_prefix("jet_error ")).unwrap().parse().unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn lusin_salt_shortfall_is_surfaced() {
    let d = scratch("salt");
    let data = d.join("s.dat").display().to_string();
    let o = run(&["synth", "salt", "--seed", "5", "--res", "16", "--out", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let side = std::fs::read_to_string(d.join("s.truth")).unwrap();
    let salted: usize = side.lines().filter_map(|l| l.strip_prefix("salt ")).map(|l| l.split_whitespace().count()).sum();
    assert_eq!(salted, 410);
    let out = d.join("r").display().to_string();
    let o = lusin(&["lusin", &data, "--eps", "0.05", "--mode", "ck", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coverage shortfall: achievable eps"), "{}", stderr(&o));
}

#[test]
fn lip_growth_over_a_big_box_is_flagged() {
    let d = scratch("grow");
    let data = d.join("g.dat").display().to_string();
    let o = run(&[
        "synth", "polynomial", "--seed", "6", "--group", "abelian-1", "--k", "3", "--res", "400", "--lo=-16", "--hi=16",
        "--out", &data,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = d.join("r").display().to_string();
    let o = run(&["lusin", &data, "--eps", "0.2", "--mode", "lip", "--k", "3", "--fit-radius", "1.5", "--r-floor", "1.0", "--j-max", "200", "--out", &out]);
    let err = stderr(&o);
    assert!(err.contains("flag: unbounded_growth"), "{}\n{err}", stdout(&o));
    assert_eq!(o.status.code(), Some(1));
}
