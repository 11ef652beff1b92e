use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use carnot::approx::write_dataset;
use carnot::lusin::{LusinConfig, Mode};
use carnot_cli::config::{parse_metric, read, GroupSource, RunConfig};
use carnot_cli::groupcheck::{check_group, law_text};
use carnot_cli::lusin_cmd::{run_lusin, M_LIMIT};
use carnot_cli::report::{report_path, store, Stored};
use carnot_cli::suites::run_suite;
use carnot_cli::synth::{synth, SaltLayout, SynthParams};
use carnot_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "carnot-jet", version, about = "Carnot-group jets, lemma checks and Lusin approximation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Group definitions.
    Group {
        #[command(subcommand)]
        cmd: GroupCmd,
    },
    /// Run a verification suite and store its report.
    Verify(VerifyArgs),
    /// Generate a synthetic dataset and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Fit, classify, select F and certify on a dataset.
    Lusin(LusinArgs),
}

#[derive(Subcommand)]
enum GroupCmd {
    /// Parse a spec file (or builtin name), print Q_i and check the law.
    Check {
        spec: String,
        #[arg(long, default_value_t = 200)]
        tuples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    suite: String,
    /// Builtin name (heisenberg, engel, abelian-N) or spec file.
    #[arg(long)]
    group: Option<String>,
    #[arg(long, default_value_t = 2)]
    k: u32,
    #[arg(long = "A")]
    a: Option<f64>,
    #[arg(long, default_value_t = 0.12)]
    eps: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// quasi or cc.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Blob,
    Scattered,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ck,
    Lip,
}

/// Comma-separated floats.
fn list(flag: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| CliError::BadParams(format!("bad --{flag} `{s}`")))).collect()
}

#[derive(Args)]
struct SynthArgs {
    /// polynomial, salt, glued-cone or lip-jet.
    name: String,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "heisenberg")]
    group: String,
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Cells per axis, one value or one per axis.
    #[arg(long, default_value = "32")]
    res: String,
    /// Box corner, comma-separated.
    #[arg(long)]
    lo: Option<String>,
    #[arg(long)]
    hi: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, value_enum, default_value_t = Layout::Blob)]
    layout: Layout,
    /// Rational scale of the degree k+1 perturbation, e.g. 1/400.
    #[arg(long, default_value = "1/400")]
    eta: String,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Dataset path; the sidecar goes next to it with a `.truth` suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LusinArgs {
    dataset: PathBuf,
    #[arg(long)]
    k: Option<u32>,
    /// Target as a fraction of L(D).
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    fit_radius: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    j_min: Option<u32>,
    #[arg(long)]
    j_max: Option<u32>,
    #[arg(long)]
    r_floor: Option<f64>,
    /// Whitney modulus scales, comma-separated and ascending.
    #[arg(long)]
    scales: Option<String>,
    #[arg(long)]
    c_emp: Option<f64>,
    #[arg(long, default_value_t = M_LIMIT)]
    m_limit: f64,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

fn stored(path: &std::path::Path, text: &str) -> Result<()> {
    match store(path, text)? {
        Stored::Written => eprintln!("wrote {}", path.display()),
        Stored::Replayed => eprintln!("replayed {} (identical)", path.display()),
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let mut cfg = RunConfig::new(&a.suite);
    cfg.group = a.group.as_deref().map(GroupSource::parse);
    cfg.metric = a.metric.as_deref().map(parse_metric).transpose()?;
    cfg.seed = a.seed;
    cfg.k = a.k;
    cfg.a = a.a;
    cfg.eps = a.eps;
    cfg.resolution = a.resolution;
    cfg.trials = a.trials;
    cfg.samples = a.samples;
    cfg.out = a.out;
    let group_text = match &cfg.group {
        Some(src) => src.load()?.1,
        None => String::new(),
    };
    let canonical = cfg.canonical(&group_text);
    let rep = run_suite(&cfg)?;
    let text = rep.to_text(&canonical);
    print!("{text}");
    stored(&report_path(&cfg.out, &cfg.suite, &canonical), &text)?;
    Ok(rep.pass())
}

fn synth_cmd(a: SynthArgs) -> Result<bool> {
    let mut p = SynthParams::new(a.seed);
    let g = carnot::Group::builtin(&a.group).ok_or_else(|| CliError::BadParams(format!("unknown group `{}`", a.group)))?;
    let n = g.dim();
    p.group = a.group;
    p.k = a.k;
    let res: Vec<usize> = a.res.split(',').map(|v| v.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|_| CliError::BadParams("bad --res".into()))?;
    p.res = if res.len() == 1 { vec![res[0]; n] } else { res };
    let (lo, hi) = match (a.lo, a.hi) {
        (Some(lo), Some(hi)) => (list("lo", &lo)?, list("hi", &hi)?),
        (None, None) if n == 3 => (p.lo.clone(), p.hi.clone()),
        (None, None) => (vec![-1.0; n], vec![1.0; n]),
        _ => return Err(CliError::BadParams("give both --lo and --hi".into())),
    };
    p.lo = lo;
    p.hi = hi;
    p.fraction = a.fraction;
    p.amplitude = a.amplitude;
    p.layout = match a.layout {
        Layout::Blob => SaltLayout::Blob,
        Layout::Scattered => SaltLayout::Scattered,
    };
    p.eta = a.eta.parse().map_err(|_| CliError::BadParams(format!("bad --eta `{}`", a.eta)))?;
    p.theta = a.theta;
    let d = synth(&a.name, &p)?;
    let data = write_dataset(&p.group, p.k, &d.f);
    let side = a.out.with_extension("truth");
    let io = |path: &PathBuf| {
        let path = path.display().to_string();
        move |source| CliError::Io { path, source }
    };
    std::fs::write(&a.out, data).map_err(io(&a.out))?;
    std::fs::write(&side, d.sidecar.to_text()).map_err(io(&side))?;
    eprintln!("wrote {} and {}", a.out.display(), side.display());
    Ok(true)
}

fn lusin(a: LusinArgs) -> Result<bool> {
    let data = read(&a.dataset)?;
    let truth = a.truth.as_deref().map(read).transpose()?;
    let k = match a.k {
        Some(k) => k,
        None => carnot::approx::read_dataset(&data)?.1,
    };
    let mode = match a.mode {
        ModeArg::Ck => Mode::Ck,
        ModeArg::Lip => Mode::Lip,
    };
    let mut cfg = LusinConfig::new(mode, k, a.eps, a.seed);
    if let Some(m) = a.metric.as_deref() {
        cfg.metric = parse_metric(m)?;
    }
    if let Some(v) = a.fit_radius {
        cfg.fit_radius = v;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.j_min {
        cfg.j_min = v;
    }
    if let Some(v) = a.j_max {
        cfg.j_max = v;
    }
    if let Some(v) = a.r_floor {
        cfg.r_floor = v;
    }
    if let Some(v) = a.scales {
        cfg.scales = list("scales", &v)?;
    }
    if let Some(v) = a.c_emp {
        cfg.c_emp = v;
    }
    let run = run_lusin(&data, truth.as_deref(), &cfg, a.m_limit)?;
    print!("{}", run.text);
    if let Some(eps) = run.report.achievable_eps {
        eprintln!("coverage shortfall: achievable eps {:.6} ({:.4} of L(D))", eps, eps / run.report.d_measure);
    }
    for f in &run.flags {
        eprintln!("flag: {f}");
    }
    stored(&report_path(&a.out, &format!("lusin-{}", mode.name()), &run.canonical), &run.text)?;
    Ok(run.pass())
}

fn group_check(spec: &str, tuples: usize, seed: u64) -> Result<bool> {
    let (g, _) = GroupSource::parse(spec).load()?;
    print!("{}", law_text(&g));
    let rep = check_group(&g, tuples, seed);
    for c in &rep.checks {
        println!("{} {} {}", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
    }
    Ok(rep.pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.cmd {
        Cmd::Group { cmd: GroupCmd::Check { spec, tuples, seed } } => group_check(&spec, tuples, seed),
        Cmd::Verify(a) => verify(a),
        Cmd::Synth(a) => synth_cmd(a),
        Cmd::Lusin(a) => lusin(a),
    };
    match out {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
