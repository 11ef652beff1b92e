//! `lusin`: run the pipeline on a dataset file and store the report.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use carnot::approx::read_dataset;
use carnot::lusin::{run_pipeline, LusinConfig, LusinReport, Mode};
use carnot::Group;

use crate::synth::Sidecar;
use crate::{CliError, Result};

/// Default `M` above which a lip report carries the `unbounded_growth` flag.
pub const M_LIMIT: f64 = 100.0;

#[derive(Clone, Debug)]
pub struct LusinRun {
    pub report: LusinReport,
    pub text: String,
    /// Canonical config: dataset and sidecar digests plus every pipeline knob.
    pub canonical: String,
    pub flags: Vec<String>,
}

impl LusinRun {
    /// Pipeline pass with no raised flag.
    pub fn pass(&self) -> bool {
        self.report.pass && self.flags.is_empty()
    }
}

fn digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// `cfg.k` and `cfg.mode` are taken as given; the dataset's own `k` is only a default.
pub fn run_lusin(dataset: &str, truth: Option<&str>, cfg: &LusinConfig, m_limit: f64) -> Result<LusinRun> {
    let (name, _, f) = read_dataset(dataset)?;
    let group = Group::builtin(&name).ok_or_else(|| CliError::BadParams(format!("dataset group `{name}` is not builtin")))?;
    let sidecar = truth.map(Sidecar::parse).transpose()?;
    let truth_poly = sidecar.as_ref().and_then(|s| s.piece("truth"));
    let report = run_pipeline(&group, &f, cfg, truth_poly)?;
    let mut flags = Vec::new();
    if let (Mode::Lip, Some(l)) = (cfg.mode, &report.lip) {
        if l.m > m_limit {
            flags.push(format!("unbounded_growth m {:?} limit {m_limit:?}: L(D) must be finite and the data bounded on it", l.m));
        }
    }
    let mut canonical = String::new();
    writeln!(canonical, "lusin").unwrap();
    writeln!(canonical, "dataset {}", digest(dataset)).unwrap();
    writeln!(canonical, "truth {}", truth.map_or("none".to_string(), digest)).unwrap();
    writeln!(canonical, "m_limit {m_limit:?}").unwrap();
    writeln!(canonical, "config {cfg:?}").unwrap();
    let mut text = report.to_text();
    for fl in &flags {
        writeln!(text, "flag {fl}").unwrap();
    }
    Ok(LusinRun { report, text, canonical, flags })
}
