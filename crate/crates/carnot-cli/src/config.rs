//! Run configuration, group resolution and seed splitting.
//!
//! Sub-seeds are `split_seed(seed, fnv1a64(label))`: one label per suite
//! component, so adding a component never shifts the streams of the others.

use std::path::{Path, PathBuf};

use carnot::group::{parse_group_spec, GroupSpecFile};
use carnot::scalar::split_seed;
use carnot::{Group, Metric};

use crate::{CliError, Result};

/// Builtin name (`heisenberg`, `engel`, `abelian-N`) or spec file path.
#[derive(Clone, Debug, PartialEq)]
pub enum GroupSource {
    Builtin(String),
    File(PathBuf),
}

impl GroupSource {
    pub fn parse(s: &str) -> Self {
        if Group::builtin(s).is_some() {
            GroupSource::Builtin(s.to_string())
        } else {
            GroupSource::File(PathBuf::from(s))
        }
    }

    /// The group and its canonical spec text.
    pub fn load(&self) -> Result<(Group, String)> {
        let g = match self {
            GroupSource::Builtin(name) => Group::builtin(name).ok_or_else(|| CliError::BadParams(format!("unknown group `{name}`")))?,
            GroupSource::File(p) => {
                let text = read(p)?;
                parse_group_spec(&text)?.build()?
            }
        };
        let text = GroupSpecFile::from_group(&g).to_text();
        Ok((g, text))
    }
}

pub fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })
}

pub fn parse_metric(s: &str) -> Result<Metric> {
    match s {
        "quasi" => Ok(Metric::Quasi),
        "cc" => Ok(Metric::CcOracle),
        _ => Err(CliError::BadParams(format!("metric must be `quasi` or `cc`, got `{s}`"))),
    }
}

pub fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Quasi => "quasi",
        Metric::CcOracle => "cc",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub group: Option<GroupSource>,
    /// `None`: the suite's default.
    pub metric: Option<Metric>,
    pub seed: Option<u64>,
    pub k: u32,
    pub a: Option<f64>,
    pub eps: f64,
    pub resolution: Option<usize>,
    pub trials: Option<usize>,
    pub samples: Option<usize>,
    pub suite: String,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::MissingSeed(self.suite.clone()))
    }

    pub fn new(suite: &str) -> Self {
        RunConfig {
            group: None,
            metric: None,
            seed: None,
            k: 2,
            a: None,
            eps: 0.12,
            resolution: None,
            trials: None,
            samples: None,
            suite: suite.to_string(),
            out: PathBuf::from("reports"),
        }
    }

    /// Canonical text: every field that can change a report, one per line.
    pub fn canonical(&self, group_text: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("suite {}\n", self.suite));
        s.push_str(&format!("metric {}\n", self.metric.map_or("default", metric_name)));
        s.push_str(&format!("seed {}\n", self.seed.map_or("none".to_string(), |v| v.to_string())));
        s.push_str(&format!("k {}\n", self.k));
        s.push_str(&format!("a {}\n", self.a.map_or("default".to_string(), |v| format!("{v:?}"))));
        s.push_str(&format!("eps {:?}\n", self.eps));
        s.push_str(&format!("resolution {}\n", opt(self.resolution)));
        s.push_str(&format!("trials {}\n", opt(self.trials)));
        s.push_str(&format!("samples {}\n", opt(self.samples)));
        match &self.group {
            Some(_) => s.push_str(group_text),
            None => s.push_str("group default\n"),
        }
        s
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or("default".to_string(), |v| v.to_string())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn sub_seed(seed: u64, label: &str) -> u64 {
    split_seed(seed, fnv1a64(label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_label_stable() {
        assert_eq!(sub_seed(7, "cone"), sub_seed(7, "cone"));
        assert_ne!(sub_seed(7, "cone"), sub_seed(7, "balls"));
        assert_ne!(sub_seed(7, "cone"), sub_seed(8, "cone"));
        assert_eq!(fnv1a64(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn group_sources() {
        assert_eq!(GroupSource::parse("heisenberg"), GroupSource::Builtin("heisenberg".into()));
        assert!(matches!(GroupSource::parse("x/y.grp"), GroupSource::File(_)));
        let (g, text) = GroupSource::parse("engel").load().unwrap();
        assert_eq!(g.dim(), 4);
        assert!(text.contains("layer_dims 2 1 1"));
        assert!(parse_metric("euclid").is_err());
    }
}
