//! Suite reports and their append-only store.
//!
//! A report lives at `<out>/<suite>-<hash>.txt`, `hash` being the first 16 hex
//! digits of SHA-256 over the canonical config. An existing file is never
//! rewritten: identical content is a successful replay, anything else is an
//! error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub suite: String,
    pub checks: Vec<Check>,
    /// Free-form measurement lines.
    pub lines: Vec<String>,
}

impl Report {
    pub fn new(suite: &str) -> Self {
        Report { suite: suite.to_string(), ..Default::default() }
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), pass, detail: detail.into() });
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_text(&self, canonical_config: &str) -> String {
        let mut s = String::new();
        writeln!(s, "carnot-report 1").unwrap();
        writeln!(s, "suite {}", self.suite).unwrap();
        for l in canonical_config.lines() {
            writeln!(s, "config {l}").unwrap();
        }
        for l in &self.lines {
            writeln!(s, "data {l}").unwrap();
        }
        for c in &self.checks {
            let verdict = if c.pass { "pass" } else { "FAIL" };
            if c.detail.is_empty() {
                writeln!(s, "check {} {verdict}", c.name).unwrap();
            } else {
                writeln!(s, "check {} {verdict} {}", c.name, c.detail).unwrap();
            }
        }
        writeln!(s, "result {}", if self.pass() { "pass" } else { "FAIL" }).unwrap();
        s
    }
}

pub fn config_hash(canonical_config: &str) -> String {
    let digest = Sha256::digest(canonical_config.as_bytes());
    hex::encode(&digest[..8])
}

pub fn report_path(out: &Path, name: &str, canonical_config: &str) -> PathBuf {
    out.join(format!("{name}-{}.txt", config_hash(canonical_config)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stored {
    Written,
    Replayed,
}

/// Write `text` at `path` unless it exists; an existing file must match exactly.
pub fn store(path: &Path, text: &str) -> Result<Stored> {
    let io = |source| CliError::Io { path: path.display().to_string(), source };
    if path.exists() {
        let old = std::fs::read_to_string(path).map_err(io)?;
        return if old == text {
            Ok(Stored::Replayed)
        } else {
            Err(CliError::ReplayMismatch { path: path.display().to_string() })
        };
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)?;
    Ok(Stored::Written)
}
