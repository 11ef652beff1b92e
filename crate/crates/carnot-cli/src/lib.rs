//! Verification suites, dataset synthesis and the Lusin pipeline behind the
//! `carnot-jet` command.

pub mod config;
pub mod groupcheck;
pub mod lusin_cmd;
pub mod report;
pub mod suites;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("unknown construction `{0}`")]
    UnknownConstruction(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("suite `{0}` is stochastic and needs --seed")]
    MissingSeed(String),
    #[error("report {path} exists with different content")]
    ReplayMismatch { path: String },
    #[error(transparent)]
    Group(#[from] carnot::GroupError),
    #[error(transparent)]
    Estimate(#[from] carnot::estimates::EstimateError),
    #[error(transparent)]
    Jet(#[from] carnot::jets::JetError),
    #[error(transparent)]
    Approx(#[from] carnot::approx::ApproxError),
    #[error(transparent)]
    Lusin(#[from] carnot::lusin::LusinError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CliError>;
