//! Calculus on Carnot groups.
//!
//! Exact group laws from structure constants, homogeneous polynomials,
//! left-invariant derivatives and Taylor jets, together with numerical
//! diagnostics for approximate differentiability and Lusin-type
//! approximation of sampled functions.

pub mod approx;
pub mod diffops;
pub mod estimates;
pub mod group;
pub mod jets;
pub mod lusin;
pub mod poly;
pub mod scalar;

pub use group::{Group, GroupError, GroupKind, Metric, StratificationSpec, StructureConstants};
pub use poly::{MultiIndex, Poly};
pub use scalar::{Rational, Scalar};
