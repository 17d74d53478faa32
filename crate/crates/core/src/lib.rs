//! Linear and library-based reduced models for affine-parametric elliptic PDEs.

pub mod affine;
pub mod bounds;
pub mod error;
pub mod estimation;
pub mod fem;
pub mod greedy;
pub mod index;
pub mod library;
pub mod parallel;
pub mod partition;
pub mod rng;
pub mod taylor;
pub mod truth;
pub mod tuning;

pub use error::{Error, Result};
