//! Numerical toolkit for stochastic invariance of closed sets.

pub mod error;
pub mod expr;
pub mod fd;
pub mod geometry;
pub mod invariance;
pub mod linop;
pub mod model;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
