//! Multi-stage distributionally robust DC optimal power flow.
//!
//! Backward dynamic programming over a χ²-divergence ambiguity set: each
//! stage problem embeds the conic dual of the worst-case expectation, the
//! cost-to-go is sampled on an interpolation grid and replaced by a convex
//! quadratic surrogate, and the resulting policy is evaluated by Monte Carlo
//! simulation.

pub mod ambiguity;
pub mod conic;
pub mod dp;
pub mod error;
pub mod grid;
pub mod opf;
pub mod report;
pub mod sim;
pub mod value;

pub use error::{Error, Result};
