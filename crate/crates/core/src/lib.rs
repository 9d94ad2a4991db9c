//! Numerical toolkit for the Financial Chaos Index (FCIX) and extended Granger
//! causality (eGC) networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`panel`]: price panels, gross returns and multivariate series tables (CSV I/O).
//! - [`fcix`]: the implicit reciprocal pairwise comparison tensor, its constrained
//!   rank-one fit and the FCIX series derived from it.
//! - [`varmodel`]: VAR regressions with an optional lag-0 block, fitted by pivoted QR.
//! - [`egc`]: eGC measures, residual-bootstrap p-values and causal networks.
//! - [`mht`]: Bonferroni and Fisher joint tests plus the chi-square tail.
//! - [`netstats`]: HITS, PageRank, betweenness, bridging and global path statistics.
//! - [`synth`]: seeded ground-truth generators used by tests and the CLI.

pub mod egc;
pub mod error;
pub mod fcix;
pub mod mht;
pub mod netstats;
pub mod panel;
pub mod synth;
pub mod varmodel;

mod linalg;
mod seed;

pub use error::{Error, Result};
