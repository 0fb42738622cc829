//! Large-scale simultaneous hypothesis testing with local and tail-area
//! false discovery rates.
//!
//! The pipeline runs `ingest` (z-values to a histogram), `density` (Poisson
//! regression fit of the mixture density), `null` (theoretical or empirical
//! null), `fdr` (local and tail-area rates), `power` (nonnull diagnostics and
//! sample-size projection) and `accuracy` (delta-method standard errors).
//! `simulate` reproduces the simulation studies and `analysis`/`report` glue
//! the pieces into the batch front end.

pub mod accuracy;
pub mod analysis;
pub mod basis;
pub mod density;
pub mod error;
pub mod fdr;
pub mod ingest;
pub mod null;
pub mod power;
pub mod quad;
pub mod report;
pub mod simulate;
pub mod special;

pub use error::{FdrError, Result, Stage};
