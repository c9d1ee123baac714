//! Scale construction for ordinal survey items: codebook-driven recoding,
//! polychoric correlations, exploratory and confirmatory bifactor factor
//! analysis, omega reliability, regression factor scores, 0-100 indexing with
//! k-means burden bands, and cluster-robust GLM validation. A simulation
//! module generates data from known bifactor models for recovery tests.

pub mod cfa;
pub mod codebook;
pub mod efa;
pub mod error;
pub mod linalg;
pub mod normal;
pub mod optim;
pub mod polycorr;
pub mod scoring;
pub mod seed;
pub mod simulate;
pub mod validation;

pub use error::{Error, Result};
