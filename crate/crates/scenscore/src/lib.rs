//! Scoring of hypothetical stress-scenario sets for default-fund sizing.
//!
//! Given historical yield-curve returns, a fitted meta-t distribution
//! per factor group, a universe of spread test portfolios, and one or
//! more scenario sets, the library computes for each portfolio the
//! loss-driving scenario, the most plausible scenario producing the same
//! loss, and the two scores comparing them:
//!
//! * `phi` — density ratio of driver to optimal scenario, in (0, 1];
//! * `psi` — cosine between driver and optimal scenario, in (−1, 1].
//!
//! Modules follow the pipeline: [`marketdata`] ingests yields and builds
//! return matrices; [`distributions`] fits and evaluates the meta-t;
//! [`portfolios`] builds the spread universe; [`scenarios`] generates
//! PCA scenario sets; [`optimizer`] finds the most plausible scenario at
//! a loss level; [`scoring`] assembles records and aggregates.

pub mod distributions;
pub mod error;
pub mod factor;
pub mod marketdata;
pub mod optimizer;
pub mod portfolios;
pub mod scenarios;
pub mod scoring;

pub use error::{Error, Result};
pub use factor::FactorId;
