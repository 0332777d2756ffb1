//! Analytic CLT limits for polygenic-score predictions and a deterministic
//! Monte Carlo harness to verify them at desk scale.
//!
//! The library covers three high-dimensional estimators built from GWAS
//! summary statistics — the marginal estimator `Xᵀy/n`, the reference-panel
//! ridge `(WᵀW + n_wλI)⁻¹Xᵀy`, and the traditional ridge
//! `(XᵀX + nλI)⁻¹Xᵀy` — and produces, for each, the limiting normal law of
//! both the individual-level predicted value `zᵀβ̂` and the cohort-level
//! out-of-sample accuracy `A = y_zᵀŷ / (‖y_z‖‖ŷ‖)`.
//!
//! Modules follow the pipeline:
//! - [`spectral`]: covariance models, eigendecomposition, trace summaries;
//! - [`stieltjes`]: companion Stieltjes-transform fixed point, its derivative,
//!   the tilting factor and the eigenvector perturbation factor;
//! - [`estimators`]: the three fits, prediction, and accuracy on realized data;
//! - [`asymptotics`]: every analytic mean/variance and confidence intervals;
//! - [`simulate`]: seeded replication batches generating synthetic cohorts;
//! - [`stats`]: KS, coverage, and variance-ratio diagnostics;
//! - [`cli`]: configuration-driven commands (`analytic`, `simulate`,
//!   `verify`, `sweep`) with machine-readable reports.

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod simulate;
pub mod spectral;
pub mod stats;
pub mod stieltjes;

pub use error::{Error, Result};
