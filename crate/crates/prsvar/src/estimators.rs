//! The three summary-statistics estimators, prediction, and out-of-sample
//! accuracy.
//!
//! Designs drawn under a non-identity Σ are kept in factored form
//! X = X₀·Σ^{1/2} (raw matrix plus a shared covariance handle); fits apply
//! the identical operator without materializing the colored matrix, which
//! matters when thousands of replications each draw a fresh design.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{gemm, CovarianceModel};

/// Relative residual bound for the ridge-type solves.
const SOLVE_RTOL: f64 = 1e-8;

/// Generating law of the standardized pre-coloring entries.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntryDist {
    Gaussian,
    Rademacher,
    /// Standardized Binomial(2, maf) genotype dosages.
    Genotype { maf: f64 },
}

impl EntryDist {
    /// E(x₀⁴) of the standardized entry law.
    pub fn kurtosis(&self) -> f64 {
        match self {
            EntryDist::Gaussian => 3.0,
            EntryDist::Rademacher => 1.0,
            EntryDist::Genotype { maf } => {
                let q = *maf;
                let s2 = 2.0 * q * (1.0 - q);
                let c0 = -2.0 * q;
                let c1 = 1.0 - 2.0 * q;
                let c2 = 2.0 - 2.0 * q;
                let e4 = (1.0 - q) * (1.0 - q) * c0.powi(4)
                    + 2.0 * q * (1.0 - q) * c1.powi(4)
                    + q * q * c2.powi(4);
                e4 / (s2 * s2)
            }
        }
    }
}

/// An n×p design, either materialized or as raw i.i.d. entries with a
/// right-coloring by Σ^{1/2}.
#[derive(Debug, Clone)]
pub enum Design {
    Dense(DMatrix<f64>),
    Colored {
        raw: DMatrix<f64>,
        cov: Arc<CovarianceModel>,
    },
}

impl Design {
    pub fn nrows(&self) -> usize {
        match self {
            Design::Dense(m) => m.nrows(),
            Design::Colored { raw, .. } => raw.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Design::Dense(m) => m.ncols(),
            Design::Colored { raw, .. } => raw.ncols(),
        }
    }

    /// X v.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Design::Dense(m) => m * v,
            Design::Colored { raw, cov } => raw * (cov.sqrt_matrix() * v),
        }
    }

    /// Xᵀ u.
    pub fn tr_mul_vec(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Design::Dense(m) => m.tr_mul(u),
            Design::Colored { raw, cov } => cov.sqrt_matrix() * raw.tr_mul(u),
        }
    }

    /// The colored matrix itself.
    pub fn materialize(&self) -> DMatrix<f64> {
        match self {
            Design::Dense(m) => m.clone(),
            Design::Colored { raw, cov } => gemm(raw, cov.sqrt_matrix()),
        }
    }
}

/// A cohort: design plus optional response (reference panels carry none).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub design: Design,
    pub response: Option<DVector<f64>>,
    pub entry_dist: EntryDist,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    fn response(&self) -> Result<&DVector<f64>> {
        self.response
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no response".into()))
    }
}

/// Sparse causal effects; zero off the mask.
#[derive(Debug, Clone)]
pub struct EffectVector {
    pub beta: DVector<f64>,
    pub causal_mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorKind {
    Marginal,
    ReferenceRidge { lambda: f64 },
    Ridge { lambda: f64 },
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub beta_hat: DVector<f64>,
    pub kind: EstimatorKind,
}

/// The summary statistics a reference-panel fit needs from the training
/// cohort: Xᵀy and the training sample size.
#[derive(Debug, Clone)]
pub struct SummaryStats {
    pub xty: DVector<f64>,
    pub n: usize,
}

impl SummaryStats {
    pub fn from_training(train: &Dataset) -> Result<Self> {
        let y = train.response()?;
        Ok(SummaryStats {
            xty: train.design.tr_mul_vec(y),
            n: train.n(),
        })
    }
}

/// Out-of-sample accuracy with a degeneracy marker for ŷ = 0.
#[derive(Debug, Clone, Copy)]
pub struct AccuracyValue {
    pub value: f64,
    pub degenerate: bool,
}

/// β̂_M = Xᵀy/n.
pub fn fit_marginal(train: &Dataset) -> Result<Estimate> {
    let y = train.response()?;
    let n = train.n();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let beta_hat = train.design.tr_mul_vec(y) / n as f64;
    Ok(Estimate {
        beta_hat,
        kind: EstimatorKind::Marginal,
    })
}

/// β̂_W(λ) = (WᵀW + n_wλI)⁻¹ Xᵀy, solved by Cholesky factorization.
pub fn fit_reference_ridge(
    train_summary: &SummaryStats,
    panel: &Dataset,
    lambda: f64,
) -> Result<Estimate> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let n_w = panel.n();
    let beta_hat = ridge_solve(&panel.design, n_w as f64 * lambda, &train_summary.xty)?;
    Ok(Estimate {
        beta_hat,
        kind: EstimatorKind::ReferenceRidge { lambda },
    })
}

/// β̂_R(λ) = (XᵀX + nλI)⁻¹ Xᵀy.
pub fn fit_ridge(train: &Dataset, lambda: f64) -> Result<Estimate> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let y = train.response()?;
    let xty = train.design.tr_mul_vec(y);
    let n = train.n();
    let beta_hat = ridge_solve(&train.design, n as f64 * lambda, &xty)?;
    Ok(Estimate {
        beta_hat,
        kind: EstimatorKind::Ridge { lambda },
    })
}

/// Solve (AᵀA + cI)β = u for a design A and shift c > 0.
///
/// Colored designs solve the congruent system (G₀ + cΣ⁻¹)w = Σ^{-1/2}u,
/// β = Σ^{-1/2}w, avoiding the p×p sandwich products per call; the residual
/// is always checked against the original operator.
fn ridge_solve(design: &Design, shift: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
    let p = design.ncols();
    let beta = match design {
        Design::Dense(a) => {
            let at = a.transpose();
            let mut g = gemm(&at, a);
            for i in 0..p {
                g[(i, i)] += shift;
            }
            cholesky_solve(g, u)?
        }
        Design::Colored { raw, cov } => match cov.inverse() {
            Some(inv) => {
                let at = raw.transpose();
                let mut g = gemm(&at, raw);
                g += inv * shift;
                let sinv = cov.apply_spectral_map(|s| 1.0 / s.sqrt(), u);
                let w = cholesky_solve(g, &sinv)?;
                cov.apply_spectral_map(|s| 1.0 / s.sqrt(), &w)
            }
            None => {
                // Singular Σ: fall back to the materialized design.
                let a = design.materialize();
                let at = a.transpose();
                let mut g = gemm(&at, &a);
                for i in 0..p {
                    g[(i, i)] += shift;
                }
                cholesky_solve(g, u)?
            }
        },
    };

    let residual = design.tr_mul_vec(&design.mul_vec(&beta)) + &beta * shift - u;
    let bound = SOLVE_RTOL * u.norm();
    if residual.norm() > bound.max(1e-300) {
        return Err(Error::Validation(format!(
            "ridge solve residual {:.3e} exceeds {:.3e}",
            residual.norm(),
            bound
        )));
    }
    Ok(beta)
}

fn cholesky_solve(g: DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Validation("ridge system is not positive definite".into()))?;
    Ok(chol.solve(u))
}

/// zᵀβ̂ for one test point.
pub fn predict(est: &Estimate, z: &DVector<f64>) -> Result<f64> {
    if z.len() != est.beta_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: z has {} entries, estimate has {}",
            z.len(),
            est.beta_hat.len()
        )));
    }
    Ok(z.dot(&est.beta_hat))
}

/// A = y_zᵀŷ / (‖y_z‖·‖ŷ‖) with ŷ = Zβ̂.
///
/// ŷ = 0 yields A = 0 with the degenerate flag set so Monte Carlo batches
/// never abort on the measure-zero event.
pub fn accuracy(est: &Estimate, test: &Dataset) -> Result<AccuracyValue> {
    let y_z = test.response()?;
    let y_norm = y_z.norm();
    if y_norm == 0.0 {
        return Err(Error::InvalidArgument("test response has zero norm".into()));
    }
    let y_hat = test.design.mul_vec(&est.beta_hat);
    let hat_norm = y_hat.norm();
    if hat_norm == 0.0 {
        return Ok(AccuracyValue {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(AccuracyValue {
        value: y_z.dot(&y_hat) / (y_norm * hat_norm),
        degenerate: false,
    })
}
