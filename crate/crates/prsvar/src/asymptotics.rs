//! Analytic limiting laws: the mean and variance of every estimator's
//! predicted value and accuracy statistic, plus confidence intervals.
//!
//! Individual-level laws condition on the realized test point z and effect
//! vector β; cohort-level laws are population statements taking only the
//! covariance model and population parameters. Everywhere the noise scale is
//! needed, h_β^{-2}‖Σ^{1/2}β‖² is expanded to ‖Σ^{1/2}β‖² + σ_ε² (exact
//! under the heritability definition and finite at β = 0).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::EffectVector;
use crate::spectral::CovarianceModel;
use crate::stieltjes::{self, StieltjesPoint};

/// Sample sizes, dimensions, heritabilities, and moment parameters of the
/// generating model.
///
/// Aspect ratios default to the exact finite-size ratios (φ_n = p/n,
/// φ_d = n/n_w, φ_w = p/n_w); explicit overrides are validated for
/// consistency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationParams {
    pub n: usize,
    pub n_z: usize,
    pub n_w: Option<usize>,
    pub p: usize,
    pub m: usize,
    /// Heritability of the training trait, in [0, 1).
    pub h2_beta: f64,
    /// Heritability of the testing trait, in [0, 1).
    pub h2_beta_z: f64,
    /// Total effect scale σ_β²; per-entry variance is σ_β²/p.
    pub sigma_beta2: f64,
    /// E(x₀⁴) of the standardized entry law (3 Gaussian, 1 Rademacher).
    pub entry_kurtosis: f64,
    /// κ_β = p²·E(β⁴)/σ_β⁴ for nonzero effects (3 Gaussian, 1 two-point).
    pub effect_kurtosis_ratio: f64,
    /// Ridge penalty, where applicable.
    pub lambda: Option<f64>,
    pub phi_d: Option<f64>,
    pub phi_w: Option<f64>,
    pub phi_n: Option<f64>,
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_z == 0 || self.p == 0 {
            return Err(Error::InvalidArgument(
                "sample sizes and dimension must be positive".into(),
            ));
        }
        if self.m > self.p {
            return Err(Error::InvalidArgument(format!(
                "m = {} exceeds p = {}",
                self.m, self.p
            )));
        }
        for (name, h) in [("h2_beta", self.h2_beta), ("h2_beta_z", self.h2_beta_z)] {
            if !(0.0..1.0).contains(&h) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {h}"
                )));
            }
        }
        if self.sigma_beta2 <= 0.0 {
            return Err(Error::InvalidArgument("sigma_beta2 must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if l <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "lambda must be positive, got {l}"
                )));
            }
        }
        // φ_w = φ_d · (p/n) consistency when all three are supplied.
        if let (Some(d), Some(w), Some(nn)) = (self.phi_d, self.phi_w, self.phi_n) {
            if (w - d * nn).abs() > 1e-12 * w.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "aspect ratios inconsistent: phi_w = {w} but phi_d * phi_n = {}",
                    d * nn
                )));
            }
        }
        Ok(())
    }

    pub fn phi_n(&self) -> f64 {
        self.phi_n.unwrap_or(self.p as f64 / self.n as f64)
    }

    pub fn phi_d(&self) -> Result<f64> {
        match (self.phi_d, self.n_w) {
            (Some(v), _) => Ok(v),
            (None, Some(n_w)) => Ok(self.n as f64 / n_w as f64),
            (None, None) => Err(Error::InvalidArgument(
                "phi_d requires n_w or an explicit override".into(),
            )),
        }
    }

    pub fn phi_w(&self) -> Result<f64> {
        match (self.phi_w, self.n_w) {
            (Some(v), _) => Ok(v),
            (None, Some(n_w)) => Ok(self.p as f64 / n_w as f64),
            (None, None) => Err(Error::InvalidArgument(
                "phi_w requires n_w or an explicit override".into(),
            )),
        }
    }

    pub fn lambda(&self) -> Result<f64> {
        self.lambda
            .ok_or_else(|| Error::InvalidArgument("lambda required for ridge-type laws".into()))
    }

    /// σ_ε² = σ_β²γ₁(1 − h²)/h².
    pub fn sigma_eps2(&self, gamma1: f64) -> f64 {
        self.sigma_beta2 * gamma1 * (1.0 - self.h2_beta) / self.h2_beta
    }

    /// The testing-cohort analogue of `sigma_eps2`.
    pub fn sigma_eps2_z(&self, gamma1: f64) -> f64 {
        self.sigma_beta2 * gamma1 * (1.0 - self.h2_beta_z) / self.h2_beta_z
    }

    /// E(β⁴) = κ_β σ_β⁴ / p² for nonzero entries.
    pub fn effect_fourth_moment(&self) -> f64 {
        self.effect_kurtosis_ratio * self.sigma_beta2 * self.sigma_beta2
            / (self.p as f64 * self.p as f64)
    }

    /// Optimal traditional-ridge penalty λ* = φ_n(1 − h_β²)/h_β².
    pub fn optimal_lambda(&self) -> f64 {
        self.phi_n() * (1.0 - self.h2_beta) / self.h2_beta
    }
}

/// Normalizer of the raw statistic in a CLT display.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    SqrtN,
    SqrtP,
    SqrtEtaNz,
}

/// Symbolic Berry–Esseen rate tag carried by each theorem.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BeRate {
    /// n^{-1/2}
    InvSqrtN,
    /// n_z^{-1/2}
    InvSqrtNz,
    /// m^{-1/5}
    InvFifthRootM,
    /// n^{-1/5}
    InvFifthRootN,
    /// max{n_z^{-1/2}, n^{-1/2}, m^{-1/5}}
    MaxCombination,
    /// The theorem states convergence without an explicit rate.
    Unspecified,
}

/// A limiting normal law for one statistic: `center` and the standard
/// deviation of the raw statistic (the theorem's σ divided by its scaling).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianLimit {
    pub center: f64,
    pub sd: f64,
    pub scaling: Scaling,
    /// Variance-deflation ratio for accuracy laws; ≥ 1 for the naive law.
    pub eta: Option<f64>,
    pub rate: BeRate,
    pub degenerate: bool,
    /// κ₁, κ₂, κ₃ diagnostics (marginal accuracy only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappas: Option<[f64; 3]>,
}

impl GaussianLimit {
    fn degenerate(scaling: Scaling, rate: BeRate) -> Self {
        GaussianLimit {
            center: 0.0,
            sd: 0.0,
            scaling,
            eta: None,
            rate,
            degenerate: true,
            kappas: None,
        }
    }

    /// (x − center)/sd.
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.center) / self.sd
    }
}

/// Theorem 3.1-style law of zᵀβ̂_M conditional on (z, β):
/// center zᵀΣβ, variance {E(x₀⁴−3)Σᵢ(Σ^{1/2}z)ᵢ²(Σ^{1/2}β)ᵢ²
/// + ‖Σ^{1/2}z‖²(‖Σ^{1/2}β‖² + σ_ε²) + 2(zᵀΣβ)²}/n.
pub fn marginal_individual(
    cov: &CovarianceModel,
    z: &DVector<f64>,
    beta: &EffectVector,
    params: &PopulationParams,
) -> GaussianLimit {
    let az = cov.apply_spectral_map(|s| s.sqrt(), z);
    let ab = cov.apply_spectral_map(|s| s.sqrt(), &beta.beta);
    let center = az.dot(&ab);
    let kurt_term: f64 = az
        .iter()
        .zip(ab.iter())
        .map(|(&a, &b)| a * a * b * b)
        .sum();
    let gamma1 = cov.spectrum_summary().gamma[0];
    let sigma_eps2 = params.sigma_eps2(gamma1);
    let var = (params.entry_kurtosis - 3.0) * kurt_term
        + az.norm_squared() * (ab.norm_squared() + sigma_eps2)
        + 2.0 * center * center;
    GaussianLimit {
        center,
        sd: (var / params.n as f64).sqrt(),
        scaling: Scaling::SqrtN,
        eta: None,
        rate: BeRate::InvSqrtN,
        degenerate: false,
    kappas: None,
    }
}

/// Theorem 3.2: the quadratic form βᵀΣβ. Center σ_β²Tr(ΣI_m)/p; variance
/// {p(E(β⁴) − 3σ_β⁴/p²)Σᵢ(ΣI_m)ᵢᵢ² + 2σ_β⁴Tr((ΣI_m)²)/p}/p.
pub fn quadratic_form(cov: &CovarianceModel, params: &PopulationParams) -> GaussianLimit {
    if cov.mask_count() == 0 {
        return GaussianLimit::degenerate(Scaling::SqrtP, BeRate::InvFifthRootM);
    }
    let p = cov.dim() as f64;
    let gamma1 = cov.spectrum_summary().gamma[0];
    let center = params.sigma_beta2 * gamma1;
    let sb4 = params.sigma_beta2 * params.sigma_beta2;
    let diag_sq = cov.masked_diag_sq_sum(cov.matrix());
    let pair_sq = cov.masked_pair_sq_sum(cov.matrix());
    let var_scaled = p * (params.effect_fourth_moment() - 3.0 * sb4 / (p * p)) * diag_sq
        + 2.0 * sb4 * pair_sq / p;
    GaussianLimit {
        center,
        sd: (var_scaled / p).sqrt(),
        scaling: Scaling::SqrtP,
        eta: None,
        rate: BeRate::InvFifthRootM,
        degenerate: false,
        kappas: None,
    }
}

/// Theorem 3.3 / Corollary 3.4: the accuracy A(β̂_M) at cohort level.
///
/// With `homogeneous_ld` the γ-terms in the mean, q_M1 and q_M2 are replaced
/// by (m/p)·ω-terms (Assumption 3); the masked q_M3 sums stay exact. The law
/// of A is invariant under Σ → cΣ at fixed heritability, which pins the
/// noise cross-term in q_M2 to γ₁γ₃/h² (the main-text form).
pub fn marginal_accuracy(
    cov: &CovarianceModel,
    params: &PopulationParams,
    homogeneous_ld: bool,
) -> GaussianLimit {
    let s = cov.spectrum_summary();
    let kappas = kappa_diagnostics(params);
    if cov.mask_count() == 0 || params.h2_beta == 0.0 || params.h2_beta_z == 0.0 {
        let mut lim = GaussianLimit::degenerate(Scaling::SqrtEtaNz, BeRate::MaxCombination);
        lim.kappas = Some(kappas);
        return lim;
    }
    let (g1, g2, g3) = if homogeneous_ld {
        (
            s.m_over_p * s.omega[0],
            s.m_over_p * s.omega[1],
            s.m_over_p * s.omega[2],
        )
    } else {
        (s.gamma[0], s.gamma[1], s.gamma[2])
    };
    let h2 = params.h2_beta;
    let h2z = params.h2_beta_z;
    let p_over_n = params.p as f64 / params.n as f64;
    let nz_over_n = params.n_z as f64 / params.n as f64;
    let p = params.p as f64;
    let n_z = params.n_z as f64;

    let denom_core = (g1 / h2) * p_over_n * s.omega[1] + g3;
    let center = h2z.sqrt() * g2 / (denom_core * g1).sqrt();

    let q1 = g1 / h2z * denom_core;
    let q2 = nz_over_n * g1 * g3 / h2 + 2.0 * g2 * g2 * (nz_over_n + 1.0);
    let sq = cov.squared();
    let q3 = n_z
        * ((params.effect_kurtosis_ratio - 3.0) / (p * p) * cov.masked_diag_sq_sum(sq)
            + 2.0 / (p * p) * cov.masked_pair_sq_sum(sq));
    let eta = q1 / (q1 + q2 + q3);

    GaussianLimit {
        center,
        sd: 1.0 / (eta * n_z).sqrt(),
        scaling: Scaling::SqrtEtaNz,
        eta: Some(eta),
        rate: BeRate::MaxCombination,
        degenerate: false,
        kappas: Some(kappas),
    }
}

fn kappa_diagnostics(params: &PopulationParams) -> [f64; 3] {
    let (m, p, n, n_z) = (
        params.m as f64,
        params.p as f64,
        params.n as f64,
        params.n_z as f64,
    );
    let k1 = (m / p).max(p / n);
    let k2 = k1.max(n_z * m / (n * p));
    let k3 = k2.max(n_z * m / (p * p));
    [k1, k2, k3]
}

/// Theorem 4.1: zᵀβ̂_W(λ) conditional on (z, β). Center
/// (φ_d/λ)zᵀ(I+𝔪Σ)⁻¹Σβ; variance (φ_d²/λ²){2·center-core² +
/// zᵀ(I+𝔪Σ)⁻²Σz·(‖Σ^{1/2}β‖² + σ_ε²)/𝔯}/n.
pub fn reference_individual(
    cov: &CovarianceModel,
    z: &DVector<f64>,
    beta: &EffectVector,
    params: &PopulationParams,
    point: &StieltjesPoint,
) -> Result<GaussianLimit> {
    let phi_d = params.phi_d()?;
    let lambda = point.lambda;
    let m = point.m_value;
    let core = z.dot(&cov.apply_spectral_map(|s| s / (1.0 + m * s), &beta.beta));
    let center = phi_d / lambda * core;

    let quad_z = z.dot(&cov.apply_spectral_map(|s| s / ((1.0 + m * s) * (1.0 + m * s)), z));
    let sb_norm2 = cov
        .apply_spectral_map(|s| s.sqrt(), &beta.beta)
        .norm_squared();
    let sigma_eps2 = params.sigma_eps2(cov.spectrum_summary().gamma[0]);
    let var = phi_d * phi_d / (lambda * lambda)
        * (2.0 * core * core + quad_z * (sb_norm2 + sigma_eps2) / point.tilting);
    Ok(GaussianLimit {
        center,
        sd: (var / params.n as f64).sqrt(),
        scaling: Scaling::SqrtN,
        eta: None,
        rate: BeRate::InvSqrtN,
        degenerate: false,
        kappas: None,
    })
}

/// Theorem 4.2: the accuracy A(β̂_W(λ)) at cohort level, with the
/// eigenvector perturbation factor 𝔫(Σ, m) entering q_W3.
pub fn reference_accuracy(
    cov: &CovarianceModel,
    params: &PopulationParams,
    point: &StieltjesPoint,
) -> Result<GaussianLimit> {
    let phi_w = params.phi_w()?;
    if cov.mask_count() == 0 || params.h2_beta == 0.0 || params.h2_beta_z == 0.0 {
        return Ok(GaussianLimit::degenerate(
            Scaling::SqrtEtaNz,
            BeRate::InvFifthRootN,
        ));
    }
    let rs = cov.resolvent_summary(point.m_value, point.m_prime, phi_w, point.lambda)?;
    let gamma1 = cov.spectrum_summary().gamma[0];
    let (h2, h2z) = (params.h2_beta, params.h2_beta_z);
    let (n, n_z, p) = (params.n as f64, params.n_z as f64, params.p as f64);
    let r = point.tilting;
    let [rho0, rho1, rho2] = rs.rho;

    let center =
        r.sqrt() * rho0 * h2z.sqrt() / ((p / (n * h2)) * gamma1 * gamma1 * rho1 + gamma1 * rho2).sqrt();

    let q1 = (1.0 / r) * (p * rho1 * gamma1 / h2 + n * rho2) * (gamma1 / h2z);
    let q2 = (1.0 / r) * n_z * (gamma1 / h2) * rho2 + 2.0 * (n + n_z) * rho0 * rho0;

    // 𝔐 = (I + 𝔪Σ)⁻¹Σ²; Tr(𝔐²) from the spectrum, masked sums from the
    // dense operator.
    let m_val = point.m_value;
    let m_op = cov.spectral_map(|s| s * s / (1.0 + m_val * s));
    let tr_m2: f64 = cov
        .eigenvalues_slice()
        .iter()
        .map(|&s| {
            let v = s * s / (1.0 + m_val * s);
            v * v
        })
        .sum();
    let nfac = stieltjes::perturbation_factor(cov, point);
    let q3 = n * n_z
        * ((params.effect_kurtosis_ratio - 3.0) / (p * p) * cov.masked_diag_sq_sum(&m_op)
            + 2.0 / (p * p) * (cov.masked_pair_sq_sum(&m_op) + nfac * tr_m2));
    let eta = q1 / (q1 + q2 + q3);

    Ok(GaussianLimit {
        center,
        sd: 1.0 / (eta * n_z).sqrt(),
        scaling: Scaling::SqrtEtaNz,
        eta: Some(eta),
        rate: BeRate::InvFifthRootN,
        degenerate: false,
        kappas: None,
    })
}

fn ridge_point(
    cov: &CovarianceModel,
    params: &PopulationParams,
    point_n: &StieltjesPoint,
    use_optimal_lambda: bool,
) -> Result<(f64, StieltjesPoint)> {
    if use_optimal_lambda {
        let lambda = params.optimal_lambda();
        let point = stieltjes::solve_fixed_point(
            cov.eigenvalues_slice(),
            params.phi_n(),
            lambda,
            stieltjes::DEFAULT_TOL,
            stieltjes::DEFAULT_MAX_ITER,
        )?;
        Ok((lambda, point))
    } else {
        Ok((point_n.lambda, *point_n))
    }
}

fn require_nonsingular(cov: &CovarianceModel) -> Result<()> {
    if cov.inverse().is_none() {
        return Err(Error::InvalidArgument(
            "covariance is singular; the traditional-ridge law needs Σ^{-1}".into(),
        ));
    }
    Ok(())
}

/// Theorem S1 (Gaussian data): zᵀβ̂_R(λ) conditional on (z, β).
///
/// The mean uses the identity Σ⁻¹(I − (I+𝔪Σ)⁻¹) = 𝔪(I+𝔪Σ)⁻¹, so only the
/// variance genuinely requires Σ⁻¹. With `use_optimal_lambda` the penalty is
/// overwritten by λ* and the Stieltjes point re-solved there.
pub fn ridge_individual(
    cov: &CovarianceModel,
    z: &DVector<f64>,
    beta: &EffectVector,
    params: &PopulationParams,
    point_n: &StieltjesPoint,
    use_optimal_lambda: bool,
) -> Result<GaussianLimit> {
    require_nonsingular(cov)?;
    let (lambda, pt) = ridge_point(cov, params, point_n, use_optimal_lambda)?;
    let phi_n = params.phi_n();
    let rs = cov.resolvent_summary(pt.m_value, pt.m_prime, phi_n, lambda)?;
    let (g, h) = (rs.g_factor, rs.h_factor);
    let m = pt.m_value;

    let resolvent_beta = cov.apply_spectral_map(|s| 1.0 / (1.0 + m * s), &beta.beta);
    let center = z.dot(&beta.beta) - (lambda * m / g) * z.dot(&resolvent_beta);

    let s1 = z.dot(&resolvent_beta);
    let s2 = beta
        .beta
        .dot(&cov.apply_spectral_map(|s| s / ((1.0 + m * s) * (1.0 + m * s)), &beta.beta));
    let z_inv_quad = z.dot(&cov.apply_spectral_map(|s| 1.0 / s, z));
    let sigma_eps2 = params.sigma_eps2(cov.spectrum_summary().gamma[0]);
    let (ell1, ell2) = (rs.ell[0], rs.ell[1]);

    let var = h * s1 * s1 / (g * g)
        + (g * sigma_eps2
            + (lambda * pt.m_prime / m)
                * (lambda * m * s2 - sigma_eps2 * phi_n * (ell1 - ell2)))
            * z_inv_quad
            / (g * g);
    Ok(GaussianLimit {
        center,
        sd: (var / params.n as f64).sqrt(),
        scaling: Scaling::SqrtN,
        eta: None,
        rate: BeRate::Unspecified,
        degenerate: false,
        kappas: None,
    })
}

/// Theorem S2 (Gaussian data): the accuracy A(β̂_R(λ)) at cohort level.
pub fn ridge_accuracy(
    cov: &CovarianceModel,
    params: &PopulationParams,
    point_n: &StieltjesPoint,
    use_optimal_lambda: bool,
) -> Result<GaussianLimit> {
    require_nonsingular(cov)?;
    if cov.mask_count() == 0 || params.h2_beta == 0.0 || params.h2_beta_z == 0.0 {
        return Ok(GaussianLimit::degenerate(
            Scaling::SqrtEtaNz,
            BeRate::Unspecified,
        ));
    }
    let (lambda, pt) = ridge_point(cov, params, point_n, use_optimal_lambda)?;
    let phi_n = params.phi_n();
    let rs = cov.resolvent_summary(pt.m_value, pt.m_prime, phi_n, lambda)?;
    let (g, h) = (rs.g_factor, rs.h_factor);
    let m = pt.m_value;
    let r = pt.tilting;
    let gamma1 = cov.spectrum_summary().gamma[0];
    let sb2 = params.sigma_beta2;
    let sb4 = sb2 * sb2;
    let noise_ratio = (1.0 - params.h2_beta) / params.h2_beta;
    let (n, n_z, p) = (params.n as f64, params.n_z as f64, params.p as f64);

    // Cancellation-free building blocks, with D = (I+𝔪Σ)⁻¹:
    //   t1  = Tr(ΣD)/p    = (1 − ℓ₁)/𝔪,     t2  = Tr(ΣD²)/p    = (ℓ₁ − ℓ₂)/𝔪,
    //   t1m = Tr(ΣD I_m)/p = (m/p − ð₁)/𝔪,  t2m = Tr(ΣD²I_m)/p = (ð₁ − ð₂)/𝔪,
    // plus ϱ₀ = Tr(DΣ²I_m)/p = (γ₁ − t1m)/𝔪, ϱ₂ = Tr(D²Σ³I_m)/p and the
    // fixed-point identities 𝔤 = λ𝔪 and 1 − 𝔯 = φ𝔪²ϱ₁.
    let t1 = cov.spectral_trace(|s| s / (1.0 + m * s));
    let t2 = cov.spectral_trace(|s| s / (1.0 + m * s).powi(2));
    let t1m = cov.masked_spectral_trace(|s| s / (1.0 + m * s));
    let t2m = cov.masked_spectral_trace(|s| s / (1.0 + m * s).powi(2));
    let one_minus_r = phi_n * m * m * rs.rho[1];

    let tau0 = sb2 * m * rs.rho[0];
    let zeta1 = sb2 * (m * m * rs.rho[2] + (one_minus_r / r) * t2m)
        + noise_ratio * sb2 * gamma1 * phi_n / lambda * (t1 - t2 / r);
    let zeta2 = sb2 * gamma1 / params.h2_beta_z;
    let tau1 = zeta1 * zeta2;
    // τ₂ = σ_β²(γ₁ − t1m) coincides with τ₀ via 𝔤 = λ𝔪.
    let tau2 = tau0;
    let tau3 = n_z * sb4 / (n * g * g)
        * (h * t1m * t1m
            + gamma1
                * (noise_ratio * gamma1 * g
                    + lambda * pt.m_prime * (lambda * t2m - noise_ratio * gamma1 * phi_n * t2)));

    // 𝔑 = {(𝔤/λ)Σ − I + (I+𝔪Σ)⁻¹} I_m; with 𝔤 = λ𝔪 the spectral function
    // collapses to 𝔪²σ²/(1+𝔪σ). Masked sums over the symmetric part.
    let n_op = cov.spectral_map(|s| m * m * s * s / (1.0 + m * s));
    let tau4_sq = n_z * lambda * lambda / (g * g)
        * ((params.effect_fourth_moment() - 3.0 * sb4 / (p * p)) * cov.masked_diag_sq_sum(&n_op)
            + 2.0 * sb4 / (p * p) * cov.masked_pair_sq_sum(&n_op));

    let center = tau0 / tau1.sqrt();
    let eta = tau1 / (tau1 + 2.0 * tau2 * tau2 + tau3 + tau4_sq);
    Ok(GaussianLimit {
        center,
        sd: 1.0 / (eta * n_z).sqrt(),
        scaling: Scaling::SqrtEtaNz,
        eta: Some(eta),
        rate: BeRate::Unspecified,
        degenerate: false,
        kappas: None,
    })
}

/// Realized per-replication quantities the naive law conditions on.
#[derive(Debug, Clone)]
pub struct RealizedPrediction {
    /// Zβ for the realized testing design and effects.
    pub z_beta: DVector<f64>,
    /// ŷ = Zβ̂.
    pub y_hat: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Lemma S1: the naive law of A that treats β̂ as deterministic. Its η_F ≥ 1
/// always, i.e. the naive variance understates the true one.
pub fn naive_accuracy(
    realized: &RealizedPrediction,
    cov: &CovarianceModel,
    params: &PopulationParams,
) -> GaussianLimit {
    let h2z = params.h2_beta_z;
    if h2z == 0.0 || h2z >= 1.0 {
        return GaussianLimit::degenerate(Scaling::SqrtEtaNz, BeRate::InvSqrtNz);
    }
    let n_z = params.n_z as f64;
    let beta_quad = realized
        .beta
        .dot(&cov.apply_spectral_map(|s| s, &realized.beta));
    let zb_norm2 = realized.z_beta.norm_squared();
    let yhat_norm = realized.y_hat.norm();

    let center = if yhat_norm == 0.0 || beta_quad == 0.0 {
        0.0
    } else {
        realized.z_beta.dot(&realized.y_hat)
            / ((zb_norm2 + n_z * (1.0 / h2z - 1.0) * beta_quad).sqrt() * yhat_norm)
    };
    if beta_quad == 0.0 {
        return GaussianLimit::degenerate(Scaling::SqrtEtaNz, BeRate::InvSqrtNz);
    }
    let eta = (zb_norm2 / n_z) / beta_quad * h2z / (1.0 - h2z) + 1.0;
    GaussianLimit {
        center,
        sd: 1.0 / (eta * n_z).sqrt(),
        scaling: Scaling::SqrtEtaNz,
        eta: Some(eta),
        rate: BeRate::InvSqrtNz,
        degenerate: false,
        kappas: None,
    }
}

/// Two-sided normal interval center ± Φ⁻¹(1 − (1−level)/2)·sd.
pub fn confidence_interval(limit: &GaussianLimit, level: f64) -> Result<(f64, f64)> {
    if limit.degenerate || limit.sd <= 0.0 {
        return Err(Error::DegenerateLimit(
            "confidence interval needs a nondegenerate limit".into(),
        ));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    Ok((limit.center - z * limit.sd, limit.center + z * limit.sd))
}

pub(crate) fn normal_quantile(q: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(q)
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}
