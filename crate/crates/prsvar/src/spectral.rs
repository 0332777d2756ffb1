//! Covariance models and the deterministic spectral summaries feeding every
//! limiting-law formula.
//!
//! A [`CovarianceModel`] bundles a symmetric PSD matrix Σ, its cached
//! eigendecomposition, and the causal-variant mask I_m. All trace ratios
//! (ω, γ, π, ξ, ϱ) derive from the cached spectrum; masked traces of matrix
//! powers are taken from explicit products because I_m does not commute
//! with Σ.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on file input.
const SYMMETRY_RTOL: f64 = 1e-12;
/// Eigenvalues in [-PSD_RTOL*σ₁, 0) are clamped to zero; smaller ones reject.
const PSD_RTOL: f64 = 1e-10;
/// Relative Frobenius tolerance for Σ ≈ UΛUᵀ.
const RECONSTRUCTION_RTOL: f64 = 1e-10;

/// Synthetic or file-backed covariance structure.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovKind {
    Identity,
    /// AR(1): entry (i,j) = ρ^|i-j|.
    Ar1 { rho: f64 },
    /// Block-diagonal with AR(1) blocks; the last block may be short.
    BlockAr1 { block_size: usize, rho: f64 },
    /// Plain-text CSV, p rows x p columns, '.' decimal, no header.
    FromFile { path: String },
}

/// Placement of the m causal variants.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskSpec {
    FirstM { m: usize },
    Random { m: usize, seed: u64 },
    /// One 0/1 per line.
    FromFile { path: String },
}

/// Dense symmetric PSD covariance with cached eigendecomposition and causal
/// mask. Immutable after construction; safe to share across workers.
#[derive(Debug)]
pub struct CovarianceModel {
    dim: usize,
    matrix: DMatrix<f64>,
    /// Descending; ties keep original index order.
    eigenvalues: DVector<f64>,
    /// Columns aligned with `eigenvalues`.
    eigenvectors: DMatrix<f64>,
    causal_mask: Vec<bool>,
    identity: bool,
    sqrt: OnceLock<DMatrix<f64>>,
    inverse: OnceLock<Option<DMatrix<f64>>>,
    squared: OnceLock<DMatrix<f64>>,
}

/// ω_i = Tr(Σⁱ)/p and γ_j = Tr(Σʲ I_m)/p for i, j = 1..3.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub omega: [f64; 3],
    pub gamma: [f64; 3],
    pub m_over_p: f64,
}

/// Resolvent trace ratios at a supplied Stieltjes value 𝔪.
///
/// `ell`/`eth` are the same functionals as `pi`/`xi`; the separate names
/// follow the traditional-ridge formulas, which evaluate them at the
/// training-data Stieltjes point instead of the reference-panel one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResolventSummary {
    /// π_i = Tr((I + 𝔪Σ)^{-i})/p.
    pub pi: [f64; 2],
    /// ξ_i = Tr((I + 𝔪Σ)^{-i} I_m)/p.
    pub xi: [f64; 2],
    /// ϱ₀ = (𝔪γ₁ + ξ₁ − m/p)/𝔪², ϱ₁ = (1 − 2π₁ + π₂)/𝔪²,
    /// ϱ₂ = (3ξ₁ − ξ₂ + 𝔪γ₁ − 2m/p)/𝔪³.
    pub rho: [f64; 3],
    pub ell: [f64; 2],
    pub eth: [f64; 2],
    /// 𝔤 = 1 − (1 − ℓ₁)φ.
    pub g_factor: f64,
    /// 𝔥 = φ{ℓ₁ − (λ𝔪′/𝔪)(ℓ₁ − ℓ₂)}.
    pub h_factor: f64,
}

impl CovarianceModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Descending eigenvalues (clamped at zero).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvalues_slice(&self) -> &[f64] {
        self.eigenvalues.as_slice()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn causal_mask(&self) -> &[bool] {
        &self.causal_mask
    }

    /// Number of causal variants m.
    pub fn mask_count(&self) -> usize {
        self.causal_mask.iter().filter(|&&b| b).count()
    }

    pub fn mask_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.causal_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Symmetric square root Σ^{1/2} = U Λ^{1/2} Uᵀ, computed once.
    pub fn sqrt_matrix(&self) -> &DMatrix<f64> {
        self.sqrt
            .get_or_init(|| self.spectral_map(|s| s.sqrt()))
    }

    /// Σ^{-1} when Σ is nonsingular (σ_min > 1e-12·σ₁), `None` otherwise.
    pub fn inverse(&self) -> Option<&DMatrix<f64>> {
        self.inverse
            .get_or_init(|| {
                let top = self.eigenvalues[0];
                let bottom = self.eigenvalues[self.dim - 1];
                if bottom <= 1e-12 * top.max(1.0) {
                    None
                } else {
                    Some(self.spectral_map(|s| 1.0 / s))
                }
            })
            .as_ref()
    }

    /// Σ², cached after the first request.
    pub fn squared(&self) -> &DMatrix<f64> {
        self.squared.get_or_init(|| {
            if self.identity {
                DMatrix::identity(self.dim, self.dim)
            } else {
                gemm(&self.matrix, &self.matrix)
            }
        })
    }

    /// Dense U f(Λ) Uᵀ.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        if self.identity {
            return DMatrix::from_diagonal_element(self.dim, self.dim, f(1.0));
        }
        let scaled = scale_columns(&self.eigenvectors, &self.eigenvalues.map(&f));
        gemm(&scaled, &self.eigenvectors.transpose())
    }

    /// Tr(f(Σ))/p.
    pub fn spectral_trace(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.eigenvalues.iter().map(|&s| f(s)).sum::<f64>() / self.dim as f64
    }

    /// Tr(f(Σ) I_m)/p: the masked diagonal of the spectral operator, via
    /// diag_j = Σ_k U_{jk}² f(σ_k).
    pub fn masked_spectral_trace(&self, f: impl Fn(f64) -> f64) -> f64 {
        let p = self.dim as f64;
        if self.identity {
            return self.mask_count() as f64 * f(1.0) / p;
        }
        let mut acc = 0.0;
        for j in self.mask_indices() {
            for k in 0..self.dim {
                let u2 = self.eigenvectors[(j, k)] * self.eigenvectors[(j, k)];
                acc += u2 * f(self.eigenvalues[k]);
            }
        }
        acc / p
    }

    /// U f(Λ) Uᵀ v without forming the dense operator.
    pub fn apply_spectral_map(&self, f: impl Fn(f64) -> f64, v: &DVector<f64>) -> DVector<f64> {
        if self.identity {
            return v * f(1.0);
        }
        let mut coeffs = self.eigenvectors.tr_mul(v);
        for (c, &s) in coeffs.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= f(s);
        }
        &self.eigenvectors * coeffs
    }

    /// ω_i = Tr(Σⁱ)/p from eigenvalues; γ_j = Tr(Σʲ I_m)/p from the masked
    /// diagonals of Σ, Σ², Σ³.
    pub fn spectrum_summary(&self) -> SpectrumSummary {
        let p = self.dim as f64;
        let m_over_p = self.mask_count() as f64 / p;
        if self.identity {
            return SpectrumSummary {
                omega: [1.0; 3],
                gamma: [m_over_p; 3],
                m_over_p,
            };
        }
        let mut omega = [0.0; 3];
        for &s in self.eigenvalues.iter() {
            omega[0] += s;
            omega[1] += s * s;
            omega[2] += s * s * s;
        }
        for w in &mut omega {
            *w /= p;
        }

        let sq = self.squared();
        let mut gamma = [0.0; 3];
        for i in self.mask_indices() {
            gamma[0] += self.matrix[(i, i)];
            gamma[1] += sq[(i, i)];
            // (Σ³)_{ii} = row_i(Σ) · col_i(Σ²)
            gamma[2] += self.matrix.row(i).transpose().dot(&sq.column(i).into_owned());
        }
        for g in &mut gamma {
            *g /= p;
        }
        SpectrumSummary {
            omega,
            gamma,
            m_over_p,
        }
    }

    /// Resolvent trace ratios at 𝔪 > 0. `lambda` only enters 𝔥.
    pub fn resolvent_summary(
        &self,
        m_value: f64,
        m_prime: f64,
        aspect_ratio: f64,
        lambda: f64,
    ) -> Result<ResolventSummary> {
        if m_value <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "stieltjes value must be positive, got {m_value}"
            )));
        }
        let pi = [
            self.spectral_trace(|s| 1.0 / (1.0 + m_value * s)),
            self.spectral_trace(|s| 1.0 / (1.0 + m_value * s).powi(2)),
        ];
        let xi = [
            self.masked_spectral_trace(|s| 1.0 / (1.0 + m_value * s)),
            self.masked_spectral_trace(|s| 1.0 / (1.0 + m_value * s).powi(2)),
        ];

        // The printed ratios ϱ₀ = (𝔪γ₁ + ξ₁ − m/p)/𝔪² etc. cancel
        // catastrophically for small 𝔪; these spectral forms are exactly
        // equal: ϱ₀ = Tr((I+𝔪Σ)⁻¹Σ²I_m)/p, ϱ₁ = Tr((I+𝔪Σ)⁻²Σ²)/p,
        // ϱ₂ = Tr((I+𝔪Σ)⁻²Σ³I_m)/p.
        let rho = [
            self.masked_spectral_trace(|s| s * s / (1.0 + m_value * s)),
            self.spectral_trace(|s| (s / (1.0 + m_value * s)).powi(2)),
            self.masked_spectral_trace(|s| s * s * s / (1.0 + m_value * s).powi(2)),
        ];

        let g_factor = 1.0 - (1.0 - pi[0]) * aspect_ratio;
        let h_factor =
            aspect_ratio * (pi[0] - (lambda * m_prime / m_value) * (pi[0] - pi[1]));

        Ok(ResolventSummary {
            pi,
            xi,
            rho,
            ell: pi,
            eth: xi,
            g_factor,
            h_factor,
        })
    }

    /// ⟨u_i, I_m u_i⟩ for every eigenvector; entries sum to m.
    pub fn mask_overlap(&self) -> Vec<f64> {
        if self.identity {
            return self.causal_mask.iter().map(|&b| f64::from(b)).collect();
        }
        (0..self.dim)
            .map(|k| {
                self.mask_indices()
                    .map(|j| self.eigenvectors[(j, k)] * self.eigenvectors[(j, k)])
                    .sum()
            })
            .collect()
    }

    /// Σ_{i∈mask} A_{ii}² for a dense symmetric A.
    pub fn masked_diag_sq_sum(&self, a: &DMatrix<f64>) -> f64 {
        self.mask_indices().map(|i| a[(i, i)] * a[(i, i)]).sum()
    }

    /// Tr((A I_m)²) = Σ_{i,j∈mask} A_{ij}² for a dense symmetric A.
    pub fn masked_pair_sq_sum(&self, a: &DMatrix<f64>) -> f64 {
        let idx: Vec<usize> = self.mask_indices().collect();
        let mut acc = 0.0;
        for &i in &idx {
            for &j in &idx {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
        acc
    }
}

/// Full gemm; nalgebra's `tr_mul` path is much slower for large matrices.
pub(crate) fn gemm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b
}

fn scale_columns(u: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for (mut col, &s) in out.column_iter_mut().zip(d.iter()) {
        col *= s;
    }
    out
}

/// Build and validate a covariance model.
///
/// The eigendecomposition is computed eagerly and cached; AR(1) entry (i,j)
/// is ρ^|i−j| and `block_ar1` places AR(1) blocks on the diagonal.
pub fn build_covariance(kind: &CovKind, p: usize, mask_spec: &MaskSpec) -> Result<CovarianceModel> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    let matrix = match kind {
        CovKind::Identity => DMatrix::identity(p, p),
        CovKind::Ar1 { rho } => {
            check_rho(*rho)?;
            ar1_matrix(p, *rho)
        }
        CovKind::BlockAr1 { block_size, rho } => {
            check_rho(*rho)?;
            if *block_size == 0 {
                return Err(Error::InvalidArgument("block_size must be at least 1".into()));
            }
            let mut m = DMatrix::zeros(p, p);
            let mut start = 0;
            while start < p {
                let len = (*block_size).min(p - start);
                let block = ar1_matrix(len, *rho);
                m.view_mut((start, start), (len, len)).copy_from(&block);
                start += len;
            }
            m
        }
        CovKind::FromFile { path } => read_matrix_csv(Path::new(path), p)?,
    };

    let causal_mask = build_mask(mask_spec, p)?;
    from_matrix(matrix, causal_mask, matches!(kind, CovKind::Identity))
}

/// Validate an explicit matrix + mask pair (used by `build_covariance` and
/// directly by tests).
pub fn from_matrix(
    matrix: DMatrix<f64>,
    causal_mask: Vec<bool>,
    identity_hint: bool,
) -> Result<CovarianceModel> {
    let p = matrix.nrows();
    if matrix.ncols() != p {
        return Err(Error::Validation(format!(
            "matrix must be square, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if causal_mask.len() != p {
        return Err(Error::InvalidArgument(format!(
            "mask length {} does not match dimension {}",
            causal_mask.len(),
            p
        )));
    }

    // Symmetry within relative 1e-12.
    let scale = matrix.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1e-300);
    for i in 0..p {
        for j in (i + 1)..p {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::Validation(format!(
                    "symmetry check failed at ({i},{j}): {} vs {}",
                    matrix[(i, j)],
                    matrix[(j, i)]
                )));
            }
        }
    }

    let identity = identity_hint || is_identity(&matrix);
    let (eigenvalues, eigenvectors) = if identity {
        (DVector::from_element(p, 1.0), DMatrix::identity(p, p))
    } else {
        let eig = matrix.clone().symmetric_eigen();
        // Descending sort, stable by original index.
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let vals = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
        let vecs = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| eig.eigenvectors.column(i).into_owned())
                .collect::<Vec<_>>(),
        );
        (vals, vecs)
    };

    // PSD check with clamping of tiny negative eigenvalues.
    let top = eigenvalues[0];
    if top < 0.0 {
        return Err(Error::Validation(
            "positive semidefiniteness check failed: largest eigenvalue is negative".into(),
        ));
    }
    let floor = -PSD_RTOL * top.max(1e-300);
    let mut clamped = eigenvalues;
    for v in clamped.iter_mut() {
        if *v < floor {
            return Err(Error::Validation(format!(
                "positive semidefiniteness check failed: eigenvalue {v:.3e} below tolerance {floor:.3e}"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let model = CovarianceModel {
        dim: p,
        matrix,
        eigenvalues: clamped,
        eigenvectors,
        causal_mask,
        identity,
        sqrt: OnceLock::new(),
        inverse: OnceLock::new(),
        squared: OnceLock::new(),
    };

    // Reconstruction check Σ ≈ UΛUᵀ.
    if !model.identity {
        let recon = model.spectral_map(|s| s);
        let num = (&model.matrix - &recon).norm();
        let den = model.matrix.norm();
        if den > 0.0 && num / den > RECONSTRUCTION_RTOL {
            return Err(Error::Validation(format!(
                "eigendecomposition reconstruction check failed: relative error {:.3e}",
                num / den
            )));
        }
    }
    Ok(model)
}

/// Convenience for sharing a model across replications.
pub fn build_covariance_arc(
    kind: &CovKind,
    p: usize,
    mask_spec: &MaskSpec,
) -> Result<Arc<CovarianceModel>> {
    build_covariance(kind, p, mask_spec).map(Arc::new)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
    }
    Ok(())
}

fn ar1_matrix(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    let p = m.nrows();
    for i in 0..p {
        for j in 0..p {
            let want = if i == j { 1.0 } else { 0.0 };
            if m[(i, j)] != want {
                return false;
            }
        }
    }
    true
}

fn build_mask(spec: &MaskSpec, p: usize) -> Result<Vec<bool>> {
    match spec {
        MaskSpec::FirstM { m } => {
            check_m(*m, p)?;
            Ok((0..p).map(|i| i < *m).collect())
        }
        MaskSpec::Random { m, seed } => {
            check_m(*m, p)?;
            let mut idx: Vec<usize> = (0..p).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            idx.shuffle(&mut rng);
            let mut mask = vec![false; p];
            for &i in idx.iter().take(*m) {
                mask[i] = true;
            }
            Ok(mask)
        }
        MaskSpec::FromFile { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("mask file {path}: {e}")))?;
            let mask: Vec<bool> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| match l.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Validation(format!(
                        "mask file {path}: expected 0 or 1, got {other:?}"
                    ))),
                })
                .collect::<Result<_>>()?;
            if mask.len() != p {
                return Err(Error::Validation(format!(
                    "mask file {path}: {} entries for dimension {p}",
                    mask.len()
                )));
            }
            Ok(mask)
        }
    }
}

fn check_m(m: usize, p: usize) -> Result<()> {
    if m > p {
        return Err(Error::InvalidArgument(format!("m = {m} exceeds p = {p}")));
    }
    Ok(())
}

fn read_matrix_csv(path: &Path, p: usize) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("covariance file {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Validation(format!(
                        "covariance file {}: bad number {tok:?} on line {}",
                        path.display(),
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Validation(format!(
            "covariance file {}: expected {p}x{p} matrix, got {} rows",
            path.display(),
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}
