//! Seeded synthetic-data generation and replication batches.
//!
//! Every random draw comes from a counter-based splittable scheme: a ChaCha8
//! key derived from (master_seed, replication index) with one stream per
//! purpose (effects, designs, noise, panel). Replications are therefore
//! independent of execution order and worker count, and a batch is a pure
//! function of its `SimConfig`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{self, GaussianLimit, PopulationParams, RealizedPrediction};
use crate::error::{Error, Result};
use crate::estimators::{
    accuracy, fit_marginal, fit_reference_ridge, fit_ridge, predict, Dataset, Design, EffectVector,
    EntryDist, Estimate, EstimatorKind, SummaryStats,
};
use crate::spectral::{CovKind, CovarianceModel, MaskSpec};

/// Distribution of the nonzero effects (variance σ_β²/p each).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EffectDist {
    Gaussian,
    /// ±σ_β/√p with equal probability (κ_β = 1).
    TwoPoint,
}

impl EffectDist {
    pub fn kurtosis_ratio(&self) -> f64 {
        match self {
            EffectDist::Gaussian => 3.0,
            EffectDist::TwoPoint => 1.0,
        }
    }
}

/// Where the fixed test point of an individual-level batch comes from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ZSource {
    /// One row drawn from the testing distribution, held fixed per batch.
    Sampled,
    Fixed { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Target {
    Individual { z_source: ZSource },
    Accuracy,
}

/// Covariance construction inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CovSpec {
    pub kind: CovKind,
    pub p: usize,
    pub mask: MaskSpec,
}

/// Full description of one replication batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub cov: CovSpec,
    pub params: PopulationParams,
    pub entry_dist: EntryDist,
    pub effect_dist: EffectDist,
    pub replications: usize,
    pub master_seed: u64,
    pub estimator: EstimatorKind,
    pub target: Target,
    /// Redraw β per replication; defaults to true for accuracy targets and
    /// false for individual targets (the individual laws condition on β).
    pub redraw_effects: Option<bool>,
}

impl SimConfig {
    pub fn redraw_effects(&self) -> bool {
        self.redraw_effects
            .unwrap_or(matches!(self.target, Target::Accuracy))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.cov.p != self.params.p {
            return Err(Error::InvalidArgument(format!(
                "covariance p = {} disagrees with population p = {}",
                self.cov.p, self.params.p
            )));
        }
        if self.params.h2_beta == 0.0 {
            return Err(Error::InvalidArgument(
                "simulation requires h2_beta > 0 to set the noise scale".into(),
            ));
        }
        if self.params.h2_beta_z == 0.0 {
            return Err(Error::InvalidArgument(
                "simulation requires h2_beta_z > 0 to set the testing noise scale".into(),
            ));
        }
        match self.estimator {
            EstimatorKind::ReferenceRidge { lambda } => {
                if self.params.n_w.is_none() {
                    return Err(Error::InvalidArgument(
                        "reference_ridge requires n_w".into(),
                    ));
                }
                if lambda <= 0.0 {
                    return Err(Error::InvalidArgument("lambda must be positive".into()));
                }
            }
            EstimatorKind::Ridge { lambda } => {
                if lambda <= 0.0 {
                    return Err(Error::InvalidArgument("lambda must be positive".into()));
                }
            }
            EstimatorKind::Marginal => {}
        }
        if let Target::Individual { z_source: ZSource::Fixed { values } } = &self.target {
            if values.len() != self.cov.p {
                return Err(Error::InvalidArgument(format!(
                    "fixed z has {} entries for dimension {}",
                    values.len(),
                    self.cov.p
                )));
            }
        }
        Ok(())
    }
}

/// Per-replication naive-law quantities (accuracy targets only).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NaiveStat {
    pub center: f64,
    pub eta: f64,
}

/// Realized statistics of a batch, in replication-index order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationBatch {
    pub raw: Vec<f64>,
    /// (raw − center)/sd under a supplied limit; absent until standardized.
    pub standardized: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub flags: Vec<bool>,
    pub naive: Option<Vec<NaiveStat>>,
}

impl ReplicationBatch {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn standardize(&mut self, limit: &GaussianLimit) -> Result<()> {
        if limit.degenerate || limit.sd <= 0.0 {
            return Err(Error::DegenerateLimit(
                "cannot standardize against a degenerate limit".into(),
            ));
        }
        self.standardized = Some(self.raw.iter().map(|&x| limit.standardize(x)).collect());
        Ok(())
    }
}

/// Batch output plus the quantities held fixed across replications.
#[derive(Debug, Clone)]
pub struct BatchRun {
    pub batch: ReplicationBatch,
    /// The fixed test point for individual targets.
    pub z: Option<DVector<f64>>,
    /// The batch-level effects when not redrawn per replication.
    pub beta: Option<EffectVector>,
}

// ---- stream derivation ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Effects = 0,
    TestPoint = 1,
    TrainDesign = 2,
    TrainNoise = 3,
    TestDesign = 4,
    TestNoise = 5,
    Panel = 6,
}

const BATCH_DOMAIN: u64 = 0x9d3c_5a1f_0b42_77e1;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed label for replication `rep`; also keys that replication's RNGs.
pub fn replication_seed(master_seed: u64, rep: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(rep as u64 + 1))
}

fn rng_for(key: u64, stream: Stream) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream((stream as u64).into());
    rng
}

/// RNG for a per-replication stream.
pub fn replication_rng(master_seed: u64, rep: usize, stream: Stream) -> ChaCha8Rng {
    rng_for(replication_seed(master_seed, rep), stream)
}

/// RNG for a batch-level stream (quantities held fixed across replications).
pub fn batch_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    rng_for(splitmix64(master_seed ^ BATCH_DOMAIN), stream)
}

// ---- generators ----

/// Sparse effects on the model's causal mask: i.i.d. mean 0, variance σ_β²/p.
pub fn gen_effects(
    cov: &CovarianceModel,
    params: &PopulationParams,
    effect_dist: EffectDist,
    rng: &mut ChaCha8Rng,
) -> EffectVector {
    gen_effects_masked(cov.causal_mask(), params.sigma_beta2, effect_dist, rng)
}

/// The sampling core of `gen_effects`, usable without a covariance model.
pub fn gen_effects_masked(
    mask: &[bool],
    sigma_beta2: f64,
    effect_dist: EffectDist,
    rng: &mut ChaCha8Rng,
) -> EffectVector {
    let p = mask.len();
    let scale = (sigma_beta2 / p as f64).sqrt();
    let mut beta = DVector::zeros(p);
    for i in 0..p {
        if mask[i] {
            beta[i] = match effect_dist {
                EffectDist::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
                EffectDist::TwoPoint => {
                    if rng.random::<bool>() {
                        scale
                    } else {
                        -scale
                    }
                }
            };
        }
    }
    EffectVector {
        beta,
        causal_mask: mask.to_vec(),
    }
}

fn fill_raw(n: usize, p: usize, dist: EntryDist, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match dist {
        EntryDist::Gaussian => {
            DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
        }
        EntryDist::Rademacher => {
            // One sign bit per entry, 64 entries per u64 draw.
            let total = n * p;
            let mut data = Vec::with_capacity(total);
            let mut word = 0u64;
            let mut bits = 0u32;
            for _ in 0..total {
                if bits == 0 {
                    word = rng.random();
                    bits = 64;
                }
                data.push(if word & 1 == 1 { 1.0 } else { -1.0 });
                word >>= 1;
                bits -= 1;
            }
            DMatrix::from_vec(n, p, data)
        }
        EntryDist::Genotype { maf } => {
            let center = 2.0 * maf;
            let scale = (2.0 * maf * (1.0 - maf)).sqrt();
            DMatrix::from_fn(n, p, |_, _| {
                let g = u8::from(rng.random::<f64>() < maf) + u8::from(rng.random::<f64>() < maf);
                (f64::from(g) - center) / scale
            })
        }
    }
}

/// One row of the colored design (used for the fixed test point z).
pub fn gen_row(
    cov: &Arc<CovarianceModel>,
    entry_dist: EntryDist,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let raw = fill_raw(1, cov.dim(), entry_dist, rng);
    if cov.is_identity() {
        raw.transpose().column(0).into_owned()
    } else {
        cov.sqrt_matrix() * raw.transpose().column(0).into_owned()
    }
}

/// An n×p design: raw i.i.d. standardized entries right-colored by Σ^{1/2}.
/// Identity covariance keeps the raw matrix as-is.
pub fn gen_dataset(
    cov: &Arc<CovarianceModel>,
    n: usize,
    entry_dist: EntryDist,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let raw = fill_raw(n, cov.dim(), entry_dist, rng);
    let design = if cov.is_identity() {
        Design::Dense(raw)
    } else {
        Design::Colored {
            raw,
            cov: Arc::clone(cov),
        }
    };
    Dataset {
        design,
        response: None,
        entry_dist,
    }
}

/// y = Xβ + ε with ε ~ N(0, σ_ε²) i.i.d.
pub fn gen_response(
    design: &Dataset,
    beta: &EffectVector,
    sigma_eps2: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut y = design.design.mul_vec(&beta.beta);
    if sigma_eps2 > 0.0 {
        let sd = sigma_eps2.sqrt();
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    y
}

// ---- the batch engine ----

struct RepOutcome {
    raw: f64,
    flag: bool,
    naive: Option<NaiveStat>,
}

/// Run a seeded replication batch against a prebuilt covariance model.
///
/// Individual targets hold (z, β) fixed across replications (matching the
/// conditional laws); accuracy targets redraw everything per replication,
/// including β unless `redraw_effects` says otherwise. Results are indexed
/// by replication, so the output is independent of the worker schedule.
pub fn run_batch(config: &SimConfig, cov: &Arc<CovarianceModel>) -> Result<BatchRun> {
    config.validate()?;
    if cov.dim() != config.cov.p {
        return Err(Error::InvalidArgument(
            "covariance model does not match the config dimension".into(),
        ));
    }
    if cov.mask_count() != config.params.m {
        return Err(Error::InvalidArgument(format!(
            "mask has {} causal variants but population m = {}",
            cov.mask_count(),
            config.params.m
        )));
    }

    let gamma1 = cov.spectrum_summary().gamma[0];
    let sigma_eps2 = config.params.sigma_eps2(gamma1);
    let sigma_eps2_z = config.params.sigma_eps2_z(gamma1);
    let redraw = config.redraw_effects();

    let batch_beta = if redraw {
        None
    } else {
        let mut rng = batch_rng(config.master_seed, Stream::Effects);
        Some(gen_effects(cov, &config.params, config.effect_dist, &mut rng))
    };
    let z = match &config.target {
        Target::Individual { z_source } => Some(match z_source {
            ZSource::Sampled => {
                let mut rng = batch_rng(config.master_seed, Stream::TestPoint);
                gen_row(cov, config.entry_dist, &mut rng)
            }
            ZSource::Fixed { values } => DVector::from_vec(values.clone()),
        }),
        Target::Accuracy => None,
    };

    let outcomes: Vec<RepOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            run_replication(
                config,
                cov,
                rep,
                batch_beta.as_ref(),
                z.as_ref(),
                sigma_eps2,
                sigma_eps2_z,
            )
            .map_err(|e| Error::Replication {
                index: rep,
                seed: replication_seed(config.master_seed, rep),
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;

    let seeds = (0..config.replications)
        .map(|rep| replication_seed(config.master_seed, rep))
        .collect();
    let naive = if matches!(config.target, Target::Accuracy) {
        Some(outcomes.iter().map(|o| o.naive.unwrap()).collect())
    } else {
        None
    };
    Ok(BatchRun {
        batch: ReplicationBatch {
            raw: outcomes.iter().map(|o| o.raw).collect(),
            standardized: None,
            seeds,
            flags: outcomes.iter().map(|o| o.flag).collect(),
            naive,
        },
        z,
        beta: batch_beta,
    })
}

fn fit_estimator(
    config: &SimConfig,
    cov: &Arc<CovarianceModel>,
    rep: usize,
    beta: &EffectVector,
    sigma_eps2: f64,
) -> Result<Estimate> {
    let seed = config.master_seed;
    let mut design_rng = replication_rng(seed, rep, Stream::TrainDesign);
    let mut noise_rng = replication_rng(seed, rep, Stream::TrainNoise);
    let mut train = gen_dataset(cov, config.params.n, config.entry_dist, &mut design_rng);
    train.response = Some(gen_response(&train, beta, sigma_eps2, &mut noise_rng));

    match config.estimator {
        EstimatorKind::Marginal => fit_marginal(&train),
        EstimatorKind::Ridge { lambda } => fit_ridge(&train, lambda),
        EstimatorKind::ReferenceRidge { lambda } => {
            let n_w = config.params.n_w.expect("validated");
            let mut panel_rng = replication_rng(seed, rep, Stream::Panel);
            let panel = gen_dataset(cov, n_w, config.entry_dist, &mut panel_rng);
            let summary = SummaryStats::from_training(&train)?;
            fit_reference_ridge(&summary, &panel, lambda)
        }
    }
}

fn run_replication(
    config: &SimConfig,
    cov: &Arc<CovarianceModel>,
    rep: usize,
    batch_beta: Option<&EffectVector>,
    z: Option<&DVector<f64>>,
    sigma_eps2: f64,
    sigma_eps2_z: f64,
) -> Result<RepOutcome> {
    let beta_storage;
    let beta = match batch_beta {
        Some(b) => b,
        None => {
            let mut rng = replication_rng(config.master_seed, rep, Stream::Effects);
            beta_storage = gen_effects(cov, &config.params, config.effect_dist, &mut rng);
            &beta_storage
        }
    };

    let est = fit_estimator(config, cov, rep, beta, sigma_eps2)?;

    match &config.target {
        Target::Individual { .. } => {
            let raw = predict(&est, z.expect("individual target has z"))?;
            Ok(RepOutcome {
                raw,
                flag: false,
                naive: None,
            })
        }
        Target::Accuracy => {
            let mut test_rng = replication_rng(config.master_seed, rep, Stream::TestDesign);
            let mut noise_rng = replication_rng(config.master_seed, rep, Stream::TestNoise);
            let mut test = gen_dataset(cov, config.params.n_z, config.entry_dist, &mut test_rng);
            test.response = Some(gen_response(&test, beta, sigma_eps2_z, &mut noise_rng));

            let acc = accuracy(&est, &test)?;
            let z_beta = test.design.mul_vec(&beta.beta);
            let y_hat = test.design.mul_vec(&est.beta_hat);
            let naive_lim = asymptotics::naive_accuracy(
                &RealizedPrediction {
                    z_beta,
                    y_hat,
                    beta: beta.beta.clone(),
                },
                cov,
                &config.params,
            );
            Ok(RepOutcome {
                raw: acc.value,
                flag: acc.degenerate,
                naive: Some(NaiveStat {
                    center: naive_lim.center,
                    eta: naive_lim.eta.unwrap_or(f64::NAN),
                }),
            })
        }
    }
}
