//! Configuration-driven front end: `analytic`, `simulate`, `verify`, and
//! `sweep` commands over a single JSON config with sections
//! {covariance, population, simulation, verify} (plus an optional `sweep`
//! grid).
//!
//! Exit-code contract: 0 success, 1 verification failure, 2 configuration
//! error, 3 runtime/replication error. All data outputs are byte-reproducible
//! for identical configs; timestamps live only in the run manifest sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{self, GaussianLimit, PopulationParams};
use crate::error::{Error, Result};
use crate::estimators::{EntryDist, EstimatorKind};
use crate::simulate::{
    self, BatchRun, CovSpec, EffectDist, SimConfig, Stream, Target, ZSource,
};
use crate::spectral::{self, CovarianceModel, CovKind, MaskSpec};
use crate::stats::{self, Intervals};
use crate::stieltjes::{self, StieltjesPoint};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

// ---- config schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub covariance: CovarianceSection,
    pub population: PopulationSection,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceSection {
    pub kind: CovKind,
    pub p: usize,
    pub mask: MaskSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSection {
    pub n: usize,
    pub n_z: usize,
    #[serde(default)]
    pub n_w: Option<usize>,
    pub h2_beta: f64,
    pub h2_beta_z: f64,
    #[serde(default = "default_sigma_beta2")]
    pub sigma_beta2: f64,
    /// Defaults to the entry distribution's kurtosis.
    #[serde(default)]
    pub entry_kurtosis: Option<f64>,
    /// Defaults to the effect distribution's κ_β.
    #[serde(default)]
    pub effect_kurtosis_ratio: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub phi_d: Option<f64>,
    #[serde(default)]
    pub phi_w: Option<f64>,
    #[serde(default)]
    pub phi_n: Option<f64>,
    /// Evaluate the marginal accuracy law under the homogeneous-LD reduction.
    #[serde(default)]
    pub homogeneous_ld: bool,
}

fn default_sigma_beta2() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSection {
    pub entry_dist: EntryDist,
    pub effect_dist: EffectDist,
    pub replications: usize,
    pub master_seed: u64,
    pub estimator: EstimatorSpec,
    pub target: Target,
    #[serde(default)]
    pub redraw_effects: Option<bool>,
}

/// Estimator selection; the traditional ridge accepts `"optimal"` to use
/// λ* = φ_n(1−h_β²)/h_β².
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Marginal,
    ReferenceRidge { lambda: f64 },
    Ridge { lambda: LambdaSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifySection {
    #[serde(default)]
    pub ks_max: Option<f64>,
    /// |mean(raw) − center| ≤ this many analytic sds of the mean (sd/√R).
    #[serde(default)]
    pub mean_tolerance_sds: Option<f64>,
    #[serde(default)]
    pub variance_ratio_range: Option<[f64; 2]>,
    /// Coverage of per-replication intervals raw ± z·sd over the center.
    #[serde(default)]
    pub coverage_range: Option<[f64; 2]>,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

fn default_ci_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    /// Parameter name → grid values. Supported: lambda, n, n_z, n_w, m,
    /// h2_beta, h2_beta_z.
    pub vary: BTreeMap<String, Vec<f64>>,
    pub laws: Vec<String>,
}

// ---- resolution ----

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ConfigFile,
    pub sim: SimConfig,
    pub homogeneous_ld: bool,
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

/// Resolve the parsed file into a concrete `SimConfig`; `seed_override`
/// implements the --seed flag / environment override.
pub fn resolve(mut config: ConfigFile, seed_override: Option<u64>) -> Result<Resolved> {
    if let Some(seed) = seed_override {
        config.simulation.master_seed = seed;
    }
    let cov = &config.covariance;
    let m = mask_cardinality(&cov.mask, cov.p)?;

    let pop = &config.population;
    let sim = &config.simulation;

    let mut params = PopulationParams {
        n: pop.n,
        n_z: pop.n_z,
        n_w: pop.n_w,
        p: cov.p,
        m,
        h2_beta: pop.h2_beta,
        h2_beta_z: pop.h2_beta_z,
        sigma_beta2: pop.sigma_beta2,
        entry_kurtosis: pop
            .entry_kurtosis
            .unwrap_or_else(|| sim.entry_dist.kurtosis()),
        effect_kurtosis_ratio: pop
            .effect_kurtosis_ratio
            .unwrap_or_else(|| sim.effect_dist.kurtosis_ratio()),
        lambda: pop.lambda,
        phi_d: pop.phi_d,
        phi_w: pop.phi_w,
        phi_n: pop.phi_n,
    };

    let estimator = match &sim.estimator {
        EstimatorSpec::Marginal => EstimatorKind::Marginal,
        EstimatorSpec::ReferenceRidge { lambda } => {
            params.lambda = Some(*lambda);
            EstimatorKind::ReferenceRidge { lambda: *lambda }
        }
        EstimatorSpec::Ridge { lambda } => {
            let lambda = match lambda {
                LambdaSpec::Value(v) => *v,
                LambdaSpec::Named(name) if name == "optimal" => {
                    if !(0.0 < pop.h2_beta && pop.h2_beta < 1.0) {
                        return Err(Error::Config(
                            "optimal lambda needs h2_beta in (0, 1)".into(),
                        ));
                    }
                    params.optimal_lambda()
                }
                LambdaSpec::Named(other) => {
                    return Err(Error::Config(format!(
                        "unknown ridge lambda {other:?}; use a number or \"optimal\""
                    )));
                }
            };
            params.lambda = Some(lambda);
            EstimatorKind::Ridge { lambda }
        }
    };

    let sim_config = SimConfig {
        cov: CovSpec {
            kind: cov.kind.clone(),
            p: cov.p,
            mask: cov.mask.clone(),
        },
        params,
        entry_dist: sim.entry_dist,
        effect_dist: sim.effect_dist,
        replications: sim.replications,
        master_seed: sim.master_seed,
        estimator,
        target: sim.target.clone(),
        redraw_effects: sim.redraw_effects,
    };
    sim_config
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;

    Ok(Resolved {
        homogeneous_ld: config.population.homogeneous_ld,
        sim: sim_config,
        config,
    })
}

fn mask_cardinality(mask: &MaskSpec, p: usize) -> Result<usize> {
    Ok(match mask {
        MaskSpec::FirstM { m } | MaskSpec::Random { m, .. } => *m,
        MaskSpec::FromFile { path } => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("mask file {path}: {e}")))?
            .lines()
            .filter(|l| l.trim() == "1")
            .count()
            .min(p),
    })
}

/// SHA-256 of the canonical serialization of the resolved config.
pub fn config_digest(sim: &SimConfig) -> String {
    let bytes = serde_json::to_vec(sim).expect("serializable config");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

// ---- analytic laws ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Individual,
    Accuracy,
}

/// One law evaluation: the limit plus an echo of the inputs.
#[derive(Debug, Clone, Serialize)]
pub struct LawEntry {
    pub estimator: String,
    pub level: Level,
    pub center: f64,
    pub sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub rate_tag: asymptotics::BeRate,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappas: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilting: Option<f64>,
    pub inputs: InputsEcho,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputsEcho {
    pub n: usize,
    pub n_z: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_w: Option<usize>,
    pub p: usize,
    pub m: usize,
    pub h2_beta: f64,
    pub h2_beta_z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub master_seed: u64,
}

fn echo(sim: &SimConfig) -> InputsEcho {
    InputsEcho {
        n: sim.params.n,
        n_z: sim.params.n_z,
        n_w: sim.params.n_w,
        p: sim.params.p,
        m: sim.params.m,
        h2_beta: sim.params.h2_beta,
        h2_beta_z: sim.params.h2_beta_z,
        lambda: sim.params.lambda,
        master_seed: sim.master_seed,
    }
}

fn solve_point(cov: &CovarianceModel, aspect: f64, lambda: f64) -> Result<StieltjesPoint> {
    stieltjes::solve_fixed_point(
        cov.eigenvalues_slice(),
        aspect,
        lambda,
        stieltjes::DEFAULT_TOL,
        stieltjes::DEFAULT_MAX_ITER,
    )
}

/// The conditioning pair (z, β) an individual-level law needs, drawn from
/// the same batch-level streams the simulator uses.
fn batch_conditioning(
    sim: &SimConfig,
    cov: &Arc<CovarianceModel>,
) -> (nalgebra::DVector<f64>, crate::estimators::EffectVector) {
    let z = match &sim.target {
        Target::Individual { z_source: ZSource::Fixed { values } } => {
            nalgebra::DVector::from_vec(values.clone())
        }
        _ => {
            let mut rng = simulate::batch_rng(sim.master_seed, Stream::TestPoint);
            simulate::gen_row(cov, sim.entry_dist, &mut rng)
        }
    };
    let mut rng = simulate::batch_rng(sim.master_seed, Stream::Effects);
    let beta = simulate::gen_effects(cov, &sim.params, sim.effect_dist, &mut rng);
    (z, beta)
}

/// Evaluate the law selected by the config's (estimator, target) pair.
pub fn evaluate_law(
    sim: &SimConfig,
    cov: &Arc<CovarianceModel>,
    homogeneous_ld: bool,
) -> Result<LawEntry> {
    let level = match sim.target {
        Target::Individual { .. } => Level::Individual,
        Target::Accuracy => Level::Accuracy,
    };
    let (name, limit, point): (&str, GaussianLimit, Option<StieltjesPoint>) =
        match (&sim.estimator, level) {
            (EstimatorKind::Marginal, Level::Individual) => {
                let (z, beta) = batch_conditioning(sim, cov);
                (
                    "marginal",
                    asymptotics::marginal_individual(cov, &z, &beta, &sim.params),
                    None,
                )
            }
            (EstimatorKind::Marginal, Level::Accuracy) => (
                "marginal",
                asymptotics::marginal_accuracy(cov, &sim.params, homogeneous_ld),
                None,
            ),
            (EstimatorKind::ReferenceRidge { lambda }, level) => {
                let pt = solve_point(cov, sim.params.phi_w()?, *lambda)?;
                let lim = match level {
                    Level::Individual => {
                        let (z, beta) = batch_conditioning(sim, cov);
                        asymptotics::reference_individual(cov, &z, &beta, &sim.params, &pt)?
                    }
                    Level::Accuracy => asymptotics::reference_accuracy(cov, &sim.params, &pt)?,
                };
                ("reference_ridge", lim, Some(pt))
            }
            (EstimatorKind::Ridge { lambda }, level) => {
                let pt = solve_point(cov, sim.params.phi_n(), *lambda)?;
                let lim = match level {
                    Level::Individual => {
                        let (z, beta) = batch_conditioning(sim, cov);
                        asymptotics::ridge_individual(cov, &z, &beta, &sim.params, &pt, false)?
                    }
                    Level::Accuracy => {
                        asymptotics::ridge_accuracy(cov, &sim.params, &pt, false)?
                    }
                };
                ("ridge", lim, Some(pt))
            }
        };
    Ok(LawEntry {
        estimator: name.to_string(),
        level,
        center: limit.center,
        sd: limit.sd,
        eta: limit.eta,
        rate_tag: limit.rate,
        degenerate: limit.degenerate,
        kappas: limit.kappas,
        m_value: point.map(|p| p.m_value),
        tilting: point.map(|p| p.tilting),
        inputs: echo(sim),
    })
}

// ---- commands ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Serialize)]
pub struct AnalyticReport {
    pub tool_version: String,
    pub config_digest: String,
    pub entries: Vec<LawEntry>,
}

fn build_cov(sim: &SimConfig) -> Result<Arc<CovarianceModel>> {
    // Construction failures (bad file, non-PSD input) are configuration
    // errors for the CLI contract.
    spectral::build_covariance_arc(&sim.cov.kind, sim.cov.p, &sim.cov.mask)
        .map_err(|e| Error::Config(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_analytic(
    resolved: &Resolved,
    out: Option<&Path>,
    format: OutputFormat,
) -> Result<()> {
    let cov = build_cov(&resolved.sim)?;
    let entry = evaluate_law(&resolved.sim, &cov, resolved.homogeneous_ld)?;
    let report = AnalyticReport {
        tool_version: TOOL_VERSION.to_string(),
        config_digest: config_digest(&resolved.sim),
        entries: vec![entry],
    };
    let text = match format {
        OutputFormat::Json => serde_json::to_string_pretty(&report).expect("serializable") + "\n",
        OutputFormat::Csv => {
            let mut s = String::from("estimator,level,center,sd,eta,degenerate\n");
            for e in &report.entries {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    e.estimator,
                    match e.level {
                        Level::Individual => "individual",
                        Level::Accuracy => "accuracy",
                    },
                    fmt_float(e.center),
                    fmt_float(e.sd),
                    e.eta.map(fmt_float).unwrap_or_default(),
                    e.degenerate
                );
            }
            s
        }
    };
    emit(out, &text)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub created_unix_secs: u64,
    pub master_seed: u64,
    pub replications: usize,
    pub outputs: Vec<String>,
}

/// 17 significant digits, round-trippable.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run_standardized_batch(resolved: &Resolved) -> Result<(BatchRun, LawEntry)> {
    let cov = build_cov(&resolved.sim)?;
    let mut run = simulate::run_batch(&resolved.sim, &cov)?;
    let entry = law_for_run(resolved, &cov, &run)?;
    if !entry.degenerate && entry.sd > 0.0 {
        let limit = GaussianLimit {
            center: entry.center,
            sd: entry.sd,
            scaling: asymptotics::Scaling::SqrtEtaNz,
            eta: entry.eta,
            rate: entry.rate_tag,
            degenerate: false,
            kappas: None,
        };
        run.batch.standardize(&limit)?;
    }
    Ok((run, entry))
}

/// The law describing a batch, conditioning on the batch's own (z, β) when
/// those were held fixed.
fn law_for_run(
    resolved: &Resolved,
    cov: &Arc<CovarianceModel>,
    run: &BatchRun,
) -> Result<LawEntry> {
    let sim = &resolved.sim;
    match (&sim.target, &run.z, &run.beta) {
        (Target::Individual { .. }, Some(z), Some(beta)) => {
            let limit = match &sim.estimator {
                EstimatorKind::Marginal => {
                    asymptotics::marginal_individual(cov, z, beta, &sim.params)
                }
                EstimatorKind::ReferenceRidge { lambda } => {
                    let pt = solve_point(cov, sim.params.phi_w()?, *lambda)?;
                    asymptotics::reference_individual(cov, z, beta, &sim.params, &pt)?
                }
                EstimatorKind::Ridge { lambda } => {
                    let pt = solve_point(cov, sim.params.phi_n(), *lambda)?;
                    asymptotics::ridge_individual(cov, z, beta, &sim.params, &pt, false)?
                }
            };
            Ok(LawEntry {
                estimator: match sim.estimator {
                    EstimatorKind::Marginal => "marginal",
                    EstimatorKind::ReferenceRidge { .. } => "reference_ridge",
                    EstimatorKind::Ridge { .. } => "ridge",
                }
                .to_string(),
                level: Level::Individual,
                center: limit.center,
                sd: limit.sd,
                eta: limit.eta,
                rate_tag: limit.rate,
                degenerate: limit.degenerate,
                kappas: limit.kappas,
                m_value: None,
                tilting: None,
                inputs: echo(sim),
            })
        }
        _ => evaluate_law(sim, cov, resolved.homogeneous_ld),
    }
}

pub fn cmd_simulate(resolved: &Resolved, out: &Path) -> Result<()> {
    let (run, _entry) = run_standardized_batch(resolved)?;
    let csv = batch_csv(&run);
    std::fs::write(out, csv)?;

    let manifest = RunManifest {
        config_digest: config_digest(&resolved.sim),
        tool_version: TOOL_VERSION.to_string(),
        created_unix_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        master_seed: resolved.sim.master_seed,
        replications: resolved.sim.replications,
        outputs: vec![out.display().to_string()],
    };
    let manifest_path = sidecar_path(out);
    std::fs::write(
        manifest_path,
        serde_json::to_string_pretty(&manifest).expect("serializable") + "\n",
    )?;
    Ok(())
}

fn sidecar_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn batch_csv(run: &BatchRun) -> String {
    let mut s = String::from("replication,seed,raw,standardized,flag\n");
    for i in 0..run.batch.len() {
        let std = run
            .batch
            .standardized
            .as_ref()
            .map(|v| fmt_float(v[i]))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            i,
            run.batch.seeds[i],
            fmt_float(run.batch.raw[i]),
            std,
            run.batch.flags[i]
        );
    }
    s
}

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: serde_json::Value,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Verdict {
    pub tool_version: String,
    pub config_digest: String,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

pub fn cmd_verify(resolved: &Resolved, out: Option<&Path>) -> Result<Verdict> {
    let spec = resolved
        .config
        .verify
        .clone()
        .ok_or_else(|| Error::Config("verify command needs a `verify` section with thresholds".into()))?;
    if spec.ks_max.is_none()
        && spec.mean_tolerance_sds.is_none()
        && spec.variance_ratio_range.is_none()
        && spec.coverage_range.is_none()
    {
        return Err(Error::Config("verify section has no thresholds".into()));
    }

    let (run, entry) = run_standardized_batch(resolved)?;
    let raw = &run.batch.raw;
    let r = raw.len() as f64;
    let mut checks = Vec::new();

    if let Some(ks_max) = spec.ks_max {
        let standardized = run.batch.standardized.as_ref().ok_or_else(|| {
            Error::DegenerateLimit("KS check needs a nondegenerate analytic law".into())
        })?;
        let mut rep = stats::ks_to_standard_normal(standardized)?;
        rep.pass_threshold = Some(ks_max);
        checks.push(CheckResult {
            name: "ks".into(),
            value: rep.statistic,
            threshold: serde_json::json!(ks_max),
            pass: rep.statistic <= ks_max,
        });
    }
    if let Some(sds) = spec.mean_tolerance_sds {
        let mean = raw.iter().sum::<f64>() / r;
        let err = (mean - entry.center).abs();
        let tol = sds * entry.sd / r.sqrt();
        checks.push(CheckResult {
            name: "mean".into(),
            value: err,
            threshold: serde_json::json!(tol),
            pass: err <= tol,
        });
    }
    if let Some([lo, hi]) = spec.variance_ratio_range {
        let ratio = stats::variance_ratio(raw, entry.sd)?;
        checks.push(CheckResult {
            name: "variance_ratio".into(),
            value: ratio,
            threshold: serde_json::json!([lo, hi]),
            pass: (lo..=hi).contains(&ratio),
        });
    }
    if let Some([lo, hi]) = spec.coverage_range {
        let z = asymptotics::normal_quantile(1.0 - (1.0 - spec.ci_level) / 2.0);
        let ivs: Vec<(f64, f64)> = raw
            .iter()
            .map(|&x| (x - z * entry.sd, x + z * entry.sd))
            .collect();
        let cov = stats::coverage(&vec![entry.center; raw.len()], Intervals::PerReplication(&ivs))?;
        checks.push(CheckResult {
            name: "coverage".into(),
            value: cov,
            threshold: serde_json::json!([lo, hi]),
            pass: (lo..=hi).contains(&cov),
        });
    }

    let pass = checks.iter().all(|c| c.pass);
    let verdict = Verdict {
        tool_version: TOOL_VERSION.to_string(),
        config_digest: config_digest(&resolved.sim),
        checks,
        pass,
    };
    emit(
        out,
        &(serde_json::to_string_pretty(&verdict).expect("serializable") + "\n"),
    )?;
    Ok(verdict)
}

// ---- sweep ----

const SWEEP_HEADER: &str =
    "law,level,lambda,n,n_z,n_w,m,h2_beta,h2_beta_z,center,sd,eta,m_value,m_prime,tilting,degenerate";

pub fn cmd_sweep(resolved: &Resolved, out: Option<&Path>) -> Result<()> {
    let sweep = resolved
        .config
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep command needs a `sweep` section".into()))?;
    if sweep.vary.is_empty() || sweep.vary.values().any(|v| v.is_empty()) {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if sweep.laws.is_empty() {
        return Err(Error::Config("sweep requests no laws".into()));
    }
    for key in sweep.vary.keys() {
        if !matches!(
            key.as_str(),
            "lambda" | "n" | "n_z" | "n_w" | "m" | "h2_beta" | "h2_beta_z"
        ) {
            return Err(Error::Config(format!("unsupported sweep parameter {key:?}")));
        }
    }

    let mut rows = vec![SWEEP_HEADER.to_string()];
    let keys: Vec<&String> = sweep.vary.keys().collect();
    let grids: Vec<&Vec<f64>> = sweep.vary.values().collect();
    let mut index = vec![0usize; keys.len()];
    let base_cov = build_cov(&resolved.sim)?;

    loop {
        let mut sim = resolved.sim.clone();
        for (k, &key) in keys.iter().enumerate() {
            let v = grids[k][index[k]];
            apply_sweep_value(&mut sim, key, v)?;
        }
        sim.validate().map_err(|e| Error::Config(e.to_string()))?;
        // Rebuild the covariance only when the mask changed.
        let cov = if sim.cov.mask == resolved.sim.cov.mask {
            Arc::clone(&base_cov)
        } else {
            build_cov(&sim)?
        };
        for law in &sweep.laws {
            rows.push(sweep_row(&sim, &cov, law, resolved.homogeneous_ld)?);
        }

        // Advance the mixed-radix counter.
        let mut k = 0;
        loop {
            if k == keys.len() {
                let mut text = rows.join("\n");
                text.push('\n');
                return emit(out, &text);
            }
            index[k] += 1;
            if index[k] < grids[k].len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

fn apply_sweep_value(sim: &mut SimConfig, key: &str, v: f64) -> Result<()> {
    let as_size = |v: f64| -> Result<usize> {
        if v < 1.0 || v.fract() != 0.0 {
            return Err(Error::Config(format!("{v} is not a positive integer")));
        }
        Ok(v as usize)
    };
    match key {
        "lambda" => {
            sim.params.lambda = Some(v);
            match &mut sim.estimator {
                EstimatorKind::ReferenceRidge { lambda } | EstimatorKind::Ridge { lambda } => {
                    *lambda = v;
                }
                EstimatorKind::Marginal => {}
            }
        }
        "n" => sim.params.n = as_size(v)?,
        "n_z" => sim.params.n_z = as_size(v)?,
        "n_w" => sim.params.n_w = Some(as_size(v)?),
        "m" => {
            let m = as_size(v)?;
            sim.params.m = m;
            sim.cov.mask = match &sim.cov.mask {
                MaskSpec::FirstM { .. } => MaskSpec::FirstM { m },
                MaskSpec::Random { seed, .. } => MaskSpec::Random { m, seed: *seed },
                MaskSpec::FromFile { .. } => {
                    return Err(Error::Config(
                        "cannot sweep m with a file-backed mask".into(),
                    ))
                }
            };
        }
        "h2_beta" => sim.params.h2_beta = v,
        "h2_beta_z" => sim.params.h2_beta_z = v,
        _ => unreachable!("validated"),
    }
    Ok(())
}

fn sweep_row(
    sim: &SimConfig,
    cov: &Arc<CovarianceModel>,
    law: &str,
    homogeneous_ld: bool,
) -> Result<String> {
    let (level, limit, point): (Level, GaussianLimit, Option<StieltjesPoint>) = match law {
        "marginal_individual" => {
            let (z, beta) = batch_conditioning(sim, cov);
            (
                Level::Individual,
                asymptotics::marginal_individual(cov, &z, &beta, &sim.params),
                None,
            )
        }
        "marginal_accuracy" => (
            Level::Accuracy,
            asymptotics::marginal_accuracy(cov, &sim.params, homogeneous_ld),
            None,
        ),
        "quadratic_form" => (
            Level::Accuracy,
            asymptotics::quadratic_form(cov, &sim.params),
            None,
        ),
        "reference_individual" | "reference_accuracy" => {
            let pt = solve_point(cov, sim.params.phi_w()?, sim.params.lambda()?)?;
            let lim = if law == "reference_individual" {
                let (z, beta) = batch_conditioning(sim, cov);
                asymptotics::reference_individual(cov, &z, &beta, &sim.params, &pt)?
            } else {
                asymptotics::reference_accuracy(cov, &sim.params, &pt)?
            };
            (
                if law == "reference_individual" {
                    Level::Individual
                } else {
                    Level::Accuracy
                },
                lim,
                Some(pt),
            )
        }
        "ridge_individual" | "ridge_accuracy" => {
            let pt = solve_point(cov, sim.params.phi_n(), sim.params.lambda()?)?;
            let lim = if law == "ridge_individual" {
                let (z, beta) = batch_conditioning(sim, cov);
                asymptotics::ridge_individual(cov, &z, &beta, &sim.params, &pt, false)?
            } else {
                asymptotics::ridge_accuracy(cov, &sim.params, &pt, false)?
            };
            (
                if law == "ridge_individual" {
                    Level::Individual
                } else {
                    Level::Accuracy
                },
                lim,
                Some(pt),
            )
        }
        other => {
            return Err(Error::Config(format!("unknown law {other:?} in sweep")));
        }
    };

    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        law,
        match level {
            Level::Individual => "individual",
            Level::Accuracy => "accuracy",
        },
        opt(sim.params.lambda),
        sim.params.n,
        sim.params.n_z,
        sim.params.n_w.map(|v| v.to_string()).unwrap_or_default(),
        sim.params.m,
        fmt_float(sim.params.h2_beta),
        fmt_float(sim.params.h2_beta_z),
        fmt_float(limit.center),
        fmt_float(limit.sd),
        opt(limit.eta),
        opt(point.map(|p| p.m_value)),
        opt(point.map(|p| p.m_prime)),
        opt(point.map(|p| p.tilting)),
        limit.degenerate
    ))
}
