use prsvar::asymptotics::{self, PopulationParams};
use prsvar::estimators::{EntryDist, EstimatorKind};
use prsvar::simulate::{self, CovSpec, EffectDist, SimConfig, Target};
use prsvar::spectral::{build_covariance_arc, CovKind, MaskSpec};

fn main() {
    for scale in [1usize, 2, 4] {
        let (p, m, n, n_z) = (500 * scale, 250 * scale, 1000 * scale, 500 * scale);
        let pr = PopulationParams {
            n, n_z, n_w: None, p, m,
            h2_beta: 0.5, h2_beta_z: 0.5, sigma_beta2: 1.0,
            entry_kurtosis: 3.0, effect_kurtosis_ratio: 3.0,
            lambda: None, phi_d: None, phi_w: None, phi_n: None,
        };
        let cov = build_covariance_arc(&CovKind::Identity, p, &MaskSpec::FirstM { m }).unwrap();
        for redraw in [true, false] {
            let cfg = SimConfig {
                cov: CovSpec { kind: CovKind::Identity, p, mask: MaskSpec::FirstM { m } },
                params: pr.clone(),
                entry_dist: EntryDist::Gaussian,
                effect_dist: EffectDist::Gaussian,
                replications: 400,
                master_seed: 777,
                estimator: EstimatorKind::Marginal,
                target: Target::Accuracy,
                redraw_effects: Some(redraw),
            };
            let run = simulate::run_batch(&cfg, &cov).unwrap();
            let raw = &run.batch.raw;
            let mu = raw.iter().sum::<f64>() / raw.len() as f64;
            let var = raw.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (raw.len() as f64 - 1.0);
            let lim = asymptotics::marginal_accuracy(&cov, &pr, false);
            println!(
                "scale {scale} redraw {redraw}: mean {mu:.4} (theory {:.4}), nz*var {:.3} (theory {:.3})",
                lim.center,
                n_z as f64 * var,
                n_z as f64 * lim.sd * lim.sd
            );
        }
    }
}
