//! Verification experiments for the closed-form, environment-complexity,
//! just-in-time adaptation and constrained-logistic results, plus the
//! classifier-alignment diagnostic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envmodel::{
    gen_environment, mean_shift_matrix, sample_env_params, EnvPrior, EnvironmentSpec, GroundTruth,
    LabeledDataset, ResidualLaw, Targets, Task,
};
use crate::error::{DareError, Result};
use crate::matops::{nullspace_projector, spectral_norm, sqrt_psd, Mat, Vector};
use crate::seeding::{derive_seed, rng_from_seed};
use crate::solvers::lbfgs::{minimize, LbfgsOptions};
use crate::solvers::objective::{EnvTerm, Objective};
use crate::solvers::{jituda_fit_predict, FitConfig, Whitener};
use crate::theory::risk::analytic_excess;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(values: &[f64]) -> MeanStderr {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStderr { mean: f64::NAN, stderr: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanStderr { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanStderr { mean, stderr: (var / n).sqrt() }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(DareError::InvalidArgument("slope fit needs ≥ 2 paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(DareError::InvalidArgument("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityTrial {
    pub envs: usize,
    pub trial: usize,
    pub gap: f64,
    pub subspace_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub envs: usize,
    pub gap: MeanStderr,
    pub subspace_error: MeanStderr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityCurve {
    pub points: Vec<ComplexityPoint>,
    pub trials: Vec<ComplexityTrial>,
}

/// Excess-risk gap `R(Π̂β*) − R(Πβ*)` on a fixed test environment as the
/// number of sampled training environments grows.
pub fn env_complexity_experiment(
    prior: &EnvPrior,
    truth: &GroundTruth,
    test_spec: &EnvironmentSpec,
    test_whitener: &Mat,
    env_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ComplexityCurve> {
    if env_grid.is_empty() || env_grid.windows(2).any(|w| w[1] <= w[0]) || env_grid[0] == 0 {
        return Err(DareError::InvalidArgument("environment grid must be positive and ascending".into()));
    }
    let d = prior.dim();
    let a_base = Mat::identity(d, d);
    let pi = &prior.invariant_projector;
    let reference = analytic_excess(&(pi * &truth.beta_star), 0.0, test_whitener, test_spec, truth);

    let jobs: Vec<(usize, usize)> = env_grid
        .iter()
        .flat_map(|&e| (0..trials).map(move |t| (e, t)))
        .collect();
    let results: Result<Vec<ComplexityTrial>> = jobs
        .par_iter()
        .map(|&(envs, trial)| {
            let s = derive_seed(seed, &format!("env-complexity/E={envs}"), trial as u64);
            let specs = sample_env_params(prior, &a_base, envs, s)?;
            let pi_hat = nullspace_projector(&mean_shift_matrix(&specs));
            let risk = analytic_excess(&(&pi_hat * &truth.beta_star), 0.0, test_whitener, test_spec, truth);
            Ok(ComplexityTrial {
                envs,
                trial,
                gap: risk - reference,
                subspace_error: spectral_norm(&(pi - &pi_hat)),
            })
        })
        .collect();
    let trials_out = results?;
    let points = env_grid
        .iter()
        .map(|&e| {
            let rows: Vec<&ComplexityTrial> = trials_out.iter().filter(|t| t.envs == e).collect();
            ComplexityPoint {
                envs: e,
                gap: mean_stderr(&rows.iter().map(|t| t.gap).collect::<Vec<_>>()),
                subspace_error: mean_stderr(&rows.iter().map(|t| t.subspace_error).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(ComplexityCurve {
        points,
        trials: trials_out,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskTrial {
    pub n: usize,
    pub trial: usize,
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskPoint {
    pub n: usize,
    pub excess: MeanStderr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskCurve {
    pub points: Vec<RiskPoint>,
    pub trials: Vec<RiskTrial>,
}

/// JIT-UDA excess risk against sample size, `n_S = n_T = n`.
///
/// Source and target share the latent mean `μ_T`; mixing maps are the
/// symmetric roots of `Σ_S` and `Σ_T`. Risk is evaluated analytically.
#[allow(clippy::too_many_arguments)]
pub fn jituda_experiment(
    truth: &GroundTruth,
    sigma_s: &Mat,
    sigma_t: &Mat,
    mu_t: &Vector,
    n_grid: &[usize],
    trials: usize,
    shrinkage_weight: f64,
    seed: u64,
) -> Result<RiskCurve> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DareError::InvalidArgument("sample-size grid must be ascending".into()));
    }
    let source = EnvironmentSpec::new("source", sqrt_psd(sigma_s)?, mu_t.clone());
    let target = EnvironmentSpec::new("target", sqrt_psd(sigma_t)?, mu_t.clone());
    let cfg = FitConfig {
        lambda: 0.0,
        center: false,
        shrinkage_weight,
        ..FitConfig::default()
    };
    let jobs: Vec<(usize, usize)> = n_grid
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let trials_out: Result<Vec<RiskTrial>> = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let s = derive_seed(seed, &format!("jituda/n={n}"), trial as u64);
            let src = gen_environment(&source, truth, n, Task::Regress, s)?;
            let tgt = gen_environment(&target, truth, n, Task::Regress, s ^ 0x5eed_7a26)?;
            let (model, _) = jituda_fit_predict(&src, &tgt.x, &cfg)?;
            let excess = analytic_excess(&model.direction(), 0.0, &model.test_whitener, &target, truth);
            Ok(RiskTrial { n, trial, excess })
        })
        .collect();
    let trials_out = trials_out?;
    let points = n_grid
        .iter()
        .map(|&n| RiskPoint {
            n,
            excess: mean_stderr(
                &trials_out.iter().filter(|t| t.n == n).map(|t| t.excess).collect::<Vec<_>>(),
            ),
        })
        .collect();
    Ok(RiskCurve {
        points,
        trials: trials_out,
    })
}

/// `λ_max / λ_min³`.
pub fn jituda_condition(sigma: &Mat) -> Result<f64> {
    let s = crate::matops::spectral_summary(sigma)?;
    Ok(s.lambda_max / s.lambda_min.powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Result {
    pub alpha: f64,
    pub orth_norm: f64,
    pub kept_norm: f64,
    pub converged: bool,
}

/// Logistic regression restricted to the kept coordinates, compared with `β*_S`.
pub fn lemma1_check(
    removed_dims: &[usize],
    beta_star: &Vector,
    n: usize,
    residual_law: ResidualLaw,
    seed: u64,
) -> Result<Lemma1Result> {
    let d = beta_star.len();
    if let Some(&bad) = removed_dims.iter().find(|&&i| i >= d) {
        return Err(DareError::InvalidArgument(format!("removed index {bad} ≥ d = {d}")));
    }
    let kept: Vec<usize> = (0..d).filter(|i| !removed_dims.contains(i)).collect();
    if kept.is_empty() {
        return Err(DareError::InvalidArgument("every dimension removed".into()));
    }
    let mut spec = EnvironmentSpec::new("lemma1", Mat::identity(d, d), Vector::zeros(d));
    spec.residual_law = residual_law;
    let ds = gen_environment(&spec, &GroundTruth::classification(beta_star.clone()), n, Task::Classify, seed)?;
    let z = Mat::from_fn(n, kept.len(), |i, j| ds.x[(i, kept[j])]);
    let obj = Objective {
        task: Task::Classify,
        d: kept.len(),
        k: 2,
        lambda: 0.0,
        fit_bias: false,
        terms: vec![EnvTerm {
            z,
            y: ds.y,
            data_weight: 1.0,
            penalty_vec: None,
            penalty_weight: 0.0,
        }],
    };
    let r = minimize(|t| obj.value_grad(t), vec![0.0; obj.n_params()], &LbfgsOptions::default());
    let (beta, _) = obj.unpack(&r.x);
    let dir = beta.column(1) - beta.column(0);
    let mut full = Vector::zeros(d);
    let mut target = Vector::zeros(d);
    for (j, &i) in kept.iter().enumerate() {
        full[i] = dir[j];
        target[i] = beta_star[i];
    }
    let kept_norm = target.norm();
    let alpha = full.dot(&target) / target.norm_squared();
    let orth = &full - &target * alpha;
    Ok(Lemma1Result {
        alpha,
        orth_norm: orth.norm(),
        kept_norm,
        converged: r.converged,
    })
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let den = a.norm() * b.norm();
    if den > 0.0 {
        a.dot(b) / den
    } else {
        0.0
    }
}

/// Mean pairwise cosine similarity of per-environment logistic coefficients,
/// averaged over environment pairs and class vectors.
pub fn classifier_alignment(datasets: &[LabeledDataset], adjusted: bool, shrinkage_weight: f64) -> Result<f64> {
    if datasets.len() < 2 {
        return Err(DareError::InvalidArgument("alignment needs ≥ 2 environments".into()));
    }
    let coefs: Result<Vec<Mat>> = datasets
        .par_iter()
        .map(|ds| {
            let Targets::Classes { labels, k } = &ds.y else {
                return Err(DareError::InvalidArgument("alignment needs class labels".into()));
            };
            let mut seen = vec![false; *k];
            for &l in labels {
                seen[l] = true;
            }
            if seen.iter().filter(|&&s| s).count() < 2 {
                return Err(DareError::SingleClass { env: ds.env_id.clone() });
            }
            let z = if adjusted {
                Whitener::from_samples(&ds.x, shrinkage_weight)?.transform(&ds.x, true)
            } else {
                ds.x.clone()
            };
            let obj = Objective {
                task: Task::Classify,
                d: ds.dim(),
                k: *k,
                lambda: 0.0,
                fit_bias: true,
                terms: vec![EnvTerm {
                    z,
                    y: ds.y.clone(),
                    data_weight: 1.0,
                    penalty_vec: None,
                    penalty_weight: 0.0,
                }],
            };
            let r = minimize(|t| obj.value_grad(t), vec![0.0; obj.n_params()], &LbfgsOptions::default());
            Ok(obj.unpack(&r.x).0)
        })
        .collect();
    let coefs = coefs?;
    let k = coefs.iter().map(Mat::ncols).min().unwrap_or(0);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..coefs.len() {
        for j in (i + 1)..coefs.len() {
            for c in 0..k {
                total += cosine(&coefs[i].column(c).into_owned(), &coefs[j].column(c).into_owned());
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Sample `E` environments, also returning `Π̂` from their mean shifts.
pub fn sample_with_projector(prior: &EnvPrior, envs: usize, seed: u64) -> Result<(Vec<EnvironmentSpec>, Mat)> {
    let d = prior.dim();
    let specs = sample_env_params(prior, &Mat::identity(d, d), envs, seed)?;
    let pi_hat = nullspace_projector(&mean_shift_matrix(&specs));
    Ok((specs, pi_hat))
}

/// Standard-normal vector from a seed, for experiment setup.
pub fn seeded_normal(d: usize, seed: u64) -> Vector {
    let mut rng = rng_from_seed(seed);
    crate::envmodel::standard_normal_vector(d, &mut rng)
}
