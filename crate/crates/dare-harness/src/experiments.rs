//! Experiment runners. Each returns a [`Report`] holding long-format records,
//! a JSON summary, and named pass/fail checks.

use dare_core::envmodel::{
    example1_family, gen_environment, gen_environments, mean_shift_matrix, random_spd, standard_normal_vector,
    EnvPrior, EnvironmentSpec, GroundTruth, ResidualLaw, Task,
};
use dare_core::matops::{nullspace_projector, spectral_norm, sqrt_psd, sym_eig, Mat, Vector};
use dare_core::seeding::{derive_seed, trial_rng, Rng};
use dare_core::solvers::{
    accuracy, closed_form_dare_linear, constraint_violation, dare_fit, dare_fit_detailed, erm_fit, FitConfig,
};
use dare_core::theory::experiments::{sample_with_projector, seeded_normal};
use dare_core::theory::{
    adversarial_sup_risk, adversary_search, analytic_excess, classifier_alignment, env_complexity_experiment,
    jituda_condition, jituda_experiment, lemma1_check, loglog_slope, mean_stderr, whitener_error,
    AdversaryBudget, FreeBudget,
};
use dare_core::{DareError, Result};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    DiagnosticsConfig, Lemma1Config, SweepLambdaConfig, Theorem1Config, Theorem2Config, Theorem3Config,
    Theorem4Config,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, bound: impl Into<String>, passed: bool) -> Self {
        Check {
            name: name.into(),
            value,
            bound: bound.into(),
            passed,
        }
    }
}

/// One CSV row: grid point, trial, metric, value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub grid: String,
    pub trial: usize,
    pub metric: String,
    pub value: f64,
}

fn rec(grid: impl Into<String>, trial: usize, metric: &str, value: f64) -> Record {
    Record {
        grid: grid.into(),
        trial,
        metric: metric.into(),
        value,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub passed: bool,
    /// Acceptance thresholds; `passed` is their conjunction.
    pub checks: Vec<Check>,
    /// Extra properties, reported but not gating.
    pub invariants: Vec<Check>,
    pub summary: serde_json::Value,
    #[serde(skip)]
    pub records: Vec<Record>,
    /// Wall-clock budget in seconds.
    #[serde(skip)]
    pub runtime_limit_s: f64,
}

impl Report {
    fn new(
        experiment: &str,
        checks: Vec<Check>,
        invariants: Vec<Check>,
        summary: serde_json::Value,
        records: Vec<Record>,
        runtime_limit_s: f64,
    ) -> Self {
        Report {
            experiment: experiment.into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            invariants,
            summary,
            records,
            runtime_limit_s,
        }
    }
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let den = a.norm() * b.norm();
    if den > 0.0 {
        a.dot(b) / den
    } else {
        0.0
    }
}

/// Haar-ish random orthogonal matrix from the QR of a Gaussian matrix.
fn random_rotation(k: usize, rng: &mut Rng) -> Mat {
    let g = Mat::from_fn(k, k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn gaussian_matrix(r: usize, c: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

// ---------------------------------------------------------------------------

pub fn theorem1(cfg: &Theorem1Config, seed: u64) -> Result<Report> {
    let d = cfg.d;
    let mut rng = trial_rng(seed, "theorem1/setup", 0);
    let beta_star = standard_normal_vector(d, &mut rng);
    let specs: Vec<EnvironmentSpec> = (0..cfg.envs)
        .map(|e| {
            let a = sqrt_psd(&random_spd(d, 0.5, &mut rng))?;
            let b = standard_normal_vector(d, &mut rng) * cfg.mean_scale;
            Ok(EnvironmentSpec::new(format!("env{e}"), a, b))
        })
        .collect::<Result<_>>()?;
    let pi_hat = nullspace_projector(&mean_shift_matrix(&specs));
    let target = closed_form_dare_linear(&beta_star, &mean_shift_matrix(&specs))?;
    let fit_cfg = FitConfig {
        lambda: cfg.lambda,
        shrinkage_weight: 0.0,
        ..FitConfig::default()
    };

    let reg_truth = GroundTruth::regression(beta_star.clone(), 0.1);
    let reg = gen_environments(&specs, &reg_truth, cfg.n, Task::Regress, derive_seed(seed, "theorem1/regress", 0))?;
    let reg_model = dare_fit(&reg, &fit_cfg)?;
    let reg_err = (reg_model.direction() - &target).norm() / beta_star.norm();

    let cls_truth = GroundTruth::classification(beta_star.clone());
    let cls = gen_environments(&specs, &cls_truth, cfg.n, Task::Classify, derive_seed(seed, "theorem1/classify", 0))?;
    let cls_model = dare_fit(&cls, &fit_cfg)?;
    let w = cls_model.direction();
    let cos = cosine(&w, &target);
    let alpha = w.dot(&target) / target.norm_squared();
    let leak = ((Mat::identity(d, d) - &pi_hat) * &w).norm() / w.norm();

    let checks = vec![
        Check::new("regression_relative_error", reg_err, format!("<= {}", cfg.tolerance), reg_err <= cfg.tolerance),
        Check::new("logistic_cosine", cos, format!(">= {}", cfg.min_cosine), cos >= cfg.min_cosine),
        Check::new(
            "logistic_alpha",
            alpha,
            format!("in (0, {}]", cfg.max_alpha),
            alpha > 0.0 && alpha <= cfg.max_alpha,
        ),
    ];
    let invariants = vec![
        Check::new("regression_converged", f64::from(u8::from(reg_model.convergence.converged)), "== 1", reg_model.convergence.converged),
        Check::new("logistic_converged", f64::from(u8::from(cls_model.convergence.converged)), "== 1", cls_model.convergence.converged),
    ];
    let records = vec![
        rec("regress", 0, "relative_error", reg_err),
        rec("regress", 0, "grad_norm", reg_model.convergence.grad_norm),
        rec("classify", 0, "cosine", cos),
        rec("classify", 0, "alpha", alpha),
        rec("classify", 0, "relative_leak", leak),
        rec("classify", 0, "grad_norm", cls_model.convergence.grad_norm),
    ];
    let summary = json!({
        "d": d,
        "envs": cfg.envs,
        "n": cfg.n,
        "lambda": cfg.lambda,
        "beta_star_norm": beta_star.norm(),
        "projected_norm": target.norm(),
        "regression_relative_error": reg_err,
        "logistic_cosine": cos,
        "logistic_alpha": alpha,
        "logistic_relative_leak": leak,
    });
    Ok(Report::new("theorem1", checks, invariants, summary, records, 60.0))
}

// ---------------------------------------------------------------------------

pub fn lemma1(cfg: &Lemma1Config, seed: u64) -> Result<Report> {
    let beta_star = Vector::from_element(cfg.d, 1.0);
    let removed_mass: f64 = cfg.removed.iter().map(|&i| beta_star.get(i).map_or(0.0, |v| v * v)).sum();
    let cut = lemma1_check(
        &cfg.removed,
        &beta_star,
        cfg.n,
        ResidualLaw::StandardGaussian,
        derive_seed(seed, "lemma1/removed", 0),
    )?;
    let full = lemma1_check(&[], &beta_star, cfg.n, ResidualLaw::StandardGaussian, derive_seed(seed, "lemma1/full", 0))?;
    let orth_ratio = cut.orth_norm / cut.kept_norm;
    let checks = vec![
        Check::new("removed_alpha", cut.alpha, "in (0, 1)", cut.alpha > 0.0 && cut.alpha < 1.0),
        Check::new(
            "removed_orthogonal_ratio",
            orth_ratio,
            format!("<= {}", cfg.orth_tolerance),
            orth_ratio <= cfg.orth_tolerance,
        ),
        Check::new(
            "full_alpha",
            full.alpha,
            format!("1 ± {}", cfg.alpha_tolerance),
            (full.alpha - 1.0).abs() <= cfg.alpha_tolerance,
        ),
    ];
    let invariants = vec![
        Check::new("removed_converged", f64::from(u8::from(cut.converged)), "== 1", cut.converged),
        Check::new("full_converged", f64::from(u8::from(full.converged)), "== 1", full.converged),
    ];
    let records = vec![
        rec("removed", 0, "alpha", cut.alpha),
        rec("removed", 0, "orthogonal_norm", cut.orth_norm),
        rec("removed", 0, "kept_norm", cut.kept_norm),
        rec("full", 0, "alpha", full.alpha),
        rec("full", 0, "orthogonal_norm", full.orth_norm),
    ];
    let summary = json!({
        "d": cfg.d,
        "n": cfg.n,
        "removed": cfg.removed,
        "removed_fraction_of_norm_sq": removed_mass / beta_star.norm_squared(),
        "removed_alpha": cut.alpha,
        "removed_orthogonal_ratio": orth_ratio,
        "full_alpha": full.alpha,
    });
    Ok(Report::new("lemma1", checks, invariants, summary, records, 120.0))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct MinimaxInstance {
    instance: usize,
    sup_formula: f64,
    dare_risk: f64,
    ratio: f64,
    /// (name, found risk, has (I−Π̂) component, flagged unbounded)
    alternatives: Vec<(String, f64, bool, bool)>,
    dare_flagged: bool,
}

pub fn theorem2(cfg: &Theorem2Config, seed: u64) -> Result<Report> {
    let budget = AdversaryBudget {
        rho: cfg.rho,
        b_bound: cfg.b_bound,
        free: FreeBudget::Unbounded,
    };
    let instances: Vec<MinimaxInstance> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let d = cfg.d;
            let mut rng = trial_rng(seed, "theorem2/instance", i as u64);
            let beta_star = standard_normal_vector(d, &mut rng);
            let b = gaussian_matrix(d, cfg.envs, &mut rng);
            let pi_hat = nullspace_projector(&b);
            let outside = Mat::identity(d, d) - &pi_hat;
            let dare = closed_form_dare_linear(&beta_star, &b)?;

            let specs: Vec<EnvironmentSpec> = (0..cfg.envs)
                .map(|e| EnvironmentSpec::new(format!("env{e}"), Mat::identity(d, d), b.column(e).into_owned()))
                .collect();
            let truth = GroundTruth::regression(beta_star.clone(), 0.1);
            let data = gen_environments(&specs, &truth, cfg.erm_n, Task::Regress, derive_seed(seed, "theorem2/erm", i as u64))?;
            let erm = erm_fit(&data, &FitConfig::default())?.direction();

            let alternatives = vec![
                ("beta_star".to_string(), beta_star.clone()),
                ("half_beta_star".to_string(), &beta_star * 0.5),
                ("leaky".to_string(), &dare + &outside * &beta_star * 0.3),
                ("erm".to_string(), erm),
            ];
            let search_seed = derive_seed(seed, "theorem2/search", i as u64);
            let found = adversary_search(&dare, &beta_star, &pi_hat, budget, cfg.search_trials, search_seed)?;
            let sup = adversarial_sup_risk(&beta_star, &pi_hat, cfg.rho, cfg.b_bound);
            let alts = alternatives
                .into_iter()
                .map(|(name, beta)| {
                    let r = adversary_search(&beta, &beta_star, &pi_hat, budget, cfg.search_trials, search_seed)?;
                    let leaks = (&outside * &beta).norm() > 1e-9 * beta.norm().max(1.0);
                    Ok((name, r.best_risk, leaks, r.unbounded))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MinimaxInstance {
                instance: i,
                sup_formula: sup,
                dare_risk: found.best_risk,
                ratio: found.best_risk / sup,
                alternatives: alts,
                dare_flagged: found.unbounded,
            })
        })
        .collect::<Result<_>>()?;

    let ratios: Vec<f64> = instances.iter().map(|m| m.ratio).collect();
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst_margin = instances
        .iter()
        .flat_map(|m| m.alternatives.iter().map(move |a| a.1 - m.dare_risk))
        .fold(f64::INFINITY, f64::min);
    let missed_flags = instances
        .iter()
        .flat_map(|m| m.alternatives.iter())
        .filter(|a| a.2 && !a.3)
        .count();
    let leaky_total = instances.iter().flat_map(|m| m.alternatives.iter()).filter(|a| a.2).count();
    let dare_flagged = instances.iter().filter(|m| m.dare_flagged).count();

    let checks = vec![
        Check::new("dare_ratio_min", min_ratio, ">= 0.9", min_ratio >= 0.9),
        Check::new("dare_ratio_max", max_ratio, "<= 1.000001", max_ratio <= 1.000001),
        Check::new("alternative_minus_dare_min", worst_margin, ">= -1e-6", worst_margin >= -1e-6),
        Check::new("leaky_not_flagged", missed_flags as f64, "== 0", missed_flags == 0),
    ];
    let invariants = vec![Check::new("dare_flagged_unbounded", dare_flagged as f64, "== 0", dare_flagged == 0)];
    let mut records = Vec::new();
    for m in &instances {
        records.push(rec("dare", m.instance, "found_risk", m.dare_risk));
        records.push(rec("dare", m.instance, "sup_formula", m.sup_formula));
        records.push(rec("dare", m.instance, "ratio", m.ratio));
        for (name, risk, leaks, flagged) in &m.alternatives {
            records.push(rec(name.as_str(), m.instance, "found_risk", *risk));
            records.push(rec(name.as_str(), m.instance, "leaks", f64::from(u8::from(*leaks))));
            records.push(rec(name.as_str(), m.instance, "flagged_unbounded", f64::from(u8::from(*flagged))));
        }
    }
    let summary = json!({
        "instances": cfg.instances,
        "d": cfg.d,
        "envs": cfg.envs,
        "rho": cfg.rho,
        "b_bound": cfg.b_bound,
        "search_trials": cfg.search_trials,
        "dare_ratio": mean_stderr(&ratios),
        "dare_ratio_min": min_ratio,
        "dare_ratio_max": max_ratio,
        "alternative_minus_dare_min": worst_margin,
        "leaky_predictors": leaky_total,
        "leaky_flagged": leaky_total - missed_flags,
    });
    Ok(Report::new("theorem2", checks, invariants, summary, records, 300.0))
}

// ---------------------------------------------------------------------------

/// Σ_b of the given rank with eigenvalues `i^{-decay}`, living in the last
/// `rank` coordinates after a random rotation; Π is the first `d − rank`.
fn rank_prior(d: usize, rank: usize, decay: f64, rng: &mut Rng) -> Result<EnvPrior> {
    let rot = random_rotation(rank, rng);
    let diag = Mat::from_diagonal(&Vector::from_fn(rank, |i, _| ((i + 1) as f64).powf(-decay)));
    let inner = &rot * diag * rot.transpose();
    let keep = d - rank;
    let mut sigma_b = Mat::zeros(d, d);
    sigma_b.view_mut((keep, keep), (rank, rank)).copy_from(&inner);
    let pi = Mat::from_diagonal(&Vector::from_fn(d, |i, _| if i < keep { 1.0 } else { 0.0 }));
    EnvPrior::new(dare_core::matops::symmetrize(&sigma_b), pi)
}

/// Test domain with adjustment error `κ(I − Π)`, zero mean shift, scored through `W = I`.
fn perturbed_test(prior: &EnvPrior, kappa: f64) -> EnvironmentSpec {
    let d = prior.dim();
    let a = Mat::identity(d, d) + (Mat::identity(d, d) - &prior.invariant_projector) * kappa;
    EnvironmentSpec::new("test", a, Vector::zeros(d))
}

pub fn theorem3(cfg: &Theorem3Config, seed: u64) -> Result<Report> {
    // item 1: shift covariance of full rank within range(I − Π)
    let exact: Vec<(f64, f64)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, "theorem3/exact", t as u64);
            let prior = rank_prior(cfg.exact_d, cfg.exact_rank, cfg.rate_decay, &mut rng)?;
            let beta_star = standard_normal_vector(cfg.exact_d, &mut rng);
            let truth = GroundTruth::regression(beta_star.clone(), 0.1);
            let (_, pi_hat) = sample_with_projector(&prior, cfg.exact_envs, derive_seed(seed, "theorem3/exact-envs", t as u64))?;
            let test = perturbed_test(&prior, cfg.kappa);
            let w = Mat::identity(cfg.exact_d, cfg.exact_d);
            let gap = analytic_excess(&(&pi_hat * &beta_star), 0.0, &w, &test, &truth)
                - analytic_excess(&(&prior.invariant_projector * &beta_star), 0.0, &w, &test, &truth);
            Ok((spectral_norm(&(&prior.invariant_projector - &pi_hat)), gap))
        })
        .collect::<Result<_>>()?;
    let max_sub = exact.iter().map(|e| e.0).fold(0.0, f64::max);
    let max_gap = exact.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let exact_pass = exact.iter().filter(|e| e.0 <= 1e-8 && e.1.abs() <= 1e-10).count();

    // item 2: decaying spectrum, rate in E
    let mut rng = trial_rng(seed, "theorem3/rate-setup", 0);
    let prior = rank_prior(cfg.rate_d, cfg.rate_rank, cfg.rate_decay, &mut rng)?;
    let eff_rank = dare_core::matops::spectral_summary(&prior.sigma_b)?.effective_rank;
    let beta_star = seeded_normal(cfg.rate_d, derive_seed(seed, "theorem3/beta", 0));
    let truth = GroundTruth::regression(beta_star, 0.1);
    let test = perturbed_test(&prior, cfg.kappa);
    let curve = env_complexity_experiment(
        &prior,
        &truth,
        &test,
        &Mat::identity(cfg.rate_d, cfg.rate_d),
        &cfg.rate_env_grid,
        cfg.trials,
        derive_seed(seed, "theorem3/rate", 0),
    )?;
    let xs: Vec<f64> = curve.points.iter().map(|p| p.envs as f64).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.gap.mean).collect();
    let slope = loglog_slope(&xs, &ys).unwrap_or(f64::NAN);
    let monotone = curve
        .points
        .windows(2)
        .all(|w| w[1].subspace_error.mean <= w[0].subspace_error.mean + w[1].subspace_error.stderr.max(w[0].subspace_error.stderr));

    let checks = vec![
        Check::new("exact_trials_passing", exact_pass as f64, format!("== {}", cfg.trials), exact_pass == cfg.trials),
        Check::new(
            "rate_slope",
            slope,
            format!("in [{}, {}]", cfg.slope_min, cfg.slope_max),
            slope >= cfg.slope_min && slope <= cfg.slope_max,
        ),
    ];
    let invariants = vec![
        Check::new("exact_max_subspace_error", max_sub, "<= 1e-8", max_sub <= 1e-8),
        Check::new("exact_max_gap", max_gap, "<= 1e-10", max_gap <= 1e-10),
        Check::new("subspace_error_monotone", f64::from(u8::from(monotone)), "== 1", monotone),
    ];
    let mut records = Vec::new();
    for (t, (sub, gap)) in exact.iter().enumerate() {
        records.push(rec("exact", t, "subspace_error", *sub));
        records.push(rec("exact", t, "gap", *gap));
    }
    for t in &curve.trials {
        records.push(rec(format!("E={}", t.envs), t.trial, "gap", t.gap));
        records.push(rec(format!("E={}", t.envs), t.trial, "subspace_error", t.subspace_error));
    }
    let summary = json!({
        "kappa": cfg.kappa,
        "exact": {
            "d": cfg.exact_d, "rank": cfg.exact_rank, "envs": cfg.exact_envs,
            "trials": cfg.trials, "passing": exact_pass,
            "max_subspace_error": max_sub, "max_gap": max_gap,
        },
        "rate": {
            "d": cfg.rate_d, "rank": cfg.rate_rank, "effective_rank": eff_rank,
            "points": curve.points, "slope": slope,
        },
    });
    Ok(Report::new("theorem3", checks, invariants, summary, records, 600.0))
}

// ---------------------------------------------------------------------------

/// Target covariance with a moderately spread spectrum in `[1, 2]`, and β*
/// concentrated on its weakest eigendirection.
///
/// Shrinking `λ_min` moves the whitener error only through pairs involving
/// that direction; for an isotropic β* the first-order change cancels.
pub fn theorem4_design(d: usize, seed: u64) -> Result<(Mat, Mat, Vector, Vector)> {
    let mut rng = trial_rng(seed, "theorem4/setup", 0);
    let sigma_s = random_spd(d, 0.5, &mut rng);
    let rot = random_rotation(d, &mut rng);
    let vals = Vector::from_fn(d, |_, _| rng.random_range(1.0..2.0));
    let sigma_t = dare_core::matops::symmetrize(&(&rot * Mat::from_diagonal(&vals) * rot.transpose()));
    let mu_t = standard_normal_vector(d, &mut rng);
    let weakest = rot.column(vals.imin()).into_owned();
    let beta_star = weakest * (d as f64).sqrt() + standard_normal_vector(d, &mut rng) * 0.1;
    Ok((sigma_s, sigma_t, mu_t, beta_star))
}

pub fn theorem4(cfg: &Theorem4Config, seed: u64) -> Result<Report> {
    let d = cfg.d;
    let (sigma_s, sigma_t, mu_t, beta_star) = theorem4_design(d, seed)?;
    let truth = GroundTruth::regression(beta_star, 0.1);
    let run_seed = derive_seed(seed, "theorem4/run", 0);
    let curve = jituda_experiment(&truth, &sigma_s, &sigma_t, &mu_t, &cfg.n_grid, cfg.trials, 0.0, run_seed)?;
    let xs: Vec<f64> = curve.points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.excess.mean).collect();
    let slope = loglog_slope(&xs, &ys).unwrap_or(f64::NAN);

    // shrink the smallest eigenvalue, raising λ_max/λ_min³
    let eig = sym_eig(&sigma_t)?;
    let mut vals = eig.values.clone();
    let imin = vals.imin();
    vals[imin] /= cfg.paired_min_eig_divisor;
    let sigma_t2 = dare_core::matops::symmetrize(&(&eig.vectors * Mat::from_diagonal(&vals) * eig.vectors.transpose()));
    let m1 = jituda_condition(&sigma_t)?;
    let m2 = jituda_condition(&sigma_t2)?;
    let base = jituda_experiment(&truth, &sigma_s, &sigma_t, &mu_t, &[cfg.paired_n], cfg.trials, 0.0, run_seed)?;
    let harder = jituda_experiment(&truth, &sigma_s, &sigma_t2, &mu_t, &[cfg.paired_n], cfg.trials, 0.0, run_seed)?;
    let base_mean = base.points[0].excess.mean;
    let harder_mean = harder.points[0].excess.mean;
    let paired_wins = base
        .trials
        .iter()
        .zip(&harder.trials)
        .filter(|(a, b)| b.excess > a.excess)
        .count();

    let checks = vec![
        Check::new(
            "risk_slope",
            slope,
            format!("in [{}, {}]", cfg.slope_min, cfg.slope_max),
            slope >= cfg.slope_min && slope <= cfg.slope_max,
        ),
        Check::new("paired_mean_increase", harder_mean - base_mean, "> 0", harder_mean > base_mean),
    ];
    let expected = cfg.paired_min_eig_divisor.powi(3);
    let invariants = vec![
        Check::new("condition_ratio", m2 / m1, format!("== {expected}"), ((m2 / m1) / expected - 1.0).abs() < 1e-9),
        Check::new("paired_trials_increased", paired_wins as f64, format!("of {}", cfg.trials), paired_wins * 2 > cfg.trials),
    ];
    let mut records = Vec::new();
    for t in &curve.trials {
        records.push(rec(format!("n={}", t.n), t.trial, "excess", t.excess));
    }
    for (a, b) in base.trials.iter().zip(&harder.trials) {
        records.push(rec(format!("paired/m={m1:.6e}"), a.trial, "excess", a.excess));
        records.push(rec(format!("paired/m={m2:.6e}"), b.trial, "excess", b.excess));
    }
    let summary = json!({
        "d": d,
        "trials": cfg.trials,
        "points": curve.points,
        "slope": slope,
        "paired": {
            "n": cfg.paired_n,
            "condition": [m1, m2],
            "mean_excess": [base_mean, harder_mean],
            "trials_increased": paired_wins,
        },
    });
    Ok(Report::new("theorem4", checks, invariants, summary, records, 600.0))
}

// ---------------------------------------------------------------------------

/// The λ-sweep design: invariant block `Σ`, two pairs of environments that
/// share a diagonal varying block and carry opposite mean shifts along one
/// varying coordinate each. The test domain inflates the shifted coordinates.
pub fn sweep_design(cfg: &SweepLambdaConfig, seed: u64) -> Result<(Vec<EnvironmentSpec>, EnvironmentSpec, GroundTruth)> {
    let d = cfg.beta_star.len();
    let d1 = cfg.invariant_dim;
    let d2 = d - d1;
    let mut rng = trial_rng(seed, "sweep-lambda/setup", 0);
    let sigma = random_spd(d1, 0.5, &mut rng);
    let regimes: Vec<Mat> = (0..2)
        .map(|_| Mat::from_diagonal(&Vector::from_fn(d2, |_, _| rng.random_range(0.5..2.0))))
        .collect();
    let covs = vec![regimes[0].clone(), regimes[0].clone(), regimes[1].clone(), regimes[1].clone()];
    let shifts = [(d1, 1.0), (d1, -1.0), (d1 + 1, 1.0), (d1 + 1, -1.0)];
    let specs = example1_family(d1, d2, &sigma, &covs)?
        .into_iter()
        .zip(shifts)
        .map(|(s, (coord, sign))| {
            let mut b = Vector::zeros(d);
            b[coord] = sign * cfg.mean_shift;
            s.with_mean(b)
        })
        .collect();
    let test_cov = Mat::from_diagonal(&Vector::from_fn(d2, |i, _| if i < 2 { cfg.test_variance } else { 1.0 }));
    let test = example1_family(d1, d2, &sigma, &[test_cov])?.remove(0);
    let test = EnvironmentSpec { env_id: "test".into(), ..test };
    Ok((specs, test, GroundTruth::classification(Vector::from_column_slice(&cfg.beta_star))))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub test_accuracy: f64,
    pub violation: f64,
    pub converged: bool,
}

pub fn sweep_lambda(cfg: &SweepLambdaConfig, seed: u64) -> Result<Report> {
    let (specs, test_spec, truth) = sweep_design(cfg, seed)?;
    let train = gen_environments(&specs, &truth, cfg.n, Task::Classify, derive_seed(seed, "sweep-lambda/train", 0))?;
    let test = gen_environment(&test_spec, &truth, cfg.n_test, Task::Classify, derive_seed(seed, "sweep-lambda/test", 0))?;
    let rows: Vec<SweepRow> = cfg
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let (model, whiteners, _) = dare_fit_detailed(&train, &FitConfig::default().with_lambda(lambda))?;
            Ok(SweepRow {
                lambda,
                test_accuracy: accuracy(&model, &test)?,
                violation: constraint_violation(&model, &whiteners),
                converged: model.convergence.converged,
            })
        })
        .collect::<Result<_>>()?;

    let robust: Vec<f64> = rows.iter().filter(|r| r.lambda >= 1.0).map(|r| r.test_accuracy).collect();
    let spread = if robust.is_empty() {
        f64::NAN
    } else {
        robust.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - robust.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let at = |l: f64| rows.iter().find(|r| r.lambda == l);
    let (viol_gap, acc_gap) = match (at(0.0), at(10.0)) {
        (Some(z), Some(t)) => (z.violation - t.violation, t.test_accuracy - z.test_accuracy),
        _ => (f64::NAN, f64::NAN),
    };
    let nonincreasing = rows.windows(2).all(|w| w[1].violation <= w[0].violation + 1e-9);
    let all_converged = rows.iter().all(|r| r.converged);
    let checks = vec![
        Check::new("accuracy_spread_lambda_ge_1", spread, format!("< {}", cfg.max_spread), spread < cfg.max_spread),
        Check::new("violation_lambda0_minus_lambda10", viol_gap, "> 0", viol_gap > 0.0),
        Check::new("accuracy_lambda10_minus_lambda0", acc_gap, "> 0", acc_gap > 0.0),
    ];
    let invariants = vec![
        Check::new("violation_nonincreasing", f64::from(u8::from(nonincreasing)), "== 1", nonincreasing),
        Check::new("all_converged", f64::from(u8::from(all_converged)), "== 1", all_converged),
    ];
    let mut records = Vec::new();
    for r in &rows {
        let g = format!("lambda={:?}", r.lambda);
        records.push(rec(g.as_str(), 0, "test_accuracy", r.test_accuracy));
        records.push(rec(g.as_str(), 0, "violation", r.violation));
    }
    let summary = json!({
        "n": cfg.n,
        "n_test": cfg.n_test,
        "rows": rows,
        "accuracy_spread_lambda_ge_1": spread,
    });
    Ok(Report::new("sweep-lambda", checks, invariants, summary, records, 600.0))
}

// ---------------------------------------------------------------------------

/// Example-1 family whose varying blocks have rotated, widely spread spectra.
pub fn diagnostics_design(cfg: &DiagnosticsConfig, seed: u64) -> Result<(Vec<EnvironmentSpec>, GroundTruth)> {
    let mut rng = trial_rng(seed, "diagnostics/setup", 0);
    let sigma = random_spd(cfg.invariant_dim, 0.5, &mut rng);
    let ln_s = cfg.spread.ln();
    let covs: Vec<Mat> = (0..cfg.envs)
        .map(|_| {
            let rot = random_rotation(cfg.varying_dim, &mut rng);
            let vals = Vector::from_fn(cfg.varying_dim, |_, _| rng.random_range(-ln_s..=ln_s).exp());
            dare_core::matops::symmetrize(&(&rot * Mat::from_diagonal(&vals) * rot.transpose()))
        })
        .collect();
    let specs = example1_family(cfg.invariant_dim, cfg.varying_dim, &sigma, &covs)?;
    // unit-norm blocks: the invariant and varying features carry equal signal
    let top = standard_normal_vector(cfg.invariant_dim, &mut rng).normalize();
    let bottom = standard_normal_vector(cfg.varying_dim, &mut rng).normalize();
    let beta_star = Vector::from_iterator(cfg.invariant_dim + cfg.varying_dim, top.iter().chain(bottom.iter()).copied());
    Ok((specs, GroundTruth::classification(beta_star)))
}

pub fn diagnostics(cfg: &DiagnosticsConfig, seed: u64) -> Result<Report> {
    let (specs, truth) = diagnostics_design(cfg, seed)?;
    let data = gen_environments(&specs, &truth, cfg.n, Task::Classify, derive_seed(seed, "diagnostics/data", 0))?;
    let shrink = FitConfig::default().shrinkage_weight;
    let raw = classifier_alignment(&data, false, shrink)?;
    let adjusted = classifier_alignment(&data, true, shrink)?;
    let whiteners = dare_core::solvers::fit_whiteners(&data, shrink)?;
    let loo: Vec<f64> = (0..whiteners.len())
        .map(|e| {
            let others: Vec<_> = whiteners
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != e)
                .map(|(_, w)| w.clone())
                .collect();
            whitener_error(&dare_core::solvers::guess_test_whitener(&others)?, &whiteners[e].inv_sqrt)
        })
        .collect::<Result<_>>()?;
    let loo_ok = loo.iter().all(|v| v.is_finite() && *v > 0.0);
    let checks = vec![Check::new(
        "adjusted_minus_unadjusted_cosine",
        adjusted - raw,
        format!(">= {}", cfg.min_improvement),
        adjusted - raw >= cfg.min_improvement,
    )];
    let invariants = vec![Check::new(
        "leave_one_out_whitener_error_finite_positive",
        loo.iter().cloned().fold(f64::INFINITY, f64::min),
        "> 0",
        loo_ok,
    )];
    let mut records = vec![rec("alignment", 0, "unadjusted", raw), rec("alignment", 0, "adjusted", adjusted)];
    for (e, v) in loo.iter().enumerate() {
        records.push(rec("whitener-loo", e, "normalized_frobenius_error", *v));
    }
    let summary = json!({
        "envs": cfg.envs,
        "n": cfg.n,
        "unadjusted_cosine": raw,
        "adjusted_cosine": adjusted,
        "leave_one_out_whitener_error": mean_stderr(&loo),
    });
    Ok(Report::new("diagnostics", checks, invariants, summary, records, 600.0))
}

/// Unknown experiment names are a usage error.
pub fn unknown(name: &str) -> DareError {
    DareError::InvalidArgument(format!("unknown experiment {name:?}"))
}
