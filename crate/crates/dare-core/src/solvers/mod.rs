//! Whiteners and linear predictors.
//!
//! DARE whitens each environment with its own `Σ_e^{-1/2}` and fits a single
//! β under a penalty pushing every whitened environment mean to a
//! label-uninformative score. The baselines (ERM, reweighted ERM, GroupDRO)
//! fit on raw features. JIT-UDA whitens the target with its own unlabeled
//! samples instead of guessing.

pub mod lbfgs;
pub mod objective;

use serde::{Deserialize, Serialize};

use crate::envmodel::{LabeledDataset, Targets, Task};
use crate::error::{DareError, Result};
use crate::matops::{
    center_rows, inv_sqrt_psd, nullspace_projector, shrink_cov, Mat, Vector, DEFAULT_REL_TOL,
};
use lbfgs::{minimize, LbfgsOptions};
use objective::{EnvTerm, Objective};

#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub mu: Vector,
    pub cov: Mat,
    pub inv_sqrt: Mat,
    pub shrinkage_weight: f64,
}

impl Whitener {
    pub fn from_samples(x: &Mat, shrinkage_weight: f64) -> Result<Self> {
        let (mu, cov) = shrink_cov(x, shrinkage_weight)?;
        let inv_sqrt = inv_sqrt_psd(&cov, DEFAULT_REL_TOL)?;
        Ok(Whitener {
            mu,
            cov,
            inv_sqrt,
            shrinkage_weight,
        })
    }

    /// `Σ^{-1/2}(x − μ)` row by row, or `Σ^{-1/2}x` when `center` is false.
    pub fn transform(&self, x: &Mat, center: bool) -> Mat {
        if center {
            center_rows(x, &self.mu) * &self.inv_sqrt
        } else {
            x * &self.inv_sqrt
        }
    }

    pub fn whitened_mean(&self) -> Vector {
        &self.inv_sqrt * &self.mu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub shrinkage_weight: f64,
    /// Whiten `x − μ_e` (true) or `x` (false) in the data term.
    pub center: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 10.0,
            max_iters: 10_000,
            grad_tol: 1e-8,
            shrinkage_weight: 0.1,
            center: true,
        }
    }
}

impl FitConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(DareError::InvalidArgument("grad_tol must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(DareError::InvalidArgument("λ must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.shrinkage_weight) {
            return Err(DareError::InvalidArgument("shrinkage weight outside [0, 1]".into()));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            ..LbfgsOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iters: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub method_tag: String,
    pub task: Task,
    /// d×k coefficients.
    #[serde(with = "crate::serde_mat::matrix")]
    pub beta: Mat,
    #[serde(with = "crate::serde_mat::vector")]
    pub bias: Vector,
    #[serde(with = "crate::serde_mat::matrix")]
    pub test_whitener: Mat,
    pub lambda: f64,
    pub convergence: Convergence,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// n×k rows of class probabilities.
    Probabilities(Mat),
    Values(Vector),
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.beta.nrows()
    }

    /// Log-odds direction of class 1 over class 0, or β itself for regression.
    pub fn direction(&self) -> Vector {
        if self.beta.ncols() == 2 {
            self.beta.column(1) - self.beta.column(0)
        } else {
            self.beta.column(0).into_owned()
        }
    }

    /// Raw scores `βᵀΣ̄^{-1/2}x + bias`, n×k.
    pub fn scores(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.dim() {
            return Err(DareError::DimMismatch(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut s = x * self.test_whitener.transpose() * &self.beta;
        for c in 0..s.ncols() {
            s.column_mut(c).add_scalar_mut(self.bias[c]);
        }
        Ok(s)
    }
}

pub fn predict(model: &LinearModel, x: &Mat) -> Result<Predictions> {
    let mut s = model.scores(x)?;
    match model.task {
        Task::Regress => Ok(Predictions::Values(s.column(0).into_owned())),
        Task::Classify => {
            for i in 0..s.nrows() {
                let m = s.row(i).max();
                let mut z = 0.0;
                for c in 0..s.ncols() {
                    let e = (s[(i, c)] - m).exp();
                    s[(i, c)] = e;
                    z += e;
                }
                for c in 0..s.ncols() {
                    s[(i, c)] /= z;
                }
            }
            Ok(Predictions::Probabilities(s))
        }
    }
}

/// Fraction of correctly classified rows.
pub fn accuracy(model: &LinearModel, ds: &LabeledDataset) -> Result<f64> {
    let Targets::Classes { labels, .. } = &ds.y else {
        return Err(DareError::InvalidArgument("accuracy needs class labels".into()));
    };
    let s = model.scores(&ds.x)?;
    let hits = (0..s.nrows())
        .filter(|&i| s.row(i).transpose().argmax().0 == labels[i])
        .count();
    Ok(hits as f64 / s.nrows() as f64)
}

/// Mean squared error of regression predictions.
pub fn mse(model: &LinearModel, ds: &LabeledDataset) -> Result<f64> {
    let Targets::Real(y) = &ds.y else {
        return Err(DareError::InvalidArgument("mse needs real targets".into()));
    };
    let s = model.scores(&ds.x)?;
    Ok((0..s.nrows()).map(|i| (s[(i, 0)] - y[i]).powi(2)).sum::<f64>() / s.nrows() as f64)
}

pub fn fit_whiteners(datasets: &[LabeledDataset], shrinkage_weight: f64) -> Result<Vec<Whitener>> {
    datasets
        .iter()
        .map(|ds| {
            if ds.n() == 0 {
                return Err(DareError::Empty(format!("environment {}", ds.env_id)));
            }
            Whitener::from_samples(&ds.x, shrinkage_weight)
        })
        .collect()
}

/// Entrywise mean of the training inverse square roots.
pub fn guess_test_whitener(whiteners: &[Whitener]) -> Result<Mat> {
    let first = whiteners
        .first()
        .ok_or_else(|| DareError::Empty("no whiteners to average".into()))?;
    let mut acc = Mat::zeros(first.inv_sqrt.nrows(), first.inv_sqrt.ncols());
    for w in whiteners {
        acc += &w.inv_sqrt;
    }
    Ok(acc / whiteners.len() as f64)
}

/// Population DARE solution for linear regression: `Π̂β*`.
pub fn closed_form_dare_linear(beta_star: &Vector, b: &Mat) -> Result<Vector> {
    if b.nrows() != beta_star.len() {
        return Err(DareError::DimMismatch(format!(
            "β* has {} entries, B has {} rows",
            beta_star.len(),
            b.nrows()
        )));
    }
    Ok(nullspace_projector(b) * beta_star)
}

fn check_family(datasets: &[LabeledDataset]) -> Result<(Task, usize, usize)> {
    let first = datasets
        .first()
        .ok_or_else(|| DareError::Empty("need at least one environment".into()))?;
    let task = first.task();
    let d = first.dim();
    let mut k = 1;
    for ds in datasets {
        ds.validate()?;
        if ds.task() != task || ds.dim() != d {
            return Err(DareError::DimMismatch(format!(
                "environment {} disagrees with {} on task or dimension",
                ds.env_id, first.env_id
            )));
        }
        if let Targets::Classes { k: kk, .. } = ds.y {
            k = k.max(kk);
        }
    }
    Ok((task, d, k))
}

/// The penalized DARE objective over already-fitted whiteners.
pub fn dare_objective(
    datasets: &[LabeledDataset],
    whiteners: &[Whitener],
    cfg: &FitConfig,
) -> Result<Objective> {
    let (task, d, k) = check_family(datasets)?;
    if whiteners.len() != datasets.len() {
        return Err(DareError::DimMismatch("one whitener per environment expected".into()));
    }
    let e = datasets.len() as f64;
    let terms = datasets
        .iter()
        .zip(whiteners)
        .map(|(ds, w)| EnvTerm {
            z: w.transform(&ds.x, cfg.center),
            y: ds.y.clone(),
            data_weight: 1.0 / e,
            penalty_vec: Some(w.whitened_mean()),
            penalty_weight: 1.0 / e,
        })
        .collect();
    Ok(Objective {
        task,
        d,
        k,
        lambda: cfg.lambda,
        fit_bias: true,
        terms,
    })
}

fn raw_objective(datasets: &[LabeledDataset], weights: &[f64]) -> Result<Objective> {
    let (task, d, k) = check_family(datasets)?;
    let terms = datasets
        .iter()
        .zip(weights)
        .map(|(ds, &w)| EnvTerm {
            z: ds.x.clone(),
            y: ds.y.clone(),
            data_weight: w,
            penalty_vec: None,
            penalty_weight: 0.0,
        })
        .collect();
    Ok(Objective {
        task,
        d,
        k,
        lambda: 0.0,
        fit_bias: true,
        terms,
    })
}

/// Pooled objective: each environment weighted by its share of samples.
pub fn erm_objective(datasets: &[LabeledDataset]) -> Result<Objective> {
    let total: usize = datasets.iter().map(LabeledDataset::n).sum();
    let w: Vec<f64> = datasets.iter().map(|d| d.n() as f64 / total as f64).collect();
    raw_objective(datasets, &w)
}

/// Equal weight per environment regardless of its size.
pub fn reweighted_erm_objective(datasets: &[LabeledDataset]) -> Result<Objective> {
    let w = vec![1.0 / datasets.len() as f64; datasets.len()];
    raw_objective(datasets, &w)
}

struct Solved {
    beta: Mat,
    bias: Vector,
    convergence: Convergence,
}

fn solve(obj: &Objective, cfg: &FitConfig, start: Option<Vec<f64>>) -> (Solved, Vec<f64>) {
    let x0 = start.unwrap_or_else(|| vec![0.0; obj.n_params()]);
    let r = minimize(|t| obj.value_grad(t), x0, &cfg.lbfgs());
    let (beta, bias) = obj.unpack(&r.x);
    (
        Solved {
            beta,
            bias,
            convergence: Convergence {
                iters: r.iters,
                grad_norm: r.grad_norm,
                converged: r.converged,
            },
        },
        r.trace,
    )
}

fn model(tag: &str, task: Task, s: Solved, test_whitener: Mat, lambda: f64) -> LinearModel {
    LinearModel {
        method_tag: tag.to_string(),
        task,
        beta: s.beta,
        bias: s.bias,
        test_whitener,
        lambda,
        convergence: s.convergence,
    }
}

/// DARE fit that also returns the whiteners and the objective trace.
pub fn dare_fit_detailed(
    datasets: &[LabeledDataset],
    cfg: &FitConfig,
) -> Result<(LinearModel, Vec<Whitener>, Vec<f64>)> {
    cfg.validate()?;
    let whiteners = fit_whiteners(datasets, cfg.shrinkage_weight)?;
    let obj = dare_objective(datasets, &whiteners, cfg)?;
    let (solved, trace) = solve(&obj, cfg, None);
    let test_whitener = guess_test_whitener(&whiteners)?;
    Ok((
        model("dare", obj.task, solved, test_whitener, cfg.lambda),
        whiteners,
        trace,
    ))
}

pub fn dare_fit(datasets: &[LabeledDataset], cfg: &FitConfig) -> Result<LinearModel> {
    dare_fit_detailed(datasets, cfg).map(|(m, _, _)| m)
}

/// Largest per-environment deviation of `βᵀΣ_e^{-1/2}μ_e` from a constant score.
pub fn constraint_violation(model: &LinearModel, whiteners: &[Whitener]) -> f64 {
    whiteners
        .iter()
        .map(|w| {
            let t = model.beta.transpose() * w.whitened_mean();
            match model.task {
                Task::Regress => t[0].abs(),
                Task::Classify => {
                    let mean = t.mean();
                    t.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
                }
            }
        })
        .fold(0.0, f64::max)
}

pub fn erm_fit(datasets: &[LabeledDataset], cfg: &FitConfig) -> Result<LinearModel> {
    cfg.validate()?;
    let obj = erm_objective(datasets)?;
    let (solved, _) = solve(&obj, cfg, None);
    Ok(model("erm", obj.task, solved, Mat::identity(obj.d, obj.d), 0.0))
}

pub fn reweighted_erm_fit(datasets: &[LabeledDataset], cfg: &FitConfig) -> Result<LinearModel> {
    cfg.validate()?;
    let obj = reweighted_erm_objective(datasets)?;
    let (solved, _) = solve(&obj, cfg, None);
    Ok(model("reweighted-erm", obj.task, solved, Mat::identity(obj.d, obj.d), 0.0))
}

/// Outer-loop settings for GroupDRO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroConfig {
    pub step_size: f64,
    pub outer_iters: usize,
    /// Stop once `max_g L_g − Σ_g q_g L_g` falls below this.
    pub gap_tol: f64,
}

impl Default for DroConfig {
    fn default() -> Self {
        DroConfig {
            step_size: 0.01,
            outer_iters: 2000,
            gap_tol: 1e-4,
        }
    }
}

/// GroupDRO group weights after fitting.
#[derive(Debug, Clone)]
pub struct DroState {
    pub q: Vec<f64>,
    pub group_losses: Vec<f64>,
    pub outer_iters: usize,
}

/// Exponentiated-gradient ascent on group weights, with a warm-started
/// quasi-Newton solve of the `q`-weighted loss between updates.
pub fn groupdro_fit_detailed(
    datasets: &[LabeledDataset],
    cfg: &FitConfig,
    dro: &DroConfig,
) -> Result<(LinearModel, DroState)> {
    cfg.validate()?;
    if !(dro.step_size > 0.0) {
        return Err(DareError::InvalidArgument("GroupDRO step size must be positive".into()));
    }
    let g = datasets.len();
    let mut q = vec![1.0 / g as f64; g];
    let mut obj = reweighted_erm_objective(datasets)?;
    let mut theta = vec![0.0; obj.n_params()];
    let mut last = None;
    let mut losses = vec![0.0; g];
    let mut outer = 0;
    while outer < dro.outer_iters.max(1) {
        for (t, &w) in obj.terms.iter_mut().zip(&q) {
            t.data_weight = w;
        }
        let (solved, _) = solve(&obj, cfg, Some(theta.clone()));
        theta = Objective::pack(&solved.beta, &solved.bias);
        last = Some(solved);
        losses = obj.env_losses(&theta);
        outer += 1;
        let avg: f64 = q.iter().zip(&losses).map(|(a, b)| a * b).sum();
        let worst = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if worst - avg <= dro.gap_tol {
            break;
        }
        let mut z = 0.0;
        for (qi, li) in q.iter_mut().zip(&losses) {
            *qi *= (dro.step_size * li).exp();
            z += *qi;
        }
        for qi in q.iter_mut() {
            *qi /= z;
        }
    }
    let solved = last.expect("at least one outer iteration");
    let d = obj.d;
    Ok((
        model("groupdro", obj.task, solved, Mat::identity(d, d), 0.0),
        DroState {
            q,
            group_losses: losses,
            outer_iters: outer,
        },
    ))
}

pub fn groupdro_fit(datasets: &[LabeledDataset], cfg: &FitConfig, step_size: f64) -> Result<LinearModel> {
    let dro = DroConfig {
        step_size,
        ..DroConfig::default()
    };
    groupdro_fit_detailed(datasets, cfg, &dro).map(|(m, _)| m)
}

/// Unconstrained, uncentered source fit with a whitener estimated on the target.
///
/// The first half of the source estimates `Σ̂_S`; the second half fits β by
/// least squares on `Σ̂_S^{-1/2}x` with no bias. Predictions use
/// `β̂ᵀΣ̂_T^{-1/2}x`.
pub fn jituda_fit_predict(
    source: &LabeledDataset,
    target_x: &Mat,
    cfg: &FitConfig,
) -> Result<(LinearModel, Vector)> {
    cfg.validate()?;
    let Targets::Real(y) = &source.y else {
        return Err(DareError::InvalidArgument("JIT-UDA needs a regression source".into()));
    };
    let n = source.n();
    if n < 4 {
        return Err(DareError::InvalidArgument(format!("JIT-UDA needs n_S ≥ 4, got {n}")));
    }
    if target_x.nrows() < 2 {
        return Err(DareError::InvalidArgument("JIT-UDA needs n_T ≥ 2".into()));
    }
    let d = source.dim();
    if target_x.ncols() != d {
        return Err(DareError::DimMismatch("target and source dimensions differ".into()));
    }
    let half = n / 2;
    let first = source.x.rows(0, half).into_owned();
    let second = source.x.rows(half, n - half).into_owned();
    let ws = Whitener::from_samples(&first, cfg.shrinkage_weight)?;
    let z = ws.transform(&second, false);
    let y2 = Vector::from_column_slice(&y[half..]);
    let gram = z.tr_mul(&z);
    let rhs = z.tr_mul(&y2);
    let beta = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.clone().pseudo_inverse(1e-12).ok().map(|p| p * &rhs))
        .ok_or_else(|| DareError::InvalidArgument("singular source design".into()))?;
    let wt = Whitener::from_samples(target_x, cfg.shrinkage_weight)?;
    let grad_norm = (&gram * &beta - &rhs).norm() / (n - half) as f64;
    let model = LinearModel {
        method_tag: "jituda".into(),
        task: Task::Regress,
        beta: Mat::from_column_slice(d, 1, beta.as_slice()),
        bias: Vector::zeros(1),
        test_whitener: wt.inv_sqrt,
        lambda: 0.0,
        convergence: Convergence {
            iters: 1,
            grad_norm,
            converged: true,
        },
    };
    let preds = match predict(&model, target_x)? {
        Predictions::Values(v) => v,
        Predictions::Probabilities(_) => unreachable!("regression model"),
    };
    Ok((model, preds))
}
