//! Synthetic domains from the latent linear model.
//!
//! Each environment draws `ε = ε₀ + b_e`, observes `x = A_e ε`, and labels
//! with `y = 1{β*ᵀε + η ≥ 0}` (logistic η) or `y = β*ᵀε + η` (Gaussian η).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DareError, Result};
use crate::matops::{check_psd, sqrt_psd, Mat, Vector};
use crate::seeding::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualLaw {
    StandardGaussian,
    Rademacher,
    /// Uniform on [−√3, √3], unit variance.
    UniformSymmetric,
}

impl ResidualLaw {
    fn draw(self, rng: &mut Rng) -> f64 {
        match self {
            ResidualLaw::StandardGaussian => StandardNormal.sample(rng),
            ResidualLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            ResidualLaw::UniformSymmetric => {
                let s3 = 3f64.sqrt();
                rng.random_range(-s3..s3)
            }
        }
    }
}

pub fn draw_residual(law: ResidualLaw, rng: &mut Rng) -> f64 {
    law.draw(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum NoiseLaw {
    Logistic,
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub env_id: String,
    #[serde(with = "crate::serde_mat::matrix")]
    pub a: Mat,
    #[serde(with = "crate::serde_mat::vector")]
    pub b: Vector,
    pub residual_law: ResidualLaw,
}

impl EnvironmentSpec {
    pub fn new(env_id: impl Into<String>, a: Mat, b: Vector) -> Self {
        EnvironmentSpec {
            env_id: env_id.into(),
            a,
            b,
            residual_law: ResidualLaw::StandardGaussian,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_mean(mut self, b: Vector) -> Self {
        self.b = b;
        self
    }

    /// Population mean `A b` of the observations.
    pub fn feature_mean(&self) -> Vector {
        &self.a * &self.b
    }

    /// Population covariance `A Aᵀ` of the observations.
    pub fn feature_cov(&self) -> Mat {
        &self.a * self.a.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "crate::serde_mat::vector")]
    pub beta_star: Vector,
    pub noise: NoiseLaw,
}

impl GroundTruth {
    pub fn classification(beta_star: Vector) -> Self {
        GroundTruth {
            beta_star,
            noise: NoiseLaw::Logistic,
        }
    }

    pub fn regression(beta_star: Vector, sigma: f64) -> Self {
        GroundTruth {
            beta_star,
            noise: NoiseLaw::Gaussian { sigma },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, k: usize },
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes { .. } => Task::Classify,
            Targets::Real(_) => Task::Regress,
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Targets::Classes { labels, .. } => labels[i] as f64,
            Targets::Real(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub env_id: String,
    pub x: Mat,
    pub y: Targets,
}

impl LabeledDataset {
    pub fn new(env_id: impl Into<String>, x: Mat, y: Targets) -> Result<Self> {
        let ds = LabeledDataset {
            env_id: env_id.into(),
            x,
            y,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn task(&self) -> Task {
        self.y.task()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(DareError::Empty(format!("environment {}", self.env_id)));
        }
        if self.x.nrows() != self.y.len() {
            return Err(DareError::DimMismatch(format!(
                "environment {}: {} rows but {} targets",
                self.env_id,
                self.x.nrows(),
                self.y.len()
            )));
        }
        if let Targets::Classes { labels, k } = &self.y {
            if let Some(bad) = labels.iter().find(|&&l| l >= *k) {
                return Err(DareError::InvalidArgument(format!(
                    "environment {}: label {bad} outside 0..{k}",
                    self.env_id
                )));
            }
        }
        Ok(())
    }
}

/// Prior over environment mean shifts: `b_e ~ N(0, Σ_b)`, with Π projecting
/// onto the directions no shift ever touches.
#[derive(Debug, Clone)]
pub struct EnvPrior {
    pub sigma_b: Mat,
    pub invariant_projector: Mat,
}

impl EnvPrior {
    pub fn new(sigma_b: Mat, invariant_projector: Mat) -> Result<Self> {
        check_psd(&sigma_b)?;
        if sigma_b.shape() != invariant_projector.shape() {
            return Err(DareError::DimMismatch("Σ_b and Π differ in shape".into()));
        }
        let leak = (&invariant_projector * &sigma_b).norm();
        if leak > 1e-9 {
            return Err(DareError::InvalidArgument(format!(
                "Π·Σ_b has Frobenius norm {leak:.3e}; the shift covariance must live in range(I − Π)"
            )));
        }
        Ok(EnvPrior {
            sigma_b,
            invariant_projector,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_b.nrows()
    }
}

fn standard_logistic(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return (u / (1.0 - u)).ln();
        }
    }
}

/// Draw a dataset and return the latent `ε` rows alongside it.
pub fn gen_environment_with_latent(
    spec: &EnvironmentSpec,
    truth: &GroundTruth,
    n: usize,
    task: Task,
    seed: u64,
) -> Result<(LabeledDataset, Mat)> {
    let d = spec.dim();
    if n == 0 {
        return Err(DareError::Empty("gen_environment needs n ≥ 1".into()));
    }
    if spec.a.ncols() != d || spec.b.len() != d || truth.beta_star.len() != d {
        return Err(DareError::DimMismatch(format!(
            "A is {}x{}, b has {}, β* has {}",
            spec.a.nrows(),
            spec.a.ncols(),
            spec.b.len(),
            truth.beta_star.len()
        )));
    }
    match (task, truth.noise) {
        (Task::Classify, NoiseLaw::Logistic) | (Task::Regress, NoiseLaw::Gaussian { .. }) => {}
        _ => {
            return Err(DareError::InvalidArgument(
                "classification needs logistic noise, regression needs Gaussian noise".into(),
            ))
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut eps = Mat::zeros(n, d);
    let mut labels = Vec::new();
    let mut reals = Vec::new();
    for i in 0..n {
        let mut score = 0.0;
        for j in 0..d {
            let e = spec.residual_law.draw(&mut rng) + spec.b[j];
            eps[(i, j)] = e;
            score += truth.beta_star[j] * e;
        }
        match truth.noise {
            NoiseLaw::Logistic => {
                labels.push(usize::from(score + standard_logistic(&mut rng) >= 0.0));
            }
            NoiseLaw::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(&mut rng);
                reals.push(score + sigma * z);
            }
        }
    }
    let x = &eps * spec.a.transpose();
    let y = match task {
        Task::Classify => Targets::Classes { labels, k: 2 },
        Task::Regress => Targets::Real(reals),
    };
    Ok((LabeledDataset::new(spec.env_id.clone(), x, y)?, eps))
}

pub fn gen_environment(
    spec: &EnvironmentSpec,
    truth: &GroundTruth,
    n: usize,
    task: Task,
    seed: u64,
) -> Result<LabeledDataset> {
    gen_environment_with_latent(spec, truth, n, task, seed).map(|(ds, _)| ds)
}

/// One dataset per spec; environment `e` uses seed `seed + e`.
pub fn gen_environments(
    specs: &[EnvironmentSpec],
    truth: &GroundTruth,
    n: usize,
    task: Task,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(e, s)| gen_environment(s, truth, n, task, seed.wrapping_add(e as u64)))
        .collect()
}

/// Sample `E` environments with `b_e ~ N(0, Σ_b)` and a shared mixing map.
pub fn sample_env_params(
    prior: &EnvPrior,
    a_base: &Mat,
    envs: usize,
    seed: u64,
) -> Result<Vec<EnvironmentSpec>> {
    if envs == 0 {
        return Err(DareError::InvalidArgument("need at least one environment".into()));
    }
    let d = prior.dim();
    if a_base.shape() != (d, d) {
        return Err(DareError::DimMismatch("A_base does not match Σ_b".into()));
    }
    let root = sqrt_psd(&prior.sigma_b)?;
    let mut rng = rng_from_seed(seed);
    Ok((0..envs)
        .map(|e| {
            let z = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            EnvironmentSpec::new(format!("env{e}"), a_base.clone(), &root * z)
        })
        .collect())
}

/// Stack the latent mean shifts as columns of a d×E matrix.
pub fn mean_shift_matrix(specs: &[EnvironmentSpec]) -> Mat {
    let d = specs.first().map_or(0, EnvironmentSpec::dim);
    let mut b = Mat::zeros(d, specs.len());
    for (e, s) in specs.iter().enumerate() {
        b.set_column(e, &s.b);
    }
    b
}

/// Block-diagonal mixing maps `diag(Σ^{1/2}, Σ_e^{1/2})` with zero mean shift.
pub fn example1_family(
    d1: usize,
    d2: usize,
    sigma_inv: &Mat,
    varying_covs: &[Mat],
) -> Result<Vec<EnvironmentSpec>> {
    if sigma_inv.shape() != (d1, d1) {
        return Err(DareError::DimMismatch(format!(
            "invariant block is {:?}, expected {d1}x{d1}",
            sigma_inv.shape()
        )));
    }
    let top = sqrt_psd(sigma_inv)?;
    varying_covs
        .iter()
        .enumerate()
        .map(|(e, cov)| {
            if cov.shape() != (d2, d2) {
                return Err(DareError::DimMismatch(format!(
                    "varying block {e} is {:?}, expected {d2}x{d2}",
                    cov.shape()
                )));
            }
            let bottom = sqrt_psd(cov)?;
            let mut a = Mat::zeros(d1 + d2, d1 + d2);
            a.view_mut((0, 0), (d1, d1)).copy_from(&top);
            a.view_mut((d1, d1), (d2, d2)).copy_from(&bottom);
            Ok(EnvironmentSpec::new(format!("env{e}"), a, Vector::zeros(d1 + d2)))
        })
        .collect()
}

/// Random SPD matrix `GGᵀ/k + floor·I` with standard-normal `G`.
pub fn random_spd(k: usize, floor: f64, rng: &mut Rng) -> Mat {
    let g = Mat::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    crate::matops::symmetrize(&(&g * g.transpose() / k as f64)) + Mat::identity(k, k) * floor
}

pub fn standard_normal_vector(d: usize, rng: &mut Rng) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}
