//! Experiment configuration.
//!
//! One TOML file with a section per subcommand. Every field has a default, so
//! an empty file (or no file) reproduces the reference settings. CLI flags
//! override file values.

use std::path::Path;

use dare_core::{persist, DareError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out: String,
    pub threads: Option<usize>,
    pub theorem1: Theorem1Config,
    pub lemma1: Lemma1Config,
    pub theorem2: Theorem2Config,
    pub theorem3: Theorem3Config,
    pub theorem4: Theorem4Config,
    pub sweep_lambda: SweepLambdaConfig,
    pub diagnostics: DiagnosticsConfig,
    pub gen: GenConfig,
    pub fit: FitCommandConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            out: "out".into(),
            threads: None,
            theorem1: Theorem1Config::default(),
            lemma1: Lemma1Config::default(),
            theorem2: Theorem2Config::default(),
            theorem3: Theorem3Config::default(),
            theorem4: Theorem4Config::default(),
            sweep_lambda: SweepLambdaConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            gen: GenConfig::default(),
            fit: FitCommandConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub d: usize,
    pub envs: usize,
    pub n: usize,
    pub lambda: f64,
    pub mean_scale: f64,
    pub tolerance: f64,
    pub min_cosine: f64,
    pub max_alpha: f64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Theorem1Config {
            d: 8,
            envs: 3,
            n: 100_000,
            lambda: 100.0,
            mean_scale: 2.0,
            tolerance: 1e-2,
            min_cosine: 0.99,
            max_alpha: 1.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma1Config {
    pub d: usize,
    pub n: usize,
    /// Coordinates dropped in the constrained fit; β* is all ones.
    pub removed: Vec<usize>,
    pub orth_tolerance: f64,
    pub alpha_tolerance: f64,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Lemma1Config {
            d: 10,
            n: 1_000_000,
            removed: vec![0, 1, 2, 3, 4],
            orth_tolerance: 0.02,
            alpha_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem2Config {
    pub instances: usize,
    pub d: usize,
    pub envs: usize,
    pub rho: f64,
    pub b_bound: f64,
    pub search_trials: usize,
    /// Samples per environment for the ERM alternative.
    pub erm_n: usize,
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Theorem2Config {
            instances: 20,
            d: 8,
            envs: 3,
            rho: 1.0,
            b_bound: 0.5,
            search_trials: 2000,
            erm_n: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem3Config {
    pub trials: usize,
    /// Test-domain adjustment error is `kappa·(I − Π)`.
    pub kappa: f64,
    pub exact_d: usize,
    pub exact_rank: usize,
    pub exact_envs: usize,
    pub rate_d: usize,
    pub rate_rank: usize,
    /// Eigenvalues of Σ_b decay as `i^{-decay}`.
    pub rate_decay: f64,
    pub rate_env_grid: Vec<usize>,
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for Theorem3Config {
    fn default() -> Self {
        Theorem3Config {
            trials: 50,
            kappa: 2.0,
            exact_d: 20,
            exact_rank: 5,
            exact_envs: 5,
            rate_d: 100,
            rate_rank: 80,
            rate_decay: 1.0,
            rate_env_grid: vec![8, 16, 32, 64],
            slope_min: -0.8,
            slope_max: -0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem4Config {
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    /// Sample size for the paired condition-number comparison.
    pub paired_n: usize,
    /// The harder target divides `λ_min(Σ_T)` by this, raising `m(Σ_T)` by its cube.
    pub paired_min_eig_divisor: f64,
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for Theorem4Config {
    fn default() -> Self {
        Theorem4Config {
            d: 10,
            n_grid: vec![500, 1000, 2000, 4000, 8000],
            trials: 50,
            paired_n: 1000,
            paired_min_eig_divisor: 1.2599210498948732,
            slope_min: -1.3,
            slope_max: -0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepLambdaConfig {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub n_test: usize,
    /// β* over (invariant block, varying block).
    pub beta_star: Vec<f64>,
    pub invariant_dim: usize,
    /// Training mean shifts are `±mean_shift` along the first two varying coordinates.
    pub mean_shift: f64,
    /// Test variance along the mean-shift coordinates.
    pub test_variance: f64,
    pub max_spread: f64,
}

impl Default for SweepLambdaConfig {
    fn default() -> Self {
        SweepLambdaConfig {
            lambdas: vec![0.0, 1.0, 10.0, 100.0],
            n: 20_000,
            n_test: 100_000,
            beta_star: vec![1.0, -0.5, 0.8, 0.3, -0.3, 1.0],
            invariant_dim: 3,
            mean_shift: 10.0,
            test_variance: 25.0,
            max_spread: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub invariant_dim: usize,
    pub varying_dim: usize,
    pub envs: usize,
    pub n: usize,
    /// Varying-block eigenvalues are log-uniform in `[1/spread, spread]`.
    pub spread: f64,
    pub min_improvement: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            invariant_dim: 3,
            varying_dim: 3,
            envs: 4,
            n: 20_000,
            spread: 30.0,
            min_improvement: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub task: String,
    pub invariant_dim: usize,
    pub varying_dim: usize,
    pub envs: usize,
    pub n: usize,
    pub mean_shift: f64,
    pub sigma_y: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            task: "classify".into(),
            invariant_dim: 3,
            varying_dim: 3,
            envs: 4,
            n: 5000,
            mean_shift: 3.0,
            sigma_y: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCommandConfig {
    pub method: String,
    pub lambda: f64,
    pub shrinkage_weight: f64,
    pub center: bool,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub dro_step_size: f64,
}

impl Default for FitCommandConfig {
    fn default() -> Self {
        FitCommandConfig {
            method: "dare".into(),
            lambda: 10.0,
            shrinkage_weight: 0.1,
            center: true,
            max_iters: 10_000,
            grad_tol: 1e-8,
            dro_step_size: 0.01,
        }
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(DareError::InvalidArgument(format!("{name} must be positive")));
    }
    Ok(())
}

fn ascending<T: PartialOrd + Copy>(name: &str, grid: &[T]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DareError::InvalidArgument(format!("{name} must be non-empty and ascending")));
    }
    Ok(())
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = persist::read_text(path)?;
        toml::from_str(&text).map_err(|e| DareError::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        positive("theorem1.d", self.theorem1.d)?;
        positive("theorem1.envs", self.theorem1.envs)?;
        positive("theorem1.n", self.theorem1.n)?;
        positive("lemma1.d", self.lemma1.d)?;
        positive("lemma1.n", self.lemma1.n)?;
        positive("theorem2.instances", self.theorem2.instances)?;
        positive("theorem2.d", self.theorem2.d)?;
        positive("theorem2.search_trials", self.theorem2.search_trials)?;
        positive("theorem2.erm_n", self.theorem2.erm_n)?;
        positive("theorem3.trials", self.theorem3.trials)?;
        positive("theorem3.exact_envs", self.theorem3.exact_envs)?;
        ascending("theorem3.rate_env_grid", &self.theorem3.rate_env_grid)?;
        positive("theorem4.trials", self.theorem4.trials)?;
        if !(self.theorem4.paired_min_eig_divisor > 1.0) {
            return Err(DareError::InvalidArgument("theorem4.paired_min_eig_divisor must exceed 1".into()));
        }
        ascending("theorem4.n_grid", &self.theorem4.n_grid)?;
        ascending("sweep_lambda.lambdas", &self.sweep_lambda.lambdas)?;
        positive("sweep_lambda.n", self.sweep_lambda.n)?;
        positive("sweep_lambda.n_test", self.sweep_lambda.n_test)?;
        positive("diagnostics.n", self.diagnostics.n)?;
        positive("gen.n", self.gen.n)?;
        positive("gen.envs", self.gen.envs)?;
        if self.sweep_lambda.lambdas.iter().any(|l| *l < 0.0) {
            return Err(DareError::InvalidArgument("λ grid must be non-negative".into()));
        }
        if self.diagnostics.envs < 2 {
            return Err(DareError::InvalidArgument("diagnostics needs ≥ 2 environments".into()));
        }
        if self.sweep_lambda.beta_star.len() < self.sweep_lambda.invariant_dim + 2 {
            return Err(DareError::InvalidArgument(
                "sweep_lambda.beta_star needs the invariant block plus ≥ 2 varying coordinates".into(),
            ));
        }
        if self.theorem3.exact_rank > self.theorem3.exact_d || self.theorem3.rate_rank > self.theorem3.rate_d {
            return Err(DareError::InvalidArgument("Σ_b rank exceeds dimension".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; object keys are sorted, so the hash
    /// ignores key order in the source file. The output directory and thread
    /// count do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
            map.remove("threads");
        }
        let canonical = canonical_json(&value);
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Serialize with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let parts: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", serde_json::Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", parts.join(","))
        }
        serde_json::Value::Array(items) => {
            format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(","))
        }
        other => other.to_string(),
    }
}
