//! Argument parsing and dispatch.
//!
//! Exit codes: 0 when every acceptance check passes, 1 when any fails, 2 on
//! usage errors (bad flags, unreadable config or inputs).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dare_core::envmodel::{
    example1_family, gen_environments, random_spd, standard_normal_vector, EnvironmentSpec, GroundTruth, Task,
};
use dare_core::matops::{Mat, Vector};
use dare_core::seeding::{derive_seed, trial_rng};
use dare_core::solvers::{
    accuracy, constraint_violation, dare_fit_detailed, erm_fit, groupdro_fit_detailed, mse, reweighted_erm_fit,
    DroConfig, FitConfig,
};
use dare_core::{persist, DareError, Result};
use serde_json::json;

use crate::config::Config;
use crate::experiments::{self, Report};
use crate::manifest::{self, ExperimentStatus, Timing, TimingFile};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dare", version, about = "Domain-adjusted regression experiments")]
pub struct Cli {
    /// TOML file with per-command sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trials per grid point (theorem3, theorem4) or instances (theorem2).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample Example-1 training and test environments.
    Gen(GenArgs),
    /// Fit a model to a dataset written by `gen`.
    Fit(FitArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    Theorem1(Theorem1Args),
    Theorem2(Theorem2Args),
    Theorem3,
    Theorem4(Theorem4Args),
    Lemma1(Lemma1Args),
    Diagnostics(DiagnosticsArgs),
    SweepLambda(SweepArgs),
    /// Every experiment, then gen, fit and eval.
    All,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// `classify` or `regress`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV; defaults to `<out>/gen/train.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `dare`, `erm`, `reweighted-erm` or `groupdro`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Defaults to `<out>/fit/model.json`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Defaults to `<out>/gen/test.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Theorem1Args {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Theorem2Args {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "b-bound")]
    pub b_bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Theorem4Args {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "n-grid", value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct Lemma1Args {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Load the config file (if any) and apply flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(t) = cli.trials {
        cfg.theorem2.instances = t;
        cfg.theorem3.trials = t;
        cfg.theorem4.trials = t;
    }
    match &cli.command {
        Command::Gen(a) => {
            set(&mut cfg.gen.task, a.task.clone());
            set(&mut cfg.gen.envs, a.envs);
            set(&mut cfg.gen.n, a.n);
        }
        Command::Fit(a) => {
            set(&mut cfg.fit.method, a.method.clone());
            set(&mut cfg.fit.lambda, a.lambda);
        }
        Command::Theorem1(a) => {
            set(&mut cfg.theorem1.d, a.d);
            set(&mut cfg.theorem1.envs, a.envs);
            set(&mut cfg.theorem1.n, a.n);
            set(&mut cfg.theorem1.lambda, a.lambda);
        }
        Command::Theorem2(a) => {
            set(&mut cfg.theorem2.d, a.d);
            set(&mut cfg.theorem2.envs, a.envs);
            set(&mut cfg.theorem2.rho, a.rho);
            set(&mut cfg.theorem2.b_bound, a.b_bound);
        }
        Command::Theorem4(a) => {
            set(&mut cfg.theorem4.d, a.d);
            set(&mut cfg.theorem4.n_grid, a.n_grid.clone());
        }
        Command::Lemma1(a) => {
            set(&mut cfg.lemma1.d, a.d);
            set(&mut cfg.lemma1.n, a.n);
            cfg.lemma1.removed.retain(|&i| i < cfg.lemma1.d);
        }
        Command::Diagnostics(a) => {
            set(&mut cfg.diagnostics.envs, a.envs);
            set(&mut cfg.diagnostics.n, a.n);
        }
        Command::SweepLambda(a) => {
            set(&mut cfg.sweep_lambda.lambdas, a.lambdas.clone());
            set(&mut cfg.sweep_lambda.n, a.n);
        }
        Command::Eval(_) | Command::Theorem3 | Command::All => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one named experiment.
pub fn run_experiment(name: &str, cfg: &Config) -> Result<Report> {
    let s = cfg.seed;
    match name {
        "theorem1" => experiments::theorem1(&cfg.theorem1, s),
        "lemma1" => experiments::lemma1(&cfg.lemma1, s),
        "theorem2" => experiments::theorem2(&cfg.theorem2, s),
        "theorem3" => experiments::theorem3(&cfg.theorem3, s),
        "theorem4" => experiments::theorem4(&cfg.theorem4, s),
        "sweep-lambda" => experiments::sweep_lambda(&cfg.sweep_lambda, s),
        "diagnostics" => experiments::diagnostics(&cfg.diagnostics, s),
        other => Err(DareError::InvalidArgument(format!("unknown experiment {other:?}"))),
    }
}

pub const EXPERIMENTS: [&str; 7] = [
    "theorem1",
    "lemma1",
    "theorem2",
    "theorem3",
    "theorem4",
    "sweep-lambda",
    "diagnostics",
];

struct Run {
    out: PathBuf,
    written: Vec<String>,
    statuses: Vec<ExperimentStatus>,
    timings: Vec<Timing>,
    started: Instant,
}

impl Run {
    fn experiment(&mut self, name: &str, cfg: &Config) -> Result<bool> {
        let t = Instant::now();
        let report = run_experiment(name, cfg)?;
        let secs = t.elapsed().as_secs_f64();
        self.written.extend(manifest::write_report(&self.out, &report)?);
        let within = secs <= report.runtime_limit_s;
        print_report(&report, secs);
        self.statuses.push(ExperimentStatus {
            name: report.experiment.clone(),
            passed: report.passed,
        });
        self.timings.push(Timing {
            name: report.experiment.clone(),
            seconds: secs,
            limit_seconds: Some(report.runtime_limit_s),
            within_limit: within,
        });
        Ok(report.passed && within)
    }

    fn plain(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<Vec<String>>) -> Result<()> {
        let t = Instant::now();
        self.written.extend(f(&self.out)?);
        self.timings.push(Timing {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
            limit_seconds: None,
            within_limit: true,
        });
        Ok(())
    }

    fn finish(self, command: &str, cfg: &Config) -> Result<()> {
        let total = self.started.elapsed().as_secs_f64();
        manifest::finish_run(
            &self.out,
            command,
            cfg,
            self.statuses,
            TimingFile {
                total_seconds: total,
                experiments: self.timings,
            },
            &self.written,
        )?;
        Ok(())
    }
}

fn print_report(r: &Report, secs: f64) {
    println!("{} {} ({secs:.1}s)", if r.passed { "PASS" } else { "FAIL" }, r.experiment);
    for c in &r.checks {
        println!(
            "  [{}] {} = {:.6e} ({})",
            if c.passed { "ok" } else { "x" },
            c.name,
            c.value,
            c.bound
        );
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

/// Example-1 environments with mean shifts confined to the varying block,
/// plus one held-out environment with its own varying covariance.
fn gen_command(out: &Path, cfg: &Config) -> Result<Vec<String>> {
    let g = &cfg.gen;
    let task = match g.task.as_str() {
        "classify" => Task::Classify,
        "regress" => Task::Regress,
        other => return Err(DareError::InvalidArgument(format!("unknown task {other:?}"))),
    };
    let d = g.invariant_dim + g.varying_dim;
    let mut rng = trial_rng(cfg.seed, "gen/setup", 0);
    let sigma = random_spd(g.invariant_dim, 0.5, &mut rng);
    let covs: Vec<Mat> = (0..=g.envs).map(|_| random_spd(g.varying_dim, 0.2, &mut rng)).collect();
    let mut specs = example1_family(g.invariant_dim, g.varying_dim, &sigma, &covs)?;
    for s in specs.iter_mut().take(g.envs) {
        let mut b = Vector::zeros(d);
        let shift = standard_normal_vector(g.varying_dim, &mut rng) * g.mean_shift;
        b.rows_mut(g.invariant_dim, g.varying_dim).copy_from(&shift);
        s.b = b;
    }
    let test_spec = EnvironmentSpec {
        env_id: "test".into(),
        ..specs.pop().expect("held-out environment")
    };
    let beta_star = standard_normal_vector(d, &mut rng);
    let truth = match task {
        Task::Classify => GroundTruth::classification(beta_star),
        Task::Regress => GroundTruth::regression(beta_star, g.sigma_y),
    };
    let train = gen_environments(&specs, &truth, g.n, task, derive_seed(cfg.seed, "gen/train", 0))?;
    let test = gen_environments(
        std::slice::from_ref(&test_spec),
        &truth,
        g.n,
        task,
        derive_seed(cfg.seed, "gen/test", 0),
    )?;
    let dir = out.join("gen");
    let (a, b) = persist::save_datasets(&dir, "train", &train, &specs, Some(&truth))?;
    let (c, e) = persist::save_datasets(&dir, "test", &test, &[test_spec], Some(&truth))?;
    Ok([a, b, c, e].iter().map(|p| rel(out, p)).collect())
}

fn fit_command(out: &Path, cfg: &Config, data: Option<&Path>) -> Result<Vec<String>> {
    let data = data.map_or_else(|| out.join("gen/train.csv"), Path::to_path_buf);
    let (datasets, _) = persist::load_datasets(&data)?;
    let f = &cfg.fit;
    let fit_cfg = FitConfig {
        lambda: f.lambda,
        max_iters: f.max_iters,
        grad_tol: f.grad_tol,
        shrinkage_weight: f.shrinkage_weight,
        center: f.center,
    };
    let (model, extra) = match f.method.as_str() {
        "dare" => {
            let (m, w, trace) = dare_fit_detailed(&datasets, &fit_cfg)?;
            let v = constraint_violation(&m, &w);
            (m, json!({ "constraint_violation": v, "objective_trace_len": trace.len() }))
        }
        "erm" => (erm_fit(&datasets, &fit_cfg)?, json!({})),
        "reweighted-erm" => (reweighted_erm_fit(&datasets, &fit_cfg)?, json!({})),
        "groupdro" => {
            let dro = DroConfig {
                step_size: f.dro_step_size,
                ..DroConfig::default()
            };
            let (m, st) = groupdro_fit_detailed(&datasets, &fit_cfg, &dro)?;
            (m, json!({ "group_weights": st.q, "group_losses": st.group_losses, "outer_iters": st.outer_iters }))
        }
        other => return Err(DareError::InvalidArgument(format!("unknown method {other:?}"))),
    };
    let model_path = out.join("fit/model.json");
    persist::save_model(&model_path, &model)?;
    let summary_path = out.join("fit/summary.json");
    persist::save_json(
        &summary_path,
        &json!({ "method": f.method, "data": rel(out, &data), "convergence": model.convergence, "details": extra }),
    )?;
    Ok(vec![rel(out, &model_path), rel(out, &summary_path)])
}

fn eval_command(out: &Path, model: Option<&Path>, data: Option<&Path>) -> Result<Vec<String>> {
    let model_path = model.map_or_else(|| out.join("fit/model.json"), Path::to_path_buf);
    let data = data.map_or_else(|| out.join("gen/test.csv"), Path::to_path_buf);
    let model = persist::load_model(&model_path)?;
    let (datasets, _) = persist::load_datasets(&data)?;
    let mut rows = Vec::new();
    for ds in &datasets {
        let metric = match ds.task() {
            Task::Classify => ("accuracy", accuracy(&model, ds)?),
            Task::Regress => ("mse", mse(&model, ds)?),
        };
        rows.push(json!({ "env_id": ds.env_id, "metric": metric.0, "value": metric.1 }));
    }
    let path = out.join("eval/summary.json");
    persist::save_json(
        &path,
        &json!({ "model": rel(out, &model_path), "data": rel(out, &data), "results": rows }),
    )?;
    Ok(vec![rel(out, &path)])
}

fn dispatch(cli: &Cli, cfg: &Config) -> Result<bool> {
    let out = PathBuf::from(&cfg.out);
    let mut run = Run {
        out: out.clone(),
        written: Vec::new(),
        statuses: Vec::new(),
        timings: Vec::new(),
        started: Instant::now(),
    };
    let mut ok = true;
    let name = match &cli.command {
        Command::Gen(_) => {
            run.plain("gen", |o| gen_command(o, cfg))?;
            "gen"
        }
        Command::Fit(a) => {
            run.plain("fit", |o| fit_command(o, cfg, a.data.as_deref()))?;
            "fit"
        }
        Command::Eval(a) => {
            run.plain("eval", |o| eval_command(o, a.model.as_deref(), a.data.as_deref()))?;
            "eval"
        }
        Command::Theorem1(_) => {
            ok &= run.experiment("theorem1", cfg)?;
            "theorem1"
        }
        Command::Theorem2(_) => {
            ok &= run.experiment("theorem2", cfg)?;
            "theorem2"
        }
        Command::Theorem3 => {
            ok &= run.experiment("theorem3", cfg)?;
            "theorem3"
        }
        Command::Theorem4(_) => {
            ok &= run.experiment("theorem4", cfg)?;
            "theorem4"
        }
        Command::Lemma1(_) => {
            ok &= run.experiment("lemma1", cfg)?;
            "lemma1"
        }
        Command::Diagnostics(_) => {
            ok &= run.experiment("diagnostics", cfg)?;
            "diagnostics"
        }
        Command::SweepLambda(_) => {
            ok &= run.experiment("sweep-lambda", cfg)?;
            "sweep-lambda"
        }
        Command::All => {
            for e in EXPERIMENTS {
                ok &= run.experiment(e, cfg)?;
            }
            run.plain("gen", |o| gen_command(o, cfg))?;
            run.plain("fit", |o| fit_command(o, cfg, None))?;
            run.plain("eval", |o| eval_command(o, None, None))?;
            "all"
        }
    };
    run.finish(name, cfg)?;
    Ok(ok)
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(n) = cfg.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli, &cfg) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
