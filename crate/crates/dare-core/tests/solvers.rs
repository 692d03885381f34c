use dare_core::envmodel::*;
use dare_core::matops::{nullspace_projector, sqrt_psd, sym_eig, Mat, Vector};
use dare_core::seeding::{derive_seed, trial_rng};
use dare_core::solvers::lbfgs::{minimize, LbfgsOptions};
use dare_core::solvers::*;
use dare_core::theory::analytic_excess;
use proptest::prelude::*;

fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_vec(v.to_vec()))
}

/// Three shifted environments with random mixing maps.
fn problem(task: Task, d: usize, n: usize, seed: u64) -> (Vec<LabeledDataset>, GroundTruth) {
    let mut rng = trial_rng(seed, "solver-tests", 0);
    let beta_star = standard_normal_vector(d, &mut rng);
    let specs: Vec<EnvironmentSpec> = (0..3)
        .map(|e| {
            EnvironmentSpec::new(
                format!("env{e}"),
                sqrt_psd(&random_spd(d, 0.5, &mut rng)).unwrap(),
                standard_normal_vector(d, &mut rng),
            )
        })
        .collect();
    let truth = match task {
        Task::Classify => GroundTruth::classification(beta_star),
        Task::Regress => GroundTruth::regression(beta_star, 0.1),
    };
    let data = gen_environments(&specs, &truth, n, task, derive_seed(seed, "solver-tests/data", 0)).unwrap();
    (data, truth)
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

/// Plain logistic regression with intercept by Newton's method.
fn irls(x: &Mat, y: &[usize]) -> Vector {
    let (n, d) = x.shape();
    let mut z = Mat::from_element(n, d + 1, 1.0);
    z.view_mut((0, 0), (n, d)).copy_from(x);
    let mut w = Vector::zeros(d + 1);
    for _ in 0..50 {
        let p = (&z * &w).map(|s| 1.0 / (1.0 + (-s).exp()));
        let r = Vector::from_fn(n, |i, _| y[i] as f64 - p[i]);
        let mut h = Mat::zeros(d + 1, d + 1);
        for i in 0..n {
            let row = z.row(i).transpose();
            h += &row * row.transpose() * (p[i] * (1.0 - p[i]));
        }
        let step = h.cholesky().unwrap().solve(&(z.transpose() * r));
        w += &step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    w.rows(0, d).into_owned()
}

#[test]
fn fit_whiteners_examples() {
    let x = Mat::from_element(50, 3, 1.7);
    let ds = LabeledDataset::new("c", x, Targets::Real(vec![0.0; 50])).unwrap();
    let w = fit_whiteners(&[ds], 0.1).unwrap();
    assert!((&w[0].inv_sqrt - Mat::identity(3, 3) * 0.1f64.powf(-0.5)).norm() < 1e-12);

    let (data, _) = problem(Task::Regress, 4, 50_000, 1);
    let ws = fit_whiteners(&data, 0.0).unwrap();
    for (ds, w) in data.iter().zip(&ws) {
        let z = w.transform(&ds.x, true);
        let (mu, cov) = dare_core::matops::shrink_cov(&z, 0.0).unwrap();
        assert!(mu.amax() < 1e-10, "centered mean {mu}");
        assert!((cov - Mat::identity(4, 4)).amax() < 1e-9);
        let direct = dare_core::matops::inv_sqrt_psd(&w.cov, dare_core::matops::DEFAULT_REL_TOL).unwrap();
        assert!((&w.inv_sqrt - direct).norm() < 1e-9);
    }
}

#[test]
fn unpenalized_single_env_matches_logistic_oracle() {
    let spec = EnvironmentSpec::new("e", Mat::identity(3, 3), Vector::zeros(3));
    let truth = GroundTruth::classification(Vector::from_vec(vec![1.5, -1.0, 0.5]));
    let ds = gen_environment(&spec, &truth, 5000, Task::Classify, 2).unwrap();
    let cfg = FitConfig::default().with_lambda(0.0);
    let (model, ws, _) = dare_fit_detailed(std::slice::from_ref(&ds), &cfg).unwrap();
    assert!(model.convergence.converged);
    let z = ws[0].transform(&ds.x, true);
    let Targets::Classes { labels, .. } = &ds.y else { unreachable!() };
    let oracle = irls(&z, labels);
    let c = cosine(&model.direction(), &oracle);
    assert!(c >= 0.999, "cosine {c}");
    assert!((model.direction() - &oracle).norm() < 1e-5 * oracle.norm());
}

#[test]
fn population_regression_recovers_projection() {
    let d = 4;
    let mut rng = trial_rng(3, "population", 0);
    let beta_star = standard_normal_vector(d, &mut rng);
    let specs: Vec<EnvironmentSpec> = example1_family(2, 2, &random_spd(2, 0.5, &mut rng), &[
        random_spd(2, 0.5, &mut rng),
        random_spd(2, 0.5, &mut rng),
        random_spd(2, 0.5, &mut rng),
    ])
    .unwrap()
    .into_iter()
    .map(|s| {
        let b = Vector::from_vec(vec![0.0, 0.0, standard_normal_vector(1, &mut rng)[0] * 2.0, standard_normal_vector(1, &mut rng)[0] * 2.0]);
        s.with_mean(b)
    })
    .collect();
    let truth = GroundTruth::regression(beta_star.clone(), 0.1);
    let data = gen_environments(&specs, &truth, 100_000, Task::Regress, 4).unwrap();
    let cfg = FitConfig { lambda: 100.0, shrinkage_weight: 0.0, ..FitConfig::default() };
    let model = dare_fit(&data, &cfg).unwrap();
    let target = closed_form_dare_linear(&beta_star, &mean_shift_matrix(&specs)).unwrap();
    let err = (model.direction() - &target).norm() / target.norm();
    assert!(err <= 1e-2, "relative error {err}");
}

/// Minimize ‖β − β*‖² subject to Bᵀβ = 0 through the KKT system.
fn kkt_oracle(beta_star: &Vector, b: &Mat) -> Vector {
    let (d, e) = b.shape();
    let mut k = Mat::zeros(d + e, d + e);
    k.view_mut((0, 0), (d, d)).copy_from(&(Mat::identity(d, d) * 2.0));
    k.view_mut((0, d), (d, e)).copy_from(b);
    k.view_mut((d, 0), (e, d)).copy_from(&b.transpose());
    let mut rhs = Vector::zeros(d + e);
    rhs.rows_mut(0, d).copy_from(&(beta_star * 2.0));
    k.lu().solve(&rhs).unwrap().rows(0, d).into_owned()
}

#[test]
fn closed_form_examples() {
    let r = closed_form_dare_linear(&Vector::from_vec(vec![1.0, 1.0]), &Mat::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
    assert!((r - Vector::from_vec(vec![0.0, 1.0])).norm() < 1e-15);
    let bs = Vector::from_vec(vec![0.3, -2.0, 1.0]);
    assert_eq!(closed_form_dare_linear(&bs, &Mat::zeros(3, 0)).unwrap(), bs);
    assert!(closed_form_dare_linear(&bs, &Mat::zeros(2, 1)).is_err());
}

#[test]
fn guess_test_whitener_examples() {
    let mk = |m: Mat| Whitener { mu: Vector::zeros(2), cov: Mat::identity(2, 2), inv_sqrt: m, shrinkage_weight: 0.0 };
    assert_eq!(guess_test_whitener(&[mk(diag(&[1.0, 1.0])), mk(diag(&[3.0, 1.0]))]).unwrap(), diag(&[2.0, 1.0]));
    let w = mk(diag(&[0.5, 4.0]));
    assert_eq!(guess_test_whitener(&[w.clone(), w.clone()]).unwrap(), w.inv_sqrt);
    assert!(guess_test_whitener(&[]).is_err());
}

#[test]
fn held_out_whitener_error_is_finite() {
    let mut rng = trial_rng(5, "heldout", 0);
    let covs: Vec<Mat> = (0..4).map(|_| random_spd(3, 0.2, &mut rng)).collect();
    let specs = example1_family(2, 3, &random_spd(2, 0.5, &mut rng), &covs).unwrap();
    let truth = GroundTruth::classification(standard_normal_vector(5, &mut rng));
    let data = gen_environments(&specs, &truth, 2000, Task::Classify, 6).unwrap();
    let ws = fit_whiteners(&data, 0.1).unwrap();
    let guess = guess_test_whitener(&ws[..3]).unwrap();
    let err = dare_core::theory::whitener_error(&guess, &ws[3].inv_sqrt).unwrap();
    assert!(err.is_finite() && err > 0.0);
}

#[test]
fn predict_examples() {
    let model = LinearModel {
        method_tag: "t".into(),
        task: Task::Classify,
        beta: Mat::zeros(3, 4),
        bias: Vector::zeros(4),
        test_whitener: Mat::identity(3, 3),
        lambda: 0.0,
        convergence: Convergence { iters: 0, grad_norm: 0.0, converged: true },
    };
    let x = Mat::from_fn(5, 3, |i, j| (i * 3 + j) as f64);
    let Predictions::Probabilities(p) = predict(&model, &x).unwrap() else { unreachable!() };
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let reg = LinearModel {
        task: Task::Regress,
        beta: Mat::from_column_slice(3, 1, &[1.0, -1.0, 2.0]),
        bias: Vector::from_vec(vec![0.5]),
        ..model.clone()
    };
    let Predictions::Values(v) = predict(&reg, &x).unwrap() else { unreachable!() };
    for i in 0..5 {
        assert!((v[i] - (x[(i, 0)] - x[(i, 1)] + 2.0 * x[(i, 2)] + 0.5)).abs() < 1e-12);
    }
    assert!(predict(&reg, &Mat::zeros(2, 4)).is_err());
}

#[test]
fn jituda_without_shift_recovers_truth() {
    let d = 5;
    let beta_star = Vector::from_vec(vec![1.0, -1.0, 0.5, 0.0, 2.0]);
    let spec = EnvironmentSpec::new("s", Mat::identity(d, d), Vector::zeros(d));
    let truth = GroundTruth::regression(beta_star.clone(), 0.1);
    let n = 40_000;
    let source = gen_environment(&spec, &truth, n, Task::Regress, 7).unwrap();
    let target = gen_environment(&spec, &truth, n, Task::Regress, 8).unwrap();
    let cfg = FitConfig { shrinkage_weight: 0.0, ..FitConfig::default() };
    let (model, _) = jituda_fit_predict(&source, &target.x, &cfg).unwrap();
    // the fitted coefficient acts on whitened features, so compare the effective map
    let eff = &model.test_whitener * model.direction();
    assert!((eff - &beta_star).norm() < 10.0 * (d as f64 / n as f64).sqrt() * beta_star.norm());
}

#[test]
fn jituda_matches_oracle_under_scaled_target() {
    let d = 4;
    let beta_star = Vector::from_vec(vec![1.0, 0.5, -0.5, 1.0]);
    let truth = GroundTruth::regression(beta_star.clone(), 0.1);
    let source = gen_environment(&EnvironmentSpec::new("s", Mat::identity(d, d), Vector::zeros(d)), &truth, 20_000, Task::Regress, 9).unwrap();
    let tspec = EnvironmentSpec::new("t", Mat::identity(d, d) * 2.0, Vector::zeros(d));
    let target = gen_environment(&tspec, &truth, 20_000, Task::Regress, 10).unwrap();
    let cfg = FitConfig { shrinkage_weight: 0.0, ..FitConfig::default() };
    let (_, preds) = jituda_fit_predict(&source, &target.x, &cfg).unwrap();
    let oracle = &target.x * (&beta_star * 0.5);
    let rms = ((&preds - &oracle).norm_squared() / preds.len() as f64).sqrt();
    assert!(rms < 0.05 * beta_star.norm(), "rms {rms}");
}

#[test]
fn jituda_beats_averaged_guess_under_shift() {
    let d = 10;
    let mut rng = trial_rng(11, "jituda-vs-guess", 0);
    let beta_star = standard_normal_vector(d, &mut rng);
    let truth = GroundTruth::regression(beta_star.clone(), 0.1);
    let mu = standard_normal_vector(d, &mut rng);
    let sources: Vec<EnvironmentSpec> = (0..3)
        .map(|e| EnvironmentSpec::new(format!("s{e}"), sqrt_psd(&random_spd(d, 0.5, &mut rng)).unwrap(), mu.clone()))
        .collect();
    let tspec = EnvironmentSpec::new("t", sqrt_psd(&(random_spd(d, 0.5, &mut rng) * 3.0)).unwrap(), mu.clone());
    let n = 10_000;
    let cfg = FitConfig { shrinkage_weight: 0.0, ..FitConfig::default() };
    let src = gen_environment(&sources[0], &truth, n, Task::Regress, 12).unwrap();
    let target = gen_environment(&tspec, &truth, n, Task::Regress, 13).unwrap();
    let (model, _) = jituda_fit_predict(&src, &target.x, &cfg).unwrap();
    let beta = model.direction();
    let jit = analytic_excess(&beta, 0.0, &model.test_whitener, &tspec, &truth);
    let data = gen_environments(&sources, &truth, n, Task::Regress, 14).unwrap();
    let guess = guess_test_whitener(&fit_whiteners(&data, 0.0).unwrap()).unwrap();
    let averaged = analytic_excess(&beta, 0.0, &guess, &tspec, &truth);
    assert!(jit < averaged, "jit {jit} vs averaged {averaged}");
}

#[test]
fn baselines_agree_where_they_should() {
    let (data, _) = problem(Task::Classify, 3, 800, 15);
    let cfg = FitConfig::default();
    let erm = erm_fit(&data, &cfg).unwrap();
    let rw = reweighted_erm_fit(&data, &cfg).unwrap();
    assert!((&erm.beta - &rw.beta).norm() < 1e-6 * erm.beta.norm());

    let one = &data[..1];
    let erm1 = erm_fit(one, &cfg).unwrap();
    let dro1 = groupdro_fit(one, &cfg, 0.01).unwrap();
    assert!((&erm1.beta - &dro1.beta).norm() < 1e-6 * erm1.beta.norm());
}

#[test]
fn groupdro_protects_the_hard_domain() {
    let d = 3;
    let easy = EnvironmentSpec::new("easy", Mat::identity(d, d), Vector::zeros(d));
    let hard = EnvironmentSpec::new("hard", diag(&[0.3, 3.0, 1.0]), Vector::from_vec(vec![0.0, 1.0, 0.0]));
    let truth = GroundTruth::regression(Vector::from_vec(vec![1.0, 1.0, 1.0]), 0.1);
    let mut train = gen_environments(std::slice::from_ref(&easy), &truth, 3000, Task::Regress, 16).unwrap();
    train.extend(gen_environments(std::slice::from_ref(&hard), &truth, 300, Task::Regress, 17).unwrap());
    let held = [
        gen_environment(&easy, &truth, 20_000, Task::Regress, 18).unwrap(),
        gen_environment(&hard, &truth, 20_000, Task::Regress, 19).unwrap(),
    ];
    let cfg = FitConfig::default();
    let erm = erm_fit(&train, &cfg).unwrap();
    let (dro, state) = groupdro_fit_detailed(&train, &cfg, &DroConfig { step_size: 0.5, ..DroConfig::default() }).unwrap();
    let worst = |m: &LinearModel| held.iter().map(|h| mse(m, h).unwrap()).fold(0.0, f64::max);
    assert!(worst(&dro) <= worst(&erm), "dro {} erm {}", worst(&dro), worst(&erm));
    assert!((state.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn lbfgs_trace_never_increases() {
    for task in [Task::Classify, Task::Regress] {
        let (data, _) = problem(task, 4, 1500, 20);
        let (m, _, trace) = dare_fit_detailed(&data, &FitConfig::default()).unwrap();
        assert!(m.convergence.converged && m.convergence.grad_norm <= 1e-8);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{task:?}");
    }
    let r = minimize(
        |x| {
            let f = (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2);
            (f, vec![2.0 * (x[0] - 3.0), 20.0 * (x[1] + 1.0)])
        },
        vec![0.0, 0.0],
        &LbfgsOptions::default(),
    );
    assert!(r.converged && (r.x[0] - 3.0).abs() < 1e-8 && (r.x[1] + 1.0).abs() < 1e-8);
}

#[test]
fn invalid_configs_are_rejected() {
    let (data, _) = problem(Task::Regress, 2, 50, 21);
    assert!(dare_fit(&data, &FitConfig { grad_tol: 0.0, ..FitConfig::default() }).is_err());
    assert!(dare_fit(&data, &FitConfig::default().with_lambda(-1.0)).is_err());
    assert!(dare_fit(&[], &FitConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn objective_is_convex(seed in 0u64..50, classify in any::<bool>(), t in 0.01f64..0.99, a in prop::collection::vec(-3.0f64..3.0, 15), b in prop::collection::vec(-3.0f64..3.0, 15)) {
        let task = if classify { Task::Classify } else { Task::Regress };
        let (data, _) = problem(task, 4, 200, seed);
        let obj = dare_objective(&data, &fit_whiteners(&data, 0.1).unwrap(), &FitConfig::default()).unwrap();
        let p = obj.n_params();
        let (a, b) = (&a[..p], &b[..p]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let chord = t * obj.value(a) + (1.0 - t) * obj.value(b);
        prop_assert!(obj.value(&mid) <= chord + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradient_matches_central_differences(seed in 0u64..50, classify in any::<bool>(), x in prop::collection::vec(-2.0f64..2.0, 15)) {
        let task = if classify { Task::Classify } else { Task::Regress };
        let (data, _) = problem(task, 4, 200, seed);
        for obj in [
            dare_objective(&data, &fit_whiteners(&data, 0.1).unwrap(), &FitConfig::default()).unwrap(),
            dare_objective(&data, &fit_whiteners(&data, 0.1).unwrap(), &FitConfig { center: false, ..FitConfig::default() }).unwrap(),
            erm_objective(&data).unwrap(),
            reweighted_erm_objective(&data).unwrap(),
        ] {
            let x = &x[..obj.n_params()];
            let (_, g) = obj.value_grad(x);
            let fd: Vec<f64> = (0..x.len()).map(|j| {
                let h = 1e-6 * x[j].abs().max(1.0);
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[j] += h;
                m[j] -= h;
                (obj.value(&p) - obj.value(&m)) / (2.0 * h)
            }).collect();
            let g = Vector::from_vec(g);
            let rel = (&g - Vector::from_vec(fd)).norm() / g.norm().max(1e-12);
            prop_assert!(rel <= 1e-5, "relative error {}", rel);
        }
    }

    #[test]
    fn probabilities_sum_to_one(seed in 0u64..50) {
        let (data, _) = problem(Task::Classify, 3, 300, seed);
        let m = dare_fit(&data, &FitConfig::default()).unwrap();
        let Predictions::Probabilities(p) = predict(&m, &data[0].x).unwrap() else { unreachable!() };
        for i in 0..p.nrows() {
            prop_assert!((p.row(i).sum() - 1.0).abs() <= 1e-9);
        }
        prop_assert!(m.beta.iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn violation_nonincreasing_in_lambda(seed in 0u64..1000, classify in any::<bool>()) {
        let task = if classify { Task::Classify } else { Task::Regress };
        let (data, _) = problem(task, 4, 500, seed);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1.0, 10.0, 100.0] {
            let (m, ws, _) = dare_fit_detailed(&data, &FitConfig::default().with_lambda(lambda)).unwrap();
            let v = constraint_violation(&m, &ws);
            prop_assert!(v <= last * (1.0 + 1e-6) + 1e-12, "λ={} violation {} after {}", lambda, v, last);
            last = v;
        }
    }

    /// Rescaling one environment by a matrix commuting with its covariance
    /// leaves the whitened data, and so the fit, unchanged.
    #[test]
    fn whitening_absorbs_commuting_rescale(seed in 0u64..1000, c in prop::collection::vec(0.2f64..5.0, 3)) {
        let (data, _) = problem(Task::Classify, 3, 400, seed);
        let cfg = FitConfig { shrinkage_weight: 0.0, ..FitConfig::default() };
        let (base, ws, _) = dare_fit_detailed(&data, &cfg).unwrap();
        let eig = sym_eig(&ws[0].cov).unwrap();
        let cmat = &eig.vectors * diag(&c) * eig.vectors.transpose();
        let mut moved = data.clone();
        moved[0].x = &data[0].x * &cmat;
        let (fit, ws2, _) = dare_fit_detailed(&moved, &cfg).unwrap();
        let tol = 1e-5 * base.beta.norm().max(1.0);
        prop_assert!((&fit.beta - &base.beta).norm() <= tol);
        for e in 1..3 {
            let before = ws[e].transform(&data[e].x, true) * &base.beta;
            let after = ws2[e].transform(&data[e].x, true) * &fit.beta;
            prop_assert!((before - after).amax() <= 1e-4);
        }
    }
}

/// All sign patterns in {−1, 1}³ shifted by `shift`: mean `shift`, covariance I exactly.
fn exact_env(id: &str, shift: &Vector, beta_star: &Vector) -> LabeledDataset {
    let rows: Vec<Vector> = (0..8)
        .map(|p| Vector::from_fn(3, |j, _| if p >> j & 1 == 1 { 1.0 } else { -1.0 }) + shift)
        .collect();
    let x = Mat::from_fn(8, 3, |i, j| rows[i][j]);
    let y = rows.iter().map(|r| beta_star.dot(r)).collect();
    LabeledDataset::new(id, x, Targets::Real(y)).unwrap()
}

/// With exact moments the penalized optimum along e1 solves a scalar
/// quadratic: `β₁ = β*₁ / (1 + (λ/E)·Σ m_e²)`; the other coordinates are free.
#[test]
fn penalty_enforces_invariance_on_spanned_direction() {
    let bs = Vector::from_vec(vec![1.0, 1.0, -0.5]);
    let lambda = 10.0;
    for m in [2.0, 200.0] {
        let shifts = [m, -m / 2.0];
        let data: Vec<LabeledDataset> = shifts
            .iter()
            .enumerate()
            .map(|(e, &s)| exact_env(&format!("env{e}"), &Vector::from_vec(vec![s, 0.0, 0.0]), &bs))
            .collect();
        let (model, ws, _) = dare_fit_detailed(&data, &FitConfig::default().with_lambda(lambda)).unwrap();
        let beta = model.direction();
        let want = 1.0 / (1.0 + lambda / 2.0 * shifts.iter().map(|s| s * s).sum::<f64>());
        assert!((beta[0] - want).abs() <= 1e-9, "m={m}: {} vs {want}", beta[0]);
        assert!((beta.rows(1, 2) - bs.rows(1, 2)).norm() <= 1e-8);
        let viol = constraint_violation(&model, &ws);
        if m >= 200.0 {
            assert!(viol <= 1e-3 * beta.norm(), "{viol}");
        }
    }
}

#[test]
fn nullspace_oracle_agrees_with_closed_form() {
    for seed in 0..20u64 {
        let mut rng = trial_rng(seed, "kkt", 0);
        let b = Mat::from_fn(8, 3, |_, _| standard_normal_vector(1, &mut rng)[0]);
        let bs = standard_normal_vector(8, &mut rng);
        let cf = closed_form_dare_linear(&bs, &b).unwrap();
        assert!((&cf - kkt_oracle(&bs, &b)).norm() < 1e-10);
        assert!((&cf - nullspace_projector(&b) * &bs).norm() < 1e-14);
    }
}
