use dare_core::envmodel::*;
use dare_core::matops::{Mat, Vector};
use dare_core::persist::*;
use dare_core::solvers::{dare_fit, Convergence, FitConfig, LinearModel};
use dare_core::DareError;
use proptest::prelude::*;

fn sample_data(task: Task) -> (Vec<LabeledDataset>, Vec<EnvironmentSpec>, GroundTruth) {
    let specs = vec![
        EnvironmentSpec::new("alpha", Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 0.5])), Vector::from_vec(vec![0.1, -0.2, 0.3])),
        EnvironmentSpec::new("beta", Mat::identity(3, 3), Vector::from_vec(vec![-1.0, 0.0, 2.0])),
    ];
    let truth = match task {
        Task::Classify => GroundTruth::classification(Vector::from_vec(vec![1.0, -1.0, 0.5])),
        Task::Regress => GroundTruth::regression(Vector::from_vec(vec![1.0, -1.0, 0.5]), 0.1),
    };
    let data = gen_environments(&specs, &truth, 64, task, 5).unwrap();
    (data, specs, truth)
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for task in [Task::Classify, Task::Regress] {
        let (data, specs, truth) = sample_data(task);
        let stem = format!("{task:?}");
        let (csv, _) = save_datasets(dir.path(), &stem, &data, &specs, Some(&truth)).unwrap();
        let (back, sidecar) = load_datasets(&csv).unwrap();
        assert_eq!(back, data);
        assert_eq!(sidecar.specs, specs);
        assert_eq!(sidecar.truth, Some(truth));
        assert_eq!(sidecar.env_ids, vec!["alpha".to_string(), "beta".to_string()]);
    }
}

#[test]
fn fitted_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _, _) = sample_data(Task::Classify);
    let model = dare_fit(&data, &FitConfig::default()).unwrap();
    let path = dir.path().join("nested/model.json");
    save_model(&path, &model).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn model_json_layout() {
    let model = LinearModel {
        method_tag: "dare".into(),
        task: Task::Regress,
        beta: Mat::from_column_slice(2, 1, &[0.1, 0.2]),
        bias: Vector::from_vec(vec![0.3]),
        test_whitener: Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        lambda: 10.0,
        convergence: Convergence { iters: 3, grad_norm: 1e-9, converged: true },
    };
    let v: serde_json::Value = serde_json::from_str(&to_json_string(&model).unwrap()).unwrap();
    assert_eq!(v["method_tag"], "dare");
    assert_eq!(v["task"], "regress");
    assert_eq!(v["test_whitener"], serde_json::json!([[1.0, 2.0], [3.0, 4.0]]));
    assert_eq!(v["convergence"]["iters"], 3);
}

#[test]
fn matrix_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Mat::from_fn(3, 4, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) - 0.1);
    let path = dir.path().join("m.txt");
    save_matrix(&path, &m).unwrap();
    assert_eq!(load_matrix(&path).unwrap(), m);
    assert!(matrix_to_grid(&m).starts_with("2 3 4\n"));
}

#[test]
fn corrupt_inputs_give_located_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"method_tag\": 3}").unwrap();
    assert!(matches!(load_model(&bad), Err(DareError::Parse { .. })));
    assert!(matches!(load_model(&dir.path().join("absent.json")), Err(DareError::Io { .. })));

    let text = "env_id,y,x_1,x_2\na,1,0.5,0.5\na,0,0.25\n";
    match datasets_from_csv(text, Task::Classify, 2) {
        Err(DareError::Parse { location, .. }) => assert!(location.contains('3') || location.contains("row"), "{location}"),
        other => panic!("expected parse error, got {other:?}"),
    }
    match matrix_from_grid("2 2 2\n1 2\n3 x\n") {
        Err(DareError::Parse { location, .. }) => assert_eq!(location, "line 3, column 2"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_models_round_trip(
        d in 1usize..6,
        k in 1usize..4,
        vals in prop::collection::vec(prop::num::f64::NORMAL, 60),
        lambda in 0.0f64..1e6,
    ) {
        let take = |off: usize, n: usize| -> Vec<f64> { (0..n).map(|i| vals[(off + i) % vals.len()]).collect() };
        let model = LinearModel {
            method_tag: "dare".into(),
            task: if k == 1 { Task::Regress } else { Task::Classify },
            beta: Mat::from_vec(d, k, take(0, d * k)),
            bias: Vector::from_vec(take(7, k)),
            test_whitener: Mat::from_vec(d, d, take(13, d * d)),
            lambda,
            convergence: Convergence { iters: 1, grad_norm: vals[0].abs(), converged: false },
        };
        let back: LinearModel = serde_json::from_str(&to_json_string(&model).unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn random_grids_round_trip(r in 1usize..6, c in 1usize..6, vals in prop::collection::vec(prop::num::f64::NORMAL, 36)) {
        let m = Mat::from_fn(r, c, |i, j| vals[i * 6 + j]);
        prop_assert_eq!(matrix_from_grid(&matrix_to_grid(&m)).unwrap(), m);
    }

    #[test]
    fn dataset_csv_round_trips(seed in 0u64..10_000, n in 1usize..30) {
        let spec = EnvironmentSpec::new("e0", Mat::identity(2, 2), Vector::from_vec(vec![0.3, -0.7]));
        let other = EnvironmentSpec { env_id: "e1".into(), ..spec.clone() };
        let truth = GroundTruth::regression(Vector::from_vec(vec![1.0, 2.0]), 0.1);
        let data = gen_environments(&[spec, other], &truth, n, Task::Regress, seed).unwrap();
        let back = datasets_from_csv(&datasets_to_csv(&data).unwrap(), Task::Regress, 0).unwrap();
        prop_assert_eq!(back, data);
    }
}
