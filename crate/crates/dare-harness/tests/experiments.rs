use dare_harness::config::{Config, SweepLambdaConfig};
use dare_harness::experiments;
use dare_harness::manifest::records_to_csv;

#[test]
fn sweep_violation_nonincreasing_in_lambda() {
    let cfg = SweepLambdaConfig { n: 4000, n_test: 20_000, ..SweepLambdaConfig::default() };
    let r = experiments::sweep_lambda(&cfg, 5).unwrap();
    let rows = r.summary["rows"].as_array().unwrap();
    let v: Vec<f64> = rows.iter().map(|row| row["violation"].as_f64().unwrap()).collect();
    assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{v:?}");
    assert!(v[0] > v[2]);
}

#[test]
fn reports_are_reproducible() {
    let cfg = Config::default();
    let a = experiments::theorem3(&cfg.theorem3, 9).unwrap();
    let b = experiments::theorem3(&cfg.theorem3, 9).unwrap();
    assert_eq!(records_to_csv(&a.records).unwrap(), records_to_csv(&b.records).unwrap());
    assert_eq!(a.summary, b.summary);
}

#[test]
fn records_csv_is_long_format() {
    let cfg = Config::default();
    let r = experiments::theorem1(&dare_harness::config::Theorem1Config { n: 3000, ..cfg.theorem1 }, 2).unwrap();
    let text = records_to_csv(&r.records).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("grid,trial,metric,value"));
    assert!(lines.all(|l| l.split(',').count() == 4));
}
