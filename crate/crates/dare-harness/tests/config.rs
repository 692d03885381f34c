use dare_harness::config::{canonical_json, Config};

#[test]
fn hash_ignores_key_order() {
    let a: Config = toml::from_str("seed = 3\n[theorem1]\nd = 6\nenvs = 2\n[lemma1]\nn = 10\n").unwrap();
    let b: Config = toml::from_str("[lemma1]\nn = 10\n[theorem1]\nenvs = 2\nd = 6\n").unwrap();
    let b = Config { seed: 3, ..b };
    assert_eq!(a, b);
    assert_eq!(a.hash(), b.hash());
    let c = Config { seed: 4, ..a.clone() };
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn canonical_json_sorts_nested_keys() {
    let v: serde_json::Value = serde_json::from_str(r#"{"b": {"y": 1, "x": [2, {"q": 0, "p": 1}]}, "a": 0}"#).unwrap();
    assert_eq!(canonical_json(&v), r#"{"a":0,"b":{"x":[2,{"p":1,"q":0}],"y":1}}"#);
}

#[test]
fn defaults_validate_and_empty_file_is_default() {
    let c: Config = toml::from_str("").unwrap();
    assert_eq!(c, Config::default());
    c.validate().unwrap();
}

#[test]
fn validation_rejects_bad_grids() {
    let mut c = Config::default();
    c.theorem3.rate_env_grid = vec![];
    assert!(c.validate().is_err());
    let mut c = Config::default();
    c.theorem4.n_grid = vec![1000, 500];
    assert!(c.validate().is_err());
    let mut c = Config::default();
    c.sweep_lambda.lambdas = vec![-1.0, 1.0];
    assert!(c.validate().is_err());
    let mut c = Config::default();
    c.theorem2.instances = 0;
    assert!(c.validate().is_err());
}

#[test]
fn hash_ignores_output_location() {
    let a = Config::default();
    let b = Config { out: "elsewhere".into(), threads: Some(4), ..Config::default() };
    assert_eq!(a.hash(), b.hash());
}
