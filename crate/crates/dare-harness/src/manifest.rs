//! Report files and the run manifest.
//!
//! Layout under the output directory:
//! - `<experiment>/results.csv`: long format `grid,trial,metric,value`
//! - `<experiment>/summary.json`
//! - `timing.json`: wall-clock per experiment (not hashed; it changes every run)
//! - `manifest.json`: config hash, versions, pass/fail, file inventory

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dare_core::{persist, DareError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::experiments::{Record, Report};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

pub fn records_to_csv(records: &[Record]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| DareError::Parse {
        location: "csv".into(),
        message: e.to_string(),
    };
    w.write_record(["grid", "trial", "metric", "value"]).map_err(csv_err)?;
    for r in records {
        w.write_record([r.grid.clone(), r.trial.to_string(), r.metric.clone(), format!("{:?}", r.value)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DareError::Parse {
        location: "csv".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write one experiment's CSV and summary; returns paths relative to `out`.
pub fn write_report(out: &Path, report: &Report) -> Result<Vec<String>> {
    let csv_rel = format!("{}/results.csv", report.experiment);
    let json_rel = format!("{}/summary.json", report.experiment);
    persist::write_text(&out.join(&csv_rel), &records_to_csv(&report.records)?)?;
    persist::save_json(&out.join(&json_rel), report)?;
    Ok(vec![csv_rel, json_rel])
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| DareError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    /// Absent for the timing file and the manifest itself.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStatus {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub experiments: Vec<ExperimentStatus>,
    /// Wall-clock timings live here so the manifest stays reproducible.
    pub timing_file: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub name: String,
    pub seconds: f64,
    pub limit_seconds: Option<f64>,
    pub within_limit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingFile {
    pub total_seconds: f64,
    pub experiments: Vec<Timing>,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("dare-core".to_string(), dare_core::VERSION.to_string()),
        ("dare-harness".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("manifest-format".to_string(), "1".to_string()),
    ])
}

/// Write `timing.json` and `manifest.json`; `written` lists files relative to `out`.
pub fn finish_run(
    out: &Path,
    command: &str,
    cfg: &Config,
    statuses: Vec<ExperimentStatus>,
    timings: TimingFile,
    written: &[String],
) -> Result<PathBuf> {
    persist::save_json(&out.join(TIMING_FILE), &timings)?;
    let mut files: Vec<FileEntry> = written
        .iter()
        .map(|rel| {
            Ok(FileEntry {
                path: rel.clone(),
                sha256: Some(sha256_file(&out.join(rel))?),
            })
        })
        .collect::<Result<_>>()?;
    files.push(FileEntry {
        path: TIMING_FILE.into(),
        sha256: None,
    });
    files.push(FileEntry {
        path: MANIFEST_FILE.into(),
        sha256: None,
    });
    files.sort_by(|a, b| a.path.cmp(&b.path));
    files.dedup_by(|a, b| a.path == b.path);
    let manifest = RunManifest {
        command: command.into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        versions: versions(),
        experiments: statuses,
        timing_file: TIMING_FILE.into(),
        files,
    };
    let path = out.join(MANIFEST_FILE);
    persist::save_json(&path, &manifest)?;
    Ok(path)
}
