//! On-disk formats.
//!
//! - matrices: plain-text grid, header `2 rows cols`, then whitespace-separated rows
//! - datasets: CSV with header `env_id,y,x_1..x_d` plus a JSON sidecar
//! - models and reports: JSON
//!
//! Reals are written in shortest round-trip form, so `load(save(x)) == x` bit for bit.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::envmodel::{EnvironmentSpec, GroundTruth, LabeledDataset, Targets, Task};
use crate::error::{DareError, Result};
use crate::matops::Mat;
use crate::solvers::LinearModel;

fn io_err(path: &Path, source: std::io::Error) -> DareError {
    DareError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> DareError {
    DareError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn matrix_to_grid(m: &Mat) -> String {
    let mut out = format!("2 {} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn matrix_from_grid(text: &str) -> Result<Mat> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err("line 1", "empty matrix file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let loc = format!("line {}", hline + 1);
    if fields.len() != 3 {
        return Err(parse_err(loc, format!("header needs 3 fields, found {}", fields.len())));
    }
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(format!("line {}", hline + 1), format!("bad {what}: {s:?}")))
    };
    let order = parse_usize(fields[0], "order")?;
    let rows = parse_usize(fields[1], "row count")?;
    let cols = parse_usize(fields[2], "column count")?;
    if order != 1 && order != 2 {
        return Err(parse_err(loc, format!("order must be 1 or 2, got {order}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (ln, line) in lines {
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != cols {
            return Err(parse_err(
                format!("line {}", ln + 1),
                format!("expected {cols} values, found {}", vals.len()),
            ));
        }
        for (c, v) in vals.iter().enumerate() {
            data.push(v.parse::<f64>().map_err(|_| {
                parse_err(format!("line {}, column {}", ln + 1, c + 1), format!("not a number: {v:?}"))
            })?);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err("end of file", format!("expected {rows} rows, found {seen}")));
    }
    Ok(Mat::from_row_slice(rows, cols, &data))
}

pub fn save_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_text(path, &matrix_to_grid(m))
}

pub fn load_matrix(path: &Path) -> Result<Mat> {
    matrix_from_grid(&read_text(path)?)
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| parse_err("json", e.to_string()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value)?)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        parse_err(
            format!("{} line {}, column {}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })
}

pub fn save_model(path: &Path, model: &LinearModel) -> Result<()> {
    save_json(path, model)
}

pub fn load_model(path: &Path) -> Result<LinearModel> {
    load_json(path)
}

/// Everything about a dataset file that the CSV cannot carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub task: Task,
    pub n_classes: usize,
    pub dim: usize,
    pub env_ids: Vec<String>,
    pub specs: Vec<EnvironmentSpec>,
    pub truth: Option<GroundTruth>,
}

pub fn datasets_to_csv(datasets: &[LabeledDataset]) -> Result<String> {
    let d = datasets.first().map_or(0, LabeledDataset::dim);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["env_id".to_string(), "y".to_string()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    w.write_record(&header).map_err(|e| parse_err("csv", e.to_string()))?;
    for ds in datasets {
        if ds.dim() != d {
            return Err(DareError::DimMismatch(format!("environment {} has dimension {}", ds.env_id, ds.dim())));
        }
        for i in 0..ds.n() {
            let mut rec = vec![ds.env_id.clone(), format!("{:?}", ds.y.value(i))];
            rec.extend(ds.x.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| parse_err("csv", e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| parse_err("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| parse_err("csv", e.to_string()))
}

pub fn datasets_from_csv(text: &str, task: Task, n_classes: usize) -> Result<Vec<LabeledDataset>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err("row 1", e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "env_id" || &header[1] != "y" {
        return Err(parse_err("row 1", "header must start with env_id,y,x_1"));
    }
    let d = header.len() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row_no = i + 2;
        let rec = rec.map_err(|e| parse_err(format!("row {row_no}"), e.to_string()))?;
        if rec.len() != d + 2 {
            return Err(parse_err(
                format!("row {row_no}"),
                format!("expected {} columns, found {}", d + 2, rec.len()),
            ));
        }
        let env = rec[0].to_string();
        let slot = match order.iter().position(|e| *e == env) {
            Some(s) => s,
            None => {
                order.push(env);
                rows.push((Vec::new(), Vec::new()));
                order.len() - 1
            }
        };
        let num = |c: usize| {
            rec[c].trim().parse::<f64>().map_err(|_| {
                parse_err(format!("row {row_no}, column {}", c + 1), format!("not a number: {:?}", &rec[c]))
            })
        };
        rows[slot].1.push(num(1)?);
        for c in 2..d + 2 {
            rows[slot].0.push(num(c)?);
        }
    }
    order
        .into_iter()
        .zip(rows)
        .map(|(env, (xs, ys))| {
            let n = ys.len();
            let x = Mat::from_row_slice(n, d, &xs);
            let y = match task {
                Task::Regress => Targets::Real(ys),
                Task::Classify => Targets::Classes {
                    labels: ys
                        .iter()
                        .map(|&v| {
                            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n_classes {
                                Ok(v as usize)
                            } else {
                                Err(parse_err(format!("environment {env}"), format!("bad class label {v}")))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?,
                    k: n_classes,
                },
            };
            LabeledDataset::new(env, x, y)
        })
        .collect()
}

/// Write `<stem>.csv` and `<stem>.json`; returns both paths.
pub fn save_datasets(
    dir: &Path,
    stem: &str,
    datasets: &[LabeledDataset],
    specs: &[EnvironmentSpec],
    truth: Option<&GroundTruth>,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let first = datasets
        .first()
        .ok_or_else(|| DareError::Empty("no datasets to save".into()))?;
    let n_classes = match first.y {
        Targets::Classes { k, .. } => k,
        Targets::Real(_) => 0,
    };
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_text(&csv_path, &datasets_to_csv(datasets)?)?;
    save_json(
        &json_path,
        &DatasetSidecar {
            task: first.task(),
            n_classes,
            dim: first.dim(),
            env_ids: datasets.iter().map(|d| d.env_id.clone()).collect(),
            specs: specs.to_vec(),
            truth: truth.cloned(),
        },
    )?;
    Ok((csv_path, json_path))
}

/// Load a dataset CSV; the sidecar is found by swapping the extension to `.json`.
pub fn load_datasets(csv_path: &Path) -> Result<(Vec<LabeledDataset>, DatasetSidecar)> {
    let sidecar: DatasetSidecar = load_json(&csv_path.with_extension("json"))?;
    let ds = datasets_from_csv(&read_text(csv_path)?, sidecar.task, sidecar.n_classes)?;
    if let Some(bad) = ds.iter().find(|d| d.dim() != sidecar.dim) {
        return Err(parse_err(
            csv_path.display().to_string(),
            format!("environment {} has {} features, sidecar says {}", bad.env_id, bad.dim(), sidecar.dim),
        ));
    }
    Ok((ds, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip_is_exact() {
        let m = Mat::from_row_slice(2, 3, &[0.1, -1e-300, 3.0, f64::MAX, 1.0 / 3.0, -0.0]);
        let back = matrix_from_grid(&matrix_to_grid(&m)).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn grid_reports_bad_row() {
        let err = matrix_from_grid("2 2 2\n1 2\n3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn csv_wrong_column_count_names_row() {
        let text = "env_id,y,x_1,x_2\ne0,1,0.5,0.25\ne0,0,0.5\n";
        let err = datasets_from_csv(text, Task::Classify, 2).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn csv_groups_by_env_in_order() {
        let text = "env_id,y,x_1\nb,1.5,1\na,2.5,2\nb,0.5,3\n";
        let ds = datasets_from_csv(text, Task::Regress, 0).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].env_id, "b");
        assert_eq!(ds[0].n(), 2);
        assert_eq!(ds[1].x[(0, 0)], 2.0);
    }
}
