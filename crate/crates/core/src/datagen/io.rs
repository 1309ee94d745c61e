use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Kind};
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Sidecar written next to a generated dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub name: String,
    pub n: usize,
    pub n_treat: usize,
    pub x_low_cols: usize,
    pub x_high_cols: usize,
    pub tau_true: Vec<f64>,
    pub treatment_kind: Kind,
    pub outcome_kind: Kind,
    pub data_seed: u64,
    /// Generator configuration, echoed verbatim.
    pub config: serde_json::Value,
}

/// Reads an IHDP-style file with header `t,y,mu0,mu1,x0,...`.
///
/// The effect is `mean(mu1 − mu0)`. Treatments are binary when every `t`
/// is 0 or 1, and likewise for the outcome.
pub fn load_single_treatment_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let mut missing: Vec<String> = ["t", "y", "mu0", "mu1"]
        .iter()
        .filter(|c| find(c).is_none())
        .map(|c| c.to_string())
        .collect();
    let mut x_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix('x')
                .and_then(|d| d.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    x_cols.sort_unstable();
    for (expected, (k, _)) in x_cols.iter().enumerate() {
        if *k != expected {
            missing.push(format!("x{expected}"));
            break;
        }
    }
    if !missing.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("missing columns: {}", missing.join(", ")),
        });
    }
    let (it, iy, i0, i1) = (
        find("t").unwrap(),
        find("y").unwrap(),
        find("mu0").unwrap(),
        find("mu1").unwrap(),
    );

    let p = x_cols.len();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut effect = Vec::new();
    let mut x = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |col: usize| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: headers[col].clone(),
                message: format!("`{raw}`: {e}"),
            })
        };
        t.push(cell(it)?);
        y.push(cell(iy)?);
        effect.push(cell(i1)? - cell(i0)?);
        for &(_, col) in &x_cols {
            x.push(cell(col)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let is01 = |v: &[f64]| v.iter().all(|&a| a == 0.0 || a == 1.0);
    let treatment_kind = if is01(&t) {
        Kind::Binary
    } else {
        Kind::Continuous
    };
    let outcome_kind = if is01(&y) {
        Kind::Binary
    } else {
        Kind::Continuous
    };
    let tau = effect.iter().sum::<f64>() / n as f64;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "single".into());
    Dataset::new(
        name,
        Tensor::new(n, p, x)?,
        Tensor::zeros(n, 0),
        Tensor::column(t),
        y,
        vec![tau],
        treatment_kind,
        outcome_kind,
    )
}

fn sidecar(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `ds` as CSV (`y,t0..,xlow0..,xhigh0..`) plus a JSON sidecar with
/// the same stem. Values use the shortest representation that parses back
/// to the identical `f64`.
pub fn write_dataset(
    ds: &Dataset,
    csv_path: impl AsRef<Path>,
    data_seed: u64,
    config: serde_json::Value,
) -> Result<PathBuf> {
    let csv_path = csv_path.as_ref();
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["y".to_string()];
    header.extend((0..ds.n_treat()).map(|k| format!("t{k}")));
    header.extend((0..ds.x_low().cols()).map(|k| format!("xlow{k}")));
    header.extend((0..ds.x_high().cols()).map(|k| format!("xhigh{k}")));
    let io = |e| Error::io(csv_path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for j in 0..ds.n() {
        line.clear();
        line.push_str(&ds.y()[j].to_string());
        for block in [ds.t(), ds.x_low(), ds.x_high()] {
            for v in block.row(j) {
                line.push(',');
                line.push_str(&v.to_string());
            }
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let meta = DatasetMetadata {
        name: ds.name().to_string(),
        n: ds.n(),
        n_treat: ds.n_treat(),
        x_low_cols: ds.x_low().cols(),
        x_high_cols: ds.x_high().cols(),
        tau_true: ds.tau_true().to_vec(),
        treatment_kind: ds.treatment_kind(),
        outcome_kind: ds.outcome_kind(),
        data_seed,
        config,
    };
    let meta_path = sidecar(csv_path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta_path)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(csv_path: impl AsRef<Path>) -> Result<(Dataset, DatasetMetadata)> {
    let csv_path = csv_path.as_ref();
    let meta_path = sidecar(csv_path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMetadata = serde_json::from_str(&text)?;
    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new().quoting(false).from_reader(file);
    let width = 1 + meta.n_treat + meta.x_low_cols + meta.x_high_cols;
    if reader.headers()?.len() != width {
        return Err(Error::Format {
            path: csv_path.to_path_buf(),
            message: format!("expected {width} columns per metadata"),
        });
    }
    let (mut y, mut t, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (i, raw) in rec.iter().enumerate() {
            let v: f64 = raw
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::Parse {
                    path: csv_path.to_path_buf(),
                    row,
                    column: format!("#{i}"),
                    message: e.to_string(),
                })?;
            match i {
                0 => y.push(v),
                i if i <= meta.n_treat => t.push(v),
                i if i <= meta.n_treat + meta.x_low_cols => lo.push(v),
                _ => hi.push(v),
            }
        }
    }
    let n = y.len();
    let ds = Dataset::new(
        meta.name.clone(),
        Tensor::new(n, meta.x_low_cols, lo)?,
        Tensor::new(n, meta.x_high_cols, hi)?,
        Tensor::new(n, meta.n_treat, t)?,
        y,
        meta.tau_true.clone(),
        meta.treatment_kind,
        meta.outcome_kind,
    )?;
    Ok((ds, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_row_effect() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "three.csv",
            "t,y,mu0,mu1,x0,x1\n1,3.5,0,1,0.1,0.2\n0,1.0,1,3,0.3,0.4\n1,2.0,2,5,0.5,0.6\n",
        );
        let ds = load_single_treatment_csv(&p).unwrap();
        assert_eq!(ds.tau_true(), &[2.0]);
        assert_eq!(ds.x_low().shape(), (3, 2));
        assert_eq!(ds.treatment_kind(), Kind::Binary);
        assert_eq!(ds.outcome_kind(), Kind::Continuous);
    }

    #[test]
    fn equal_potential_outcomes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "z.csv",
            "t,y,mu0,mu1,x0\n1,1,2,2,0\n0,1,4,4,1\n",
        );
        assert_eq!(load_single_treatment_csv(&p).unwrap().tau_true(), &[0.0]);
    }

    #[test]
    fn missing_columns_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "t,y,x0\n1,1,0\n");
        let msg = load_single_treatment_csv(&p).unwrap_err().to_string();
        assert!(msg.contains("mu0") && msg.contains("mu1"), "{msg}");
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "b.csv",
            "t,y,mu0,mu1,x0\n1,1,0,1,0\n0,abc,0,1,0\n",
        );
        match load_single_treatment_csv(&p).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e}"),
        }
    }
}
