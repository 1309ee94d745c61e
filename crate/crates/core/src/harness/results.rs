use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mae;
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str =
    "dataset,setting,data_seed,model_seed,estimator,k,tau_true,tau_hat,mae,runtime_s";
pub const AGGREGATE_HEADER: &str = "dataset,setting,estimator,mean_mae,ci95,mean_runtime_s,n_runs";

/// One fitted estimator on one dataset replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub setting: String,
    pub data_seed: u64,
    pub model_seed: u64,
    pub estimator: String,
    pub tau_true: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub mae: f64,
    pub runtime_s: f64,
}

impl RunRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dataset: impl Into<String>,
        setting: impl Into<String>,
        data_seed: u64,
        model_seed: u64,
        estimator: impl Into<String>,
        tau_true: Vec<f64>,
        tau_hat: Vec<f64>,
        runtime_s: f64,
    ) -> Result<Self> {
        let mae = mae(&tau_true, &tau_hat)?;
        Ok(Self {
            dataset: dataset.into(),
            setting: setting.into(),
            data_seed,
            model_seed,
            estimator: estimator.into(),
            tau_true,
            tau_hat,
            mae,
            runtime_s,
        })
    }
}

/// Summary of one (setting, estimator) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub setting: String,
    pub estimator: String,
    pub mean_mae: f64,
    /// `1.96 · sd / √n_runs`; absent for single-run groups.
    pub ci95: Option<f64>,
    pub mean_runtime_s: f64,
    pub n_runs: usize,
}

fn check_field(path: &Path, field: &str, v: &str) -> Result<()> {
    if v.contains([',', '\n', '\r', '"']) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("{field} `{v}` cannot be written to CSV unquoted"),
        });
    }
    Ok(())
}

/// One row per treatment per run, run-level MAE repeated on each row.
pub fn write_results(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{RESULTS_HEADER}").map_err(io)?;
    for r in records {
        check_field(path, "dataset", &r.dataset)?;
        check_field(path, "setting", &r.setting)?;
        check_field(path, "estimator", &r.estimator)?;
        for (k, (t, h)) in r.tau_true.iter().zip(&r.tau_hat).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.setting,
                r.data_seed,
                r.model_seed,
                r.estimator,
                k,
                t,
                h,
                r.mae,
                r.runtime_s
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn reader(path: &Path, header: &str) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().quoting(false).from_reader(file);
    let found = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected header `{header}`, found `{found}`"),
        });
    }
    Ok(rdr)
}

fn cell<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    row: usize,
    i: usize,
    name: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|e: T::Err| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: name.into(),
        message: format!("`{raw}`: {e}"),
    })
}

/// Reads a results file back into run records.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = reader(path, RESULTS_HEADER)?;
    let mut out: Vec<RunRecord> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let dataset = rec.get(0).unwrap_or("").to_string();
        let setting = rec.get(1).unwrap_or("").to_string();
        let data_seed: u64 = cell(path, &rec, row, 2, "data_seed")?;
        let model_seed: u64 = cell(path, &rec, row, 3, "model_seed")?;
        let estimator = rec.get(4).unwrap_or("").to_string();
        let k: usize = cell(path, &rec, row, 5, "k")?;
        let t: f64 = cell(path, &rec, row, 6, "tau_true")?;
        let h: f64 = cell(path, &rec, row, 7, "tau_hat")?;
        let m: f64 = cell(path, &rec, row, 8, "mae")?;
        let rt: f64 = cell(path, &rec, row, 9, "runtime_s")?;
        let continues = out.last().is_some_and(|r| {
            k > 0
                && r.tau_true.len() == k
                && r.dataset == dataset
                && r.setting == setting
                && r.data_seed == data_seed
                && r.model_seed == model_seed
                && r.estimator == estimator
        });
        if continues {
            let r = out.last_mut().expect("checked");
            r.tau_true.push(t);
            r.tau_hat.push(h);
        } else if k == 0 {
            out.push(RunRecord {
                dataset,
                setting,
                data_seed,
                model_seed,
                estimator,
                tau_true: vec![t],
                tau_hat: vec![h],
                mae: m,
                runtime_s: rt,
            });
        } else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: "k".into(),
                message: format!("treatment index {k} does not continue a run"),
            });
        }
    }
    for r in &out {
        let m = mae(&r.tau_true, &r.tau_hat)?;
        if (m - r.mae).abs() > 1e-12 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!(
                    "stored mae {} disagrees with its rows ({m}) for {}/{} seeds {}/{}",
                    r.mae, r.setting, r.estimator, r.data_seed, r.model_seed
                ),
            });
        }
    }
    Ok(out)
}

/// Per-(setting, estimator) means and 95% interval half-widths, sorted by
/// setting then estimator.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(&str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.setting.as_str(), r.estimator.as_str()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((setting, estimator), rs)| {
            let n = rs.len();
            let maes: Vec<f64> = rs.iter().map(|r| r.mae).collect();
            let mean_mae = maes.iter().sum::<f64>() / n as f64;
            let ci95 = (n >= 2).then(|| {
                let var = maes.iter().map(|m| (m - mean_mae).powi(2)).sum::<f64>() / (n - 1) as f64;
                1.96 * var.sqrt() / (n as f64).sqrt()
            });
            AggregateRow {
                dataset: rs[0].dataset.clone(),
                setting: setting.to_string(),
                estimator: estimator.to_string(),
                mean_mae,
                ci95,
                mean_runtime_s: rs.iter().map(|r| r.runtime_s).sum::<f64>() / n as f64,
                n_runs: n,
            }
        })
        .collect()
}

/// Absent intervals are written as `NA`.
pub fn write_aggregate(rows: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{AGGREGATE_HEADER}").map_err(io)?;
    for r in rows {
        let ci = r.ci95.map_or_else(|| "NA".to_string(), |c| c.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.dataset, r.setting, r.estimator, r.mean_mae, ci, r.mean_runtime_s, r.n_runs
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_aggregate(path: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    let path = path.as_ref();
    let mut rdr = reader(path, AGGREGATE_HEADER)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ci = match rec.get(4) {
            Some("NA") => None,
            _ => Some(cell(path, &rec, row, 4, "ci95")?),
        };
        out.push(AggregateRow {
            dataset: rec.get(0).unwrap_or("").into(),
            setting: rec.get(1).unwrap_or("").into(),
            estimator: rec.get(2).unwrap_or("").into(),
            mean_mae: cell(path, &rec, row, 3, "mean_mae")?,
            ci95: ci,
            mean_runtime_s: cell(path, &rec, row, 5, "mean_runtime_s")?,
            n_runs: cell(path, &rec, row, 6, "n_runs")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(setting: &str, est: &str, seed: u64, hat: f64) -> RunRecord {
        RunRecord::new(
            "gwas",
            setting,
            1,
            seed,
            est,
            vec![0.0, 1.0],
            vec![hat, 1.0],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_group() {
        // mae per run = |hat| / 2: 0.1, 0.2, 0.3, 0.4, 0.5
        let rs: Vec<_> = (1..=5)
            .map(|i| rec("a", "ols", i, 0.2 * i as f64))
            .collect();
        let agg = aggregate(&rs);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].mean_mae - 0.3).abs() < 1e-12);
        // sample sd of {0.1..0.5} = sqrt(0.025)
        let ci = 1.96 * 0.025f64.sqrt() / 5f64.sqrt();
        assert!((agg[0].ci95.unwrap() - ci).abs() < 1e-12);
        assert_eq!(agg[0].n_runs, 5);
    }

    #[test]
    fn identical_maes_have_zero_width_and_groups_are_independent() {
        let mut rs = vec![rec("b", "ols", 1, 0.4), rec("b", "ols", 2, 0.4)];
        rs.push(rec("a", "m3e2", 1, 2.0));
        let agg = aggregate(&rs);
        assert_eq!(agg[0].setting, "a");
        assert_eq!(agg[0].ci95, None);
        assert_eq!(agg[1].ci95, Some(0.0));
        assert!((agg[1].mean_mae - 0.2).abs() < 1e-15);
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rs = vec![
            rec("a", "ols", 1, 0.1 + 0.2),
            rec("a", "m3e2", 1, -1.0 / 3.0),
        ];
        write_results(&rs, &p).unwrap();
        assert_eq!(read_results(&p).unwrap(), rs);
        let agg = aggregate(&rs);
        let q = dir.path().join("agg.csv");
        write_aggregate(&agg, &q).unwrap();
        assert_eq!(read_aggregate(&q).unwrap(), agg);
    }

    #[test]
    fn tampered_mae_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(
            &p,
            format!("{RESULTS_HEADER}\ngwas,a,1,1,ols,0,1,0,0.9,0\ngwas,a,1,1,ols,1,0,0,0.9,0\n"),
        )
        .unwrap();
        assert!(read_results(&p).is_err());
    }
}
