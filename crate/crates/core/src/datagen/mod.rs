//! Benchmark datasets with known treatment effects.

mod copula;
mod gwas;
mod io;

use serde::{Deserialize, Serialize};

pub use copula::{copula_outcome_y3, copula_tau_oracle, gen_copula, CopulaConfig};
pub use gwas::{gen_gwas, gen_gwas_detailed, GwasComponents, GwasConfig, GWAS_BASE_ROWS};
pub use io::{load_single_treatment_csv, read_dataset, write_dataset, DatasetMetadata};

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Whether a treatment or outcome is 0/1 or real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Binary,
    Continuous,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Binary => "binary",
            Kind::Continuous => "continuous",
        }
    }
}

/// Covariates split into a low- and a high-dimensional block, the `n × K`
/// treatment matrix, the outcome and the true effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    x_low: Tensor,
    x_high: Tensor,
    t: Tensor,
    y: Vec<f64>,
    tau_true: Vec<f64>,
    treatment_kind: Kind,
    outcome_kind: Kind,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        x_low: Tensor,
        x_high: Tensor,
        t: Tensor,
        y: Vec<f64>,
        tau_true: Vec<f64>,
        treatment_kind: Kind,
        outcome_kind: Kind,
    ) -> Result<Self> {
        let n = y.len();
        for (what, rows) in [
            ("x_low", x_low.rows()),
            ("x_high", x_high.rows()),
            ("t", t.rows()),
        ] {
            if rows != n {
                return Err(Error::Parameter(format!(
                    "{what} has {rows} rows but y has {n}"
                )));
            }
        }
        if t.cols() == 0 {
            return Err(Error::Parameter(
                "a dataset needs at least one treatment".into(),
            ));
        }
        if tau_true.len() != t.cols() {
            return Err(Error::Parameter(format!(
                "tau_true has {} entries for {} treatments",
                tau_true.len(),
                t.cols()
            )));
        }
        if !tau_true.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("tau_true must be finite".into()));
        }
        if treatment_kind == Kind::Binary && t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Parameter("binary treatments must be 0 or 1".into()));
        }
        Ok(Self {
            name: name.into(),
            x_low,
            x_high,
            t,
            y,
            tau_true,
            treatment_kind,
            outcome_kind,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_treat(&self) -> usize {
        self.t.cols()
    }

    pub fn x_low(&self) -> &Tensor {
        &self.x_low
    }

    pub fn x_high(&self) -> &Tensor {
        &self.x_high
    }

    pub fn t(&self) -> &Tensor {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn tau_true(&self) -> &[f64] {
        &self.tau_true
    }

    pub fn treatment_kind(&self) -> Kind {
        self.treatment_kind
    }

    pub fn outcome_kind(&self) -> Kind {
        self.outcome_kind
    }

    /// Treatments, low and high covariates side by side.
    pub fn design_matrix(&self) -> Tensor {
        Tensor::hstack(&[&self.t, &self.x_low, &self.x_high]).expect("row counts checked")
    }

    /// Rows picked by index, keeping the true effects.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x_low: self.x_low.select_rows(idx),
            x_high: self.x_high.select_rows(idx),
            t: self.t.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            tau_true: self.tau_true.clone(),
            treatment_kind: self.treatment_kind,
            outcome_kind: self.outcome_kind,
        }
    }
}

/// Single-treatment dataset for treatment `k`: the remaining treatment
/// columns move into `x_low`, after the existing low covariates and in their
/// original order.
pub fn single_treatment_view(ds: &Dataset, k: usize) -> Result<Dataset> {
    let kk = ds.n_treat();
    if k >= kk {
        return Err(Error::Parameter(format!(
            "treatment index {k} out of range for {kk} treatments"
        )));
    }
    let others: Vec<usize> = (0..kk).filter(|&j| j != k).collect();
    let moved = ds.t.select_cols(&others);
    Ok(Dataset {
        name: ds.name.clone(),
        x_low: Tensor::hstack(&[&ds.x_low, &moved])?,
        x_high: ds.x_high.clone(),
        t: ds.t.select_cols(&[k]),
        y: ds.y.clone(),
        tau_true: vec![ds.tau_true[k]],
        treatment_kind: ds.treatment_kind,
        outcome_kind: ds.outcome_kind,
    })
}
