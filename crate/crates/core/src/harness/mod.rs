//! Training loop, error metric, replication sweeps and result files.

mod results;
mod sweep;

use serde::{Deserialize, Serialize};

pub use results::{
    aggregate, read_aggregate, read_results, write_aggregate, write_results, AggregateRow,
    RunRecord,
};
pub use sweep::{
    assemble_per_treatment, generate_dataset, run_replications, run_settings, worker_count,
    DataSource, Estimator, ModelTemplate, RunOptions, Setting, SettingsGrid, WORKERS_ENV,
};

use crate::datagen::Dataset;
use crate::engine::{OptimizerMode, OptimizerState};
use crate::error::{Error, Result};
use crate::model::{Batch, LossBreakdown, M3E2Params};
use crate::stats::SeededRng;

/// Share of rows held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;
const SPLIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerMode,
    /// Seed of the split and the minibatch order.
    #[serde(default = "defaults::seed")]
    pub seed: u64,
}

mod defaults {
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn batch() -> usize {
        200
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn seed() -> u64 {
        1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: defaults::lr(),
            batch: defaults::batch(),
            epochs: defaults::epochs(),
            optimizer: OptimizerMode::default(),
            seed: defaults::seed(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_step()?;
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn validate_step(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("train.batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss averages over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of each term over the epoch's minibatches.
    pub train: LossBreakdown,
    /// Total loss on the held-out rows, if any.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: M3E2Params,
    pub history: Vec<EpochLoss>,
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
}

/// Seeded 80/20 split into (train, validation) row indices.
pub fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::with_stream(seed, SPLIT_STREAM).shuffle(&mut idx);
    let n_val = (n as f64 * VALIDATION_FRACTION).floor() as usize;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Minibatch training of the composite loss on the training split.
///
/// `epochs == 0` returns the model untouched with an empty history.
pub fn train(model: M3E2Params, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate_step()?;
    let (mut train_rows, validation_rows) = split_rows(ds.n(), cfg.seed);
    if train_rows.is_empty() {
        return Err(Error::Parameter("no rows left for training".into()));
    }
    let mut model = model;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr);
    let mut order_rng = SeededRng::with_stream(cfg.seed, SHUFFLE_STREAM);
    let val_batch = (!validation_rows.is_empty()).then(|| Batch::from_rows(ds, &validation_rows));

    for epoch in 1..=cfg.epochs {
        order_rng.shuffle(&mut train_rows);
        let mut sum = LossBreakdown {
            propensity: vec![0.0; model.config().n_treat],
            ..LossBreakdown::default()
        };
        let mut batches = 0usize;
        for chunk in train_rows.chunks(cfg.batch) {
            let batch = Batch::from_rows(ds, chunk);
            let (loss, grads) = model.loss_and_grads(&batch)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: loss.total,
                });
            }
            opt.step(model.params_mut(), &grads)?;
            sum.total += loss.total;
            sum.outcome += loss.outcome;
            sum.autoencoder += loss.autoencoder;
            sum.weight_sq += loss.weight_sq;
            for (a, b) in sum.propensity.iter_mut().zip(&loss.propensity) {
                *a += b;
            }
            batches += 1;
        }
        let m = batches as f64;
        let mean = LossBreakdown {
            total: sum.total / m,
            outcome: sum.outcome / m,
            propensity: sum.propensity.iter().map(|v| v / m).collect(),
            autoencoder: sum.autoencoder / m,
            weight_sq: sum.weight_sq / m,
        };
        let validation = match &val_batch {
            Some(b) => {
                let v = model.total_loss(b)?.total;
                if !v.is_finite() {
                    return Err(Error::Divergence { epoch, loss: v });
                }
                Some(v)
            }
            None => None,
        };
        history.push(EpochLoss {
            epoch,
            train: mean,
            validation,
        });
    }
    Ok(TrainOutcome {
        model,
        history,
        train_rows,
        validation_rows,
    })
}

/// Mean absolute error over treatments.
pub fn mae(tau_true: &[f64], tau_hat: &[f64]) -> Result<f64> {
    if tau_true.len() != tau_hat.len() || tau_true.is_empty() {
        return Err(Error::dim("mae", (tau_true.len(), 1), (tau_hat.len(), 1)));
    }
    Ok(tau_true
        .iter()
        .zip(tau_hat)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / tau_true.len() as f64)
}
