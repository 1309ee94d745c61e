use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, RunRecord, TrainConfig};
use crate::baseline::ols_tau;
use crate::datagen::{
    gen_copula, gen_gwas, load_single_treatment_csv, single_treatment_view, CopulaConfig, Dataset,
    GwasConfig, Kind,
};
use crate::error::{Error, Result};
use crate::model::{InputDims, LossWeights, M3E2Config, M3E2Params};
use crate::stats::SeededRng;

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "M3E2_WORKERS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Gwas,
    Copula,
    /// Single-treatment CSV with `t,y,mu0,mu1,x*` columns.
    Ihdp(PathBuf),
}

/// One dataset configuration of the grid.
///
/// For GWAS `n_cov` counts the covariate SNPs, so the generator draws
/// `n_cov + n_treat` columns. For Copula it is the width of the source `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub id: String,
    pub source: DataSource,
    pub n: usize,
    pub n_cov: usize,
    pub n_treat: usize,
}

impl Setting {
    pub fn gwas(id: impl Into<String>, n: usize, n_cov: usize, n_treat: usize) -> Self {
        Self {
            id: id.into(),
            source: DataSource::Gwas,
            n,
            n_cov,
            n_treat,
        }
    }

    pub fn copula(id: impl Into<String>, n: usize, s: usize) -> Self {
        Self {
            id: id.into(),
            source: DataSource::Copula,
            n,
            n_cov: s,
            n_treat: 4,
        }
    }

    pub fn ihdp(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            source: DataSource::Ihdp(path.into()),
            n: 747,
            n_cov: 24,
            n_treat: 1,
        }
    }

    pub fn dataset_name(&self) -> &'static str {
        match self.source {
            DataSource::Gwas => "gwas",
            DataSource::Copula => "copula",
            DataSource::Ihdp(_) => "ihdp",
        }
    }

    /// Letter group of the id (`"a"` for `"a_n2000"`).
    pub fn group(&self) -> &str {
        self.id.split('_').next().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SettingsGrid {
    settings: Vec<Setting>,
}

impl SettingsGrid {
    pub fn new(settings: Vec<Setting>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &settings {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate setting id `{}`", s.id)));
            }
            if s.id.is_empty() || s.id.contains([',', '"', '\n']) {
                return Err(Error::Config(format!("invalid setting id `{}`", s.id)));
            }
        }
        Ok(Self { settings })
    }

    /// Groups `a`–`e`, plus `f` when an IHDP file is given.
    pub fn standard(ihdp: Option<PathBuf>) -> Self {
        let mut s = Vec::new();
        for n in [2000, 4000, 6000] {
            s.push(Setting::gwas(format!("a_n{n}"), n, 995, 5));
        }
        for c in [100, 500, 1000] {
            s.push(Setting::gwas(format!("b_cov{c}"), 6000, c, 5));
        }
        for k in [3, 6, 9] {
            s.push(Setting::gwas(format!("c_k{k}"), 6000, 500, k));
        }
        for n in [2500, 5000, 10000] {
            s.push(Setting::copula(format!("d_n{n}"), n, 10));
        }
        for c in [5, 25, 125] {
            s.push(Setting::copula(format!("e_s{c}"), 10000, c));
        }
        if let Some(p) = ihdp {
            s.push(Setting::ihdp("f", p));
        }
        Self::new(s).expect("standard ids are unique")
    }

    pub fn settings(&self) -> &[Setting] {
        &self.settings
    }

    /// Settings whose id or letter group is listed.
    pub fn select(&self, wanted: &[String]) -> Result<Self> {
        for w in wanted {
            if !self.settings.iter().any(|s| s.id == *w || s.group() == w) {
                return Err(Error::Config(format!("unknown setting `{w}`")));
            }
        }
        Ok(Self {
            settings: self
                .settings
                .iter()
                .filter(|s| wanted.iter().any(|w| s.id == *w || s.group() == w))
                .cloned()
                .collect(),
        })
    }

    /// Shrinks sample sizes and GWAS covariate counts by `factor`. Copula
    /// source widths and file-backed settings are kept.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::Config(format!(
                "scale must be in (0, 1], got {factor}"
            )));
        }
        let shrink = |v: usize, floor: usize| ((v as f64 * factor).round() as usize).max(floor);
        let settings = self
            .settings
            .iter()
            .map(|s| match s.source {
                DataSource::Gwas => Setting {
                    n: shrink(s.n, 50),
                    n_cov: shrink(s.n_cov, 3),
                    ..s.clone()
                },
                DataSource::Copula => Setting {
                    n: shrink(s.n, 50),
                    ..s.clone()
                },
                DataSource::Ihdp(_) => s.clone(),
            })
            .collect();
        Ok(Self { settings })
    }
}

/// Builds the dataset for one setting and data seed.
pub fn generate_dataset(setting: &Setting, data_seed: u64) -> Result<Dataset> {
    match &setting.source {
        DataSource::Gwas => gen_gwas(&GwasConfig::new(
            setting.n,
            setting.n_cov + setting.n_treat,
            setting.n_treat,
            data_seed,
        )),
        DataSource::Copula => gen_copula(&CopulaConfig::new(setting.n, setting.n_cov, data_seed)),
        DataSource::Ihdp(path) => load_single_treatment_csv(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    M3e2,
    Ols,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::M3e2 => "m3e2",
            Estimator::Ols => "ols",
        }
    }

    /// Estimates all treatments jointly.
    pub fn multi_treatment(self) -> bool {
        true
    }

    /// Output does not depend on the model seed.
    pub fn deterministic(self) -> bool {
        matches!(self, Estimator::Ols)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m3e2" => Ok(Estimator::M3e2),
            "ols" => Ok(Estimator::Ols),
            other => Err(Error::Config(format!(
                "unknown estimator `{other}`; expected one of: m3e2, ols"
            ))),
        }
    }
}

/// Architecture choices that do not depend on the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub num_experts: usize,
    pub units_exp: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Overrides the dataset's treatment kind.
    pub treatment_kind: Option<Kind>,
    /// Overrides the dataset's outcome kind.
    pub outcome_kind: Option<Kind>,
    pub weights: LossWeights,
    pub use_lvm: bool,
}

impl Default for ModelTemplate {
    fn default() -> Self {
        Self {
            num_experts: 4,
            units_exp: 4,
            hidden1: 64,
            hidden2: 8,
            treatment_kind: None,
            outcome_kind: None,
            weights: LossWeights::default(),
            use_lvm: true,
        }
    }
}

impl ModelTemplate {
    pub fn config_for(&self, ds: &Dataset) -> M3E2Config {
        M3E2Config {
            num_experts: self.num_experts,
            units_exp: self.units_exp,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            n_treat: ds.n_treat(),
            treatment_kind: self.treatment_kind.unwrap_or(ds.treatment_kind()),
            outcome_kind: self.outcome_kind.unwrap_or(ds.outcome_kind()),
            weights: self.weights,
            use_lvm: self.use_lvm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub model: ModelTemplate,
    pub train: TrainConfig,
    /// Record wall-clock fit time; when off every runtime is written as 0
    /// so result files can be compared byte for byte.
    pub timing: bool,
    /// Worker-pool size; `None` reads the environment, then the core count.
    pub workers: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            model: ModelTemplate::default(),
            train: TrainConfig::default(),
            timing: true,
            workers: None,
        }
    }
}

/// Pool size from `workers`, else `M3E2_WORKERS`, else available cores.
pub fn worker_count(workers: Option<usize>) -> Result<usize> {
    if let Some(w) = workers {
        return if w == 0 {
            Err(Error::Config("worker count must be at least 1".into()))
        } else {
            Ok(w)
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `fit` on each single-treatment view and stacks the estimates.
pub fn assemble_per_treatment(
    ds: &Dataset,
    mut fit: impl FnMut(&Dataset) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    (0..ds.n_treat())
        .map(|k| {
            let view = single_treatment_view(ds, k)?;
            let tau = fit(&view)?;
            tau.first().copied().ok_or_else(|| {
                Error::Usage(format!("estimator returned no effect for treatment {k}"))
            })
        })
        .collect()
}

fn fit_joint(est: Estimator, ds: &Dataset, model_seed: u64, opts: &RunOptions) -> Result<Vec<f64>> {
    match est {
        Estimator::Ols => ols_tau(ds),
        Estimator::M3e2 => {
            let cfg = opts.model.config_for(ds);
            let model = M3E2Params::init(cfg, InputDims::of(ds), &mut SeededRng::new(model_seed))?;
            let train_cfg = TrainConfig {
                seed: model_seed,
                ..opts.train.clone()
            };
            Ok(train(model, ds, &train_cfg)?.model.extract_tau())
        }
    }
}

fn fit(
    est: Estimator,
    ds: &Dataset,
    model_seed: u64,
    opts: &RunOptions,
) -> Result<(Vec<f64>, f64)> {
    let start = Instant::now();
    let tau = if est.multi_treatment() {
        fit_joint(est, ds, model_seed, opts)?
    } else {
        assemble_per_treatment(ds, |v| fit_joint(est, v, model_seed, opts))?
    };
    let secs = if opts.timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok((tau, secs))
}

fn normalize(estimators: &[Estimator]) -> Result<Vec<Estimator>> {
    if estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    let mut e = estimators.to_vec();
    e.sort_by_key(|e| e.name());
    e.dedup();
    Ok(e)
}

fn replicate_setting(
    setting: &Setting,
    estimators: &[Estimator],
    n_data_seeds: u64,
    b: u64,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>> {
    let datasets = (1..=n_data_seeds)
        .into_par_iter()
        .map(|seed| generate_dataset(setting, seed))
        .collect::<Result<Vec<_>>>()?;

    // Deterministic estimators are fitted once per data seed and reused
    // for every repetition.
    let mut jobs = Vec::new();
    for di in 0..datasets.len() {
        for &est in estimators {
            if est.deterministic() {
                jobs.push((di, est, 1));
            } else {
                jobs.extend((1..=b).map(|r| (di, est, r)));
            }
        }
    }
    let fits = jobs
        .par_iter()
        .map(|&(di, est, r)| fit(est, &datasets[di], r, opts))
        .collect::<Result<Vec<_>>>()?;
    let lookup = |di: usize, est: Estimator, r: u64| {
        let r = if est.deterministic() { 1 } else { r };
        let pos = jobs
            .iter()
            .position(|&j| j == (di, est, r))
            .expect("job scheduled");
        &fits[pos]
    };

    let mut out = Vec::with_capacity(datasets.len() * b as usize * estimators.len());
    for (di, ds) in datasets.iter().enumerate() {
        for r in 1..=b {
            for &est in estimators {
                let (tau_hat, secs) = lookup(di, est, r);
                out.push(RunRecord::new(
                    ds.name(),
                    setting.id.clone(),
                    di as u64 + 1,
                    r,
                    est.name(),
                    ds.tau_true().to_vec(),
                    tau_hat.clone(),
                    *secs,
                )?);
            }
        }
    }
    Ok(out)
}

fn check_counts(n_data_seeds: u64, b: u64) -> Result<()> {
    if n_data_seeds == 0 {
        return Err(Error::Config("n_data_seeds must be at least 1".into()));
    }
    if b == 0 {
        return Err(Error::Config(
            "the number of repetitions must be at least 1".into(),
        ));
    }
    Ok(())
}

fn with_pool<T: Send>(opts: &RunOptions, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let workers = worker_count(opts.workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

/// Data seeds `1..=n_data_seeds` × repetitions `1..=b` × estimators for one
/// setting. Records come back ordered by (data seed, model seed, estimator).
pub fn run_replications(
    setting: &Setting,
    estimators: &[Estimator],
    n_data_seeds: u64,
    b: u64,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>> {
    check_counts(n_data_seeds, b)?;
    opts.train.validate()?;
    let estimators = normalize(estimators)?;
    with_pool(opts, || {
        replicate_setting(setting, &estimators, n_data_seeds, b, opts)
    })
}

/// [`run_replications`] over every setting of `grid`, in grid order.
pub fn run_settings(
    grid: &SettingsGrid,
    estimators: &[Estimator],
    n_data_seeds: u64,
    b: u64,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>> {
    check_counts(n_data_seeds, b)?;
    opts.train.validate()?;
    let estimators = normalize(estimators)?;
    with_pool(opts, || {
        let mut all = Vec::new();
        for s in grid.settings() {
            all.extend(replicate_setting(s, &estimators, n_data_seeds, b, opts)?);
        }
        Ok(all)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_ids() {
        let g = SettingsGrid::standard(None);
        assert_eq!(g.settings().len(), 15);
        assert_eq!(g.select(&["c".into()]).unwrap().settings().len(), 3);
        assert_eq!(
            g.select(&["b_cov500".into()]).unwrap().settings()[0].n_cov,
            500
        );
        assert!(g.select(&["z".into()]).is_err());
        assert_eq!(
            SettingsGrid::standard(Some("x.csv".into())).settings().len(),
            16
        );
        let dup = vec![Setting::copula("d", 10, 2), Setting::copula("d", 20, 2)];
        assert!(SettingsGrid::new(dup).is_err());
    }

    #[test]
    fn scaled_grid_shrinks() {
        let g = SettingsGrid::standard(None).scaled(0.1).unwrap();
        let a = &g.settings()[0];
        assert_eq!((a.n, a.n_cov, a.n_treat), (200, 100, 5));
        assert!(SettingsGrid::standard(None).scaled(0.0).is_err());
    }

    #[test]
    fn estimator_names() {
        assert_eq!("ols".parse::<Estimator>().unwrap(), Estimator::Ols);
        let err = "bart".parse::<Estimator>().unwrap_err().to_string();
        assert!(err.contains("bart"), "{err}");
    }

    #[test]
    fn record_count_and_order() {
        let s = Setting::gwas("t", 120, 20, 2);
        let opts = RunOptions {
            train: TrainConfig {
                epochs: 1,
                batch: 64,
                ..TrainConfig::default()
            },
            model: ModelTemplate {
                hidden1: 4,
                ..ModelTemplate::default()
            },
            timing: false,
            workers: Some(1),
        };
        let rs = run_replications(&s, &[Estimator::Ols, Estimator::M3e2], 2, 3, &opts).unwrap();
        assert_eq!(rs.len(), 2 * 3 * 2);
        let keys: Vec<_> = rs
            .iter()
            .map(|r| (r.data_seed, r.model_seed, r.estimator.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let ols: Vec<_> = rs
            .iter()
            .filter(|r| r.estimator == "ols" && r.data_seed == 1)
            .collect();
        assert!(ols.windows(2).all(|w| w[0].tau_hat == w[1].tau_hat));
        assert!(rs.iter().all(|r| r.runtime_s == 0.0));
    }

    #[test]
    fn zero_counts_rejected() {
        let s = Setting::copula("d", 60, 2);
        let opts = RunOptions::default();
        assert!(run_replications(&s, &[Estimator::Ols], 0, 1, &opts).is_err());
        assert!(run_replications(&s, &[Estimator::Ols], 1, 0, &opts).is_err());
        assert!(run_replications(&s, &[], 1, 1, &opts).is_err());
    }
}
