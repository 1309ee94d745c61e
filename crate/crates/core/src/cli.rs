//! Config schema and command dispatch for the `m3e2` binary.
//!
//! Configs are TOML with four tables. Only `[dataset]` is required:
//!
//! ```toml
//! [dataset]
//! name = "gwas"        # gwas | copula | ihdp
//! n = 2000
//! n_cov = 995
//! n_treat = 5
//!
//! [model]              # all optional
//! num_exp = 4
//! loss_treat = 1.0
//!
//! [train]              # all optional
//! epochs = 100
//!
//! [replication]        # all optional
//! n_data_seeds = 4
//! b = 20
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datagen::{
    gen_copula, gen_gwas, load_single_treatment_csv, write_dataset, CopulaConfig, Dataset,
    GwasConfig, Kind,
};
use crate::error::{Error, Result};
use crate::harness::{
    aggregate, read_results, run_settings, train, write_aggregate, write_results, Estimator,
    ModelTemplate, RunOptions, SettingsGrid, TrainConfig,
};
use crate::model::{save_checkpoint, InputDims, LossWeights, M3E2Params};
use crate::stats::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Gwas,
    Copula,
    Ihdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub name: DatasetName,
    pub n: usize,
    /// GWAS: covariate SNPs (treatments excluded). Copula: width of `u`.
    pub n_cov: usize,
    pub n_treat: usize,
    /// Seed used by `generate` and `train`.
    #[serde(default = "one")]
    pub seed: u64,
    /// IHDP-style CSV, required when `name = "ihdp"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_gene: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_group: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "four")]
    pub num_exp: usize,
    #[serde(default = "four")]
    pub units_exp: usize,
    #[serde(default = "sixty_four")]
    pub hidden1: usize,
    #[serde(default = "eight")]
    pub hidden2: usize,
    /// Falls back to the dataset's treatment kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_treatment: Option<Kind>,
    /// Falls back to the dataset's outcome kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_target: Option<Kind>,
    #[serde(default = "unit")]
    pub loss_target: f64,
    #[serde(default = "unit")]
    pub loss_da: f64,
    #[serde(default = "unit")]
    pub loss_treat: f64,
    #[serde(default = "unit")]
    pub loss_reg: f64,
    #[serde(default = "yes")]
    pub use_lvm: bool,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            num_exp: 4,
            units_exp: 4,
            hidden1: 64,
            hidden2: 8,
            type_treatment: None,
            type_target: None,
            loss_target: 1.0,
            loss_da: 1.0,
            loss_treat: 1.0,
            loss_reg: 1.0,
            use_lvm: true,
        }
    }
}

impl ModelBlock {
    pub fn template(&self) -> ModelTemplate {
        ModelTemplate {
            num_experts: self.num_exp,
            units_exp: self.units_exp,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            treatment_kind: self.type_treatment,
            outcome_kind: self.type_target,
            weights: LossWeights {
                alpha: self.loss_target,
                beta: self.loss_treat,
                gamma: self.loss_da,
                lambda: self.loss_reg,
            },
            use_lvm: self.use_lvm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationBlock {
    #[serde(default = "four_u64")]
    pub n_data_seeds: u64,
    #[serde(default = "twenty")]
    pub b: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Setting ids or letter groups; defaults to `a`–`e` (plus `f` when
    /// `ihdp_path` is set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<Vec<String>>,
    /// Shrinks sample sizes and GWAS covariate counts.
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ihdp_path: Option<PathBuf>,
    /// Write measured fit times; when false runtimes are recorded as 0.
    #[serde(default = "yes")]
    pub timing: bool,
}

impl Default for ReplicationBlock {
    fn default() -> Self {
        Self {
            n_data_seeds: 4,
            b: 20,
            output: default_output(),
            estimators: default_estimators(),
            settings: None,
            scale: 1.0,
            ihdp_path: None,
            timing: true,
        }
    }
}

fn one() -> u64 {
    1
}
fn four() -> usize {
    4
}
fn four_u64() -> u64 {
    4
}
fn eight() -> usize {
    8
}
fn sixty_four() -> usize {
    64
}
fn twenty() -> u64 {
    20
}
fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::M3e2, Estimator::Ols]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub replication: ReplicationBlock,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let extras: [(&str, bool, DatasetName); 8] = [
            ("v_gene", d.v_gene.is_some(), DatasetName::Gwas),
            ("v_group", d.v_group.is_some(), DatasetName::Gwas),
            ("v_noise", d.v_noise.is_some(), DatasetName::Gwas),
            ("sigma_t", d.sigma_t.is_some(), DatasetName::Copula),
            ("sigma_y", d.sigma_y.is_some(), DatasetName::Copula),
            ("gamma", d.gamma.is_some(), DatasetName::Copula),
            ("b", d.b.is_some(), DatasetName::Copula),
            ("tau_draws", d.tau_draws.is_some(), DatasetName::Copula),
        ];
        for (key, set, owner) in extras {
            if set && d.name != owner {
                return Err(Error::Config(format!(
                    "dataset.{key} only applies to {owner:?} datasets"
                )));
            }
        }
        match d.name {
            DatasetName::Ihdp if d.path.is_none() => {
                return Err(Error::Config("missing key `dataset.path` for ihdp".into()))
            }
            DatasetName::Gwas | DatasetName::Copula if d.path.is_some() => {
                return Err(Error::Config("dataset.path only applies to ihdp".into()))
            }
            _ => {}
        }
        self.train.validate()?;
        let r = &self.replication;
        if r.n_data_seeds == 0 || r.b == 0 {
            return Err(Error::Config(
                "replication.n_data_seeds and replication.b must be at least 1".into(),
            ));
        }
        if r.estimators.is_empty() {
            return Err(Error::Config("replication.estimators is empty".into()));
        }
        if !(r.scale > 0.0 && r.scale <= 1.0) {
            return Err(Error::Config(format!(
                "replication.scale must be in (0, 1], got {}",
                r.scale
            )));
        }
        let m = &self.model;
        for (key, v) in [
            ("loss_target", m.loss_target),
            ("loss_da", m.loss_da),
            ("loss_treat", m.loss_treat),
            ("loss_reg", m.loss_reg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("model.{key} must be >= 0, got {v}")));
            }
        }
        for (key, v) in [
            ("num_exp", m.num_exp),
            ("units_exp", m.units_exp),
            ("hidden1", m.hidden1),
            ("hidden2", m.hidden2),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{key} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Dataset described by the `[dataset]` table for one seed.
    pub fn build_dataset(&self, seed: u64) -> Result<Dataset> {
        let d = &self.dataset;
        match d.name {
            DatasetName::Gwas => gen_gwas(&self.gwas_config(seed)),
            DatasetName::Copula => gen_copula(&self.copula_config(seed)),
            DatasetName::Ihdp => load_single_treatment_csv(d.path.as_ref().expect("validated")),
        }
    }

    fn gwas_config(&self, seed: u64) -> GwasConfig {
        let d = &self.dataset;
        let base = GwasConfig::new(d.n, d.n_cov + d.n_treat, d.n_treat, seed);
        GwasConfig {
            v_gene: d.v_gene.unwrap_or(base.v_gene),
            v_group: d.v_group.unwrap_or(base.v_group),
            v_noise: d.v_noise.unwrap_or(base.v_noise),
            ..base
        }
    }

    fn copula_config(&self, seed: u64) -> CopulaConfig {
        let d = &self.dataset;
        let base = CopulaConfig::new(d.n, d.n_cov, seed);
        CopulaConfig {
            k: d.n_treat,
            sigma_t: d.sigma_t.unwrap_or(base.sigma_t),
            sigma_y: d.sigma_y.unwrap_or(base.sigma_y),
            gamma: d.gamma.unwrap_or(base.gamma),
            b: d.b.clone().unwrap_or_else(|| vec![1.0; d.n_treat]),
            tau_draws: d.tau_draws.unwrap_or(base.tau_draws),
            ..base
        }
    }

    fn generator_echo(&self, seed: u64) -> Result<serde_json::Value> {
        let d = &self.dataset;
        Ok(match d.name {
            DatasetName::Gwas => serde_json::to_value(self.gwas_config(seed))?,
            DatasetName::Copula => serde_json::to_value(self.copula_config(seed))?,
            DatasetName::Ihdp => serde_json::to_value(&d.path)?,
        })
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn config_to_string(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_config(cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, config_to_string(cfg)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "m3e2", version, about = "Multiple treatment effect estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write dataset CSVs and metadata for data seeds 1..=N.
    Generate(Flags),
    /// Train one model; write a checkpoint, loss history and estimates.
    Train(Flags),
    /// Run the replication grid and write results.csv.
    Sweep(Flags),
    /// Aggregate results.csv into aggregate.csv.
    Report(Flags),
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides replication.output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data_seeds: Option<u64>,
    #[arg(long)]
    pub reps: Option<u64>,
    /// Comma-separated setting ids or groups (overrides replication.settings).
    #[arg(long, value_delimiter = ',')]
    pub settings: Option<Vec<String>>,
    /// Overrides replication.scale.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Record runtimes as 0 so repeated sweeps produce identical files.
    #[arg(long)]
    pub no_timing: bool,
    /// Results file for `report` (defaults to <out>/results.csv).
    #[arg(long)]
    pub results: Option<PathBuf>,
}

impl Flags {
    /// Parses the config and applies flag overrides.
    pub fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = parse_config(&self.config)?;
        let r = &mut cfg.replication;
        if let Some(o) = &self.out {
            r.output = o.clone();
        }
        if let Some(n) = self.data_seeds {
            r.n_data_seeds = n;
        }
        if let Some(b) = self.reps {
            r.b = b;
        }
        if let Some(s) = &self.settings {
            r.settings = Some(s.clone());
        }
        if let Some(s) = self.scale {
            r.scale = s;
        }
        if self.no_timing {
            r.timing = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.replication.output;
    ensure_dir(out)?;
    for seed in 1..=cfg.replication.n_data_seeds {
        let ds = cfg.build_dataset(seed)?;
        let path = out.join(format!("{}_seed{seed}.csv", ds.name()));
        write_dataset(&ds, &path, seed, cfg.generator_echo(seed)?)?;
        println!(
            "wrote {} ({} rows, {} treatments)",
            path.display(),
            ds.n(),
            ds.n_treat()
        );
    }
    Ok(())
}

fn train_command(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.replication.output;
    ensure_dir(out)?;
    let ds = cfg.build_dataset(cfg.dataset.seed)?;
    let mcfg = cfg.model.template().config_for(&ds);
    let model = M3E2Params::init(
        mcfg,
        InputDims::of(&ds),
        &mut SeededRng::new(cfg.train.seed),
    )?;
    let fit = train(model, &ds, &cfg.train)?;

    let ckpt = out.join("model.json");
    save_checkpoint(&fit.model, &ckpt)?;

    let hist_path = out.join("loss_history.csv");
    let file = File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&hist_path, e);
    let k = ds.n_treat();
    let mut header = vec!["epoch", "total", "outcome"].join(",");
    for j in 0..k {
        header.push_str(&format!(",propensity{j}"));
    }
    header.push_str(",autoencoder,weight_sq,validation");
    writeln!(w, "{header}").map_err(io)?;
    for h in &fit.history {
        let props: String = h.train.propensity.iter().map(|p| format!(",{p}")).collect();
        let val = h
            .validation
            .map_or_else(|| "NA".to_string(), |v| v.to_string());
        writeln!(
            w,
            "{},{},{}{props},{},{},{val}",
            h.epoch, h.train.total, h.train.outcome, h.train.autoencoder, h.train.weight_sq
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;

    let tau_path = out.join("tau.csv");
    let tau_hat = fit.model.extract_tau();
    let mut body = String::from("k,tau_true,tau_hat\n");
    for (j, (t, h)) in ds.tau_true().iter().zip(&tau_hat).enumerate() {
        body.push_str(&format!("{j},{t},{h}\n"));
    }
    std::fs::write(&tau_path, body).map_err(|e| Error::io(&tau_path, e))?;

    let mae = crate::harness::mae(ds.tau_true(), &tau_hat)?;
    println!(
        "trained {} epochs on {} ({} rows); mae = {mae:.6}",
        cfg.train.epochs,
        ds.name(),
        ds.n()
    );
    println!(
        "wrote {}, {}, {}",
        ckpt.display(),
        hist_path.display(),
        tau_path.display()
    );
    Ok(())
}

fn sweep_grid(cfg: &ExperimentConfig) -> Result<SettingsGrid> {
    let r = &cfg.replication;
    let full = SettingsGrid::standard(r.ihdp_path.clone());
    let wanted = match &r.settings {
        Some(s) => s.clone(),
        None => {
            let mut g: Vec<String> = ["a", "b", "c", "d", "e"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            if r.ihdp_path.is_some() {
                g.push("f".into());
            }
            g
        }
    };
    full.select(&wanted)?.scaled(r.scale)
}

fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let r = &cfg.replication;
    ensure_dir(&r.output)?;
    let grid = sweep_grid(cfg)?;
    let opts = RunOptions {
        model: cfg.model.template(),
        train: cfg.train.clone(),
        timing: r.timing,
        workers: None,
    };
    let records = run_settings(&grid, &r.estimators, r.n_data_seeds, r.b, &opts)?;
    let path = r.output.join("results.csv");
    write_results(&records, &path)?;
    println!(
        "wrote {} ({} runs over {} settings)",
        path.display(),
        records.len(),
        grid.settings().len()
    );
    Ok(())
}

fn report(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<()> {
    let out = &cfg.replication.output;
    let default = out.join("results.csv");
    let path = results.unwrap_or(&default);
    let records = read_results(path)?;
    if records.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no records".into(),
        });
    }
    ensure_dir(out)?;
    let rows = aggregate(&records);
    let agg = out.join("aggregate.csv");
    write_aggregate(&rows, &agg)?;
    println!(
        "{:<12} {:<8} {:>10} {:>10} {:>6}",
        "setting", "method", "mean_mae", "ci95", "runs"
    );
    for r in &rows {
        let ci = r.ci95.map_or_else(|| "NA".into(), |c| format!("{c:.4}"));
        println!(
            "{:<12} {:<8} {:>10.4} {:>10} {:>6}",
            r.setting, r.estimator, r.mean_mae, ci, r.n_runs
        );
    }
    println!("wrote {}", agg.display());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(f) => generate(&f.load()?),
        Command::Train(f) => train_command(&f.load()?),
        Command::Sweep(f) => sweep(&f.load()?),
        Command::Report(f) => report(&f.load()?, f.results.as_deref()),
    }
}

/// Entry point of the binary: parses arguments, runs, maps errors to exit 1.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
