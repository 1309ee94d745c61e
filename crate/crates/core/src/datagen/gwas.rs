//! GWAS-style benchmark: binary SNP covariates with low-rank population
//! structure, a few causal SNPs as treatments, and a cluster-level
//! confounder.

use serde::{Deserialize, Serialize};

use super::{Dataset, Kind};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::stats::{kmeans, pca_components, sample, stddev, Dist, SeededRng};

/// Rows of the synthetic reference panel the population axes come from.
pub const GWAS_BASE_ROWS: usize = 200;
const POP_AXES: usize = 3;
const CLUSTERS: usize = 3;
const F_MIN: f64 = 0.01;
const F_MAX: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GwasConfig {
    pub n: usize,
    /// Total SNP columns, treatments included.
    pub n_cov: usize,
    pub n_treat: usize,
    pub v_gene: f64,
    pub v_group: f64,
    pub v_noise: f64,
    pub seed: u64,
}

impl Default for GwasConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            n_cov: 1000,
            n_treat: 5,
            v_gene: 0.4,
            v_group: 0.4,
            v_noise: 0.2,
            seed: 1,
        }
    }
}

impl GwasConfig {
    pub fn new(n: usize, n_cov: usize, n_treat: usize, seed: u64) -> Self {
        Self {
            n,
            n_cov,
            n_treat,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shares = [self.v_gene, self.v_group, self.v_noise];
        if shares.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter(
                "variance shares must be non-negative".into(),
            ));
        }
        if (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "variance shares must sum to 1, got {:?}",
                shares
            )));
        }
        if self.v_gene == 0.0 {
            return Err(Error::Parameter("v_gene must be positive".into()));
        }
        if self.n_treat == 0 || self.n_treat >= self.n_cov {
            return Err(Error::Parameter(format!(
                "need 0 < n_treat < n_cov, got n_treat={} n_cov={}",
                self.n_treat, self.n_cov
            )));
        }
        if self.n_cov < POP_AXES {
            return Err(Error::Parameter(format!(
                "n_cov must be at least {POP_AXES}"
            )));
        }
        if self.n < CLUSTERS {
            return Err(Error::Parameter(format!("n must be at least {CLUSTERS}")));
        }
        Ok(())
    }
}

/// Internal pieces of one GWAS draw, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct GwasComponents {
    /// Full SNP matrix (`n × n_cov`) before treatment columns are removed.
    pub snps: Tensor,
    /// Clipped allele frequencies.
    pub allele_freq: Tensor,
    /// Effect per SNP; nonzero exactly on `treatment_cols`.
    pub tau_full: Vec<f64>,
    pub treatment_cols: Vec<usize>,
    pub clusters: Vec<usize>,
    /// `Σ_v τ_v X_{j,v}` per sample.
    pub signal: Vec<f64>,
    /// Rescaled per-sample group intercept.
    pub group: Vec<f64>,
    /// Rescaled noise.
    pub noise: Vec<f64>,
}

pub fn gen_gwas(cfg: &GwasConfig) -> Result<Dataset> {
    Ok(gen_gwas_detailed(cfg)?.0)
}

pub fn gen_gwas_detailed(cfg: &GwasConfig) -> Result<(Dataset, GwasComponents)> {
    cfg.validate()?;
    let (n, v) = (cfg.n, cfg.n_cov);
    let mut rng = SeededRng::new(cfg.seed);

    // Population axes from a standard-normal reference panel, plus an
    // intercept row.
    let panel = Tensor::new(
        GWAS_BASE_ROWS,
        v,
        sample(&mut rng, Dist::normal(0.0, 1.0), GWAS_BASE_ROWS * v)?,
    )?;
    let axes = pca_components(&panel, POP_AXES)?;
    let base = Tensor::from_fn(POP_AXES + 1, v, |r, c| {
        if r < POP_AXES {
            axes.get(r, c)
        } else {
            1.0
        }
    });

    let draws = sample(&mut rng, Dist::uniform(0.0, 0.5), n * POP_AXES)?;
    let mix = Tensor::from_fn(n, POP_AXES + 1, |j, d| {
        if d < POP_AXES {
            0.9 * draws[j * POP_AXES + d]
        } else {
            0.05
        }
    });
    let allele_freq = mix.matmul(&base)?.map(|f| f.clamp(F_MIN, F_MAX));

    let mut snps = Tensor::zeros(n, v);
    for (x, &f) in snps.data_mut().iter_mut().zip(allele_freq.data()) {
        *x = if rng.unit() < f { 1.0 } else { 0.0 };
    }

    let treatment_cols = rng.choose_distinct(v, cfg.n_treat)?;
    let effects = sample(&mut rng, Dist::normal(0.0, 0.5), cfg.n_treat)?;
    let mut tau_full = vec![0.0; v];
    for (&c, &e) in treatment_cols.iter().zip(&effects) {
        tau_full[c] = e;
    }

    let clusters = kmeans(&snps, CLUSTERS, &mut rng)?;
    let intercepts = sample(&mut rng, Dist::normal(0.0, 1.0), CLUSTERS)?;
    let sigmas = sample(&mut rng, Dist::inv_gamma(3.0, 1.0), CLUSTERS)?;
    let standard = sample(&mut rng, Dist::normal(0.0, 1.0), n)?;

    let signal: Vec<f64> = (0..n)
        .map(|j| {
            treatment_cols
                .iter()
                .map(|&c| tau_full[c] * snps.get(j, c))
                .sum()
        })
        .collect();
    let mut group: Vec<f64> = clusters.iter().map(|&c| intercepts[c]).collect();
    let mut noise: Vec<f64> = clusters
        .iter()
        .zip(&standard)
        .map(|(&c, &z)| sigmas[c] * z)
        .collect();

    let sd_signal = stddev(&signal);
    if sd_signal == 0.0 {
        return Err(Error::Parameter(
            "treatment SNPs carry no variance at this sample size".into(),
        ));
    }
    let unit = sd_signal / cfg.v_gene.sqrt();
    rescale(&mut group, unit * cfg.v_group.sqrt())?;
    rescale(&mut noise, unit * cfg.v_noise.sqrt())?;

    let y: Vec<f64> = (0..n).map(|j| signal[j] + group[j] + noise[j]).collect();
    let covariate_cols: Vec<usize> = (0..v).filter(|c| !treatment_cols.contains(c)).collect();
    let ds = Dataset::new(
        "gwas",
        Tensor::zeros(n, 0),
        snps.select_cols(&covariate_cols),
        snps.select_cols(&treatment_cols),
        y,
        effects,
        Kind::Binary,
        Kind::Continuous,
    )?;
    Ok((
        ds,
        GwasComponents {
            snps,
            allele_freq,
            tau_full,
            treatment_cols,
            clusters,
            signal,
            group,
            noise,
        },
    ))
}

fn rescale(v: &mut [f64], target_sd: f64) -> Result<()> {
    if target_sd == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return Ok(());
    }
    let sd = stddev(v);
    if sd == 0.0 {
        return Err(Error::Parameter(
            "confounder component has zero variance; cannot rescale".into(),
        ));
    }
    let f = target_sd / sd;
    v.iter_mut().for_each(|x| *x *= f);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shares_and_sizes() {
        let mut cfg = GwasConfig::new(100, 50, 5, 1);
        cfg.v_noise = 0.3;
        assert!(matches!(gen_gwas(&cfg), Err(Error::Parameter(_))));
        assert!(gen_gwas(&GwasConfig::new(100, 5, 5, 1)).is_err());
    }

    #[test]
    fn structure_and_rescaling() {
        let cfg = GwasConfig::new(600, 60, 4, 3);
        let (ds, parts) = gen_gwas_detailed(&cfg).unwrap();
        assert_eq!(ds.x_high().shape(), (600, 56));
        assert_eq!(ds.t().shape(), (600, 4));
        assert_eq!(ds.x_low().cols(), 0);
        assert!(parts.snps.data().iter().all(|&x| x == 0.0 || x == 1.0));
        assert!(parts
            .allele_freq
            .data()
            .iter()
            .all(|&f| (F_MIN..=F_MAX).contains(&f)));
        assert_eq!(parts.tau_full.iter().filter(|&&t| t != 0.0).count(), 4);
        let s = stddev(&parts.signal);
        assert!((stddev(&parts.group) / s - 1.0).abs() < 1e-6);
        assert!((stddev(&parts.noise) / s - 0.5f64.sqrt()).abs() < 1e-6);
        for (k, &c) in parts.treatment_cols.iter().enumerate() {
            assert_eq!(ds.t().col_values(k), parts.snps.col_values(c));
            assert_eq!(ds.tau_true()[k], parts.tau_full[c]);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = GwasConfig::new(300, 40, 3, 9);
        assert_eq!(gen_gwas(&cfg).unwrap(), gen_gwas(&cfg).unwrap());
    }
}
