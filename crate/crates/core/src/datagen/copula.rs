//! Copula benchmark: four continuous treatments driven by one latent
//! confounder and a non-linear outcome.

use serde::{Deserialize, Serialize};

use super::{Dataset, Kind};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::stats::{first_pc_scores, sample, Dist, SeededRng};

/// Central-difference step of the effect oracle.
const ORACLE_STEP: f64 = 1e-3;
/// ChaCha stream reserved for the effect oracle.
const ORACLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaConfig {
    pub n: usize,
    /// Columns of the confounder source `u`.
    pub s: usize,
    /// Number of treatments; the outcome formula needs exactly 4.
    pub k: usize,
    pub sigma_t: f64,
    pub sigma_y: f64,
    pub gamma: f64,
    /// Loading of each treatment on the confounder.
    pub b: Vec<f64>,
    pub seed: u64,
    /// Monte-Carlo draws used for the true effects.
    pub tau_draws: usize,
}

impl Default for CopulaConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            s: 10,
            k: 4,
            sigma_t: 1.0,
            sigma_y: 0.5,
            gamma: 1.0,
            b: vec![1.0; 4],
            seed: 1,
            tau_draws: 1_000_000,
        }
    }
}

impl CopulaConfig {
    pub fn new(n: usize, s: usize, seed: u64) -> Self {
        Self {
            n,
            s,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k != 4 {
            return Err(Error::Unsupported(format!(
                "the copula outcome y3 = 3T1 - T2 + T3*1[T3>0] + 0.7*T3*1[T3<=0] - 0.06T4 - 4T1^2 \
                 is defined for exactly 4 treatments, got k={}",
                self.k
            )));
        }
        if self.b.len() != self.k {
            return Err(Error::Parameter(format!(
                "b has {} loadings for {} treatments",
                self.b.len(),
                self.k
            )));
        }
        if !(self.sigma_t > 0.0 && self.sigma_t.is_finite()) {
            return Err(Error::Parameter("sigma_t must be positive".into()));
        }
        if !(self.sigma_y >= 0.0 && self.sigma_y.is_finite()) {
            return Err(Error::Parameter("sigma_y must be non-negative".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter("gamma must be non-negative".into()));
        }
        if self.n < 2 || self.s == 0 {
            return Err(Error::Parameter("need n >= 2 and s >= 1".into()));
        }
        if self.tau_draws == 0 {
            return Err(Error::Parameter("tau_draws must be positive".into()));
        }
        Ok(())
    }
}

/// Treatment part of the outcome for one unit (`t[0]` is T₁).
pub fn copula_outcome_y3(t: &[f64]) -> f64 {
    let t3 = if t[2] > 0.0 { t[2] } else { 0.7 * t[2] };
    3.0 * t[0] - t[1] + t3 - 0.06 * t[3] - 4.0 * t[0] * t[0]
}

/// Average partial derivative `E[∂y/∂T_k]` by Monte Carlo: the confounder
/// is resampled from `c`, treatment noise is drawn fresh, and each partial is
/// a central difference of [`copula_outcome_y3`].
pub fn copula_tau_oracle(c: &[f64], cfg: &CopulaConfig, rng: &mut SeededRng) -> Result<Vec<f64>> {
    cfg.validate()?;
    let noise = Dist::normal(0.0, cfg.sigma_t);
    let mut acc = [0.0f64; 4];
    let mut t = [0.0f64; 4];
    const CHUNK: usize = 4096;
    let mut left = cfg.tau_draws;
    while left > 0 {
        let m = left.min(CHUNK);
        let z = sample(rng, noise, m * 4)?;
        for d in 0..m {
            let cj = c[rng.index(c.len())];
            for k in 0..4 {
                t[k] = cfg.b[k] * cj + z[d * 4 + k];
            }
            for k in 0..4 {
                let orig = t[k];
                t[k] = orig + ORACLE_STEP;
                let up = copula_outcome_y3(&t);
                t[k] = orig - ORACLE_STEP;
                let down = copula_outcome_y3(&t);
                t[k] = orig;
                acc[k] += (up - down) / (2.0 * ORACLE_STEP);
            }
        }
        left -= m;
    }
    Ok(acc.iter().map(|a| a / cfg.tau_draws as f64).collect())
}

pub fn gen_copula(cfg: &CopulaConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, s) = (cfg.n, cfg.s);
    let mut rng = SeededRng::new(cfg.seed);
    let u = Tensor::new(n, s, sample(&mut rng, Dist::normal(0.0, 1.0), n * s)?)?;
    let c = first_pc_scores(&u)?;

    let z = sample(&mut rng, Dist::normal(0.0, cfg.sigma_t), n * cfg.k)?;
    let t = Tensor::from_fn(n, cfg.k, |j, k| cfg.b[k] * c[j] + z[j * cfg.k + k]);

    let y1 = if cfg.sigma_y > 0.0 {
        sample(&mut rng, Dist::normal(0.0, cfg.sigma_y), n)?
    } else {
        vec![0.0; n]
    };
    let y: Vec<f64> = (0..n)
        .map(|j| y1[j] + c[j] * cfg.gamma + copula_outcome_y3(t.row(j)))
        .collect();

    let mut oracle_rng = SeededRng::with_stream(cfg.seed, ORACLE_STREAM);
    let tau = copula_tau_oracle(&c, cfg, &mut oracle_rng)?;

    Dataset::new(
        "copula",
        u,
        Tensor::zeros(n, 0),
        t,
        y,
        tau,
        Kind::Continuous,
        Kind::Continuous,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::correlation;

    fn small() -> CopulaConfig {
        CopulaConfig {
            n: 2000,
            s: 5,
            tau_draws: 20_000,
            ..CopulaConfig::default()
        }
    }

    #[test]
    fn rejects_other_treatment_counts() {
        let cfg = CopulaConfig {
            k: 3,
            b: vec![1.0; 3],
            ..small()
        };
        let err = gen_copula(&cfg).unwrap_err();
        assert!(
            matches!(err, Error::Unsupported(ref m) if m.contains("y3")),
            "{err}"
        );
    }

    #[test]
    fn no_confounding_no_noise_gives_y3() {
        let cfg = CopulaConfig {
            gamma: 0.0,
            sigma_y: 0.0,
            ..small()
        };
        let ds = gen_copula(&cfg).unwrap();
        for j in 0..ds.n() {
            assert_eq!(ds.y()[j], copula_outcome_y3(ds.t().row(j)));
        }
    }

    #[test]
    fn loadings_set_correlation_sign() {
        let cfg = CopulaConfig {
            b: vec![1.0, -1.0, 0.5, -2.0],
            ..small()
        };
        let ds = gen_copula(&cfg).unwrap();
        let c = first_pc_scores(ds.x_low()).unwrap();
        for k in 0..4 {
            let r = correlation(&ds.t().col_values(k), &c);
            assert_eq!(r.signum(), cfg.b[k].signum(), "treatment {k}: {r}");
        }
    }

    #[test]
    fn single_source_column() {
        let ds = gen_copula(&CopulaConfig { s: 1, ..small() }).unwrap();
        assert_eq!(ds.x_low().cols(), 1);
    }
}
