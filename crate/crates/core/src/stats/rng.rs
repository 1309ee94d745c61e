use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};

use crate::error::{Error, Result};

/// Deterministic generator: ChaCha8 keyed by a 64-bit seed.
///
/// The ChaCha8 stream is defined bit-for-bit by its algorithm, so equal
/// seeds give equal sample streams on every platform. Independent
/// sub-streams for one seed are obtained with [`SeededRng::with_stream`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for `seed` on ChaCha stream `stream`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in ascending order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::Parameter(format!("cannot choose {k} of {n} items")));
        }
        let mut all: Vec<usize> = (0..n).collect();
        // partial Fisher–Yates
        for i in 0..k {
            let j = i + self.index(n - i);
            all.swap(i, j);
        }
        let mut picked = all[..k].to_vec();
        picked.sort_unstable();
        Ok(picked)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Distributions supported by [`sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Binomial with a single trial.
    Bernoulli {
        p: f64,
    },
    /// Inverse gamma with shape α and scale β (mean β/(α−1) for α > 1).
    InvGamma {
        shape: f64,
        scale: f64,
    },
}

impl Dist {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Dist::Normal { mean, sd }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Dist::Uniform { low, high }
    }

    pub fn bernoulli(p: f64) -> Self {
        Dist::Bernoulli { p }
    }

    pub fn inv_gamma(shape: f64, scale: f64) -> Self {
        Dist::InvGamma { shape, scale }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Dist::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Dist::InvGamma { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid distribution {self:?}")))
        }
    }
}

/// `n` independent draws from `dist`.
pub fn sample(rng: &mut SeededRng, dist: Dist, n: usize) -> Result<Vec<f64>> {
    dist.validate()?;
    let bad = |e: &dyn std::fmt::Display| Error::Parameter(format!("{dist:?}: {e}"));
    Ok(match dist {
        Dist::Normal { mean, sd } => {
            let d = Normal::new(mean, sd).map_err(|e| bad(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Dist::Uniform { low, high } => {
            let d = Uniform::new(low, high).map_err(|e| bad(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Dist::Bernoulli { p } => (0..n)
            .map(|_| if rng.unit() < p { 1.0 } else { 0.0 })
            .collect(),
        Dist::InvGamma { shape, scale } => {
            // 1/X with X ~ Gamma(shape, rate = scale); Marsaglia–Tsang rejection.
            let d = Gamma::new(shape, 1.0 / scale).map_err(|e| bad(&e))?;
            (0..n).map(|_| 1.0 / d.sample(rng)).collect()
        }
    })
}
