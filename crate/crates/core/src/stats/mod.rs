//! Seeded sampling, PCA, k-means and descriptive statistics.

mod kmeans;
mod pca;
mod rng;

pub use kmeans::{kmeans, kmeans_fit, within_ss, KMeansFit, KMEANS_MAX_ITER};
pub use pca::{
    center_columns, column_means, first_pc_scores, pca, pca_components, symmetric_eigen, Pca,
    DENSE_EIGEN_MAX_COLS, POWER_MAX_ITER, POWER_TOL,
};
pub use rng::{sample, Dist, SeededRng};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation (divisor `n`), single pass (Welford).
pub fn stddev(v: &[f64]) -> f64 {
    variance(v).sqrt()
}

/// Population variance (divisor `n`).
pub fn variance(v: &[f64]) -> f64 {
    let mut m = 0.0;
    let mut s = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let d = x - m;
        m += d / (i + 1) as f64;
        s += d * (x - m);
    }
    if v.is_empty() {
        0.0
    } else {
        (s / v.len() as f64).max(0.0)
    }
}

/// Population covariance of two equally long vectors.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len().max(1) as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    covariance(a, b) / (stddev(a) * stddev(b))
}
