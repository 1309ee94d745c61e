use super::rng::SeededRng;
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Tensor,
    /// Within-cluster sum of squares after each centroid update.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm with k-means++ seeding. Labels are in `0..k` and every
/// cluster is non-empty.
pub fn kmeans(x: &Tensor, k: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    Ok(kmeans_fit(x, k, rng)?.labels)
}

pub fn kmeans_fit(x: &Tensor, k: usize, rng: &mut SeededRng) -> Result<KMeansFit> {
    if k == 0 || x.rows() < k {
        return Err(Error::Parameter(format!(
            "kmeans needs 1 <= k <= rows, got k={k} with {} rows",
            x.rows()
        )));
    }
    let mut centroids = plus_plus(x, k, rng);
    let mut labels = assign(x, &mut centroids, k);
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        centroids = means(x, &labels, k);
        inertia.push(within_ss(x, &labels, &centroids));
        let next = assign(x, &mut centroids, k);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KMeansFit {
        labels,
        centroids,
        inertia,
        iterations,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(x: &Tensor, k: usize, rng: &mut SeededRng) -> Tensor {
    let n = x.rows();
    let mut chosen = vec![rng.index(n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), x.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.unit() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.index(n)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

/// Nearest-centroid labels (ties to the lower index). Empty clusters take
/// the point farthest from its centroid among clusters with more than one
/// member, and the centroid moves onto that point.
fn assign(x: &Tensor, centroids: &mut Tensor, k: usize) -> Vec<usize> {
    let n = x.rows();
    let mut labels = vec![0; n];
    let mut dist = vec![0.0; n];
    for i in 0..n {
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(x.row(i), centroids.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        labels[i] = best.0;
        dist[i] = best.1;
    }
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..n {
            if counts[labels[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        dist[i] = 0.0;
        for c in 0..x.cols() {
            centroids.set(empty, c, x.get(i, c));
        }
    }
    labels
}

fn means(x: &Tensor, labels: &[usize], k: usize) -> Tensor {
    let mut sums = Tensor::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for c in 0..x.cols() {
            sums.set(l, c, sums.get(l, c) + x.get(i, c));
        }
    }
    for (l, &cnt) in counts.iter().enumerate() {
        for c in 0..x.cols() {
            sums.set(l, c, sums.get(l, c) / cnt.max(1) as f64);
        }
    }
    sums
}

pub fn within_ss(x: &Tensor, labels: &[usize], centroids: &Tensor) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(x.row(i), centroids.row(l)))
        .sum()
}
