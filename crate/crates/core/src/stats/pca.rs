//! Principal component analysis.
//!
//! Up to [`DENSE_EIGEN_MAX_COLS`] columns the covariance matrix is formed and
//! diagonalized with cyclic Jacobi rotations. Wider inputs use power
//! iteration with deflation on the implicit covariance `Xcᵀ Xc / (n − 1)`,
//! which never materializes the `cols × cols` matrix.

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const DENSE_EIGEN_MAX_COLS: usize = 512;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Fitted principal axes.
#[derive(Debug, Clone)]
pub struct Pca {
    /// `L × cols`, unit-norm orthogonal rows.
    pub components: Tensor,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn column_means(x: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (acc, v) in m.iter_mut().zip(x.row(r)) {
            *acc += v;
        }
    }
    let n = x.rows().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

pub fn center_columns(x: &Tensor) -> Tensor {
    let m = column_means(x);
    Tensor::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - m[c])
}

/// Top-`l` principal axes of the column-centered data.
///
/// Each row's largest-magnitude entry is made positive.
pub fn pca(x: &Tensor, l: usize) -> Result<Pca> {
    if x.rows() < 2 {
        return Err(Error::Parameter(format!(
            "pca needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    if l == 0 {
        return Err(Error::Parameter("pca needs at least one component".into()));
    }
    if l > x.cols() {
        return Err(Error::Rank {
            requested: l,
            rank: x.cols(),
        });
    }
    let mean = column_means(x);
    let xc = center_columns(x);
    let (vals, vecs) = if x.cols() <= DENSE_EIGEN_MAX_COLS {
        let cov = xc.matmul_tn(&xc)?.map(|v| v / (x.rows() - 1) as f64);
        let (vals, vecs) = symmetric_eigen(&cov);
        let rows: Vec<Vec<f64>> = (0..l).map(|i| vecs.col_values(i)).collect();
        (vals[..l].to_vec(), rows)
    } else {
        power_deflation(&xc, l)
    };

    let scale = vals
        .first()
        .copied()
        .unwrap_or(0.0)
        .abs()
        .max(f64::MIN_POSITIVE);
    let total: f64 = {
        // trace of the covariance, used to decide numerical rank
        let n1 = (x.rows() - 1) as f64;
        xc.sum_squares() / n1
    };
    let rank_floor = 1e-12 * total.max(scale);
    let rank = vals.iter().take_while(|&&v| v > rank_floor).count();
    if rank < l || total <= 0.0 {
        return Err(Error::Rank { requested: l, rank });
    }

    let mut comps = Tensor::zeros(l, x.cols());
    for (i, mut row) in vecs.into_iter().enumerate() {
        normalize(&mut row);
        fix_sign(&mut row);
        for (c, v) in row.into_iter().enumerate() {
            comps.set(i, c, v);
        }
    }
    Ok(Pca {
        components: comps,
        explained_variance: vals,
        mean,
    })
}

pub fn pca_components(x: &Tensor, l: usize) -> Result<Tensor> {
    Ok(pca(x, l)?.components)
}

/// Projection of the centered rows onto the first principal axis. A single
/// column is returned centered as-is.
pub fn first_pc_scores(x: &Tensor) -> Result<Vec<f64>> {
    if x.cols() == 0 {
        return Err(Error::Parameter("first_pc_scores needs a column".into()));
    }
    let xc = center_columns(x);
    if x.cols() == 1 {
        return Ok(xc.col_values(0));
    }
    let axis = pca(x, 1)?.components;
    Ok((0..xc.rows())
        .map(|r| xc.row(r).iter().zip(axis.row(0)).map(|(a, b)| a * b).sum())
        .collect())
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in decreasing order and the matching unit
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Tensor) -> (Vec<f64>, Tensor) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigen needs a square matrix");
    let mut m = a.data().to_vec();
    let mut v = Tensor::identity(n).into_data();
    let norm2: f64 = m.iter().map(|x| x * x).sum();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= 1e-30 * norm2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let vals = order.iter().map(|&i| m[i * n + i]).collect();
    let vecs = Tensor::from_fn(n, n, |r, c| v[r * n + order[c]]);
    (vals, vecs)
}

fn power_deflation(xc: &Tensor, l: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n1 = (xc.rows() - 1) as f64;
    let cov_mul = |v: &[f64]| -> Vec<f64> {
        let xv: Vec<f64> = (0..xc.rows())
            .map(|r| xc.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        let mut out = vec![0.0; xc.cols()];
        for (r, &s) in xv.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(xc.row(r)) {
                *o += s * a;
            }
        }
        out.iter_mut().for_each(|o| *o /= n1);
        out
    };
    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for b in basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    };

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(l);
    let mut vals = Vec::with_capacity(l);
    for comp in 0..l {
        // Deterministic start: the sum of |x| per column, perturbed per
        // component so the start is not orthogonal to the target.
        let mut v: Vec<f64> = (0..xc.cols())
            .map(|c| {
                let s: f64 = (0..xc.rows()).map(|r| xc.get(r, c).abs()).sum();
                s + ((c + 1) as f64 * (comp + 1) as f64 * 0.618_033_988_7).fract()
            })
            .collect();
        orthogonalize(&mut v, &basis);
        normalize(&mut v);
        for _ in 0..POWER_MAX_ITER {
            let mut w = cov_mul(&v);
            orthogonalize(&mut w, &basis);
            normalize(&mut w);
            let diff: f64 = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            v = w;
            if diff < POWER_TOL {
                break;
            }
        }
        let cv = cov_mul(&v);
        vals.push(v.iter().zip(&cv).map(|(a, b)| a * b).sum());
        basis.push(v);
    }
    (vals, basis)
}
