//! Ordinary least squares covariate adjustment.

use crate::datagen::Dataset;
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Added to the diagonal of `XᵀX` when the design is numerically singular.
pub const RIDGE_JITTER: f64 = 1e-8;
/// Pivots below this fraction of the largest pivot count as rank loss.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first, then one coefficient per column of `X`.
    pub coefficients: Vec<f64>,
    /// Residual standard deviation with divisor `n − p` (0 when `n == p`).
    pub residual_sd: f64,
    /// Standard error of each coefficient.
    pub std_errors: Vec<f64>,
    /// True when the ridge fallback was used.
    pub regularized: bool,
}

impl OlsFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    /// `[1, X] β` for new rows.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.cols() + 1 != self.coefficients.len() {
            return Err(Error::dim(
                "ols predict",
                (x.rows(), self.coefficients.len() - 1),
                x.shape(),
            ));
        }
        Ok((0..x.rows())
            .map(|r| {
                self.coefficients[0]
                    + x.row(r)
                        .iter()
                        .zip(&self.coefficients[1..])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect())
    }
}

/// Least-squares fit of `y` on `[1, X]` by Householder QR, falling back to
/// ridge-jittered normal equations when the design is rank deficient.
pub fn ols_fit(x: &Tensor, y: &[f64]) -> Result<OlsFit> {
    let n = x.rows();
    let p = x.cols() + 1;
    if y.len() != n {
        return Err(Error::dim("ols_fit", (n, 1), (y.len(), 1)));
    }
    if n < p + 1 {
        return Err(Error::Underdetermined {
            rows: n,
            cols: x.cols(),
        });
    }
    // Column-major copy of the design with the intercept in front.
    let mut a = vec![0.0; n * p];
    a[..n].fill(1.0);
    for r in 0..n {
        for (c, &v) in x.row(r).iter().enumerate() {
            a[(c + 1) * n + r] = v;
        }
    }

    let (beta, inv_diag, regularized) = match qr_solve(&mut a.clone(), n, p, y) {
        Some((b, d)) => (b, d, false),
        None => {
            let (b, d) = ridge_solve(&a, n, p, y)?;
            (b, d, true)
        }
    };

    let mut rss = 0.0;
    for r in 0..n {
        let mut fit = 0.0;
        for c in 0..p {
            fit += a[c * n + r] * beta[c];
        }
        rss += (y[r] - fit).powi(2);
    }
    let dof = n - p;
    let residual_sd = if dof == 0 {
        0.0
    } else {
        (rss / dof as f64).sqrt()
    };
    let std_errors = inv_diag
        .iter()
        .map(|d| residual_sd * d.max(0.0).sqrt())
        .collect();
    Ok(OlsFit {
        coefficients: beta,
        residual_sd,
        std_errors,
        regularized,
    })
}

/// Householder QR on a column-major `n × p` matrix. Returns the solution and
/// `diag((XᵀX)⁻¹)`, or `None` if a pivot collapses.
fn qr_solve(a: &mut [f64], n: usize, p: usize, y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut qty = y.to_vec();
    let mut diag = vec![0.0; p];
    let scale = (0..p)
        .map(|c| {
            a[c * n..(c + 1) * n]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0f64, f64::max);
    for j in 0..p {
        let col = &a[j * n + j..(j + 1) * n];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * scale {
            return None;
        }
        let alpha = if col[0] > 0.0 { -norm } else { norm };
        // v = x − alpha e1, stored in place below the diagonal.
        let mut v: Vec<f64> = col.to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let apply = |target: &mut [f64]| {
            let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in target.iter_mut().zip(&v) {
                *t -= f * vi;
            }
        };
        for c in j + 1..p {
            apply(&mut a[c * n + j..(c + 1) * n]);
        }
        apply(&mut qty[j..]);
        a[j * n + j] = alpha;
        diag[j] = alpha;
    }
    if diag.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min)
        <= RANK_TOL * diag.iter().map(|d| d.abs()).fold(0.0, f64::max)
    {
        return None;
    }
    let r = |i: usize, j: usize| a[j * n + i];
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for j in i + 1..p {
            s -= r(i, j) * beta[j];
        }
        beta[i] = s / r(i, i);
    }
    // diag((RᵀR)⁻¹) = squared row norms of R⁻¹.
    let mut rinv = vec![0.0; p * p];
    for col in 0..p {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for j in i + 1..=col {
                s -= r(i, j) * rinv[j * p + col];
            }
            rinv[i * p + col] = s / r(i, i);
        }
    }
    let inv_diag = (0..p)
        .map(|i| rinv[i * p..(i + 1) * p].iter().map(|v| v * v).sum())
        .collect();
    Some((beta, inv_diag))
}

/// Solves `(XᵀX + εI) β = Xᵀy` by Cholesky.
fn ridge_solve(a: &[f64], n: usize, p: usize, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..p {
        let ci = &a[i * n..(i + 1) * n];
        rhs[i] = ci.iter().zip(y).map(|(u, v)| u * v).sum();
        for j in 0..=i {
            let cj = &a[j * n..(j + 1) * n];
            let d: f64 = ci.iter().zip(cj).map(|(u, v)| u * v).sum();
            g[i * p + j] = d;
            g[j * p + i] = d;
        }
        g[i * p + i] += RIDGE_JITTER;
    }
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = g[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Parameter(
                        "design matrix is singular even after ridge jitter".into(),
                    ));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let forward = |b: &[f64]| {
        let mut z = vec![0.0; p];
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * p + k] * z[k];
            }
            z[i] = s / l[i * p + i];
        }
        z
    };
    let backward = |z: &[f64]| {
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            let mut s = z[i];
            for k in i + 1..p {
                s -= l[k * p + i] * x[k];
            }
            x[i] = s / l[i * p + i];
        }
        x
    };
    let beta = backward(&forward(&rhs));
    // diag(G⁻¹) = squared column norms of L⁻¹.
    let mut inv_diag = vec![0.0; p];
    let mut e = vec![0.0; p];
    for i in 0..p {
        e.fill(0.0);
        e[i] = 1.0;
        inv_diag[i] = forward(&e).iter().map(|v| v * v).sum();
    }
    Ok((beta, inv_diag))
}

/// Treatment coefficients of `y ~ 1 + t + x_low + x_high`.
pub fn ols_tau(ds: &Dataset) -> Result<Vec<f64>> {
    let fit = ols_fit(&ds.design_matrix(), ds.y())?;
    Ok(fit.slopes()[..ds.n_treat()].to_vec())
}
