//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the library's numerical routines.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Standard normal CDF by composite Simpson integration of the density,
/// absolute error around 1e-13.
pub fn phi(x: f64) -> f64 {
    let a = x.abs().min(12.0);
    let m = 4000;
    let h = a / m as f64;
    let f = |u: f64| (-0.5 * u * u).exp();
    let mut s = f(0.0) + f(a);
    for k in 1..m {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half = s * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    if x >= 0.0 { 0.5 + half } else { 0.5 - half }
}

/// `P(lo < X < hi)` for a standard bivariate normal with correlation `rho`,
/// by tensor-grid Simpson integration of the density.
pub fn bivariate_rect(rho: f64, lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let m = 600;
    let hx = (hi[0] - lo[0]) / m as f64;
    let hy = (hi[1] - lo[1]) / m as f64;
    let det = 1.0 - rho * rho;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let w = |k: usize| if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
    let mut s = 0.0;
    for a in 0..=m {
        let x = lo[0] + a as f64 * hx;
        for b in 0..=m {
            let y = lo[1] + b as f64 * hy;
            let q = (x * x - 2.0 * rho * x * y + y * y) / det;
            s += w(a) * w(b) * (-0.5 * q).exp();
        }
    }
    s * norm * hx * hy / 9.0
}

/// Plain Cholesky `L L^T = a` for a symmetric positive definite matrix.
pub fn cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        assert!(d > 0.0, "matrix is not positive definite");
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
    }
    l
}

/// Solves `a x = b` through [`cholesky`] and two triangular sweeps.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let l = cholesky(a);
    let n = b.len();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    x
}

/// GLS weights `S^-1 1 / (1^T S^-1 1)` by direct solve.
pub fn gls_oracle(sigma: &DMatrix<f64>) -> DVector<f64> {
    let x = spd_solve(sigma, &DVector::from_element(sigma.nrows(), 1.0));
    let total = x.sum();
    x / total
}

/// Random SPD matrix `A A^T + d I` with a spread of scales.
pub fn random_spd(j: usize, g: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(j, j, |_, _| g.random_range(-1.0..1.0));
    let scale = DMatrix::from_diagonal(&DVector::from_fn(j, |_, _| 10f64.powf(g.random_range(-1.0..1.0))));
    let core = &a * a.transpose() + DMatrix::identity(j, j) * 0.1;
    &scale * core * &scale
}

/// Random correlation matrix from normalised random factor loadings.
pub fn random_correlation(j: usize, g: &mut impl Rng) -> DMatrix<f64> {
    let k = g.random_range(1..=j);
    let a = DMatrix::from_fn(j, k, |_, _| g.random_range(-1.0..1.0));
    let c: DMatrix<f64> = &a * a.transpose() + DMatrix::from_diagonal(&DVector::from_fn(j, |_, _| g.random_range(0.05..1.0)));
    let d = c.diagonal().map(|v: f64| 1.0 / v.sqrt());
    DMatrix::from_fn(j, j, |r, s| if r == s { 1.0 } else { c[(r, s)] * d[r] * d[s] })
}

/// Standard normal quantile by bisection on [`phi`].
pub fn quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-12.0, 12.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p { lo = mid } else { hi = mid }
    }
    0.5 * (lo + hi)
}
