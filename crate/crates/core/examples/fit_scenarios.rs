//! Fits the scenario noise covariances to the published large-sample weights.
//!
//! Each scenario is a least-squares problem on log-parameters, solved with
//! Levenberg-Marquardt and a forward-difference Jacobian. The SD ratio target
//! is `SD(GLS) / SD(average)` at large n, where the estimate covariance is
//! proportional to `11' + noise`.
//!
//! Run with `cargo run --release --example fit_scenarios`.

use multiverse_core::pooling::{gls_weights, DEFAULT_EPSILON};
use nalgebra::{DMatrix, DVector};

fn block_plus_independent(var: f64, rho: f64, indep: &[f64]) -> DMatrix<f64> {
    let j = 15 + indep.len();
    DMatrix::from_fn(j, j, |a, b| match (a < 15, b < 15) {
        (true, true) if a == b => var,
        (true, true) => var * rho,
        (false, false) if a == b => indep[a - 15],
        _ => 0.0,
    })
}

fn gls(noise: &DMatrix<f64>) -> DVector<f64> {
    gls_weights(noise, DEFAULT_EPSILON).expect("full rank").0
}

fn pool_se(noise: &DMatrix<f64>) -> DVector<f64> {
    let inv = noise.diagonal().map(|v| 1.0 / v);
    let s = inv.sum();
    inv / s
}

fn sd_ratio(noise: &DMatrix<f64>) -> f64 {
    let j = noise.nrows();
    let cov = DMatrix::from_element(j, j, 1.0) + noise;
    let w = gls(noise);
    let avg = DVector::from_element(j, 1.0 / j as f64);
    let var = |v: &DVector<f64>| (v.transpose() * &cov * v)[(0, 0)];
    (var(&w) / var(&avg)).sqrt()
}

/// Minimizes `|r(p)|^2`; returns the parameters and the final residual norm.
fn levenberg_marquardt(r: &dyn Fn(&[f64]) -> Vec<f64>, start: &[f64]) -> (Vec<f64>, f64) {
    let mut p = start.to_vec();
    let mut lambda = 1e-3;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut res = r(&p);
    for _ in 0..500 {
        let (m, k) = (res.len(), p.len());
        let mut jac = DMatrix::<f64>::zeros(m, k);
        for c in 0..k {
            let h = 1e-7 * p[c].abs().max(1.0);
            let mut q = p.clone();
            q[c] += h;
            for (i, v) in r(&q).iter().enumerate() {
                jac[(i, c)] = (v - res[i]) / h;
            }
        }
        let e = DVector::from_column_slice(&res);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * e;
        loop {
            let mut a = jtj.clone();
            for c in 0..k {
                a[(c, c)] += lambda * jtj[(c, c)].max(1e-12);
            }
            let step = a.lu().solve(&(-&g)).expect("regularized system");
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
            let tr = r(&trial);
            if norm(&tr) < norm(&res) {
                p = trial;
                res = tr;
                lambda = (lambda / 3.0).max(1e-12);
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                return (p, norm(&res).sqrt());
            }
        }
        if norm(&res) < 1e-28 {
            break;
        }
    }
    let n = norm(&res).sqrt();
    (p, n)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn main() {
    // scenario 1: 15 correlated + 5 independent pipelines, one shared variance
    let s1 = |p: &[f64]| {
        let n = block_plus_independent(p[0].exp(), sigmoid(p[1]), &[p[0].exp(); 5]);
        let w = gls(&n);
        vec![w[0] - 0.02, w[19] - 0.14, sd_ratio(&n) - 0.88]
    };
    let (p, err) = levenberg_marquardt(&s1, &[0.0, 0.0]);
    println!("S1: variance {:.13}, block correlation {:.13} (residual {err:.1e})", p[0].exp(), sigmoid(p[1]));

    // scenario 2: 6 independent pipelines
    let target2 = [0.08, 0.82, 0.04, 0.03, 0.02, 0.01];
    let s2 = |p: &[f64]| {
        let v: Vec<f64> = p.iter().map(|x| x.exp()).collect();
        let n = DMatrix::from_diagonal(&DVector::from_vec(v));
        let w = pool_se(&n);
        let mut r: Vec<f64> = (0..6).map(|k| w[k] - target2[k]).collect();
        r.push(sd_ratio(&n) - 0.76);
        r
    };
    let (p, err) = levenberg_marquardt(&s2, &[0.0; 6]);
    let v: Vec<String> = p.iter().map(|x| format!("{:.13}", x.exp())).collect();
    println!("S2: variances [{}] (residual {err:.1e})", v.join(", "));

    // scenario 3: correlated block plus 5 heteroscedastic independent pipelines
    let target3 = [0.81, 0.04, 0.03, 0.02, 0.01];
    let s3 = |p: &[f64]| {
        let indep: Vec<f64> = p[2..].iter().map(|x| x.exp()).collect();
        let n = block_plus_independent(p[0].exp(), sigmoid(p[1]), &indep);
        let w = gls(&n);
        let se = pool_se(&n);
        let mut r = vec![w[0] - 0.006];
        r.extend((0..5).map(|k| w[15 + k] - target3[k]));
        r.push(se[0] - 0.038);
        r.push(sd_ratio(&n) - 0.72);
        r
    };
    let (p, err) = levenberg_marquardt(&s3, &[0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    let v: Vec<String> = p[2..].iter().map(|x| format!("{:.13}", x.exp())).collect();
    println!(
        "S3: block variance {:.13}, block correlation {:.13}, independent [{}] (residual {err:.1e})",
        p[0].exp(),
        sigmoid(p[1]),
        v.join(", ")
    );
}
