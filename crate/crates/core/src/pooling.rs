//! Global effect estimators: plain average, inverse-variance pooling, GLS and
//! constrained GLS.
//!
//! Every estimator is a weighted sum `w^T psi` with weights summing to one.
//! Standard errors always use the full covariance, `sqrt(w^T Sigma w)`, with
//! the weights treated as fixed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::JointEstimates;
use crate::inference::{Hypothesis, TestResult};
use crate::normal;

/// Relative eigenvalue cutoff for the spectral GLS.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Level used for the intervals stored in a [`PooledResult`].
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMethod {
    Average,
    PoolSe,
    Gls,
    ConstrainedGls,
}

impl PoolMethod {
    pub const ALL: [PoolMethod; 4] = [
        PoolMethod::Average,
        PoolMethod::PoolSe,
        PoolMethod::Gls,
        PoolMethod::ConstrainedGls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolMethod::Average => "average",
            PoolMethod::PoolSe => "pool-se",
            PoolMethod::Gls => "gls",
            PoolMethod::ConstrainedGls => "constrained-gls",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub method: PoolMethod,
    pub estimate: f64,
    pub weights: Vec<f64>,
    pub se: f64,
    /// `estimate / se`
    pub statistic: f64,
    pub p_value: f64,
    /// Unadjusted interval at [`DEFAULT_ALPHA`].
    pub ci: (f64, f64),
    pub kappa: Option<f64>,
    pub eigen_dropped: usize,
}

impl PooledResult {
    fn from_weights(
        method: PoolMethod,
        weights: DVector<f64>,
        joint: &JointEstimates,
        kappa: Option<f64>,
        eigen_dropped: usize,
    ) -> Self {
        let estimate = weights.dot(&joint.psi_hat);
        let var = (weights.transpose() * &joint.sigma * &weights)[(0, 0)];
        let se = var.max(0.0).sqrt();
        let statistic = z_statistic(estimate, se);
        let mut out = Self {
            method,
            estimate,
            weights: weights.iter().cloned().collect(),
            se,
            statistic,
            p_value: normal::two_sided_p(statistic),
            ci: (estimate, estimate),
            kappa,
            eigen_dropped,
        };
        out.ci = out.ci_at(DEFAULT_ALPHA);
        out
    }

    /// Normal interval `estimate -/+ z_{1-alpha/2} se`.
    pub fn ci_at(&self, alpha: f64) -> (f64, f64) {
        let z = normal::quantile(1.0 - alpha / 2.0);
        (self.estimate - z * self.se, self.estimate + z * self.se)
    }
}

fn z_statistic(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        estimate / se
    } else if estimate == 0.0 {
        0.0
    } else {
        estimate.signum() * f64::INFINITY
    }
}

/// Equal weights `1/J`.
pub fn pool_average(joint: &JointEstimates) -> PooledResult {
    let j = joint.n_pipelines();
    let w = DVector::from_element(j, 1.0 / j as f64);
    PooledResult::from_weights(PoolMethod::Average, w, joint, None, 0)
}

/// Inverse-variance weights, ignoring correlations.
pub fn pool_se(joint: &JointEstimates) -> Result<PooledResult> {
    joint.check_positive_se()?;
    let w = inverse_variance_weights(&joint.sigma.diagonal());
    Ok(PooledResult::from_weights(PoolMethod::PoolSe, w, joint, None, 0))
}

pub(crate) fn inverse_variance_weights(variances: &DVector<f64>) -> DVector<f64> {
    let inv = variances.map(|v| 1.0 / v);
    let total = inv.sum();
    inv / total
}

/// GLS weights `Sigma^-1 1 / (1^T Sigma^-1 1)` through the spectral
/// decomposition `Sigma = Q D Q^T`, keeping eigenpairs with
/// `lambda > epsilon * lambda_max`. Returns the weights and how many
/// eigenpairs were dropped.
pub fn gls_weights(sigma: &DMatrix<f64>, epsilon: f64) -> Result<(DVector<f64>, usize)> {
    let j = sigma.nrows();
    if sigma.ncols() != j || j == 0 {
        return Err(Error::invalid("covariance must be square and non-empty"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let eig = SymmetricEigen::new((sigma + sigma.transpose()) * 0.5);
    let lambda_max = eig.eigenvalues.max();
    if !(lambda_max > 0.0) {
        return Err(Error::RankZero { epsilon });
    }
    let cutoff = epsilon * lambda_max;
    let mut numer = DVector::<f64>::zeros(j);
    let mut denom = 0.0;
    let mut dropped = 0;
    let mut informative = false;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            dropped += 1;
            continue;
        }
        let mut q = eig.eigenvectors.column(k).into_owned();
        // sign convention: largest-magnitude entry positive
        let lead = q.iter().cloned().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            q.neg_mut();
        }
        let qbar = q.sum();
        if qbar.abs() > 1e-12 * (j as f64).sqrt() {
            informative = true;
        }
        // component weight qbar^2 / lambda, spread back onto pipelines by q / qbar
        numer.axpy(qbar / lambda, &q, 1.0);
        denom += qbar * qbar / lambda;
    }
    if !informative || !(denom > 0.0) {
        return Err(Error::UndefinedPooling);
    }
    Ok((numer / denom, dropped))
}

pub fn pool_gls(joint: &JointEstimates, epsilon: f64) -> Result<PooledResult> {
    let (w, dropped) = gls_weights(&joint.sigma, epsilon)?;
    Ok(PooledResult::from_weights(PoolMethod::Gls, w, joint, None, dropped))
}

/// Shrinks GLS weights toward `1/J` until every weight lies in `[-1, 1]`:
/// `w_c = w / (kappa + M) + (1 - 1 / (kappa + M)) / J` with `M = max |w|`.
/// Returns the constrained weights and `kappa`.
pub fn constrain_weights(w: &DVector<f64>) -> (DVector<f64>, f64) {
    let j = w.len() as f64;
    let big_m = w.amax();
    if big_m <= 1.0 {
        return (w.clone(), 1.0 - big_m);
    }
    let apply = |kappa: f64| -> DVector<f64> {
        let s = kappa + big_m;
        w.map(|v| v / s + (1.0 - 1.0 / s) / j)
    };
    let feasible = |kappa: f64| apply(kappa).amax() <= 1.0;
    if feasible(0.0) {
        return (apply(0.0), 0.0);
    }
    let (mut lo, mut hi) = (0.0, 10.0 * j * big_m);
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (apply(hi), hi)
}

pub fn pool_constrained_gls(joint: &JointEstimates, epsilon: f64) -> Result<PooledResult> {
    let (w, dropped) = gls_weights(&joint.sigma, epsilon)?;
    let (wc, kappa) = constrain_weights(&w);
    Ok(PooledResult::from_weights(
        PoolMethod::ConstrainedGls,
        wc,
        joint,
        Some(kappa),
        dropped,
    ))
}

/// All four estimators, in [`PoolMethod::ALL`] order.
pub fn pool_all(joint: &JointEstimates, epsilon: f64) -> Result<Vec<PooledResult>> {
    Ok(vec![
        pool_average(joint),
        pool_se(joint)?,
        pool_gls(joint, epsilon)?,
        pool_constrained_gls(joint, epsilon)?,
    ])
}

/// Wald test of a pooled estimate, neglecting the uncertainty of the weights.
pub fn pooled_test(pooled: &PooledResult, alpha: f64) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(TestResult {
        statistic: pooled.statistic,
        p_value: pooled.p_value,
        reject: pooled.p_value < alpha,
        alpha,
        hypothesis: Hypothesis::CommonEffect,
    })
}
