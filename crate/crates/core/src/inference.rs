//! Tests across pipelines and the proportion of pipelines showing an effect.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{one_sample_parts, two_sample_parts, Dataset, JointEstimates};
use crate::mvn::{maxtest_pvalue, McSettings};
use crate::normal;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// No effect in any pipeline (max-test).
    GlobalNull,
    /// At least one pipeline without effect (intersection-union test).
    AtLeastOneNull,
    /// No common effect (test of a pooled estimate).
    CommonEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub hypothesis: Hypothesis,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Max-test of the global null; the statistic is `max_j |t_j|`.
pub fn test_global_null(joint: &JointEstimates, alpha: f64, s: &McSettings) -> Result<TestResult> {
    check_alpha(alpha)?;
    let res = maxtest_pvalue(joint, s)?;
    Ok(TestResult {
        statistic: res.t_max,
        p_value: res.global_p,
        reject: res.global_p < alpha,
        alpha,
        hypothesis: Hypothesis::GlobalNull,
    })
}

/// Intersection-union test: rejects only when every unadjusted p-value is below `alpha`.
pub fn test_iut(unadjusted_p: &[f64], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    if unadjusted_p.is_empty() {
        return Err(Error::invalid("intersection-union test needs at least one p-value"));
    }
    if let Some(p) = unadjusted_p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let max = unadjusted_p.iter().cloned().fold(0.0, f64::max);
    Ok(TestResult {
        statistic: max,
        p_value: max,
        reject: max < alpha,
        alpha,
        hypothesis: Hypothesis::AtLeastOneNull,
    })
}

/// Share of pipelines whose statistic reaches the critical value (`|t_j| >= t_c`).
pub fn proportion_nonparametric(t_stats: &[f64], t_c: f64) -> f64 {
    if t_stats.is_empty() {
        return 0.0;
    }
    let hits = t_stats.iter().filter(|t| t.abs() >= t_c).count();
    hits as f64 / t_stats.len() as f64
}

/// Expected share of pipelines outside `[-t_c, t_c]` when each statistic is
/// normal with unit variance around its observed value.
pub fn proportion_parametric(t_stats: &[f64], t_c: f64) -> f64 {
    if t_stats.is_empty() {
        return 0.0;
    }
    let inside: f64 = t_stats
        .iter()
        .map(|&t| normal::cdf(t_c - t) - normal::cdf(-t_c - t))
        .sum();
    (1.0 - inside / t_stats.len() as f64).clamp(0.0, 1.0)
}

/// Delta-method standard error of [`proportion_parametric`], propagating only
/// the uncertainty of the estimates (critical value and standard errors fixed).
pub fn proportion_se_delta(joint: &JointEstimates, t_c: f64) -> Result<f64> {
    joint.check_positive_se()?;
    let j = joint.n_pipelines() as f64;
    let grad = nalgebra::DVector::from_iterator(
        joint.n_pipelines(),
        joint
            .t_stats
            .iter()
            .zip(joint.se.iter())
            .map(|(&t, &s)| (normal::pdf(t_c - t) - normal::pdf(-t_c - t)) / (j * s)),
    );
    let var = (grad.transpose() * &joint.sigma * &grad)[(0, 0)];
    Ok(var.max(0.0).sqrt())
}

/// Which per-pipeline estimator the bootstrap re-applies to each resample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    OneSample { reference: f64 },
    TwoSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub se: f64,
    /// 2.5% and 97.5% percentiles of the replicated proportions.
    pub ci: (f64, f64),
    pub replicates: usize,
    pub discarded: usize,
}

/// Nonparametric bootstrap of the parametric proportion, resampling subjects.
pub fn proportion_se_bootstrap(
    data: &Dataset,
    estimator: Estimator,
    t_c: f64,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSe> {
    if replicates < 100 {
        return Err(Error::invalid(format!(
            "at least 100 bootstrap replicates are required, got {replicates}"
        )));
    }
    if estimator == Estimator::TwoSample && data.exposure().is_none() {
        return Err(Error::invalid("two-sample bootstrap requires an exposure column"));
    }
    let values = data.values();
    let n = values.nrows();
    let draws: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut g = rng::stream(seed, &[b as u64]);
            let idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            let resampled = DMatrix::from_fn(n, values.ncols(), |i, j| values[(idx[i], j)]);
            let (psi, phi) = match estimator {
                Estimator::OneSample { reference } => one_sample_parts(&resampled, reference),
                Estimator::TwoSample => {
                    let x = data.exposure().unwrap_or_default();
                    let xs: Vec<bool> = idx.iter().map(|&i| x[i]).collect();
                    two_sample_parts(&resampled, &xs).ok()?
                }
            };
            let t: Vec<f64> = psi
                .iter()
                .zip(phi.column_iter())
                .map(|(&p, col)| {
                    let se = col.norm() / n as f64;
                    if se > 0.0 {
                        p / se
                    } else if p == 0.0 {
                        0.0
                    } else {
                        p.signum() * f64::INFINITY
                    }
                })
                .collect();
            Some(proportion_parametric(&t, t_c))
        })
        .collect();

    let mut kept: Vec<f64> = draws.into_iter().flatten().collect();
    let discarded = replicates - kept.len();
    if discarded * 10 > replicates {
        return Err(Error::BootstrapDiscards {
            discarded,
            requested: replicates,
        });
    }
    // shift by the first draw so identical replicates give exactly zero
    let m = kept.len() as f64;
    let shift = kept[0];
    let mean = kept.iter().map(|v| v - shift).sum::<f64>() / m;
    let se = (kept.iter().map(|v| (v - shift - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    kept.sort_by(f64::total_cmp);
    Ok(BootstrapSe {
        se,
        ci: (percentile(&kept, 0.025), percentile(&kept, 0.975)),
        replicates: kept.len(),
        discarded,
    })
}

/// Linear interpolation between order statistics; `sorted` must be ascending.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionResult {
    pub eta_nonparametric: f64,
    pub eta_parametric: f64,
    pub se_delta: f64,
    pub se_bootstrap: Option<f64>,
    pub ci_bootstrap: Option<(f64, f64)>,
    pub t_c: f64,
}

/// Both proportion estimators with the delta-method standard error.
pub fn proportion(joint: &JointEstimates, t_c: f64) -> Result<ProportionResult> {
    if !(t_c > 0.0) {
        return Err(Error::invalid(format!("critical value must be positive, got {t_c}")));
    }
    let t: Vec<f64> = joint.t_stats.iter().cloned().collect();
    Ok(ProportionResult {
        eta_nonparametric: proportion_nonparametric(&t, t_c),
        eta_parametric: proportion_parametric(&t, t_c),
        se_delta: proportion_se_delta(joint, t_c)?,
        se_bootstrap: None,
        ci_bootstrap: None,
        t_c,
    })
}
