//! Multivariate normal rectangle probabilities and the max-test built on them.
//!
//! Probabilities are computed with the separation-of-variables transform on a
//! pivoted Cholesky factor of the correlation matrix, integrated with a
//! randomly shifted Richtmyer lattice. Directions whose conditional variance
//! falls below [`PIVOT_TOLERANCE`] carry no randomness; their bounds are
//! folded into the bounds of the last active variable they depend on, which
//! keeps singular (rank deficient) correlation matrices exact.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{correlation_of, JointEstimates};
use crate::normal;
use crate::rng;

/// Conditional variances below this are treated as deterministic directions.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Number of independent lattice shifts used for the error estimate.
const RANDOMIZATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub seed: u64,
    /// Stop once the standard error across randomizations is below this.
    pub target_abs_error: f64,
    /// Upper bound on lattice points (summed over randomizations) per round.
    pub max_samples: usize,
    /// Lattice points per randomization in the first round; doubled each round.
    pub batch: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            target_abs_error: 5e-4,
            max_samples: 1 << 20,
            batch: 256,
        }
    }
}

impl McSettings {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.target_abs_error > 0.0) {
            return Err(Error::invalid("target_abs_error must be positive"));
        }
        if self.max_samples < 1000 {
            return Err(Error::invalid("max_samples must be at least 1000"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectProb {
    pub p: f64,
    pub error_estimate: f64,
    pub samples_used: usize,
}

/// Bound on one active variable contributed by one original coordinate:
/// `lo <= coeffs . y[..k] + pivot * y[k] <= hi`.
#[derive(Debug, Clone)]
struct Constraint {
    coeffs: Vec<f64>,
    pivot: f64,
    lo: f64,
    hi: f64,
}

/// Separation-of-variables integrand.
#[derive(Debug, Clone)]
struct SovIntegrand {
    /// Indexed by active variable.
    constraints: Vec<Vec<Constraint>>,
}

impl SovIntegrand {
    fn build(corr: &DMatrix<f64>, lower: &[f64], upper: &[f64]) -> Self {
        let dim = corr.nrows();
        let mut cov = corr.clone();
        let mut a = lower.to_vec();
        let mut b = upper.to_vec();
        let mut chol = DMatrix::<f64>::zeros(dim, dim);
        let mut ybar = vec![0.0; dim];
        let mut rank = 0;

        for k in 0..dim {
            // choose the remaining variable with the smallest expected interval mass
            let mut best: Option<(usize, f64, f64)> = None;
            for i in k..dim {
                let cond_var = cov[(i, i)] - (0..k).map(|m| chol[(i, m)].powi(2)).sum::<f64>();
                if cond_var <= PIVOT_TOLERANCE {
                    continue;
                }
                let sd = cond_var.sqrt();
                let mean: f64 = (0..k).map(|m| chol[(i, m)] * ybar[m]).sum();
                let mass = normal::cdf((b[i] - mean) / sd) - normal::cdf((a[i] - mean) / sd);
                if best.is_none_or(|(_, m, _)| mass < m) {
                    best = Some((i, mass, sd));
                }
            }
            let Some((pick, _, sd)) = best else { break };
            if pick != k {
                cov.swap_rows(k, pick);
                cov.swap_columns(k, pick);
                chol.swap_rows(k, pick);
                a.swap(k, pick);
                b.swap(k, pick);
            }
            chol[(k, k)] = sd;
            for i in k + 1..dim {
                let s: f64 = (0..k).map(|m| chol[(i, m)] * chol[(k, m)]).sum();
                chol[(i, k)] = (cov[(i, k)] - s) / sd;
            }
            let mean: f64 = (0..k).map(|m| chol[(k, m)] * ybar[m]).sum();
            ybar[k] = truncated_mean((a[k] - mean) / sd, (b[k] - mean) / sd);
            rank = k + 1;
        }

        let mut constraints: Vec<Vec<Constraint>> = vec![Vec::new(); rank];
        for i in 0..dim {
            let last = if i < rank {
                i
            } else {
                // unit diagonal guarantees some non-zero loading
                (0..rank)
                    .rev()
                    .find(|&m| chol[(i, m)].abs() > 1e-12)
                    .unwrap_or(0)
            };
            constraints[last].push(Constraint {
                coeffs: (0..last).map(|m| chol[(i, m)]).collect(),
                pivot: chol[(i, last)],
                lo: a[i],
                hi: b[i],
            });
        }
        Self { constraints }
    }

    fn active(&self) -> usize {
        self.constraints.len()
    }

    /// Integrand at a point of `[0,1)^(active - 1)`.
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let r = self.active();
        let mut value = 1.0;
        for k in 0..r {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for c in &self.constraints[k] {
                let shift: f64 = c.coeffs.iter().zip(y.iter()).map(|(l, v)| l * v).sum();
                let (l, h) = ((c.lo - shift) / c.pivot, (c.hi - shift) / c.pivot);
                let (l, h) = if c.pivot > 0.0 { (l, h) } else { (h, l) };
                lo = lo.max(l);
                hi = hi.min(h);
            }
            if hi <= lo {
                return 0.0;
            }
            let (d, e) = (normal::cdf_fast(lo), normal::cdf_fast(hi));
            value *= e - d;
            if value <= 0.0 {
                return 0.0;
            }
            if k + 1 < r {
                let u = (d + w[k] * (e - d)).clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
                y[k] = normal::quantile_fast(u);
            }
        }
        value
    }
}

/// Mean of a standard normal truncated to `[lo, hi]`.
fn truncated_mean(lo: f64, hi: f64) -> f64 {
    let mass = normal::cdf(hi) - normal::cdf(lo);
    if mass > 1e-300 {
        (normal::pdf(lo) - normal::pdf(hi)) / mass
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo
    } else {
        hi
    }
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| !candidate.is_multiple_of(p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Checks a correlation matrix and clips slightly negative eigenvalues.
fn prepare_correlation(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = r.nrows();
    if r.ncols() != dim || dim == 0 {
        return Err(Error::invalid("correlation matrix must be square and non-empty"));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("correlation matrix has non-finite entries"));
    }
    for i in 0..dim {
        if (r[(i, i)] - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "correlation matrix diagonal entry {i} is {} (expected 1)",
                r[(i, i)]
            )));
        }
        for j in 0..i {
            if (r[(i, j)] - r[(j, i)]).abs() > 1e-10 {
                return Err(Error::invalid("correlation matrix is not symmetric"));
            }
        }
    }
    let sym = (r + r.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -1e-8 * eig.eigenvalues.max() {
        return Err(Error::NotPsd { row: 0, pivot: min });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let scale = rebuilt.diagonal().map(|d| 1.0 / d.sqrt());
    Ok(DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            1.0
        } else {
            rebuilt[(i, j)] * scale[i] * scale[j]
        }
    }))
}

/// Probability that a standard multivariate normal vector with correlation `r`
/// falls in the box `[lower, upper]`.
pub fn rect_prob(r: &DMatrix<f64>, lower: &[f64], upper: &[f64], s: &McSettings) -> Result<RectProb> {
    s.validate()?;
    let dim = r.nrows();
    if lower.len() != dim || upper.len() != dim {
        return Err(Error::invalid(format!(
            "bounds have lengths {} and {} for a {dim}-dimensional correlation",
            lower.len(),
            upper.len()
        )));
    }
    for (l, u) in lower.iter().zip(upper) {
        if l.is_nan() || u.is_nan() || !(l < u) {
            return Err(Error::invalid(format!("invalid bound pair [{l}, {u}]")));
        }
    }
    let corr = prepare_correlation(r)?;
    rect_prob_prepared(&corr, lower, upper, s)
}

/// [`rect_prob`] on a correlation already checked by `prepare_correlation`.
fn rect_prob_prepared(corr: &DMatrix<f64>, lower: &[f64], upper: &[f64], s: &McSettings) -> Result<RectProb> {
    let integrand = SovIntegrand::build(corr, lower, upper);
    let dims = integrand.active() - 1;
    if dims == 0 {
        let p = integrand.eval(&[], &mut [0.0]).clamp(0.0, 1.0);
        return Ok(RectProb {
            p,
            error_estimate: 0.0,
            samples_used: 1,
        });
    }

    let generators: Vec<f64> = first_primes(dims).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let shifts: Vec<Vec<f64>> = (0..RANDOMIZATIONS)
        .map(|q| {
            let mut g = rng::stream(s.seed, &[q as u64]);
            (0..dims).map(|_| g.random::<f64>()).collect()
        })
        .collect();

    let mut points = s.batch;
    loop {
        let means: Vec<f64> = shifts
            .par_iter()
            .map(|shift| {
                let mut w = vec![0.0; dims];
                let mut y = vec![0.0; dims + 1];
                let mut acc = 0.0;
                for i in 1..=points {
                    for ((wk, &z), &u) in w.iter_mut().zip(&generators).zip(shift) {
                        let x = (i as f64 * z + u).fract();
                        *wk = (2.0 * x - 1.0).abs();
                    }
                    acc += integrand.eval(&w, &mut y);
                }
                acc / points as f64
            })
            .collect();
        let m = means.len() as f64;
        let p = means.iter().sum::<f64>() / m;
        let var = means.iter().map(|v| (v - p).powi(2)).sum::<f64>() / (m - 1.0);
        let error = (var / m).sqrt();
        let used = points * RANDOMIZATIONS;
        if error <= s.target_abs_error || 2 * used > s.max_samples {
            return Ok(RectProb {
                p: p.clamp(0.0, 1.0),
                error_estimate: error,
                samples_used: used,
            });
        }
        points *= 2;
    }
}

/// Symmetric threshold `t_c` with `P(max_j |Z_j| <= t_c) = 1 - alpha`.
pub fn critical_value(r: &DMatrix<f64>, alpha: f64, s: &McSettings) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    s.validate()?;
    let corr = prepare_correlation(r)?;
    let dim = corr.nrows();
    let target = 1.0 - alpha;
    let mass = |t: f64| -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        let lo = vec![-t; dim];
        let hi = vec![t; dim];
        Ok(rect_prob_prepared(&corr, &lo, &hi, s)?.p)
    };

    // The single-test and Bonferroni thresholds bracket the root exactly; MC noise
    // can break that, in which case fall back to the full search interval.
    let single = normal::quantile(1.0 - alpha / 2.0);
    let bonferroni = normal::quantile(1.0 - alpha / (2.0 * dim as f64));
    let (mut lo, mut hi) = (0.0, 10.0);
    if dim > 1 {
        let (f_lo, f_hi) = (mass(single - 1e-3)?, mass(bonferroni + 1e-3)?);
        if f_lo < target && f_hi >= target {
            lo = single - 1e-3;
            hi = bonferroni + 1e-3;
        }
    }
    if lo == 0.0 {
        let top = mass(hi)?;
        if top < target {
            return Err(Error::Convergence(format!(
                "no sign change on [0, 10]: P(max |Z| <= 10) = {top} < {target}"
            )));
        }
    }
    while hi - lo >= 1e-4 {
        let mid = 0.5 * (lo + hi);
        if mass(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Max-test p-values: global, and for each pipeline adjusted for all `J` tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxTestPValues {
    pub global_p: f64,
    pub adjusted_p: Vec<f64>,
    pub t_max: f64,
}

pub fn maxtest_pvalue(joint: &JointEstimates, s: &McSettings) -> Result<MaxTestPValues> {
    let corr = correlation_of(joint)?;
    let dim = joint.n_pipelines();
    let outside = |t: f64| -> Result<f64> {
        if t <= 0.0 {
            return Ok(1.0);
        }
        let p = rect_prob(&corr, &vec![-t; dim], &vec![t; dim], s)?.p;
        Ok((1.0 - p).clamp(0.0, 1.0))
    };
    let abs_t: Vec<f64> = joint.t_stats.iter().map(|t| t.abs()).collect();
    let t_max = abs_t.iter().cloned().fold(0.0, f64::max);
    let adjusted_p = abs_t.iter().map(|&t| outside(t)).collect::<Result<Vec<_>>>()?;
    let arg_max = (0..dim).fold(0, |best, j| if abs_t[j] > abs_t[best] { j } else { best });
    let global_p = adjusted_p[arg_max];
    Ok(MaxTestPValues {
        global_p,
        adjusted_p,
        t_max,
    })
}

/// `psi_j -/+ t_c se_j` for every pipeline.
pub fn adjusted_ci(joint: &JointEstimates, t_c: f64) -> Result<Vec<(f64, f64)>> {
    if !(t_c >= 0.0) || !t_c.is_finite() {
        return Err(Error::invalid(format!("critical value must be non-negative, got {t_c}")));
    }
    Ok(joint
        .psi_hat
        .iter()
        .zip(joint.se.iter())
        .map(|(&p, &s)| (p - t_c * s, p + t_c * s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_is_exact() {
        let r = DMatrix::identity(1, 1);
        let res = rect_prob(&r, &[-1.959_964], &[1.959_964], &McSettings::default()).unwrap();
        assert!((res.p - 0.95).abs() < 1e-6);
        assert_eq!(res.error_estimate, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = McSettings::default();
        let bad_diag = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(rect_prob(&bad_diag, &[-1.0, -1.0], &[1.0, 1.0], &s).is_err());
        let r = DMatrix::identity(2, 2);
        assert!(rect_prob(&r, &[-1.0], &[1.0], &s).is_err());
        assert!(rect_prob(&r, &[1.0, -1.0], &[1.0, 1.0], &s).is_err());
        let indefinite = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(rect_prob(&indefinite, &[-1.0; 3], &[1.0; 3], &s).is_err());
    }

    #[test]
    fn perfect_correlation_collapses() {
        let r = DMatrix::from_element(2, 2, 1.0);
        let t = 1.7;
        let res = rect_prob(&r, &[-t, -t], &[t, t], &McSettings::default()).unwrap();
        let exact = normal::cdf(t) - normal::cdf(-t);
        assert!((res.p - exact).abs() < 1e-12);
    }

    #[test]
    fn perfect_negative_correlation_with_offset_bounds() {
        // Z2 = -Z1, so the box is {Z1 in [-1, 2]} and {Z1 in [-0.5, 3]}
        let r = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let res = rect_prob(&r, &[-1.0, -3.0], &[2.0, 0.5], &McSettings::default()).unwrap();
        let exact = normal::cdf(2.0) - normal::cdf(-0.5);
        assert!((res.p - exact).abs() < 1e-12, "{}", res.p);
    }

    #[test]
    fn deterministic_given_seed() {
        let r = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.3 });
        let s = McSettings::with_seed(11);
        let a = rect_prob(&r, &[-1.5; 4], &[2.0; 4], &s).unwrap();
        let b = rect_prob(&r, &[-1.5; 4], &[2.0; 4], &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn critical_value_univariate() {
        let t = critical_value(&DMatrix::identity(1, 1), 0.05, &McSettings::default()).unwrap();
        assert!((t - 1.959_964).abs() < 2e-3);
        assert!(critical_value(&DMatrix::identity(1, 1), 1.5, &McSettings::default()).is_err());
    }

    #[test]
    fn adjusted_intervals() {
        let joint = JointEstimates::from_covariance(
            vec!["a".into()],
            nalgebra::DVector::from_vec(vec![1.0]),
            DMatrix::identity(1, 1),
            10,
        )
        .unwrap();
        let ci = adjusted_ci(&joint, 1.96).unwrap();
        assert!((ci[0].0 + 0.96).abs() < 1e-12 && (ci[0].1 - 2.96).abs() < 1e-12);
        assert_eq!(adjusted_ci(&joint, 0.0).unwrap()[0], (1.0, 1.0));
    }

    #[test]
    fn primes() {
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
    }
}
