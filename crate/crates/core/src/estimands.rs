//! Data model, per-pipeline effect estimators and influence-function based
//! joint covariance estimation.
//!
//! Every estimator here produces, next to the vector of effect estimates, an
//! `n x J` matrix of per-subject influence values. The joint covariance of the
//! estimates is the empirical second moment of those influence values divided
//! by `n`, so the dependence between pipelines falls out of the same
//! computation that gives each pipeline its standard error.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// One row of a long-format table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub subject: String,
    pub pipeline: String,
    pub value: f64,
    pub exposure: Option<u8>,
}

/// A complete subject x pipeline rectangle of outcome values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<String>,
    pipelines: Vec<String>,
    /// n x J, rows follow `subjects`, columns follow `pipelines`.
    values: DMatrix<f64>,
    exposure: Option<Vec<bool>>,
}

impl Dataset {
    /// Builds a dataset from a matrix of values.
    pub fn from_matrix(
        subjects: Vec<String>,
        pipelines: Vec<String>,
        values: DMatrix<f64>,
        exposure: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = subjects.len();
        let j = pipelines.len();
        if values.nrows() != n || values.ncols() != j {
            return Err(Error::invalid(format!(
                "value matrix is {}x{} but there are {n} subjects and {j} pipelines",
                values.nrows(),
                values.ncols()
            )));
        }
        if j == 0 {
            return Err(Error::invalid("at least one pipeline is required"));
        }
        if n < 2 {
            return Err(Error::invalid(format!("at least 2 subjects are required, got {n}")));
        }
        check_unique(&subjects, "subject")?;
        check_unique(&pipelines, "pipeline")?;
        if let Some((pos, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (pos % n, pos / n);
            return Err(Error::invalid(format!(
                "non-finite value for subject `{}`, pipeline `{}`",
                subjects[row], pipelines[col]
            )));
        }
        if let Some(x) = &exposure {
            if x.len() != n {
                return Err(Error::invalid("exposure length does not match subject count"));
            }
            let treated = x.iter().filter(|&&v| v).count();
            if treated == 0 || treated == n {
                return Err(Error::invalid(
                    "exposure must contain both groups (0 and 1)",
                ));
            }
        }
        Ok(Self {
            subjects,
            pipelines,
            values,
            exposure,
        })
    }

    /// Builds a dataset from long-format records. Pipelines and subjects are
    /// ordered by first appearance. Errors mention 1-based record positions.
    pub fn from_records(records: &[Record]) -> Result<Self> {
        Self::from_records_with_rows(records, |i| i + 1)
    }

    /// Like [`Dataset::from_records`], with a custom mapping from record index
    /// to the row number reported in error messages.
    pub(crate) fn from_records_with_rows(
        records: &[Record],
        row_of: impl Fn(usize) -> usize,
    ) -> Result<Self> {
        let mut subjects: Vec<String> = Vec::new();
        let mut subject_idx: HashMap<&str, usize> = HashMap::new();
        let mut pipelines: Vec<String> = Vec::new();
        let mut pipeline_idx: HashMap<&str, usize> = HashMap::new();
        for r in records {
            if !subject_idx.contains_key(r.subject.as_str()) {
                subject_idx.insert(&r.subject, subjects.len());
                subjects.push(r.subject.clone());
            }
            if !pipeline_idx.contains_key(r.pipeline.as_str()) {
                pipeline_idx.insert(&r.pipeline, pipelines.len());
                pipelines.push(r.pipeline.clone());
            }
        }
        let (n, j) = (subjects.len(), pipelines.len());
        let has_exposure = records.first().map(|r| r.exposure.is_some()).unwrap_or(false);

        let mut seen: Vec<Option<usize>> = vec![None; n * j];
        let mut values = DMatrix::<f64>::zeros(n, j);
        let mut exposure: Vec<Option<u8>> = vec![None; n];
        for (k, r) in records.iter().enumerate() {
            let (s, p) = (subject_idx[r.subject.as_str()], pipeline_idx[r.pipeline.as_str()]);
            if let Some(first) = seen[s * j + p] {
                return Err(Error::invalid(format!(
                    "duplicate entry for subject `{}`, pipeline `{}` at rows {} and {}",
                    r.subject,
                    r.pipeline,
                    row_of(first),
                    row_of(k)
                )));
            }
            seen[s * j + p] = Some(k);
            if !r.value.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite value at row {}",
                    row_of(k)
                )));
            }
            values[(s, p)] = r.value;
            match (has_exposure, r.exposure) {
                (true, Some(x)) => {
                    if x > 1 {
                        return Err(Error::invalid(format!(
                            "exposure must be 0 or 1, got {x} at row {}",
                            row_of(k)
                        )));
                    }
                    match exposure[s] {
                        Some(prev) if prev != x => {
                            return Err(Error::invalid(format!(
                                "exposure of subject `{}` changes at row {}",
                                r.subject,
                                row_of(k)
                            )))
                        }
                        _ => exposure[s] = Some(x),
                    }
                }
                (false, None) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "exposure must be given on every row or on none (row {})",
                        row_of(k)
                    )))
                }
            }
        }

        let missing: Vec<String> = seen
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(pos, _)| format!("({}, {})", subjects[pos / j], pipelines[pos % j]))
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(10).map(String::as_str).collect();
            return Err(Error::invalid(format!(
                "{} missing subject/pipeline pairs: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 10 { ", ..." } else { "" }
            )));
        }

        let exposure = has_exposure
            .then(|| exposure.into_iter().map(|x| x == Some(1)).collect());
        Self::from_matrix(subjects, pipelines, values, exposure)
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_pipelines(&self) -> usize {
        self.pipelines.len()
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn pipelines(&self) -> &[String] {
        &self.pipelines
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn exposure(&self) -> Option<&[bool]> {
        self.exposure.as_deref()
    }

    /// Long-format records, subject-major.
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.values.len());
        for (i, s) in self.subjects.iter().enumerate() {
            for (j, p) in self.pipelines.iter().enumerate() {
                out.push(Record {
                    subject: s.clone(),
                    pipeline: p.clone(),
                    value: self.values[(i, j)],
                    exposure: self.exposure.as_ref().map(|x| u8::from(x[i])),
                });
            }
        }
        out
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Per-subject influence values of each pipeline's estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    /// n x J
    pub phi: DMatrix<f64>,
    pub pipelines: Vec<String>,
    pub subjects: Vec<String>,
}

impl InfluenceMatrix {
    /// Validates shape and column centering.
    pub fn new(phi: DMatrix<f64>, pipelines: Vec<String>, subjects: Vec<String>) -> Result<Self> {
        if phi.ncols() != pipelines.len() || phi.nrows() != subjects.len() {
            return Err(Error::invalid(format!(
                "influence matrix is {}x{} but there are {} subjects and {} pipelines",
                phi.nrows(),
                phi.ncols(),
                subjects.len(),
                pipelines.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("influence matrix contains non-finite values"));
        }
        let n = phi.nrows() as f64;
        for (j, col) in phi.column_iter().enumerate() {
            let sum: f64 = col.iter().sum();
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / n.max(1.0)).sqrt();
            if sum.abs() > 1e-8 * n * rms {
                return Err(Error::invalid(format!(
                    "influence column `{}` is not centered (sum {sum:e})",
                    pipelines[j]
                )));
            }
        }
        Ok(Self {
            phi,
            pipelines,
            subjects,
        })
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }
}

/// Joint (asymptotically normal) distribution of the per-pipeline estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimates {
    pub pipelines: Vec<String>,
    pub psi_hat: DVector<f64>,
    pub se: DVector<f64>,
    /// J x J covariance of `psi_hat`.
    pub sigma: DMatrix<f64>,
    pub n: usize,
    /// `psi_hat / se`; NaN where `se == 0`.
    pub t_stats: DVector<f64>,
}

impl JointEstimates {
    /// Builds joint estimates from an externally estimated covariance, e.g. one
    /// produced by a likelihood-based fit. The covariance must be symmetric and
    /// positive semi-definite up to `1e-8` times its largest eigenvalue.
    pub fn from_covariance(
        pipelines: Vec<String>,
        psi_hat: DVector<f64>,
        sigma: DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        let j = pipelines.len();
        if psi_hat.len() != j || sigma.nrows() != j || sigma.ncols() != j {
            return Err(Error::invalid("dimension mismatch between estimates and covariance"));
        }
        if j == 0 {
            return Err(Error::invalid("at least one pipeline is required"));
        }
        if psi_hat.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite estimate or covariance entry"));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        for a in 0..j {
            for b in 0..a {
                if (sigma[(a, b)] - sigma[(b, a)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let eig = sigma.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if min < -1e-8 * max.max(0.0) {
            return Err(Error::invalid(format!(
                "covariance is not positive semi-definite (eigenvalue {min:e})"
            )));
        }
        Ok(Self::assemble(pipelines, psi_hat, sigma, n))
    }

    pub(crate) fn assemble(
        pipelines: Vec<String>,
        psi_hat: DVector<f64>,
        sigma: DMatrix<f64>,
        n: usize,
    ) -> Self {
        let se = sigma.diagonal().map(|v| v.max(0.0).sqrt());
        let t_stats = psi_hat.zip_map(&se, |p, s| if s > 0.0 { p / s } else { f64::NAN });
        Self {
            pipelines,
            psi_hat,
            se,
            sigma,
            n,
            t_stats,
        }
    }

    pub fn n_pipelines(&self) -> usize {
        self.psi_hat.len()
    }

    /// Index of the first pipeline with a zero standard error, if any.
    pub(crate) fn check_positive_se(&self) -> Result<()> {
        match self.se.iter().position(|&s| !(s > 0.0)) {
            Some(j) => Err(Error::DegeneratePipeline {
                pipeline: self.pipelines[j].clone(),
            }),
            None => Ok(()),
        }
    }

    /// Unadjusted two-sided normal p-values of each pipeline.
    pub fn unadjusted_p(&self) -> Result<Vec<f64>> {
        self.check_positive_se()?;
        Ok(self.t_stats.iter().map(|&t| normal::two_sided_p(t)).collect())
    }
}

/// One-sample estimator: mean of each pipeline minus a reference value.
pub fn estimate_one_sample(
    data: &Dataset,
    reference: f64,
) -> Result<(JointEstimates, InfluenceMatrix)> {
    if !reference.is_finite() {
        return Err(Error::invalid("reference value must be finite"));
    }
    let (psi, phi) = one_sample_parts(data.values(), reference);
    let infl = InfluenceMatrix {
        phi,
        pipelines: data.pipelines.clone(),
        subjects: data.subjects.clone(),
    };
    let joint = influence_to_joint(&infl, &psi)?;
    Ok((joint, infl))
}

pub(crate) fn one_sample_parts(values: &DMatrix<f64>, reference: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = values.nrows() as f64;
    let means = DVector::from_iterator(
        values.ncols(),
        values.column_iter().map(|c| c.sum() / n),
    );
    let mut phi = values.clone();
    for (j, mut col) in phi.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (means.add_scalar(-reference), phi)
}

/// Two-sample estimator: difference in group means (exposed minus unexposed).
///
/// The influence value of subject `i` for pipeline `j` is
/// `x_i (y_ij - m1_j) / p - (1 - x_i)(y_ij - m0_j) / (1 - p)` with `p` the
/// observed share of exposed subjects and `m1`, `m0` the group means.
pub fn estimate_two_sample(data: &Dataset) -> Result<(JointEstimates, InfluenceMatrix)> {
    let x = data
        .exposure()
        .ok_or_else(|| Error::invalid("two-sample estimation requires an exposure column"))?;
    let (psi, phi) = two_sample_parts(data.values(), x)?;
    let infl = InfluenceMatrix {
        phi,
        pipelines: data.pipelines.clone(),
        subjects: data.subjects.clone(),
    };
    let joint = influence_to_joint(&infl, &psi)?;
    Ok((joint, infl))
}

pub(crate) fn two_sample_parts(
    values: &DMatrix<f64>,
    exposure: &[bool],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = values.nrows();
    let n1 = exposure.iter().filter(|&&x| x).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid(
            "two-sample estimation requires both exposure groups to be non-empty",
        ));
    }
    let pi = n1 as f64 / n as f64;
    let j = values.ncols();
    let mut psi = DVector::zeros(j);
    let mut phi = DMatrix::zeros(n, j);
    for (c, col) in values.column_iter().enumerate() {
        let (mut s1, mut s0) = (0.0, 0.0);
        for (v, &x) in col.iter().zip(exposure) {
            if x {
                s1 += v;
            } else {
                s0 += v;
            }
        }
        let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
        psi[c] = m1 - m0;
        for (i, (v, &x)) in col.iter().zip(exposure).enumerate() {
            phi[(i, c)] = if x {
                (v - m1) / pi
            } else {
                -(v - m0) / (1.0 - pi)
            };
        }
    }
    Ok((psi, phi))
}

/// Joint covariance from influence values: `sum_i phi_i phi_i^T / n^2`.
pub fn influence_to_joint(phi: &InfluenceMatrix, psi_hat: &DVector<f64>) -> Result<JointEstimates> {
    let n = phi.n();
    if n < 2 {
        return Err(Error::invalid(format!("at least 2 subjects are required, got {n}")));
    }
    if psi_hat.len() != phi.phi.ncols() {
        return Err(Error::invalid(format!(
            "{} estimates for {} influence columns",
            psi_hat.len(),
            phi.phi.ncols()
        )));
    }
    let sigma = second_moment(&phi.phi) / (n as f64 * n as f64);
    Ok(JointEstimates::assemble(
        phi.pipelines.clone(),
        psi_hat.clone(),
        sigma,
        n,
    ))
}

/// `phi^T phi`, symmetric by construction.
fn second_moment(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let j = phi.ncols();
    let mut m = phi.tr_mul(phi);
    for a in 0..j {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

/// Correlation matrix of the estimates, entries clamped to `[-1, 1]`.
pub fn correlation_of(joint: &JointEstimates) -> Result<DMatrix<f64>> {
    joint.check_positive_se()?;
    let j = joint.n_pipelines();
    let s = &joint.sigma;
    Ok(DMatrix::from_fn(j, j, |a, b| {
        if a == b {
            1.0
        } else {
            (s[(a, b)] / (s[(a, a)] * s[(b, b)]).sqrt()).clamp(-1.0, 1.0)
        }
    }))
}

/// Difference between two pipelines' estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub estimate: f64,
    pub variance: f64,
    pub se: f64,
}

impl Contrast {
    /// Two-sided normal p-value. Undefined when the contrast has no variance.
    pub fn p_value(&self) -> Result<f64> {
        if self.se > 0.0 {
            Ok(normal::two_sided_p(self.estimate / self.se))
        } else {
            Err(Error::DegenerateContrast {
                first: String::new(),
                second: String::new(),
                variance: self.variance,
            })
        }
    }
}

/// `psi_j - psi_k` with variance `var_j + var_k - 2 cov_jk`.
///
/// Variances that cancel to (numerically) zero give `se == 0`; the p-value is
/// then reported as an error by [`contrast_p_value`].
pub fn contrast(joint: &JointEstimates, j: usize, k: usize) -> Result<Contrast> {
    let jj = joint.n_pipelines();
    if j >= jj || k >= jj {
        return Err(Error::invalid(format!("pipeline index out of range (J = {jj})")));
    }
    if j == k {
        return Err(Error::invalid("a contrast needs two distinct pipelines"));
    }
    let s = &joint.sigma;
    let scale = s[(j, j)] + s[(k, k)];
    let variance = scale - 2.0 * s[(j, k)];
    let se = if variance > 1e-12 * scale { variance.sqrt() } else { 0.0 };
    Ok(Contrast {
        estimate: joint.psi_hat[j] - joint.psi_hat[k],
        variance,
        se,
    })
}

/// Contrast together with its p-value, failing when the variance vanishes.
pub fn contrast_p_value(joint: &JointEstimates, j: usize, k: usize) -> Result<(Contrast, f64)> {
    let c = contrast(joint, j, k)?;
    match c.p_value() {
        Ok(p) => Ok((c, p)),
        Err(_) => Err(Error::DegenerateContrast {
            first: joint.pipelines[j].clone(),
            second: joint.pipelines[k].clone(),
            variance: c.variance,
        }),
    }
}
