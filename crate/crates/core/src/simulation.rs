//! Simulation scenarios and the Monte Carlo study driver.
//!
//! Subjects are split into two equally sized groups. A latent outcome is drawn
//! as `N(beta * x, 1)` and each pipeline observes it with additive noise drawn
//! from `N(0, noise_cov)`.
//!
//! The scenario noise covariances are fitted so that the large-sample weights
//! reproduce published weight tables; see `examples/fit_scenarios.rs` for the
//! fit that produced the constants below.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{correlation_of, two_sample_parts, Dataset, JointEstimates};
use crate::inference::proportion_parametric;
use crate::mvn::{critical_value, McSettings};
use crate::pooling::{constrain_weights, gls_weights, inverse_variance_weights, pool_all, PoolMethod};
use crate::rng;

/// Scenario 1: common noise variance of all 20 pipelines.
pub const S1_NOISE_VARIANCE: f64 = 3.092_105_263_157_9;
/// Scenario 1: noise correlation inside the 15-pipeline block.
pub const S1_BLOCK_CORRELATION: f64 = 3.0 / 7.0;
/// Scenario 2: noise variances of the 6 independent pipelines.
pub const S2_NOISE_VARIANCES: [f64; 6] = [
    2.060_315_306_185_4,
    0.201_006_371_334_0,
    4.120_630_612_370_8,
    5.494_174_149_827_7,
    8.241_261_224_741_6,
    16.482_522_449_483_2,
];
/// Scenario 3: noise variance of each pipeline in the 15-pipeline block.
pub const S3_BLOCK_VARIANCE: f64 = 2.384_401_961_941_4;
/// Scenario 3: noise correlation inside the block.
pub const S3_BLOCK_CORRELATION: f64 = 0.885_935_769_656_6;
/// Scenario 3: noise variances of the 5 independent pipelines.
pub const S3_INDEPENDENT_VARIANCES: [f64; 5] = [
    0.236_728_739_144_2,
    4.793_756_967_670_0,
    6.391_675_956_893_4,
    9.587_513_935_340_0,
    19.175_027_870_680_1,
];

const BLOCK_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::S1 => "s1",
            ScenarioId::S2 => "s2",
            ScenarioId::S3 => "s3",
        }
    }

    fn code(self) -> u64 {
        match self {
            ScenarioId::S1 => 1,
            ScenarioId::S2 => 2,
            ScenarioId::S3 => 3,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(ScenarioId::S1),
            "s2" | "2" => Ok(ScenarioId::S2),
            "s3" | "3" => Ok(ScenarioId::S3),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub id: Option<ScenarioId>,
    /// J x J pipeline noise covariance.
    pub noise_cov: DMatrix<f64>,
    pub beta: f64,
    /// Share of exposed subjects.
    pub group_balance: f64,
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, noise_cov: DMatrix<f64>, beta: f64) -> Result<Self> {
        if noise_cov.nrows() != noise_cov.ncols() || noise_cov.nrows() == 0 {
            return Err(Error::invalid("noise covariance must be square and non-empty"));
        }
        psd_factor(&noise_cov)?;
        Ok(Self {
            name: name.into(),
            id: None,
            noise_cov,
            beta,
            group_balance: 0.5,
        })
    }

    pub fn n_pipelines(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

fn block_plus_independent(block_var: f64, block_corr: f64, independent: &[f64]) -> DMatrix<f64> {
    let j = BLOCK_SIZE + independent.len();
    DMatrix::from_fn(j, j, |a, b| match (a < BLOCK_SIZE, b < BLOCK_SIZE) {
        (true, true) if a == b => block_var,
        (true, true) => block_var * block_corr,
        (false, false) if a == b => independent[a - BLOCK_SIZE],
        _ => 0.0,
    })
}

/// One of the three reference scenarios, with `beta = 0`.
pub fn build_scenario(id: ScenarioId) -> ScenarioSpec {
    let noise_cov = match id {
        ScenarioId::S1 => block_plus_independent(
            S1_NOISE_VARIANCE,
            S1_BLOCK_CORRELATION,
            &[S1_NOISE_VARIANCE; 5],
        ),
        ScenarioId::S2 => DMatrix::from_diagonal(&DVector::from_column_slice(&S2_NOISE_VARIANCES)),
        ScenarioId::S3 => block_plus_independent(
            S3_BLOCK_VARIANCE,
            S3_BLOCK_CORRELATION,
            &S3_INDEPENDENT_VARIANCES,
        ),
    };
    ScenarioSpec {
        name: id.name().to_string(),
        id: Some(id),
        noise_cov,
        beta: 0.0,
        group_balance: 0.5,
    }
}

/// Lower-triangular `L` with `L L^T = m` for a positive semi-definite `m`.
/// Zero pivots produce zero columns.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = m.nrows();
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(j, j);
    for k in 0..j {
        let d = m[(k, k)] - (0..k).map(|c| l[(k, c)].powi(2)).sum::<f64>();
        if d < -1e-10 * scale {
            return Err(Error::NotPsd { row: k, pivot: d });
        }
        if d <= 1e-14 * scale {
            continue;
        }
        let root = d.sqrt();
        l[(k, k)] = root;
        for i in k + 1..j {
            let s: f64 = (0..k).map(|c| l[(i, c)] * l[(k, c)]).sum();
            l[(i, k)] = (m[(i, k)] - s) / root;
        }
    }
    Ok(l)
}

/// Values (`2n x J`, exposed subjects first) and exposure of one simulated study.
fn simulate_values<R: Rng>(
    spec: &ScenarioSpec,
    factor: &DMatrix<f64>,
    n_per_group: usize,
    rng: &mut R,
) -> (DMatrix<f64>, Vec<bool>) {
    let j = spec.n_pipelines();
    let total = 2 * n_per_group;
    let exposure: Vec<bool> = (0..total).map(|i| i < n_per_group).collect();
    let mut values = DMatrix::<f64>::zeros(total, j);
    let mut z = DVector::<f64>::zeros(j);
    for (i, &x) in exposure.iter().enumerate() {
        let latent = spec.beta * f64::from(u8::from(x)) + rng.sample::<f64, _>(StandardNormal);
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        let noise = factor * &z;
        for c in 0..j {
            values[(i, c)] = latent + noise[c];
        }
    }
    (values, exposure)
}

/// Draws one balanced two-group dataset with `n_per_group` subjects per group.
pub fn simulate_dataset<R: Rng>(spec: &ScenarioSpec, n_per_group: usize, rng: &mut R) -> Result<Dataset> {
    if n_per_group < 2 {
        return Err(Error::invalid("at least 2 subjects per group are required"));
    }
    let factor = psd_factor(&spec.noise_cov)?;
    let (values, exposure) = simulate_values(spec, &factor, n_per_group, rng);
    let subjects = (0..values.nrows()).map(|i| format!("sim{:05}", i + 1)).collect();
    let pipelines = (0..spec.n_pipelines()).map(|c| format!("pipeline{:02}", c + 1)).collect();
    Dataset::from_matrix(subjects, pipelines, values, Some(exposure))
}

/// Which covariance the large-sample weights are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightBasis {
    /// The pipeline noise covariance alone.
    Noise,
    /// The covariance of the estimates: shared latent variance plus noise.
    Estimate,
}

impl FromStr for WeightBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(WeightBasis::Noise),
            "estimate" => Ok(WeightBasis::Estimate),
            other => Err(Error::invalid(format!("unknown weight basis `{other}`"))),
        }
    }
}

/// Exact covariance implied by a scenario. For [`WeightBasis::Estimate`] this
/// is the covariance of the group-mean differences with `n_per_group`
/// subjects per group; the noise basis is scaled the same way.
pub fn scenario_covariance(spec: &ScenarioSpec, basis: WeightBasis, n_per_group: usize) -> DMatrix<f64> {
    let j = spec.n_pipelines();
    let base = match basis {
        WeightBasis::Noise => spec.noise_cov.clone(),
        WeightBasis::Estimate => DMatrix::from_element(j, j, 1.0) + &spec.noise_cov,
    };
    base * (2.0 / n_per_group as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub scenario: String,
    pub basis: WeightBasis,
    /// One row per estimator in [`PoolMethod::ALL`] order.
    pub rows: Vec<(PoolMethod, Vec<f64>)>,
}

impl WeightTable {
    pub fn weights(&self, method: PoolMethod) -> &[f64] {
        &self
            .rows
            .iter()
            .find(|(m, _)| *m == method)
            .expect("every method has a row")
            .1
    }
}

/// Weights of all four estimators for a known covariance.
pub fn weights_from_covariance(cov: &DMatrix<f64>) -> Result<Vec<(PoolMethod, Vec<f64>)>> {
    let j = cov.nrows();
    let average = vec![1.0 / j as f64; j];
    let diag = cov.diagonal();
    if diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("pool-se weights need positive variances"));
    }
    let se = inverse_variance_weights(&diag);
    let (gls, _) = gls_weights(cov, crate::pooling::DEFAULT_EPSILON)?;
    let (constrained, _) = constrain_weights(&gls);
    Ok(vec![
        (PoolMethod::Average, average),
        (PoolMethod::PoolSe, se.iter().cloned().collect()),
        (PoolMethod::Gls, gls.iter().cloned().collect()),
        (PoolMethod::ConstrainedGls, constrained.iter().cloned().collect()),
    ])
}

/// Large-sample weights of the four estimators in a scenario.
pub fn large_sample_weights(spec: &ScenarioSpec, basis: WeightBasis) -> Result<WeightTable> {
    Ok(WeightTable {
        scenario: spec.name.clone(),
        basis,
        rows: weights_from_covariance(&scenario_covariance(spec, basis, 1))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenarios: Vec<ScenarioId>,
    /// Subjects per group.
    pub n_grid: Vec<usize>,
    pub betas: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub epsilon: f64,
    /// Integration settings for the per-replicate critical value; `None`
    /// skips the proportion estimator.
    pub eta: Option<McSettings>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioId::ALL.to_vec(),
            n_grid: vec![10, 25, 50, 100, 250, 500],
            betas: vec![0.0, 0.5],
            replicates: 1000,
            seed: 1,
            alpha: 0.05,
            epsilon: crate::pooling::DEFAULT_EPSILON,
            eta: Some(McSettings {
                seed: 0,
                target_abs_error: 2e-3,
                max_samples: 1 << 16,
                batch: 128,
            }),
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("at least one replicate is required"));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::invalid("every sample size must be at least 2 per group"));
        }
        if self.scenarios.is_empty() || self.n_grid.is_empty() || self.betas.is_empty() {
            return Err(Error::invalid("scenarios, sample sizes and betas must be non-empty"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Summary of one estimator in one (scenario, n, beta) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub n: usize,
    pub beta: f64,
    pub estimator: PoolMethod,
    /// Mean estimate minus `beta`.
    pub bias: f64,
    /// Monte Carlo standard error of the bias.
    pub bias_se: Option<f64>,
    /// Empirical standard deviation; absent with fewer than two replicates.
    pub sd: Option<f64>,
    pub rejection_rate: f64,
    /// `sqrt(p (1 - p) / replicates)` for the rejection rate.
    pub mc_se: f64,
    pub eta_mean: Option<f64>,
    /// Replicates that produced an estimate.
    pub replicates: usize,
    pub failures: usize,
    /// More than 1% of the replicates failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResults {
    pub cells: Vec<CellSummary>,
    pub weights: Vec<WeightTable>,
}

impl SimResults {
    pub fn cell(&self, scenario: ScenarioId, n: usize, beta: f64, estimator: PoolMethod) -> Option<&CellSummary> {
        self.cells.iter().find(|c| {
            c.scenario == scenario.name() && c.n == n && c.beta == beta && c.estimator == estimator
        })
    }

    /// CSV with one row per cell and estimator.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out =
            String::from("scenario,n,beta,estimator,bias,sd,rejection_rate,mc_se,eta_mean\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.scenario,
                c.n,
                c.beta,
                c.estimator.name(),
                c.bias,
                opt(c.sd),
                c.rejection_rate,
                c.mc_se,
                opt(c.eta_mean)
            ));
        }
        out
    }
}

/// Outcome of one replicate: per-estimator (estimate, p-value), and eta.
struct Replicate {
    pooled: Option<Vec<(f64, f64)>>,
    eta: Option<f64>,
}

fn run_replicate(
    spec: &ScenarioSpec,
    factor: &DMatrix<f64>,
    n: usize,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Replicate {
    let (values, exposure) = simulate_values(spec, factor, n, rng);
    let Ok((psi, phi)) = two_sample_parts(&values, &exposure) else {
        return Replicate { pooled: None, eta: None };
    };
    let total = values.nrows() as f64;
    let sigma = phi.tr_mul(&phi) / (total * total);
    let pipelines = (0..spec.n_pipelines()).map(|c| c.to_string()).collect();
    let joint = JointEstimates::assemble(pipelines, psi, sigma, values.nrows());
    let pooled = pool_all(&joint, config.epsilon)
        .ok()
        .map(|all| all.iter().map(|r| (r.estimate, r.p_value)).collect());
    let eta = config.eta.as_ref().and_then(|settings| {
        let corr = correlation_of(&joint).ok()?;
        let t_c = critical_value(&corr, config.alpha, settings).ok()?;
        let t: Vec<f64> = joint.t_stats.iter().cloned().collect();
        Some(proportion_parametric(&t, t_c))
    });
    Replicate { pooled, eta }
}

fn summarize(
    scenario: &str,
    n: usize,
    beta: f64,
    alpha: f64,
    reps: &[Replicate],
) -> Vec<CellSummary> {
    let etas: Vec<f64> = reps.iter().filter_map(|r| r.eta).collect();
    let eta_mean = (!etas.is_empty()).then(|| etas.iter().sum::<f64>() / etas.len() as f64);
    PoolMethod::ALL
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let draws: Vec<(f64, f64)> = reps
                .iter()
                .filter_map(|r| r.pooled.as_ref().map(|p| p[k]))
                .filter(|(e, p)| e.is_finite() && p.is_finite())
                .collect();
            let count = draws.len();
            let failures = reps.len() - count;
            let m = count.max(1) as f64;
            let mean = draws.iter().map(|d| d.0).sum::<f64>() / m;
            let sd = (count >= 2).then(|| {
                (draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            });
            let rate = draws.iter().filter(|d| d.1 < alpha).count() as f64 / m;
            CellSummary {
                scenario: scenario.to_string(),
                n,
                beta,
                estimator: method,
                bias: if count > 0 { mean - beta } else { f64::NAN },
                bias_se: sd.map(|s| s / m.sqrt()),
                sd,
                rejection_rate: rate,
                mc_se: (rate * (1.0 - rate) / m).sqrt(),
                eta_mean,
                replicates: count,
                failures,
                flagged: failures * 100 > reps.len(),
            }
        })
        .collect()
}

/// Runs every (scenario, n, beta) cell. Each replicate draws from its own
/// stream keyed by `(seed, scenario, n, beta, replicate)`.
pub fn run_study(config: &SimConfig) -> Result<SimResults> {
    config.validate()?;
    let mut cells = Vec::new();
    let mut weights = Vec::new();
    for &id in &config.scenarios {
        let base = build_scenario(id);
        weights.push(large_sample_weights(&base, WeightBasis::Noise)?);
        let factor = psd_factor(&base.noise_cov)?;
        for &n in &config.n_grid {
            for &beta in &config.betas {
                let spec = base.clone().with_beta(beta);
                let reps: Vec<Replicate> = (0..config.replicates)
                    .into_par_iter()
                    .map(|r| {
                        let mut g = rng::stream(
                            config.seed,
                            &[id.code(), n as u64, beta.to_bits(), r as u64],
                        );
                        run_replicate(&spec, &factor, n, config, &mut g)
                    })
                    .collect();
                cells.extend(summarize(id.name(), n, beta, config.alpha, &reps));
            }
        }
    }
    Ok(SimResults { cells, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_handles_zero_and_rejects_indefinite() {
        let l = psd_factor(&DMatrix::zeros(3, 3)).unwrap();
        assert!(l.iter().all(|&v| v == 0.0));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(psd_factor(&m), Err(Error::NotPsd { .. })));
        let rank_one = DMatrix::from_element(3, 3, 2.0);
        let l = psd_factor(&rank_one).unwrap();
        assert!((&l * l.transpose() - rank_one).amax() < 1e-12);
    }

    #[test]
    fn scenario_shapes() {
        assert_eq!(build_scenario(ScenarioId::S1).n_pipelines(), 20);
        assert_eq!(build_scenario(ScenarioId::S2).n_pipelines(), 6);
        assert_eq!(build_scenario(ScenarioId::S3).n_pipelines(), 20);
        assert_eq!("S2".parse::<ScenarioId>().unwrap(), ScenarioId::S2);
        assert!("s4".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn zero_noise_gives_identical_columns() {
        let spec = ScenarioSpec::new("flat", DMatrix::zeros(3, 3), 0.5).unwrap();
        let d = simulate_dataset(&spec, 5, &mut rng::stream(3, &[])).unwrap();
        let v = d.values();
        for i in 0..v.nrows() {
            assert_eq!(v[(i, 0)], v[(i, 1)]);
            assert_eq!(v[(i, 0)], v[(i, 2)]);
        }
    }

    #[test]
    fn single_replicate_has_no_sd() {
        let cfg = SimConfig {
            scenarios: vec![ScenarioId::S2],
            n_grid: vec![10],
            betas: vec![0.0],
            replicates: 1,
            eta: None,
            ..SimConfig::default()
        };
        let res = run_study(&cfg).unwrap();
        assert_eq!(res.cells.len(), 4);
        assert!(res.cells.iter().all(|c| c.sd.is_none()));
        assert!(res.to_csv().lines().nth(1).unwrap().contains(",,"));
    }
}
