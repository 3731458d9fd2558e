//! Aggregation of effect estimates across many preprocessing pipelines.
//!
//! The crate estimates the joint distribution of per-pipeline effect
//! estimates from influence functions, tests hypotheses across pipelines,
//! pools the estimates into a global effect, and ships a simulation harness
//! to study the estimators.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimands;
pub mod inference;
pub mod mvn;
pub mod normal;
pub mod pooling;
pub mod report;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use estimands::{
    contrast, contrast_p_value, correlation_of, estimate_one_sample, estimate_two_sample,
    influence_to_joint, Contrast, Dataset, InfluenceMatrix, JointEstimates, Record,
};
pub use inference::{
    proportion, proportion_nonparametric, proportion_parametric, proportion_se_bootstrap,
    proportion_se_delta, test_global_null, test_iut, BootstrapSe, Estimator, Hypothesis,
    ProportionResult, TestResult,
};
pub use mvn::{adjusted_ci, critical_value, maxtest_pvalue, rect_prob, McSettings, MaxTestPValues, RectProb};
pub use pooling::{
    constrain_weights, gls_weights, pool_all, pool_average, pool_constrained_gls, pool_gls,
    pool_se, pooled_test, PoolMethod, PooledResult,
};
pub use simulation::{
    build_scenario, large_sample_weights, run_study, simulate_dataset, ScenarioId, ScenarioSpec,
    SimConfig, SimResults, WeightBasis, WeightTable,
};
