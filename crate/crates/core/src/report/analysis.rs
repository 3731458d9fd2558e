//! End-to-end analysis of one dataset and the files it produces.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cluster::reorder_pipelines;
use super::csv_io::{read_report_csv, write_report_csv, Mode, ReportRow};
use super::svg::{forest_rows, render_forest, render_heatmap};
use crate::error::{Error, Result};
use crate::estimands::{correlation_of, estimate_one_sample, estimate_two_sample, Dataset, JointEstimates};
use crate::inference::{
    proportion, proportion_se_bootstrap, test_global_null, test_iut, Estimator, ProportionResult,
    TestResult,
};
use crate::mvn::{adjusted_ci, critical_value, maxtest_pvalue, McSettings};
use crate::pooling::{pool_all, pooled_test, PooledResult, DEFAULT_EPSILON};

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSONL: &str = "report.jsonl";
pub const HEATMAP_SVG: &str = "heatmap.svg";
pub const FOREST_SVG: &str = "forest.svg";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub mode: Mode,
    /// Reference value of the one-sample estimator; also drawn on the forest plot.
    pub reference: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    /// Bootstrap replicates for the proportion; `None` skips the bootstrap.
    pub bootstrap: Option<usize>,
    pub epsilon: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TwoSample,
            reference: None,
            alpha: 0.05,
            seed: 0,
            bootstrap: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub mode: String,
    pub reference: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub bootstrap: Option<usize>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tests {
    pub global_null: TestResult,
    pub at_least_one_null: TestResult,
    /// One per pooled estimator, same order as [`AnalysisReport::pooled`].
    pub pooled: Vec<TestResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub joint: JointEstimates,
    pub correlation: DMatrix<f64>,
    pub t_c: f64,
    pub adjusted_p: Vec<f64>,
    pub adjusted_ci: Vec<(f64, f64)>,
    pub pooled: Vec<PooledResult>,
    pub tests: Tests,
    pub proportion: ProportionResult,
    /// Permutation of `0..J` from clustering the correlation matrix.
    pub pipeline_order: Vec<usize>,
    pub provenance: Provenance,
}

/// Runs every estimator and test on `data`.
pub fn analyze(data: &Dataset, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Usage(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let (joint, estimator) = match cfg.mode {
        Mode::OneSample => {
            let reference = cfg
                .reference
                .ok_or_else(|| Error::Usage("one-sample mode requires --reference".into()))?;
            (estimate_one_sample(data, reference)?.0, Estimator::OneSample { reference })
        }
        Mode::TwoSample => (estimate_two_sample(data)?.0, Estimator::TwoSample),
    };
    joint.check_positive_se()?;
    let mc = McSettings::with_seed(cfg.seed);
    let correlation = correlation_of(&joint)?;
    let t_c = critical_value(&correlation, cfg.alpha, &mc)?;
    let max = maxtest_pvalue(&joint, &mc)?;
    let global_null = test_global_null(&joint, cfg.alpha, &mc)?;
    let at_least_one_null = test_iut(&joint.unadjusted_p()?, cfg.alpha)?;

    let mut pooled = pool_all(&joint, cfg.epsilon)?;
    for p in &mut pooled {
        p.ci = p.ci_at(cfg.alpha);
    }
    let pooled_tests = pooled
        .iter()
        .map(|p| pooled_test(p, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;

    let mut prop = proportion(&joint, t_c)?;
    if let Some(b) = cfg.bootstrap {
        let boot = proportion_se_bootstrap(data, estimator, t_c, b, cfg.seed ^ 0xB007_5742)?;
        prop.se_bootstrap = Some(boot.se);
        prop.ci_bootstrap = Some(boot.ci);
    }

    Ok(AnalysisReport {
        adjusted_ci: adjusted_ci(&joint, t_c)?,
        pipeline_order: reorder_pipelines(&correlation),
        correlation,
        t_c,
        adjusted_p: max.adjusted_p,
        pooled,
        tests: Tests {
            global_null,
            at_least_one_null,
            pooled: pooled_tests,
        },
        proportion: prop,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            mode: cfg.mode.name().to_owned(),
            reference: cfg.reference,
            alpha: cfg.alpha,
            seed: cfg.seed,
            bootstrap: cfg.bootstrap,
            epsilon: cfg.epsilon,
        },
        joint,
    })
}

impl AnalysisReport {
    /// Pipeline rows in input order, then one row per pooled estimator.
    pub fn rows(&self) -> Vec<ReportRow> {
        let j = &self.joint;
        let finite = |v: f64| v.is_finite().then_some(v);
        let mut rows: Vec<ReportRow> = (0..j.n_pipelines())
            .map(|k| ReportRow {
                pipeline: j.pipelines[k].clone(),
                estimate: j.psi_hat[k],
                se: j.se[k],
                t: finite(j.t_stats[k]),
                p_unadjusted: finite(crate::normal::two_sided_p(j.t_stats[k])),
                p_adjusted: Some(self.adjusted_p[k]),
                ci_low: self.adjusted_ci[k].0,
                ci_high: self.adjusted_ci[k].1,
            })
            .collect();
        rows.extend(self.pooled.iter().map(|p| ReportRow {
            pipeline: p.method.name().to_owned(),
            estimate: p.estimate,
            se: p.se,
            t: finite(p.statistic),
            p_unadjusted: Some(p.p_value),
            p_adjusted: None,
            ci_low: p.ci.0,
            ci_high: p.ci.1,
        }));
        rows
    }

    /// JSON-lines summary; the `figure` line carries what `plot` needs.
    pub fn summary_lines(&self) -> Vec<serde_json::Value> {
        let corr: Vec<Vec<f64>> = self
            .correlation
            .row_iter()
            .map(|r| r.iter().cloned().collect())
            .collect();
        vec![
            json!({"kind": "provenance", "provenance": self.provenance}),
            json!({"kind": "critical_value", "t_c": self.t_c, "alpha": self.provenance.alpha}),
            json!({"kind": "tests", "tests": self.tests}),
            json!({"kind": "proportion", "proportion": self.proportion}),
            json!({
                "kind": "pooled",
                "pooled": self.pooled.iter().map(|p| json!({
                    "method": p.method.name(),
                    "weights": p.weights,
                    "kappa": p.kappa,
                    "eigen_dropped": p.eigen_dropped,
                })).collect::<Vec<_>>(),
            }),
            json!({
                "kind": "figure",
                "pipelines": self.joint.pipelines,
                "order": self.pipeline_order,
                "correlation": corr,
                "reference": self.provenance.reference,
            }),
        ]
    }

    /// Writes report.csv, report.jsonl, heatmap.svg and forest.svg.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let rows = self.rows();
        let mut csv = Vec::new();
        write_report_csv(&mut csv, &rows)?;
        fs::write(dir.join(REPORT_CSV), &csv)?;
        let mut jsonl = String::new();
        for line in self.summary_lines() {
            jsonl.push_str(&line.to_string());
            jsonl.push('\n');
        }
        fs::write(dir.join(SUMMARY_JSONL), jsonl)?;
        self.figures().write(dir)
    }

    /// Inputs of the heatmap and the forest plot.
    pub fn figures(&self) -> FigureInput {
        FigureInput {
            rows: self.rows(),
            pipelines: self.joint.pipelines.clone(),
            order: self.pipeline_order.clone(),
            correlation: self.correlation.clone(),
            reference: self.provenance.reference,
        }
    }
}

/// Everything the two figures depend on, as stored in a report directory.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureInput {
    pub rows: Vec<ReportRow>,
    pub pipelines: Vec<String>,
    pub order: Vec<usize>,
    pub correlation: DMatrix<f64>,
    pub reference: Option<f64>,
}

impl FigureInput {
    /// Loads a directory written by [`AnalysisReport::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let csv = fs::read(dir.join(REPORT_CSV))
            .map_err(|e| Error::Io(format!("{}: {e}", dir.join(REPORT_CSV).display())))?;
        let rows = read_report_csv(csv.as_slice())?;
        let text = fs::read_to_string(dir.join(SUMMARY_JSONL))
            .map_err(|e| Error::Io(format!("{}: {e}", dir.join(SUMMARY_JSONL).display())))?;
        #[derive(Deserialize)]
        struct Figure {
            pipelines: Vec<String>,
            order: Vec<usize>,
            correlation: Vec<Vec<f64>>,
            reference: Option<f64>,
        }
        let fig: Figure = text
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .find(|v| v["kind"] == "figure")
            .ok_or_else(|| Error::invalid("summary has no figure record"))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::invalid(e.to_string())))?;
        let j = fig.pipelines.len();
        let mut sorted = fig.order.clone();
        sorted.sort_unstable();
        if sorted != (0..j).collect::<Vec<_>>()
            || fig.correlation.len() != j
            || fig.correlation.iter().any(|r| r.len() != j)
            || rows.len() < j
        {
            return Err(Error::invalid("report files are inconsistent"));
        }
        let correlation = DMatrix::from_fn(j, j, |a, b| fig.correlation[a][b]);
        Ok(Self {
            rows,
            pipelines: fig.pipelines,
            order: fig.order,
            correlation,
            reference: fig.reference,
        })
    }

    pub fn heatmap(&self) -> String {
        render_heatmap(&self.correlation, &self.order, &self.pipelines)
    }

    pub fn forest(&self) -> String {
        render_forest(&forest_rows(&self.rows, self.pipelines.len(), &self.order), self.reference)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        fs::write(out.join(HEATMAP_SVG), self.heatmap())?;
        fs::write(out.join(FOREST_SVG), self.forest())?;
        Ok(())
    }
}
