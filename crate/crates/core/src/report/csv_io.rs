//! Long-format input tables and the per-pipeline report table.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimands::{Dataset, Record};

/// How the outcome columns will be analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    OneSample,
    TwoSample,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-sample" => Ok(Mode::OneSample),
            "two-sample" => Ok(Mode::TwoSample),
            other => Err(Error::Usage(format!("unknown mode `{other}`"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::OneSample => "one-sample",
            Mode::TwoSample => "two-sample",
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::invalid(e.to_string()),
    }
}

/// Reads `subject,pipeline,value[,exposure]`. Row numbers in errors count the
/// header as row 1. One-sample mode needs `reference` and ignores exposure.
pub fn read_long_csv(path: &Path, mode: Mode, reference: Option<f64>) -> Result<Dataset> {
    if mode == Mode::OneSample && reference.is_none() {
        return Err(Error::Usage("one-sample mode requires --reference".into()));
    }
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_long(file, mode)
}

/// Same as [`read_long_csv`] for any reader.
pub fn read_long<R: std::io::Read>(input: R, mode: Mode) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(cs), Some(cp), Some(cv)) = (col("subject"), col("pipeline"), col("value")) else {
        return Err(Error::invalid(format!(
            "header must contain subject,pipeline,value; found {}",
            header.join(",")
        )));
    };
    let ce = col("exposure");
    if mode == Mode::TwoSample && ce.is_none() {
        return Err(Error::invalid("two-sample mode requires an exposure column"));
    }
    let ce = if mode == Mode::TwoSample { ce } else { None };

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = k + 2;
        let field = |c: usize, name: &str| {
            row.get(c)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::invalid(format!("row {line}: empty {name}")))
        };
        let raw = field(cv, "value")?;
        let value: f64 = raw
            .parse()
            .map_err(|_| Error::invalid(format!("row {line}, column value: `{raw}` is not a number")))?;
        let exposure = match ce {
            Some(c) => {
                let raw = field(c, "exposure")?;
                Some(match raw {
                    "0" => 0,
                    "1" => 1,
                    _ => {
                        return Err(Error::invalid(format!(
                            "row {line}, column exposure: `{raw}` is not 0 or 1"
                        )))
                    }
                })
            }
            None => None,
        };
        records.push(Record {
            subject: field(cs, "subject")?.to_owned(),
            pipeline: field(cp, "pipeline")?.to_owned(),
            value,
            exposure,
        });
    }
    Dataset::from_records_with_rows(&records, |i| i + 2)
}

/// Writes a dataset in long format, subject-major.
pub fn write_long_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let with_x = data.exposure().is_some();
    if with_x {
        w.write_record(["subject", "pipeline", "value", "exposure"])
    } else {
        w.write_record(["subject", "pipeline", "value"])
    }
    .map_err(csv_err)?;
    for r in data.records() {
        let mut row = vec![r.subject, r.pipeline, r.value.to_string()];
        if let Some(x) = r.exposure {
            row.push(x.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of report.csv. Missing values are `None` and written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pipeline: String,
    pub estimate: f64,
    pub se: f64,
    pub t: Option<f64>,
    pub p_unadjusted: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const REPORT_HEADER: [&str; 8] = [
    "pipeline",
    "estimate",
    "se",
    "t",
    "p_unadjusted",
    "p_adjusted",
    "ci_low",
    "ci_high",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.pipeline.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            fmt_opt(r.t),
            fmt_opt(r.p_unadjusted),
            fmt_opt(r.p_adjusted),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: std::io::Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::invalid(format!(
            "report header must be {}",
            REPORT_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 2;
        let opt = |c: usize| -> Result<Option<f64>> {
            let s = &rec[c];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| {
                Error::invalid(format!("row {line}, column {}: `{s}` is not a number", REPORT_HEADER[c]))
            })
        };
        let req = |c: usize| -> Result<f64> {
            opt(c)?.ok_or_else(|| Error::invalid(format!("row {line}: empty {}", REPORT_HEADER[c])))
        };
        rows.push(ReportRow {
            pipeline: rec[0].to_owned(),
            estimate: req(1)?,
            se: req(2)?,
            t: opt(3)?,
            p_unadjusted: opt(4)?,
            p_adjusted: opt(5)?,
            ci_low: req(6)?,
            ci_high: req(7)?,
        });
    }
    Ok(rows)
}
