//! Input files, report files, figures and the command-line interface.

pub mod analysis;
pub mod cli;
pub mod cluster;
pub mod csv_io;
pub mod svg;

pub use analysis::{analyze, AnalysisConfig, AnalysisReport, FigureInput};
pub use cluster::reorder_pipelines;
pub use csv_io::{read_long, read_long_csv, read_report_csv, write_long_csv, write_report_csv, Mode, ReportRow};
pub use svg::{render_forest, render_heatmap, ForestRow};
