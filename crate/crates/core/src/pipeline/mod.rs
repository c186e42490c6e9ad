//! Ingest → score → evaluate → correlate, driven by a [`PipelineConfig`].
//!
//! Every command reads and writes files under the configured output
//! directory:
//!
//! ```text
//! <out>/store/manifest.json         discourse index written by ingest
//! <out>/store/discourses/*.txt      normalized discourses
//! <out>/store/reading.tsv           valid reading records
//! <out>/store/frequencies/<lang>.tsv
//! <out>/ingest_report.json
//! <out>/metrics.csv                 sentence-level metrics (score)
//! <out>/checkpoint/                 per-discourse results of an interrupted score run
//! <out>/evaluation.json             ΔAIC report (evaluate)
//! <out>/correlation.json            metric correlations (correlate)
//! ```

mod config;
mod correlate;
mod evaluate;
mod ingest;
mod score;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::CorpusError;
use crate::gamlite::GamError;

pub use config::{EvaluateOptions, PipelineConfig, ScoringOptions};
pub use correlate::{cmd_correlate, correlate_metrics, Correlation, CorrelationReport};
pub use evaluate::{
    cmd_evaluate, evaluate_rows, join_rows, transform_metric, AnalysisReport, CombinedReport, ComparisonReport,
    EvaluationReport, JoinSummary, ModelReport, PermutationReport, Transform,
};
pub use ingest::{cmd_ingest, IngestReport, Store, StoredDiscourse};
pub use score::{cmd_score, read_metrics_csv, score_discourse, write_metrics_csv, MetricRow, METRIC_COLUMNS};

pub const INGEST_REPORT: &str = "ingest_report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const CORRELATION_JSON: &str = "correlation.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ingest failed:\n  {}", .0.join("\n  "))]
    Ingest(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("store: {0}")]
    Store(String),
    #[error("scoring discourse {text_id} failed: {message} (completed discourses checkpointed in {checkpoint})")]
    Score {
        text_id: String,
        message: String,
        checkpoint: String,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("metrics table: {0}")]
    Metrics(String),
    #[error("join: {0}")]
    Join(String),
    #[error("evaluation: {0}")]
    Evaluate(String),
    #[error("evaluation of model {model}: {source}")]
    Model {
        model: String,
        #[source]
        source: GamError,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via a sibling temporary file and rename, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Rounds to 9 significant digits. Serialized outputs go through this so
/// they are stable across platforms.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// [`round_sig`] rendered in plain decimal notation.
pub fn format_sig(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(2.0), "2");
        assert_eq!(format_sig(-0.0), "0");
        assert_eq!(format_sig(123456789012.0), "123456789000");
        assert_eq!(format_sig(4.328085122666890), "4.32808512");
        assert_eq!(format_sig(1.5e-7), "0.00000015");
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
    }
}
