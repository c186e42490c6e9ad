use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::score::METRIC_NAMES;
use super::{read_metrics_csv, round_sig, write_json, MetricRow, PipelineConfig, PipelineError, CORRELATION_JSON};
use crate::gamlite::pearson_pairwise;

/// Pearson correlation of two metric columns over sentences where both are
/// present. `r` is `None` when undefined, with the reason in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub sentences: usize,
    pub overall: Vec<Correlation>,
    pub per_language: BTreeMap<String, Vec<Correlation>>,
}

fn correlate(rows: &[&MetricRow], x: &str, y: &str) -> Correlation {
    let a: Vec<Option<f64>> = rows.iter().map(|r| r.metric(x)).collect();
    let b: Vec<Option<f64>> = rows.iter().map(|r| r.metric(y)).collect();
    let n = a.iter().zip(&b).filter(|(a, b)| a.is_some() && b.is_some()).count();
    let (r, undefined) = match pearson_pairwise(&a, &b) {
        Ok((r, _)) => (Some(round_sig(r)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Correlation {
        x: x.to_string(),
        y: y.to_string(),
        n,
        r,
        undefined,
    }
}

/// Correlations for each pair, over all sentences and within each language.
pub fn correlate_metrics(rows: &[MetricRow], pairs: &[(String, String)]) -> CorrelationReport {
    let all: Vec<&MetricRow> = rows.iter().collect();
    let mut by_lang: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        by_lang.entry(r.lang.clone()).or_default().push(r);
    }
    let run = |subset: &[&MetricRow]| pairs.iter().map(|(x, y)| correlate(subset, x, y)).collect::<Vec<_>>();
    CorrelationReport {
        sentences: rows.len(),
        overall: run(&all),
        per_language: by_lang.iter().map(|(lang, subset)| (lang.clone(), run(subset))).collect(),
    }
}

/// Each surprisal column in the table paired with relevance.
pub fn surprisal_relevance_pairs(rows: &[MetricRow]) -> Vec<(String, String)> {
    let present = |name: &str| rows.iter().any(|r| r.metric(name).is_some());
    if !present("relevance") {
        return Vec::new();
    }
    METRIC_NAMES
        .iter()
        .filter(|m| **m != "relevance" && present(m))
        .map(|m| (m.to_string(), "relevance".to_string()))
        .collect()
}

/// Correlates each surprisal method with relevance and writes `correlation.json`.
pub fn cmd_correlate(config: &PipelineConfig) -> Result<CorrelationReport, PipelineError> {
    let rows = read_metrics_csv(&config.metrics_path())?;
    let pairs = surprisal_relevance_pairs(&rows);
    if pairs.is_empty() {
        return Err(PipelineError::Metrics(
            "metrics table needs relevance and at least one surprisal column".into(),
        ));
    }
    let report = correlate_metrics(&rows, &pairs);
    write_json(&config.out_dir.join(CORRELATION_JSON), &report)?;
    Ok(report)
}
