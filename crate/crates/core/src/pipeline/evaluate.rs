use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correlate::{correlate_metrics, CorrelationReport};
use super::score::METRIC_NAMES;
use super::{read_metrics_csv, round_sig, write_json, EvaluateOptions, MetricRow, PipelineConfig, PipelineError, Store};
use super::EVALUATION_JSON;
use crate::corpus::ReadingRecord;
use crate::gamlite::{delta_aic, Design, FeatureRow, FitOptions, FitResult, GamError, ModelSpec, TermFit};

/// Added inside the logarithm so zero-valued metrics stay finite.
pub const LOG_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinSummary {
    pub reading_records: usize,
    pub metric_rows: usize,
    pub joined_rows: usize,
    /// Reading records with no metric row.
    pub unmatched_records: usize,
    /// Metric rows nobody read.
    pub sentences_without_readings: usize,
    pub participants: usize,
    /// Joined rows per language.
    pub rows_per_language: BTreeMap<String, usize>,
}

/// Fitted metrics are `ln(value + shift)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub shift: f64,
    pub min: f64,
    pub max: f64,
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        (x + self.shift).ln()
    }
}

/// Shift of `1 + ε` for relevance (and any metric with negative values),
/// enlarged to `1 + ε - min` when values reach -1; `ε` otherwise.
pub fn transform_metric(name: &str, values: impl IntoIterator<Item = f64>) -> Option<Transform> {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() {
        return None;
    }
    let shift = if name == "relevance" || min < 0.0 {
        if min > -1.0 {
            1.0 + LOG_EPSILON
        } else {
            1.0 + LOG_EPSILON - min
        }
    } else {
        LOG_EPSILON
    };
    Some(Transform { shift, min, max })
}

/// Joins reading records to metric rows on `(text_id, sentence_index)`.
/// Metrics stay on their raw scale.
pub fn join_rows(metrics: &[MetricRow], reading: &[ReadingRecord]) -> Result<(Vec<FeatureRow>, JoinSummary), PipelineError> {
    let mut by_key: HashMap<(&str, usize), &MetricRow> = HashMap::with_capacity(metrics.len());
    for m in metrics {
        if by_key.insert((m.text_id.as_str(), m.sentence_index), m).is_some() {
            return Err(PipelineError::Join(format!(
                "metric table has two rows for {}#{}",
                m.text_id, m.sentence_index
            )));
        }
    }
    let mut seen = BTreeSet::new();
    let mut read_keys = BTreeSet::new();
    let mut rows = Vec::with_capacity(reading.len());
    let mut unmatched = 0;
    for r in reading {
        if !seen.insert((r.participant_id.as_str(), r.text_id.as_str(), r.sentence_index)) {
            return Err(PipelineError::Join(format!(
                "two reading records for participant {} on {}#{}",
                r.participant_id, r.text_id, r.sentence_index
            )));
        }
        let Some(m) = by_key.get(&(r.text_id.as_str(), r.sentence_index)) else {
            unmatched += 1;
            continue;
        };
        read_keys.insert((r.text_id.as_str(), r.sentence_index));
        rows.push(FeatureRow {
            participant_id: r.participant_id.clone(),
            language: m.lang.clone(),
            text_id: r.text_id.clone(),
            sentence_index: r.sentence_index,
            reading_speed: r.reading_speed,
            mean_word_length: m.mean_word_length,
            mean_log_freq: m.mean_log_freq,
            metrics: METRIC_NAMES.iter().map(|n| (n.to_string(), m.metric(n))).collect(),
        });
    }
    let mut per_language = BTreeMap::new();
    for r in &rows {
        *per_language.entry(r.language.clone()).or_insert(0) += 1;
    }
    let participants: BTreeSet<&str> = rows.iter().map(|r| r.participant_id.as_str()).collect();
    let summary = JoinSummary {
        reading_records: reading.len(),
        metric_rows: metrics.len(),
        joined_rows: rows.len(),
        unmatched_records: unmatched,
        sentences_without_readings: metrics.len() - read_keys.len(),
        participants: participants.len(),
        rows_per_language: per_language,
    };
    Ok((rows, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub metrics: Vec<String>,
    /// Rows restricted to those with these metrics present.
    pub complete_for: Vec<String>,
    pub n: usize,
    pub dropped: usize,
    pub rss: f64,
    pub edf: f64,
    pub sigma2: f64,
    pub aic: f64,
    pub rank: usize,
    pub terms: Vec<TermFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub full: String,
    pub base: String,
    pub n: usize,
    /// `aic(full) - aic(base)`; negative favours the metric.
    pub delta_aic: f64,
    pub metric_edf: f64,
    /// Fitted smooth at the metric's maximum minus at its minimum, on the
    /// transformed scale.
    pub endpoint_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub model: String,
    pub base: String,
    pub n: usize,
    pub delta_aic: f64,
    /// `aic(combined) - aic(combined without the metric)`, per metric.
    pub drop_one: BTreeMap<String, f64>,
    pub endpoint_effects: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    /// Model holding every distinct usable metric.
    pub reference: String,
    pub seed: u64,
    /// ΔAIC of adding a sentence-level permutation of each metric to the reference model.
    pub delta_aic: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub rows: usize,
    pub metrics: Vec<String>,
    /// Metrics left out, with the reason.
    pub skipped_metrics: BTreeMap<String, String>,
    /// Metrics whose column equals an earlier one.
    pub duplicates: BTreeMap<String, String>,
    pub models: Vec<ModelReport>,
    pub delta_aic: BTreeMap<String, ComparisonReport>,
    pub combined: BTreeMap<String, CombinedReport>,
    pub permutation: Option<PermutationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    pub k: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub per_language: bool,
    pub permutation_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub settings: EvaluationSettings,
    pub join: JoinSummary,
    pub transforms: BTreeMap<String, Transform>,
    pub overall: AnalysisReport,
    pub per_language: BTreeMap<String, AnalysisReport>,
    pub correlation: CorrelationReport,
}

struct Fitter<'a> {
    rows: &'a [FeatureRow],
    opts: &'a EvaluateOptions,
    cache: BTreeMap<(Vec<String>, Vec<usize>), usize>,
    fits: Vec<FitResult>,
    reports: Vec<ModelReport>,
}

fn model_name(metrics: &[String], complete_for: &[String]) -> String {
    let mut name = String::from("base");
    for m in metrics {
        name.push_str(&format!(" + s({m})"));
    }
    let mut own: Vec<&String> = metrics.iter().collect();
    own.sort();
    if !complete_for.is_empty() && !complete_for.iter().eq(own) {
        name.push_str(&format!(" [rows with {}]", complete_for.join(", ")));
    }
    name
}

impl<'a> Fitter<'a> {
    fn new(rows: &'a [FeatureRow], opts: &'a EvaluateOptions) -> Self {
        Fitter {
            rows,
            opts,
            cache: BTreeMap::new(),
            fits: Vec::new(),
            reports: Vec::new(),
        }
    }

    /// Fits base + smooths of `metrics` on rows where all of `complete_for` are present.
    fn fit(&mut self, metrics: &[String], complete_for: &[String]) -> Result<usize, PipelineError> {
        let mut required: Vec<String> = complete_for.to_vec();
        required.sort();
        required.dedup();
        let keep: Vec<usize> = (0..self.rows.len())
            .filter(|&i| required.iter().all(|m| self.rows[i].covariate(m).is_some()))
            .collect();
        let key = (metrics.to_vec(), keep);
        if let Some(&i) = self.cache.get(&key) {
            return Ok(i);
        }
        let restricted = key.1.len() < self.rows.len();
        let name = model_name(metrics, if restricted { &required } else { &[] });
        let subset: Vec<FeatureRow> = key.1.iter().map(|&i| self.rows[i].clone()).collect();
        let spec = metrics
            .iter()
            .fold(ModelSpec::base(self.opts.k), |s, m| s.with_metric(m.clone(), self.opts.k))
            .named(name.clone());
        let wrap = |source: GamError| PipelineError::Model {
            model: name.clone(),
            source,
        };
        let design = Design::build(&spec, &subset).map_err(wrap)?;
        let options = FitOptions::truncating();
        let lambdas = design.select_lambda(&self.opts.lambda_grid, &options).map_err(wrap)?;
        let fit = design.fit(&lambdas, &options).map_err(wrap)?;
        self.reports.push(ModelReport {
            name: name.clone(),
            metrics: metrics.to_vec(),
            complete_for: if restricted { required } else { Vec::new() },
            n: fit.n,
            dropped: self.rows.len() - fit.n,
            rss: round_sig(fit.rss),
            edf: round_sig(fit.edf),
            sigma2: round_sig(fit.sigma2),
            aic: round_sig(fit.aic),
            rank: fit.rank,
            terms: fit
                .terms
                .iter()
                .map(|t| TermFit {
                    name: t.name.clone(),
                    lambda: t.lambda.map(round_sig),
                    edf: round_sig(t.edf),
                })
                .collect(),
        });
        self.fits.push(fit);
        self.cache.insert(key, self.fits.len() - 1);
        Ok(self.fits.len() - 1)
    }

    fn delta(&self, full: usize, base: usize) -> Result<f64, PipelineError> {
        delta_aic(&self.fits[full], &self.fits[base])
            .map(round_sig)
            .map_err(|source| PipelineError::Model {
                model: self.reports[full].name.clone(),
                source,
            })
    }

    fn endpoint(&self, fit: usize, metric: &str) -> Result<f64, PipelineError> {
        self.fits[fit]
            .endpoint_effect(metric)
            .map(round_sig)
            .map_err(|source| PipelineError::Model {
                model: self.reports[fit].name.clone(),
                source,
            })
    }

    fn term_edf(&self, fit: usize, metric: &str) -> f64 {
        let name = format!("s({metric})");
        self.fits[fit]
            .terms
            .iter()
            .find(|t| t.name == name)
            .map_or(0.0, |t| round_sig(t.edf))
    }
}

fn usable_metrics(rows: &[FeatureRow], candidates: &[String]) -> (Vec<String>, BTreeMap<String, String>) {
    let mut usable = Vec::new();
    let mut skipped = BTreeMap::new();
    for m in candidates {
        let values: BTreeSet<u64> = rows.iter().filter_map(|r| r.covariate(m)).map(f64::to_bits).collect();
        match values.len() {
            0 => {
                skipped.insert(m.clone(), "no values".to_string());
            }
            1 => {
                skipped.insert(m.clone(), "constant column".to_string());
            }
            _ => usable.push(m.clone()),
        }
    }
    (usable, skipped)
}

fn duplicates(rows: &[FeatureRow], metrics: &[String]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (j, b) in metrics.iter().enumerate() {
        if let Some(a) = metrics[..j]
            .iter()
            .filter(|a| !out.contains_key(*a))
            .find(|a| rows.iter().all(|r| r.covariate(a) == r.covariate(b)))
        {
            out.insert(b.clone(), a.clone());
        }
    }
    out
}

fn permuted(rows: &[FeatureRow], metric: &str, name: &str, seed: u64) -> Vec<FeatureRow> {
    let mut by_sentence: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.covariate(metric) {
            by_sentence.insert((r.text_id.as_str(), r.sentence_index), v);
        }
    }
    let keys: Vec<(&str, usize)> = by_sentence.keys().copied().collect();
    let mut values: Vec<f64> = by_sentence.values().copied().collect();
    values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shuffled: HashMap<(&str, usize), f64> = keys.into_iter().zip(values).collect();
    rows.iter()
        .map(|r| {
            let mut r = r.clone();
            let v = shuffled.get(&(r.text_id.as_str(), r.sentence_index)).copied();
            r.metrics.insert(name.to_string(), v);
            r
        })
        .collect()
}

fn is_surprisal(metric: &str) -> bool {
    metric.starts_with("surprisal_")
}

/// Base-vs-full comparisons, combined surprisal + relevance models and the
/// permutation check on one row set. Metrics must already be transformed.
fn analyse(
    rows: &[FeatureRow],
    candidates: &[String],
    opts: &EvaluateOptions,
    seed: u64,
) -> Result<AnalysisReport, PipelineError> {
    let (metrics, skipped) = usable_metrics(rows, candidates);
    let dups = duplicates(rows, &metrics);
    let mut fitter = Fitter::new(rows, opts);

    let mut comparisons = BTreeMap::new();
    for m in &metrics {
        let need = vec![m.clone()];
        let base = fitter.fit(&[], &need)?;
        let full = fitter.fit(&need, &need)?;
        comparisons.insert(
            m.clone(),
            ComparisonReport {
                full: fitter.reports[full].name.clone(),
                base: fitter.reports[base].name.clone(),
                n: fitter.fits[full].n,
                delta_aic: fitter.delta(full, base)?,
                metric_edf: fitter.term_edf(full, m),
                endpoint_effect: fitter.endpoint(full, m)?,
            },
        );
    }

    let mut combined = BTreeMap::new();
    if metrics.iter().any(|m| m == "relevance") {
        for s in metrics.iter().filter(|m| is_surprisal(m)) {
            let both = vec![s.clone(), "relevance".to_string()];
            let base = fitter.fit(&[], &both)?;
            let full = fitter.fit(&both, &both)?;
            let mut drop_one = BTreeMap::new();
            let mut effects = BTreeMap::new();
            for (i, m) in both.iter().enumerate() {
                let kept = vec![both[1 - i].clone()];
                let reduced = fitter.fit(&kept, &both)?;
                drop_one.insert(m.clone(), fitter.delta(full, reduced)?);
                effects.insert(m.clone(), fitter.endpoint(full, m)?);
            }
            combined.insert(
                format!("{s}+relevance"),
                CombinedReport {
                    model: fitter.reports[full].name.clone(),
                    base: fitter.reports[base].name.clone(),
                    n: fitter.fits[full].n,
                    delta_aic: fitter.delta(full, base)?,
                    drop_one,
                    endpoint_effects: effects,
                },
            );
        }
    }

    let permutation = if opts.permutation_check && !metrics.is_empty() {
        let reference: Vec<String> = metrics.iter().filter(|m| !dups.contains_key(*m)).cloned().collect();
        let reference_fit = fitter.fit(&reference, &reference)?;
        let reference_name = fitter.reports[reference_fit].name.clone();
        let mut deltas = BTreeMap::new();
        for (i, m) in reference.iter().enumerate() {
            let name = format!("permuted_{m}");
            let shuffled = permuted(rows, m, &name, seed.wrapping_add(i as u64));
            let mut with_perm = reference.clone();
            with_perm.push(name.clone());
            let mut perm_fitter = Fitter::new(&shuffled, opts);
            let base = perm_fitter.fit(&reference, &reference)?;
            let full = perm_fitter.fit(&with_perm, &reference)?;
            deltas.insert(m.clone(), perm_fitter.delta(full, base)?);
            fitter.reports.push(perm_fitter.reports.swap_remove(full));
        }
        Some(PermutationReport {
            reference: reference_name,
            seed,
            delta_aic: deltas,
        })
    } else {
        None
    };

    Ok(AnalysisReport {
        rows: rows.len(),
        metrics,
        skipped_metrics: skipped,
        duplicates: dups,
        models: fitter.reports,
        delta_aic: comparisons,
        combined,
        permutation,
    })
}

/// Full evaluation of a metric table against reading records.
pub fn evaluate_rows(
    metric_rows: &[MetricRow],
    reading: &[ReadingRecord],
    opts: &EvaluateOptions,
    seed: u64,
) -> Result<EvaluationReport, PipelineError> {
    let (mut rows, join) = join_rows(metric_rows, reading)?;
    if rows.is_empty() {
        return Err(PipelineError::Evaluate("no reading record matches the metric table".into()));
    }
    let mut transforms = BTreeMap::new();
    for name in METRIC_NAMES {
        if let Some(t) = transform_metric(name, metric_rows.iter().filter_map(|r| r.metric(name))) {
            transforms.insert(name.to_string(), t);
        }
    }
    for r in &mut rows {
        for (name, value) in r.metrics.iter_mut() {
            if let (Some(v), Some(t)) = (value.as_mut(), transforms.get(name)) {
                *v = t.apply(*v);
            }
        }
    }
    let candidates: Vec<String> = transforms.keys().cloned().collect();
    let overall = analyse(&rows, &candidates, opts, seed)?;
    let mut per_language = BTreeMap::new();
    if opts.per_language {
        for lang in join.rows_per_language.keys() {
            let subset: Vec<FeatureRow> = rows.iter().filter(|r| &r.language == lang).cloned().collect();
            per_language.insert(lang.clone(), analyse(&subset, &candidates, opts, seed)?);
        }
    }
    let pairs: Vec<(String, String)> = candidates
        .iter()
        .enumerate()
        .flat_map(|(i, a)| candidates[i + 1..].iter().map(move |b| (a.clone(), b.clone())))
        .collect();
    let correlation = correlate_metrics(metric_rows, &pairs);
    let transforms = transforms
        .into_iter()
        .map(|(k, t)| {
            (
                k,
                Transform {
                    shift: round_sig(t.shift),
                    min: round_sig(t.min),
                    max: round_sig(t.max),
                },
            )
        })
        .collect();
    Ok(EvaluationReport {
        settings: EvaluationSettings {
            k: opts.k,
            lambda_grid: opts.lambda_grid.iter().copied().map(round_sig).collect(),
            seed,
            per_language: opts.per_language,
            permutation_check: opts.permutation_check,
        },
        join,
        transforms,
        overall,
        per_language,
        correlation,
    })
}

/// Joins `metrics.csv` with the stored reading records and writes
/// `evaluation.json`.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<EvaluationReport, PipelineError> {
    config.validate_settings()?;
    let store = Store::load(&config.store_dir())?;
    let metrics = read_metrics_csv(&config.metrics_path())?;
    let report = evaluate_rows(&metrics, &store.reading, &config.evaluate, config.seed)?;
    write_json(&config.out_dir.join(EVALUATION_JSON), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms() {
        let t = transform_metric("surprisal_cr_bits", [0.0, 4.0]).unwrap();
        assert_eq!(t.shift, LOG_EPSILON);
        assert_eq!(t.apply(0.0), LOG_EPSILON.ln());
        let r = transform_metric("relevance", [-0.5, 0.9]).unwrap();
        assert_eq!(r.shift, 1.0 + LOG_EPSILON);
        let wide = transform_metric("relevance", [-1.2, 0.3]).unwrap();
        assert!((wide.shift - (2.2 + LOG_EPSILON)).abs() < 1e-15);
        assert!(wide.apply(-1.2).is_finite());
        assert!(transform_metric("relevance", std::iter::empty()).is_none());
    }

    fn metric_row(text: &str, i: usize, cr: Option<f64>) -> MetricRow {
        MetricRow {
            text_id: text.into(),
            sentence_index: i,
            lang: "en".into(),
            n_words: 5,
            mean_word_length: 4.0,
            mean_log_freq: 5.0,
            surprisal_cr_bits: cr,
            surprisal_nll_bits: None,
            surprisal_nsp_bits: None,
            relevance: None,
        }
    }

    #[test]
    fn join_counts_reconcile() {
        let metrics = vec![metric_row("t", 0, Some(1.0)), metric_row("t", 1, None), metric_row("u", 0, Some(2.0))];
        let reading = vec![
            ReadingRecord::new("p1", "t", 0, 5, 1000.0).unwrap(),
            ReadingRecord::new("p2", "t", 0, 5, 1200.0).unwrap(),
            ReadingRecord::new("p1", "t", 1, 5, 900.0).unwrap(),
            ReadingRecord::new("p1", "zz", 0, 5, 900.0).unwrap(),
        ];
        let (rows, s) = join_rows(&metrics, &reading).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!((s.joined_rows, s.unmatched_records, s.sentences_without_readings), (3, 1, 1));
        assert_eq!(s.joined_rows + s.unmatched_records, s.reading_records);
        assert_eq!(rows[2].covariate("surprisal_cr_bits"), None);
        assert_eq!(rows[0].reading_speed, 5.0);
    }

    #[test]
    fn join_rejects_duplicates() {
        let metrics = vec![metric_row("t", 0, Some(1.0)), metric_row("t", 0, Some(2.0))];
        assert!(join_rows(&metrics, &[]).is_err());
        let metrics = vec![metric_row("t", 0, Some(1.0))];
        let rec = ReadingRecord::new("p1", "t", 0, 5, 1000.0).unwrap();
        assert!(join_rows(&metrics, &[rec.clone(), rec]).is_err());
    }

    #[test]
    fn permutation_keeps_sentence_structure() {
        let rows: Vec<FeatureRow> = (0..30)
            .map(|i| FeatureRow {
                participant_id: format!("p{}", i % 3),
                language: "en".into(),
                text_id: "t".into(),
                sentence_index: i / 3,
                reading_speed: 3.0,
                mean_word_length: 4.0,
                mean_log_freq: 5.0,
                metrics: [("m".to_string(), Some((i / 3) as f64))].into(),
            })
            .collect();
        let shuffled = permuted(&rows, "m", "pm", 9);
        for chunk in shuffled.chunks(3) {
            let v = chunk[0].covariate("pm");
            assert!(chunk.iter().all(|r| r.covariate("pm") == v));
        }
        let mut values: Vec<u64> = shuffled.chunks(3).map(|c| c[0].covariate("pm").unwrap() as u64).collect();
        assert_ne!(values, (0..10).collect::<Vec<_>>());
        values.sort();
        assert_eq!(values, (0..10).collect::<Vec<_>>());
        assert_eq!(permuted(&rows, "m", "pm", 9), shuffled);
    }
}
