use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{format_sig, io_err, tmp_path, write_atomic, write_json, PipelineConfig, PipelineError, Store};
use crate::backend::Backend;
use crate::corpus::{sentence_controls, Discourse, FrequencyTable};
use crate::relevance::{score_discourse_relevance, RelevanceError};
use crate::surprisal::{score_discourse_surprisal, SurprisalError, SurprisalMethod};

/// Column order of `metrics.csv`, fixed whatever metrics are enabled.
pub const METRIC_COLUMNS: [&str; 10] = [
    "text_id",
    "sentence_index",
    "lang",
    "n_words",
    "mean_word_length",
    "mean_log_freq",
    "surprisal_cr_bits",
    "surprisal_nll_bits",
    "surprisal_nsp_bits",
    "relevance",
];

/// Participant-independent metrics of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub text_id: String,
    pub sentence_index: usize,
    pub lang: String,
    pub n_words: usize,
    pub mean_word_length: f64,
    pub mean_log_freq: f64,
    pub surprisal_cr_bits: Option<f64>,
    pub surprisal_nll_bits: Option<f64>,
    pub surprisal_nsp_bits: Option<f64>,
    pub relevance: Option<f64>,
}

impl MetricRow {
    pub fn surprisal_column(method: SurprisalMethod) -> &'static str {
        match method {
            SurprisalMethod::Cr => "surprisal_cr_bits",
            SurprisalMethod::Nll => "surprisal_nll_bits",
            SurprisalMethod::Nsp => "surprisal_nsp_bits",
        }
    }

    /// Metric column by name; `None` when missing or not a metric column.
    pub fn metric(&self, column: &str) -> Option<f64> {
        match column {
            "surprisal_cr_bits" => self.surprisal_cr_bits,
            "surprisal_nll_bits" => self.surprisal_nll_bits,
            "surprisal_nsp_bits" => self.surprisal_nsp_bits,
            "relevance" => self.relevance,
            _ => None,
        }
    }

    fn set_surprisal(&mut self, method: SurprisalMethod, bits: Option<f64>) {
        match method {
            SurprisalMethod::Cr => self.surprisal_cr_bits = bits,
            SurprisalMethod::Nll => self.surprisal_nll_bits = bits,
            SurprisalMethod::Nsp => self.surprisal_nsp_bits = bits,
        }
    }
}

/// Metric columns of the table, in column order.
pub(crate) const METRIC_NAMES: [&str; 4] = ["surprisal_cr_bits", "surprisal_nll_bits", "surprisal_nsp_bits", "relevance"];

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let fail = |e: csv::Error| PipelineError::Metrics(e.to_string());
    w.write_record(METRIC_COLUMNS).map_err(fail)?;
    for r in rows {
        w.write_record([
            r.text_id.clone(),
            r.sentence_index.to_string(),
            r.lang.clone(),
            r.n_words.to_string(),
            format_sig(r.mean_word_length),
            format_sig(r.mean_log_freq),
            opt(r.surprisal_cr_bits),
            opt(r.surprisal_nll_bits),
            opt(r.surprisal_nsp_bits),
            opt(r.relevance),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Metrics(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, PipelineError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| PipelineError::Metrics(format!("{}: {e} (run score first)", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| PipelineError::Metrics(format!("{}: {e}", path.display())))?;
    if headers.iter().ne(METRIC_COLUMNS) {
        return Err(PipelineError::Metrics(format!(
            "{}: unexpected columns {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |m: String| PipelineError::Metrics(format!("{} line {line}: {m}", path.display()));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64, PipelineError> {
            rec[k].parse().map_err(|_| bad(format!("{} = {:?}", METRIC_COLUMNS[k], &rec[k])))
        };
        let maybe = |k: usize| -> Result<Option<f64>, PipelineError> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<usize, PipelineError> {
            rec[k].parse().map_err(|_| bad(format!("{} = {:?}", METRIC_COLUMNS[k], &rec[k])))
        };
        rows.push(MetricRow {
            text_id: rec[0].to_string(),
            sentence_index: int(1)?,
            lang: rec[2].to_string(),
            n_words: int(3)?,
            mean_word_length: num(4)?,
            mean_log_freq: num(5)?,
            surprisal_cr_bits: maybe(6)?,
            surprisal_nll_bits: maybe(7)?,
            surprisal_nsp_bits: maybe(8)?,
            relevance: maybe(9)?,
        });
    }
    Ok(rows)
}

#[derive(Debug)]
struct Failure {
    message: String,
    retriable: bool,
}

impl From<SurprisalError> for Failure {
    fn from(e: SurprisalError) -> Self {
        let retriable = matches!(&e, SurprisalError::Backend { source, .. } if source.is_retriable());
        Failure {
            message: e.to_string(),
            retriable,
        }
    }
}

impl From<RelevanceError> for Failure {
    fn from(e: RelevanceError) -> Self {
        let retriable = matches!(&e, RelevanceError::Backend { source, .. } if source.is_retriable());
        Failure {
            message: e.to_string(),
            retriable,
        }
    }
}

fn score_once(
    discourse: &Discourse,
    table: &FrequencyTable,
    backend: &dyn Backend,
    config: &PipelineConfig,
) -> Result<Vec<MetricRow>, Failure> {
    let mut rows: Vec<MetricRow> = discourse
        .sentences
        .iter()
        .map(|s| {
            let c = sentence_controls(s, table);
            MetricRow {
                text_id: discourse.text_id.clone(),
                sentence_index: s.index,
                lang: discourse.language.clone(),
                n_words: s.word_count,
                mean_word_length: c.mean_word_length,
                mean_log_freq: c.mean_log_freq,
                surprisal_cr_bits: None,
                surprisal_nll_bits: None,
                surprisal_nsp_bits: None,
                relevance: None,
            }
        })
        .collect();
    for &method in &config.methods {
        let scores = score_discourse_surprisal(discourse, backend, method, &config.context)?;
        for (row, score) in rows.iter_mut().zip(scores) {
            row.set_surprisal(method, score.map(|s| s.bits));
        }
    }
    if config.relevance {
        let scores = score_discourse_relevance(discourse, backend, &config.window)?;
        for (row, score) in rows.iter_mut().zip(scores) {
            row.relevance = score.map(|s| s.value);
        }
    }
    Ok(rows)
}

/// Metric rows of one discourse.
pub fn score_discourse(
    discourse: &Discourse,
    table: &FrequencyTable,
    backend: &dyn Backend,
    config: &PipelineConfig,
) -> Result<Vec<MetricRow>, PipelineError> {
    score_once(discourse, table, backend, config).map_err(|f| PipelineError::Score {
        text_id: discourse.text_id.clone(),
        message: f.message,
        checkpoint: String::new(),
    })
}

fn score_with_retries(
    discourse: &Discourse,
    table: &FrequencyTable,
    backend: &dyn Backend,
    config: &PipelineConfig,
) -> Result<Vec<MetricRow>, Failure> {
    let mut attempt = 0;
    loop {
        match score_once(discourse, table, backend, config) {
            Err(f) if f.retriable && attempt < config.scoring.retries => {
                attempt += 1;
                thread::sleep(Duration::from_millis(100 * attempt as u64));
            }
            other => return other,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: String,
    text_id: String,
    rows: Vec<MetricRow>,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    backend: String,
    methods: &'a [SurprisalMethod],
    relevance: bool,
    context: &'a crate::surprisal::ContextPolicy,
    window: &'a crate::relevance::WindowSpec,
    discourse: String,
}

fn fingerprint(config: &PipelineConfig, backend: &dyn Backend, discourse: &Discourse) -> String {
    let input = FingerprintInput {
        backend: backend.describe(),
        methods: &config.methods,
        relevance: config.relevance,
        context: &config.context,
        window: &config.window,
        discourse: discourse.to_lines(),
    };
    let bytes = serde_json::to_vec(&input).expect("fingerprint input serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

fn load_checkpoint(path: &Path, fingerprint: &str, text_id: &str) -> Option<Vec<MetricRow>> {
    let raw = fs::read(path).ok()?;
    let cp: Checkpoint = serde_json::from_slice(&raw).ok()?;
    (cp.fingerprint == fingerprint && cp.text_id == text_id).then_some(cp.rows)
}

/// Scores every stored discourse and writes `metrics.csv`.
///
/// Discourses run concurrently up to `scoring.in_flight`. Each finished
/// discourse is checkpointed; a failed run removes the partial table and
/// keeps the checkpoints so a rerun only scores what is left.
pub fn cmd_score(config: &PipelineConfig, backend: &dyn Backend) -> Result<Vec<MetricRow>, PipelineError> {
    config.validate_settings()?;
    let store = Store::load(&config.store_dir())?;
    let out = config.metrics_path();
    let cp_dir = config.checkpoint_dir();
    fs::create_dir_all(&cp_dir).map_err(io_err(&cp_dir))?;

    let n = store.discourses.len();
    let cp_path = |i: usize| cp_dir.join(format!("{i:05}.json"));
    let prints: Vec<String> = store.discourses.iter().map(|d| fingerprint(config, backend, d)).collect();
    let mut results: BTreeMap<usize, Vec<MetricRow>> = BTreeMap::new();
    for (i, d) in store.discourses.iter().enumerate() {
        if let Some(rows) = load_checkpoint(&cp_path(i), &prints[i], &d.text_id) {
            results.insert(i, rows);
        }
    }
    let pending: Vec<usize> = (0..n).filter(|i| !results.contains_key(i)).collect();

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<MetricRow>, Failure>)>();
    let mut failure: Option<(usize, Failure)> = None;
    let mut write_error = None;
    thread::scope(|scope| {
        for _ in 0..config.scoring.in_flight.min(pending.len()) {
            let tx = tx.clone();
            let (next, stop, pending, store) = (&next, &stop, &pending, &store);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let d = &store.discourses[i];
                let table = &store.frequency[&d.language];
                let result = score_with_retries(d, table, backend, config);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            match result {
                Ok(rows) => {
                    let cp = Checkpoint {
                        fingerprint: prints[i].clone(),
                        text_id: store.discourses[i].text_id.clone(),
                        rows,
                    };
                    if let Err(e) = write_json(&cp_path(i), &cp) {
                        stop.store(true, Ordering::SeqCst);
                        write_error.get_or_insert(e);
                    }
                    results.insert(i, cp.rows);
                }
                Err(f) => {
                    stop.store(true, Ordering::SeqCst);
                    if failure.as_ref().is_none_or(|(j, _)| i < *j) {
                        failure = Some((i, f));
                    }
                }
            }
        }
    });

    if let Some(e) = write_error {
        return Err(e);
    }
    if let Some((i, f)) = failure {
        for stale in [tmp_path(&out), out.clone()] {
            if stale.exists() {
                fs::remove_file(&stale).map_err(io_err(&stale))?;
            }
        }
        return Err(PipelineError::Score {
            text_id: store.discourses[i].text_id.clone(),
            message: f.message,
            checkpoint: cp_dir.display().to_string(),
        });
    }
    let rows: Vec<MetricRow> = results.into_values().flatten().collect();
    write_metrics_csv(&out, &rows)?;
    fs::remove_dir_all(&cp_dir).map_err(io_err(&cp_dir))?;
    Ok(rows)
}
