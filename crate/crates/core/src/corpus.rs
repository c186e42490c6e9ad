//! Discourse texts, eye-tracking records, and word-frequency lists.
//!
//! Everything in here is immutable once built. Sentence-level control
//! features (mean word length, mean Zipf frequency) and reading speed are
//! computed from these types.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Zipf value assigned to words missing from the frequency table.
pub const ZIPF_FLOOR: f64 = 1.0;

/// Abbreviations that never end a sentence in [`segment_text`].
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "St.", "Jr.", "Sr.", "vs.", "etc.", "e.g.", "i.e.",
    "No.", "Fig.", "cf.", "approx.",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl CorpusError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        CorpusError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

fn read_utf8(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub words: Vec<String>,
    pub word_count: usize,
    pub char_lengths: Vec<usize>,
}

impl Sentence {
    /// Builds a sentence from raw text. Returns `None` when the text has no
    /// words left after dropping punctuation-only tokens.
    pub fn new(index: usize, text: &str) -> Option<Self> {
        let text = text.trim();
        let words = split_words(text);
        if text.is_empty() || words.is_empty() {
            return None;
        }
        let char_lengths = words.iter().map(|w| w.chars().count()).collect();
        Some(Sentence {
            index,
            text: text.to_string(),
            word_count: words.len(),
            words,
            char_lengths,
        })
    }
}

/// Whitespace-delimited words with surrounding punctuation trimmed;
/// punctuation-only tokens are dropped.
pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscourseFormat {
    /// Header line then one sentence per line.
    Lines,
    /// Header line then free text, segmented with [`segment_text`].
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discourse {
    pub text_id: String,
    pub language: String,
    pub sentences: Vec<Sentence>,
}

impl Discourse {
    /// Builds a discourse from sentence strings, skipping any without words.
    pub fn from_sentences<S: AsRef<str>>(
        text_id: impl Into<String>,
        language: impl Into<String>,
        sentences: &[S],
    ) -> Self {
        let mut out = Vec::with_capacity(sentences.len());
        for s in sentences {
            if let Some(sentence) = Sentence::new(out.len(), s.as_ref()) {
                out.push(sentence);
            }
        }
        Discourse {
            text_id: text_id.into(),
            language: language.into(),
            sentences: out,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Serializes to the one-sentence-per-line format read by
    /// [`ingest_discourse`].
    pub fn to_lines(&self) -> String {
        let mut out = format!("{}\t{}\n", self.text_id, self.language);
        for s in &self.sentences {
            out.push_str(&s.text.replace(['\n', '\r'], " "));
            out.push('\n');
        }
        out
    }
}

/// Reads a discourse file. Line 1 is `text_id<TAB>language`.
pub fn ingest_discourse(path: &Path, format: DiscourseFormat) -> Result<Discourse, CorpusError> {
    let raw = read_utf8(path)?;
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(&raw);
    if raw.trim().is_empty() {
        return Err(CorpusError::EmptyInput(path.display().to_string()));
    }
    let (header, body) = match raw.split_once('\n') {
        Some((h, b)) => (h, b),
        None => (raw, ""),
    };
    let header = header.trim_end_matches('\r');
    let (text_id, language) = header
        .split_once('\t')
        .map(|(a, b)| (a.trim(), b.trim()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains('\t'))
        .ok_or_else(|| {
            CorpusError::format(path, format!("expected `text_id<TAB>language` header, got {header:?}"))
        })?;

    let sentences: Vec<String> = match format {
        DiscourseFormat::Lines => body
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        DiscourseFormat::Plain => {
            if body.trim().is_empty() {
                Vec::new()
            } else {
                segment_text(body)
            }
        }
    };
    if sentences.is_empty() {
        return Err(CorpusError::EmptyInput(path.display().to_string()));
    }
    let discourse = Discourse::from_sentences(text_id, language, &sentences);
    if discourse.is_empty() {
        return Err(CorpusError::format(path, "no sentence contains a word"));
    }
    Ok(discourse)
}

/// Splits plain text into sentences using [`DEFAULT_ABBREVIATIONS`].
pub fn segment_text(raw: &str) -> Vec<String> {
    segment_text_with(raw, DEFAULT_ABBREVIATIONS)
}

/// Splits after `.`, `!`, `?` or `…` when followed by whitespace and an
/// uppercase letter (or by end of input). A token listed in
/// `abbreviations` never ends a sentence.
pub fn segment_text_with(raw: &str, abbreviations: &[&str]) -> Vec<String> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i].1;
        if !matches!(c, '.' | '!' | '?' | '…') {
            i += 1;
            continue;
        }
        // absorb runs like "?!" or "..." and closing quotes/brackets
        let mut j = i + 1;
        while j < chars.len() && (matches!(chars[j].1, '.' | '!' | '?' | '…' | '"' | '\'' | ')' | '”' | '’' | '»')) {
            j += 1;
        }
        let end = chars.get(j).map_or(raw.len(), |&(p, _)| p);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = if k == chars.len() {
            true
        } else {
            k > j && chars[k].1.is_uppercase()
        };
        if boundary && !ends_with_abbreviation(&raw[start..end], abbreviations) {
            let seg = raw[start..end].trim();
            if !seg.is_empty() {
                out.push(seg.to_string());
            }
            start = chars.get(k).map_or(raw.len(), |&(p, _)| p);
        }
        i = j;
    }
    let tail = raw[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    if out.is_empty() && !raw.trim().is_empty() {
        out.push(raw.trim().to_string());
    }
    out
}

fn ends_with_abbreviation(segment: &str, abbreviations: &[&str]) -> bool {
    let last = segment.split_whitespace().last().unwrap_or("");
    abbreviations.contains(&last)
}

/// Words per second for a sentence read in `total_fixation_ms`.
pub fn reading_speed(word_count: usize, total_fixation_ms: f64) -> Result<f64, CorpusError> {
    if word_count == 0 {
        return Err(CorpusError::Domain("word count must be at least 1".into()));
    }
    if !(total_fixation_ms > 0.0) || !total_fixation_ms.is_finite() {
        return Err(CorpusError::Domain(format!(
            "total fixation must be positive and finite, got {total_fixation_ms}"
        )));
    }
    Ok(word_count as f64 / (total_fixation_ms / 1000.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub participant_id: String,
    pub text_id: String,
    pub sentence_index: usize,
    pub word_count: usize,
    pub total_fixation: f64,
    pub reading_speed: f64,
}

impl ReadingRecord {
    pub fn new(
        participant_id: impl Into<String>,
        text_id: impl Into<String>,
        sentence_index: usize,
        word_count: usize,
        total_fixation: f64,
    ) -> Result<Self, CorpusError> {
        let reading_speed = reading_speed(word_count, total_fixation)?;
        Ok(ReadingRecord {
            participant_id: participant_id.into(),
            text_id: text_id.into(),
            sentence_index,
            word_count,
            total_fixation,
            reading_speed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the source file.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadingData {
    pub records: Vec<ReadingRecord>,
    pub errors: Vec<RowError>,
}

pub const READING_COLUMNS: [&str; 5] = [
    "participant_id",
    "text_id",
    "sentence_index",
    "word_count",
    "total_fixation_ms",
];

/// Reads the eye-tracking TSV. Bad rows are collected in
/// [`ReadingData::errors`], never dropped silently.
pub fn ingest_reading_data(path: &Path) -> Result<ReadingData, CorpusError> {
    let raw = read_utf8(path)?;
    parse_reading_tsv(&raw).map_err(|message| CorpusError::format(path, message))
}

fn parse_reading_tsv(raw: &str) -> Result<ReadingData, String> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .quoting(false)
        .from_reader(raw.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(READING_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format!("missing column `{name}`"))?;
    }

    let mut data = ReadingData::default();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                data.errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        match parse_reading_row(&row, &idx) {
            Ok(rec) => data.records.push(rec),
            Err(message) => data.errors.push(RowError { line, message }),
        }
    }
    Ok(data)
}

fn parse_reading_row(row: &csv::StringRecord, idx: &[usize; 5]) -> Result<ReadingRecord, String> {
    let field = |k: usize| -> Result<&str, String> {
        row.get(idx[k])
            .map(str::trim)
            .ok_or_else(|| format!("missing field `{}`", READING_COLUMNS[k]))
    };
    let participant = field(0)?;
    let text_id = field(1)?;
    if participant.is_empty() || text_id.is_empty() {
        return Err("empty participant_id or text_id".into());
    }
    let sentence_index: usize = field(2)?
        .parse()
        .map_err(|_| format!("unparsable sentence_index {:?}", field(2).unwrap_or("")))?;
    let word_count: usize = field(3)?
        .parse()
        .map_err(|_| format!("unparsable word_count {:?}", field(3).unwrap_or("")))?;
    let fixation: f64 = field(4)?
        .parse()
        .map_err(|_| format!("unparsable total_fixation_ms {:?}", field(4).unwrap_or("")))?;
    ReadingRecord::new(participant, text_id, sentence_index, word_count, fixation)
        .map_err(|e| e.to_string())
}

/// Serializes records in the format read by [`ingest_reading_data`].
pub fn reading_tsv(records: &[ReadingRecord]) -> String {
    let mut out = READING_COLUMNS.join("\t");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.participant_id, r.text_id, r.sentence_index, r.word_count, r.total_fixation
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub language: String,
    pub counts: HashMap<String, u64>,
    pub corpus_total: u64,
}

impl FrequencyTable {
    /// Table whose total is the sum of its counts.
    pub fn from_counts(language: impl Into<String>, counts: HashMap<String, u64>) -> Self {
        let mut folded: HashMap<String, u64> = HashMap::with_capacity(counts.len());
        for (w, c) in counts {
            *folded.entry(w.to_lowercase()).or_default() += c;
        }
        let corpus_total = folded.values().sum();
        FrequencyTable {
            language: language.into(),
            counts: folded,
            corpus_total,
        }
    }

    /// Reads `word<TAB>count` lines, with an optional leading `#total<TAB>N`.
    pub fn load(language: impl Into<String>, path: &Path) -> Result<Self, CorpusError> {
        let raw = read_utf8(path)?;
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut explicit_total = None;
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (word, count) = line.split_once('\t').ok_or_else(|| {
                CorpusError::format(path, format!("line {}: expected `word<TAB>count`", i + 1))
            })?;
            let count: u64 = count.trim().parse().map_err(|_| {
                CorpusError::format(path, format!("line {}: unparsable count {count:?}", i + 1))
            })?;
            if i == 0 && word == "#total" {
                explicit_total = Some(count);
                continue;
            }
            *counts.entry(word.trim().to_lowercase()).or_default() += count;
        }
        let mut table = FrequencyTable::from_counts(language, counts);
        if let Some(total) = explicit_total {
            let max = table.counts.values().copied().max().unwrap_or(0);
            if total < max || total == 0 {
                return Err(CorpusError::format(
                    path,
                    format!("#total {total} is smaller than the largest count {max}"),
                ));
            }
            table.corpus_total = total;
        }
        Ok(table)
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.counts.get(&word.to_lowercase()).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut words: Vec<_> = self.counts.iter().collect();
        words.sort();
        let mut out = format!("#total\t{}\n", self.corpus_total);
        for (w, c) in words {
            out.push_str(&format!("{w}\t{c}\n"));
        }
        out
    }
}

/// log10 of frequency per million, plus 3. Unknown words get [`ZIPF_FLOOR`].
pub fn zipf_frequency(word: &str, table: &FrequencyTable) -> f64 {
    match table.count(word) {
        Some(c) if c > 0 && table.corpus_total > 0 => {
            let per_million = c as f64 * 1e6 / table.corpus_total as f64;
            per_million.log10() + 3.0
        }
        _ => ZIPF_FLOOR,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceControls {
    pub mean_word_length: f64,
    pub mean_log_freq: f64,
}

pub fn sentence_controls(sentence: &Sentence, table: &FrequencyTable) -> SentenceControls {
    let n = sentence.word_count.max(1) as f64;
    let total_len: usize = sentence.char_lengths.iter().sum();
    let total_zipf: f64 = sentence.words.iter().map(|w| zipf_frequency(w, table)).sum();
    SentenceControls {
        mean_word_length: total_len as f64 / n,
        mean_log_freq: total_zipf / n,
    }
}
