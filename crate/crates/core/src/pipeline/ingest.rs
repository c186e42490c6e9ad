use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, write_atomic, write_json, PipelineConfig, PipelineError, INGEST_REPORT};
use crate::corpus::{
    ingest_discourse, ingest_reading_data, reading_tsv, Discourse, DiscourseFormat, FrequencyTable, ReadingRecord,
};

/// One discourse entry of the store manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDiscourse {
    pub text_id: String,
    pub language: String,
    /// File under `store/discourses/`.
    pub file: String,
    pub sentences: usize,
    /// Input file it came from.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    discourses: Vec<StoredDiscourse>,
    languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRowError {
    pub file: String,
    /// 1-based line, when known.
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub discourses: usize,
    pub sentences: usize,
    /// Discourses per language.
    pub languages: BTreeMap<String, usize>,
    pub reading_records: usize,
    pub participants: usize,
    pub errors: usize,
    /// Set when rows were rejected but the store was still written.
    pub warnings: bool,
    pub row_errors: Vec<FileRowError>,
}

/// Normalized corpus as written by [`cmd_ingest`].
#[derive(Debug, Clone)]
pub struct Store {
    pub discourses: Vec<Discourse>,
    pub frequency: BTreeMap<String, FrequencyTable>,
    pub reading: Vec<ReadingRecord>,
}

impl Store {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let manifest_path = dir.join("manifest.json");
        let raw = fs::read(&manifest_path).map_err(|e| {
            PipelineError::Store(format!("{}: {e} (run ingest first)", manifest_path.display()))
        })?;
        let manifest: Manifest = serde_json::from_slice(&raw)
            .map_err(|e| PipelineError::Store(format!("{}: {e}", manifest_path.display())))?;
        let mut discourses = Vec::with_capacity(manifest.discourses.len());
        for entry in &manifest.discourses {
            let d = ingest_discourse(&dir.join("discourses").join(&entry.file), DiscourseFormat::Lines)?;
            if d.text_id != entry.text_id || d.len() != entry.sentences {
                return Err(PipelineError::Store(format!("{} does not match the manifest", entry.file)));
            }
            discourses.push(d);
        }
        let mut frequency = BTreeMap::new();
        for lang in &manifest.languages {
            let table = FrequencyTable::load(lang.clone(), &dir.join("frequencies").join(format!("{lang}.tsv")))?;
            frequency.insert(lang.clone(), table);
        }
        let reading = ingest_reading_data(&dir.join("reading.tsv"))?;
        if !reading.errors.is_empty() {
            return Err(PipelineError::Store(format!(
                "stored reading data has {} bad rows",
                reading.errors.len()
            )));
        }
        Ok(Store {
            discourses,
            frequency,
            reading: reading.records,
        })
    }

    pub fn language_of(&self, text_id: &str) -> Option<&str> {
        self.discourses
            .iter()
            .find(|d| d.text_id == text_id)
            .map(|d| d.language.as_str())
    }
}

fn sorted_files(dir: &Path) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads the configured inputs and writes the normalized store plus
/// `ingest_report.json`. Discourse or frequency-list problems abort with
/// per-file diagnostics; bad reading rows are reported and skipped.
pub fn cmd_ingest(config: &PipelineConfig) -> Result<IngestReport, PipelineError> {
    config.validate()?;
    let mut diagnostics = Vec::new();

    let mut discourses: Vec<(Discourse, String)> = Vec::new();
    for path in sorted_files(&config.discourse_dir)? {
        match ingest_discourse(&path, config.discourse_format) {
            Ok(d) => discourses.push((d, path.display().to_string())),
            Err(e) => diagnostics.push(e.to_string()),
        }
    }
    if discourses.is_empty() && diagnostics.is_empty() {
        diagnostics.push(format!("{}: no discourse files", config.discourse_dir.display()));
    }
    discourses.sort_by(|a, b| a.0.text_id.cmp(&b.0.text_id));
    for pair in discourses.windows(2) {
        if pair[0].0.text_id == pair[1].0.text_id {
            diagnostics.push(format!(
                "text_id {} appears in both {} and {}",
                pair[0].0.text_id, pair[0].1, pair[1].1
            ));
        }
    }

    let languages: BTreeSet<String> = discourses.iter().map(|(d, _)| d.language.clone()).collect();
    let mut frequency = BTreeMap::new();
    for lang in &languages {
        match config.frequency_lists.get(lang) {
            None => diagnostics.push(format!("no frequency list configured for language {lang}")),
            Some(path) => match FrequencyTable::load(lang.clone(), path) {
                Ok(t) => {
                    frequency.insert(lang.clone(), t);
                }
                Err(e) => diagnostics.push(e.to_string()),
            },
        }
    }

    let reading = match ingest_reading_data(&config.reading_data) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    if !diagnostics.is_empty() {
        return Err(PipelineError::Ingest(diagnostics));
    }
    let reading = reading.expect("checked above");

    let reading_file = config.reading_data.display().to_string();
    let mut row_errors: Vec<FileRowError> = reading
        .errors
        .iter()
        .map(|e| FileRowError {
            file: reading_file.clone(),
            line: Some(e.line),
            message: e.message.clone(),
        })
        .collect();
    let sizes: HashMap<&str, usize> = discourses.iter().map(|(d, _)| (d.text_id.as_str(), d.len())).collect();
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(reading.records.len());
    for r in reading.records {
        let problem = match sizes.get(r.text_id.as_str()) {
            None => Some(format!("unknown text_id {}", r.text_id)),
            Some(&n) if r.sentence_index >= n => Some(format!(
                "sentence_index {} out of range for {} ({n} sentences)",
                r.sentence_index, r.text_id
            )),
            _ if !seen.insert((r.participant_id.clone(), r.text_id.clone(), r.sentence_index)) => Some(format!(
                "duplicate record for participant {} on {}#{}",
                r.participant_id, r.text_id, r.sentence_index
            )),
            _ => None,
        };
        match problem {
            Some(message) => row_errors.push(FileRowError {
                file: reading_file.clone(),
                line: None,
                message,
            }),
            None => records.push(r),
        }
    }

    let store = config.store_dir();
    if store.exists() {
        fs::remove_dir_all(&store).map_err(io_err(&store))?;
    }
    let mut entries = Vec::with_capacity(discourses.len());
    for (i, (d, source)) in discourses.iter().enumerate() {
        let file = format!("{i:05}.txt");
        write_atomic(&store.join("discourses").join(&file), d.to_lines().as_bytes())?;
        entries.push(StoredDiscourse {
            text_id: d.text_id.clone(),
            language: d.language.clone(),
            file,
            sentences: d.len(),
            source: source.clone(),
        });
    }
    for (lang, table) in &frequency {
        write_atomic(&store.join("frequencies").join(format!("{lang}.tsv")), table.to_tsv().as_bytes())?;
    }
    write_atomic(&store.join("reading.tsv"), reading_tsv(&records).as_bytes())?;
    write_json(
        &store.join("manifest.json"),
        &Manifest {
            discourses: entries,
            languages: languages.iter().cloned().collect(),
        },
    )?;

    let mut per_language = BTreeMap::new();
    for (d, _) in &discourses {
        *per_language.entry(d.language.clone()).or_insert(0) += 1;
    }
    let participants: BTreeSet<&str> = records.iter().map(|r| r.participant_id.as_str()).collect();
    let report = IngestReport {
        discourses: discourses.len(),
        sentences: discourses.iter().map(|(d, _)| d.len()).sum(),
        languages: per_language,
        reading_records: records.len(),
        participants: participants.len(),
        errors: row_errors.len(),
        warnings: !row_errors.is_empty(),
        row_errors,
    };
    write_json(&config.out_dir.join(INGEST_REPORT), &report)?;
    Ok(report)
}
