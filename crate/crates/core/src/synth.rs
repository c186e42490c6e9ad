//! Seeded synthetic corpora with reading times planted on mock-backend metrics.
//!
//! Reading speed (words per second) for participant `p` on sentence `s` is
//!
//! ```text
//! 4 + control effects + surprisal_effect * z(ln CR_s) + relevance_effect * z(ln(1 + R_s))
//!   + language offset + u_p + e_ps
//! ```
//!
//! with `u_p ~ N(0, participant_sd)`, `e_ps ~ N(0, noise_sd)` and `z` the
//! standardization over sentences. Metrics come from the same mock backend the
//! pipeline uses for the written config, so a pipeline run recovers them exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};

use crate::backend::connect;
use crate::corpus::{reading_tsv, Discourse, FrequencyTable, ReadingRecord};
use crate::pipeline::{io_err, score_discourse, MetricRow, PipelineConfig, PipelineError};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub languages: Vec<String>,
    pub discourses_per_language: usize,
    pub sentences_per_discourse: usize,
    /// Assigned to languages round-robin; each reads every discourse of its language.
    pub participants: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub vocab_size: usize,
    /// Change in speed per standard deviation of log surprisal.
    pub surprisal_effect: f64,
    /// Change in speed per standard deviation of log relevance.
    pub relevance_effect: f64,
    pub participant_sd: f64,
    pub noise_sd: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            languages: vec!["en".into(), "fi".into(), "tr".into()],
            discourses_per_language: 5,
            sentences_per_discourse: 20,
            participants: 20,
            min_words: 4,
            max_words: 18,
            vocab_size: 400,
            surprisal_effect: -0.15,
            relevance_effect: 0.15,
            participant_sd: 0.4,
            noise_sd: 0.4,
        }
    }
}

impl SynthSpec {
    pub fn with_seed(seed: u64) -> Self {
        SynthSpec {
            seed,
            ..Default::default()
        }
    }

    /// No planted metric effect: speeds depend on controls, language and participant only.
    pub fn null(seed: u64) -> Self {
        SynthSpec {
            surprisal_effect: 0.0,
            relevance_effect: 0.0,
            ..SynthSpec::with_seed(seed)
        }
    }

    /// Config for these inputs, with paths relative to the directory written by
    /// [`SynthCorpus::write`].
    pub fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::new("texts", "reading.tsv");
        cfg.seed = self.seed;
        cfg.frequency_lists = self
            .languages
            .iter()
            .map(|l| (l.clone(), format!("freq/{l}.tsv").into()))
            .collect();
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub discourses: Vec<Discourse>,
    pub frequency: BTreeMap<String, FrequencyTable>,
    pub metrics: Vec<MetricRow>,
    pub reading: Vec<ReadingRecord>,
}

const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(1..=4);
        let word: String = (0..syllables)
            .map(|_| {
                let onset = ONSETS[rng.random_range(0..ONSETS.len())];
                let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
                format!("{onset}{vowel}")
            })
            .collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

impl SynthCorpus {
    pub fn generate(spec: &SynthSpec) -> Result<Self, PipelineError> {
        if spec.languages.is_empty() || spec.participants < spec.languages.len() {
            return Err(PipelineError::Config(
                "synthetic corpus needs a language and at least one participant per language".into(),
            ));
        }
        if spec.min_words == 0 || spec.min_words > spec.max_words || spec.vocab_size < 2 {
            return Err(PipelineError::Config("synthetic sentence length or vocabulary out of range".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let zipf = Zipf::new(spec.vocab_size as f64, 1.0).expect("valid Zipf parameters");

        let mut discourses = Vec::new();
        let mut frequency = BTreeMap::new();
        for lang in &spec.languages {
            let vocab = pseudo_words(&mut rng, spec.vocab_size);
            let counts: HashMap<String, u64> = vocab
                .iter()
                .enumerate()
                .map(|(rank, w)| (w.clone(), (1_000_000.0 / (rank + 1) as f64).round() as u64))
                .collect();
            frequency.insert(lang.clone(), FrequencyTable::from_counts(lang.clone(), counts));
            for d in 0..spec.discourses_per_language {
                let sentences: Vec<String> = (0..spec.sentences_per_discourse)
                    .map(|_| {
                        let len = rng.random_range(spec.min_words..=spec.max_words);
                        let words: Vec<&str> = (0..len)
                            .map(|_| vocab[zipf.sample(&mut rng) as usize - 1].as_str())
                            .collect();
                        let mut s = words.join(" ");
                        s[..1].make_ascii_uppercase();
                        s.push('.');
                        s
                    })
                    .collect();
                discourses.push(Discourse::from_sentences(format!("{lang}{:02}", d + 1), lang.clone(), &sentences));
            }
        }

        let config = spec.config();
        let backend = connect(&config.backend_spec(), Duration::from_secs(60))?;
        let mut metrics = Vec::new();
        for d in &discourses {
            metrics.extend(score_discourse(d, &frequency[&d.language], backend.as_ref(), &config)?);
        }

        let ln_cr: Vec<f64> = metrics
            .iter()
            .map(|m| m.surprisal_cr_bits.map_or(0.0, f64::ln))
            .collect();
        let ln_rel: Vec<f64> = metrics
            .iter()
            .map(|m| m.relevance.map_or(0.0, |r| (1.0 + r).ln()))
            .collect();
        let (z_cr, z_rel) = (standardize(&ln_cr), standardize(&ln_rel));
        let mean_of = |f: fn(&MetricRow) -> f64| metrics.iter().map(f).sum::<f64>() / metrics.len() as f64;
        let (wl_mean, lf_mean) = (mean_of(|m| m.mean_word_length), mean_of(|m| m.mean_log_freq));
        let sentence_effect: Vec<f64> = metrics
            .iter()
            .enumerate()
            .map(|(i, m)| {
                -0.2 * (m.mean_word_length - wl_mean)
                    + 0.3 * (m.mean_log_freq - lf_mean)
                    + spec.surprisal_effect * z_cr[i]
                    + spec.relevance_effect * z_rel[i]
            })
            .collect();

        let lang_index: BTreeMap<&str, usize> = spec
            .languages
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let participant = Normal::new(0.0, spec.participant_sd).expect("finite sd");
        let noise = Normal::new(0.0, spec.noise_sd).expect("finite sd");
        let intercepts: Vec<f64> = (0..spec.participants).map(|_| participant.sample(&mut rng)).collect();
        let mut reading = Vec::new();
        for (p, u) in intercepts.iter().enumerate() {
            let lang = p % spec.languages.len();
            let offset = 0.3 * lang as f64 - 0.3;
            for (i, m) in metrics.iter().enumerate() {
                if lang_index[m.lang.as_str()] != lang {
                    continue;
                }
                let speed = (4.0 + sentence_effect[i] + offset + u + noise.sample(&mut rng)).max(0.5);
                let fixation = (m.n_words as f64 / speed * 1e4).round() / 10.0;
                reading.push(
                    ReadingRecord::new(format!("p{:02}", p + 1), &m.text_id, m.sentence_index, m.n_words, fixation)
                        .expect("positive fixation"),
                );
            }
        }
        Ok(SynthCorpus {
            spec: spec.clone(),
            discourses,
            frequency,
            metrics,
            reading,
        })
    }

    /// Writes `texts/`, `freq/`, `reading.tsv` and `config.toml` into `dir`
    /// and returns the loaded config.
    pub fn write(&self, dir: &Path) -> Result<PipelineConfig, PipelineError> {
        let texts = dir.join("texts");
        let freq = dir.join("freq");
        fs::create_dir_all(&texts).map_err(io_err(&texts))?;
        fs::create_dir_all(&freq).map_err(io_err(&freq))?;
        for d in &self.discourses {
            let path = texts.join(format!("{}.txt", d.text_id));
            fs::write(&path, d.to_lines()).map_err(io_err(&path))?;
        }
        for (lang, table) in &self.frequency {
            let path = freq.join(format!("{lang}.tsv"));
            fs::write(&path, table.to_tsv()).map_err(io_err(&path))?;
        }
        let path = dir.join("reading.tsv");
        fs::write(&path, reading_tsv(&self.reading)).map_err(io_err(&path))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.spec.config().to_toml()).map_err(io_err(&path))?;
        PipelineConfig::load(&path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let spec = SynthSpec {
            discourses_per_language: 2,
            sentences_per_discourse: 4,
            participants: 6,
            ..SynthSpec::with_seed(3)
        };
        let a = SynthCorpus::generate(&spec).unwrap();
        assert_eq!(a.discourses.len(), 6);
        assert_eq!(a.metrics.len(), 24);
        assert_eq!(a.reading.len(), 6 * 8);
        assert!(a.reading.iter().all(|r| r.reading_speed > 0.0));
        let b = SynthCorpus::generate(&spec).unwrap();
        assert_eq!(a.reading, b.reading);
        assert_eq!(a.metrics, b.metrics);
        let c = SynthCorpus::generate(&SynthSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.reading, c.reading);
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SynthSpec {
            participants: 2,
            ..Default::default()
        };
        assert!(SynthCorpus::generate(&spec).is_err());
    }
}
