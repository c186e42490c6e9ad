use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError};
use crate::corpus::DiscourseFormat;
use crate::gamlite::{lambda_grid, DEFAULT_K};
use crate::relevance::WindowSpec;
use crate::surprisal::{ContextPolicy, SurprisalMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringOptions {
    /// Discourses scored concurrently.
    pub in_flight: usize,
    pub timeout_secs: u64,
    /// Extra attempts per discourse after a retriable backend error.
    pub retries: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            in_flight: 4,
            timeout_secs: 60,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateOptions {
    /// Basis size of every smooth.
    pub k: usize,
    pub lambda_grid: Vec<f64>,
    /// Repeat the analysis within each language.
    pub per_language: bool,
    /// Fit a sentence-level permutation of each metric as a null check.
    pub permutation_check: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            k: DEFAULT_K,
            lambda_grid: lambda_grid(),
            per_language: false,
            permutation_check: true,
        }
    }
}

/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// `mock`, `mock:<vocab>:<dim>`, `stdio:<cmd>` or `http:<url>`.
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_methods")]
    pub methods: Vec<SurprisalMethod>,
    #[serde(default = "default_true")]
    pub relevance: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub discourse_dir: PathBuf,
    #[serde(default = "default_format")]
    pub discourse_format: DiscourseFormat,
    pub reading_data: PathBuf,
    /// Frequency list path per language code.
    #[serde(default)]
    pub frequency_lists: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub context: ContextPolicy,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub scoring: ScoringOptions,
    #[serde(default)]
    pub evaluate: EvaluateOptions,
}

fn default_backend() -> String {
    "mock".into()
}

fn default_methods() -> Vec<SurprisalMethod> {
    SurprisalMethod::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_format() -> DiscourseFormat {
    DiscourseFormat::Lines
}

impl PipelineConfig {
    /// Config with defaults for everything but the inputs.
    pub fn new(discourse_dir: impl Into<PathBuf>, reading_data: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            backend: default_backend(),
            methods: default_methods(),
            relevance: true,
            seed: 0,
            out_dir: default_out(),
            discourse_dir: discourse_dir.into(),
            discourse_format: default_format(),
            reading_data: reading_data.into(),
            frequency_lists: BTreeMap::new(),
            context: ContextPolicy::default(),
            window: WindowSpec::default(),
            scoring: ScoringOptions::default(),
            evaluate: EvaluateOptions::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.discourse_dir);
        fix(&mut self.reading_data);
        for p in self.frequency_lists.values_mut() {
            fix(p);
        }
    }

    /// Checks settings that do not touch the filesystem.
    pub fn validate_settings(&self) -> Result<(), PipelineError> {
        if self.methods.is_empty() && !self.relevance {
            return Err(PipelineError::Config("no metric enabled".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(PipelineError::Config("a surprisal method is listed twice".into()));
        }
        self.window
            .validate()
            .map_err(|e| PipelineError::Config(format!("window: {e}")))?;
        if self.scoring.in_flight == 0 {
            return Err(PipelineError::Config("scoring.in_flight must be at least 1".into()));
        }
        if self.scoring.timeout_secs == 0 {
            return Err(PipelineError::Config("scoring.timeout_secs must be at least 1".into()));
        }
        if self.evaluate.k < 4 {
            return Err(PipelineError::Config(format!("evaluate.k = {} < 4", self.evaluate.k)));
        }
        let grid = &self.evaluate.lambda_grid;
        if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(PipelineError::Config(
                "evaluate.lambda_grid must be a non-empty list of finite values >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Settings plus existence of every referenced input path.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_settings()?;
        if !self.discourse_dir.is_dir() {
            return Err(PipelineError::Config(format!(
                "discourse_dir {} is not a directory",
                self.discourse_dir.display()
            )));
        }
        if !self.reading_data.is_file() {
            return Err(PipelineError::Config(format!(
                "reading_data {} does not exist",
                self.reading_data.display()
            )));
        }
        for (lang, path) in &self.frequency_lists {
            if !path.is_file() {
                return Err(PipelineError::Config(format!(
                    "frequency list for {lang} ({}) does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.scoring.timeout_secs)
    }

    /// Backend spec with the seed applied to a bare `mock`.
    pub fn backend_spec(&self) -> String {
        match self.backend.as_str() {
            "mock" => format!("mock:4:16:{}", self.seed),
            other => other.to_string(),
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.out_dir.join("store")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join(super::METRICS_CSV)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoint")
    }
}
