//! Sentence-level surprisal and semantic relevance as predictors of reading
//! speed: corpus ingestion, language-model backends, metric computation, a
//! penalized additive regression for model comparison, and the pipeline that
//! ties them together.

pub mod backend;
pub mod corpus;
pub mod gamlite;
pub mod pipeline;
pub mod relevance;
pub mod surprisal;
pub mod synth;

pub use backend::{connect, Backend, BackendError, MockBackend};
pub use corpus::{CorpusError, Discourse, DiscourseFormat, FrequencyTable, ReadingRecord, Sentence};
pub use gamlite::{delta_aic, pearson, FeatureRow, FitResult, GamError, ModelSpec};
pub use pipeline::{EvaluationReport, MetricRow, PipelineConfig, PipelineError};
pub use relevance::{attention_aware_relevance, RelevanceError, WindowSpec};
pub use surprisal::{ContextPolicy, SurprisalError, SurprisalMethod, SurprisalScore};
pub use synth::{SynthCorpus, SynthSpec};
