//! GAM-lite: penalized cubic regression splines with a language fixed
//! effect and ridge-penalized participant intercepts, fitted in closed
//! form. Smoothing parameters are chosen by GCV over a grid and models
//! are compared by AIC computed with effective degrees of freedom.

mod bspline;
mod model;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bspline::{bspline_basis, BSplineBasis};
pub use model::{
    fit_penalized, fit_penalized_with, lambda_grid, select_lambda, Design, FitOptions, FitResult, ModelSpec, PenalizedSolution,
    RankPolicy, SmoothTerm, TermFit, DEFAULT_K,
};
pub use stats::{aic, aic_value, delta_aic, pearson, pearson_pairwise};

/// Covariates every model smooths.
pub const CONTROL_COVARIATES: [&str; 2] = ["mean_word_length", "mean_log_freq"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GamError {
    #[error("basis: {0}")]
    Basis(String),
    #[error("degenerate covariate: {0}")]
    DegenerateCovariate(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("invalid row: {0}")]
    Row(String),
    #[error("model {model}: insufficient rows, n = {n} but the design has {p} columns")]
    InsufficientRows { model: String, n: usize, p: usize },
    #[error("invalid smoothing parameters: {0}")]
    Lambda(String),
    #[error(
        "singular penalized normal matrix (eigenvalues in [{min_eigenvalue:e}, {max_eigenvalue:e}], rank {rank} of {p})"
    )]
    Singular {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
        rank: usize,
        p: usize,
    },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("cannot compare fits: {0}")]
    Comparison(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
}

/// One participant reading one sentence, with the sentence's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant_id: String,
    pub language: String,
    pub text_id: String,
    pub sentence_index: usize,
    /// Words per second.
    pub reading_speed: f64,
    pub mean_word_length: f64,
    pub mean_log_freq: f64,
    /// Metric columns by name; `None` marks a missing value.
    pub metrics: BTreeMap<String, Option<f64>>,
}

impl FeatureRow {
    /// Value of a control or metric covariate, `None` when missing or unknown.
    pub fn covariate(&self, name: &str) -> Option<f64> {
        match name {
            "mean_word_length" => Some(self.mean_word_length),
            "mean_log_freq" => Some(self.mean_log_freq),
            _ => self.metrics.get(name).copied().flatten(),
        }
    }
}
