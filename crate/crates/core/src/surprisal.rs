//! Sentence surprisal by chain rule (CR), negative log-likelihood (NLL) and
//! next-sentence prediction (NSP).
//!
//! Backends report natural logs; this module is the single place where they
//! are converted to bits.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{fetch_logprobs, fetch_nsp, Backend, BackendError, ScoringMode};
use crate::corpus::Discourse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurprisalMethod {
    Cr,
    Nll,
    Nsp,
}

impl SurprisalMethod {
    pub const ALL: [SurprisalMethod; 3] = [SurprisalMethod::Cr, SurprisalMethod::Nll, SurprisalMethod::Nsp];

    pub fn as_str(self) -> &'static str {
        match self {
            SurprisalMethod::Cr => "cr",
            SurprisalMethod::Nll => "nll",
            SurprisalMethod::Nsp => "nsp",
        }
    }

    /// Backend scoring mode for the token-level methods.
    pub fn scoring_mode(self) -> Option<ScoringMode> {
        match self {
            SurprisalMethod::Cr => Some(ScoringMode::Causal),
            SurprisalMethod::Nll => Some(ScoringMode::Masked),
            SurprisalMethod::Nsp => None,
        }
    }
}

impl fmt::Display for SurprisalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SurprisalMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cr" => Ok(SurprisalMethod::Cr),
            "nll" => Ok(SurprisalMethod::Nll),
            "nsp" => Ok(SurprisalMethod::Nsp),
            other => Err(format!("unknown surprisal method {other:?} (expected cr, nll or nsp)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SurprisalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sentence {sentence}: {source}")]
    Backend {
        sentence: usize,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurprisalScore {
    pub method: SurprisalMethod,
    pub bits: f64,
    /// Backend subword tokens summed over; 0 for NSP.
    pub token_count: usize,
    pub context_sentences_used: usize,
}

impl SurprisalScore {
    pub fn nats(&self) -> f64 {
        self.bits * LN_2
    }
}

fn check_logprobs(logprobs: &[f64]) -> Result<(), SurprisalError> {
    if logprobs.is_empty() {
        return Err(SurprisalError::Domain("empty log-probability list".into()));
    }
    if let Some(lp) = logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
        return Err(SurprisalError::Domain(format!("log-probability {lp} is not finite and <= 0")));
    }
    Ok(())
}

/// Compensated (Neumaier) sum, so `n` equal terms give `n * x` rounded once.
fn nll_of(logprobs: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &x in logprobs {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    // + 0.0 turns a -0.0 sum into 0.0
    -(sum + carry) + 0.0
}

/// Surprisal of a sentence from its per-token log-probabilities, multiplied
/// out by the chain rule.
pub fn cr_surprisal(logprobs: &[f64]) -> Result<SurprisalScore, SurprisalError> {
    check_logprobs(logprobs)?;
    Ok(SurprisalScore {
        method: SurprisalMethod::Cr,
        bits: nll_of(logprobs) / LN_2,
        token_count: logprobs.len(),
        context_sentences_used: 0,
    })
}

/// Summed negative log-likelihood, in natural-log units.
pub fn nll(logprobs: &[f64]) -> Result<f64, SurprisalError> {
    check_logprobs(logprobs)?;
    Ok(nll_of(logprobs))
}

pub fn nll_surprisal(logprobs: &[f64]) -> Result<SurprisalScore, SurprisalError> {
    Ok(SurprisalScore {
        method: SurprisalMethod::Nll,
        bits: nll(logprobs)? / LN_2,
        token_count: logprobs.len(),
        context_sentences_used: 0,
    })
}

/// `e^{-nll}`.
pub fn nll_to_probability(nll: f64) -> Result<f64, SurprisalError> {
    if !(nll >= 0.0) {
        return Err(SurprisalError::Domain(format!("negative log-likelihood {nll} must be >= 0")));
    }
    Ok((-nll).exp())
}

pub fn nsp_surprisal(p_is_next: f64) -> Result<SurprisalScore, SurprisalError> {
    if !(p_is_next > 0.0 && p_is_next < 1.0) {
        return Err(SurprisalError::Domain(format!(
            "next-sentence probability {p_is_next} must lie strictly inside (0, 1)"
        )));
    }
    Ok(SurprisalScore {
        method: SurprisalMethod::Nsp,
        bits: -p_is_next.log2(),
        token_count: 0,
        context_sentences_used: 1,
    })
}

/// How much preceding discourse is sent as context for CR and NLL.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPolicy {
    /// At most this many preceding sentences; `None` for all of them.
    #[serde(default)]
    pub max_context_sentences: Option<usize>,
    /// At most this many whitespace tokens, oldest dropped first.
    #[serde(default)]
    pub max_context_tokens: Option<usize>,
}

impl ContextPolicy {
    pub fn sentences(k: usize) -> Self {
        ContextPolicy { max_context_sentences: Some(k), max_context_tokens: None }
    }

    /// Context string for sentence `index` and the number of sentences it draws on.
    pub fn context_for(&self, discourse: &Discourse, index: usize) -> (String, usize) {
        let first = self.max_context_sentences.map_or(0, |k| index.saturating_sub(k));
        let sentences = &discourse.sentences[first..index];
        let Some(max_tokens) = self.max_context_tokens else {
            let text: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
            return (text.join(" "), sentences.len());
        };
        let mut kept: Vec<&str> = Vec::new();
        let mut used = 0;
        for s in sentences.iter().rev() {
            let room = max_tokens - kept.len();
            if room == 0 {
                break;
            }
            let toks: Vec<&str> = s.text.split_whitespace().collect();
            let take = toks.len().min(room);
            kept.extend(toks[toks.len() - take..].iter().rev());
            used += 1;
        }
        kept.reverse();
        (kept.join(" "), used)
    }
}

/// One score per sentence. NSP leaves sentence 0 as `None`, since it needs
/// a predecessor.
pub fn score_discourse_surprisal(
    discourse: &Discourse,
    backend: &dyn Backend,
    method: SurprisalMethod,
    policy: &ContextPolicy,
) -> Result<Vec<Option<SurprisalScore>>, SurprisalError> {
    if discourse.is_empty() {
        return Err(SurprisalError::Domain(format!("discourse {} has no sentences", discourse.text_id)));
    }
    let wrap = |sentence: usize| move |source| SurprisalError::Backend { sentence, source };
    let mut out = Vec::with_capacity(discourse.len());
    for (i, sentence) in discourse.sentences.iter().enumerate() {
        let score = match method.scoring_mode() {
            Some(mode) => {
                let (context, used) = policy.context_for(discourse, i);
                let resp = fetch_logprobs(backend, &context, &sentence.text, mode).map_err(wrap(i))?;
                let mut score = match method {
                    SurprisalMethod::Cr => cr_surprisal(&resp.logprobs)?,
                    _ => nll_surprisal(&resp.logprobs)?,
                };
                score.context_sentences_used = used;
                Some(score)
            }
            None if i == 0 => None,
            None => {
                let prev = &discourse.sentences[i - 1].text;
                let resp = fetch_nsp(backend, prev, &sentence.text).map_err(wrap(i))?;
                Some(nsp_surprisal(resp.p_is_next)?)
            }
        };
        out.push(score);
    }
    Ok(out)
}
