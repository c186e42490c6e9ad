//! Newline-delimited JSON messages exchanged with an inference backend.
//!
//! Every message is one JSON object terminated by `\n`. The `kind` field
//! selects the message type. Log-probabilities on the wire are natural logs.

use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// Each target token conditioned on the context and the preceding target tokens.
    Causal,
    /// Each target token masked in turn, everything else visible.
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRequest {
    pub request_id: String,
    pub context: String,
    pub target: String,
    pub mode: ScoringMode,
}

/// Per-token hidden states for `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStateRequest {
    pub request_id: String,
    pub target: String,
}

/// Is-next probability of `target` following `context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NspRequest {
    pub request_id: String,
    pub context: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Logprobs(LogProbRequest),
    HiddenStates(HiddenStateRequest),
    Nsp(NspRequest),
}

impl Request {
    pub fn request_id(&self) -> &str {
        match self {
            Request::Logprobs(r) => &r.request_id,
            Request::HiddenStates(r) => &r.request_id,
            Request::Nsp(r) => &r.request_id,
        }
    }

    /// HTTP path serving this request kind.
    pub fn http_path(&self) -> &'static str {
        match self {
            Request::Logprobs(_) => "/v1/logprobs",
            Request::HiddenStates(_) => "/v1/hidden_states",
            Request::Nsp(_) => "/v1/nsp",
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let (target, what) = match self {
            Request::Logprobs(r) => (&r.target, "logprobs target"),
            Request::HiddenStates(r) => (&r.target, "hidden-state text"),
            Request::Nsp(r) => {
                if r.context.trim().is_empty() {
                    return Err(BackendError::Validation("nsp sentence_a is empty".into()));
                }
                (&r.target, "nsp sentence_b")
            }
        };
        if target.trim().is_empty() {
            return Err(BackendError::Validation(format!("{what} is empty")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbResponse {
    pub request_id: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_to: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStateResponse {
    pub request_id: String,
    /// `n_tokens` rows of width `dim`.
    pub matrix: Vec<Vec<f64>>,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_to: Option<usize>,
}

impl HiddenStateResponse {
    pub fn n_tokens(&self) -> usize {
        self.matrix.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NspResponse {
    pub request_id: String,
    pub p_is_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    Protocol,
    Model,
    Capability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub request_id: String,
    pub error: ErrorBody,
}

impl ErrorResponse {
    pub fn new(request_id: impl Into<String>, code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorResponse {
            request_id: request_id.into(),
            error: ErrorBody { code, message: message.into() },
        }
    }

    pub fn from_error(request_id: impl Into<String>, err: &BackendError) -> Self {
        let code = match err {
            BackendError::Validation(_) => ErrorCode::Validation,
            BackendError::Protocol(_) => ErrorCode::Protocol,
            BackendError::Capability(_) => ErrorCode::Capability,
            BackendError::Model(_) | BackendError::Transport { .. } => ErrorCode::Model,
        };
        ErrorResponse::new(request_id, code, err.message())
    }

    pub fn into_error(self) -> BackendError {
        let m = self.error.message;
        match self.error.code {
            ErrorCode::Validation => BackendError::Validation(m),
            ErrorCode::Protocol => BackendError::Protocol(m),
            ErrorCode::Model => BackendError::Model(m),
            ErrorCode::Capability => BackendError::Capability(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Logprobs(LogProbResponse),
    HiddenStates(HiddenStateResponse),
    Nsp(NspResponse),
    Error(ErrorResponse),
}

impl Response {
    pub fn request_id(&self) -> &str {
        match self {
            Response::Logprobs(r) => &r.request_id,
            Response::HiddenStates(r) => &r.request_id,
            Response::Nsp(r) => &r.request_id,
            Response::Error(r) => &r.request_id,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self {
            Response::Logprobs(r) => {
                if r.tokens.is_empty() {
                    return Err(BackendError::Validation("logprobs response has no tokens".into()));
                }
                if r.tokens.len() != r.logprobs.len() {
                    return Err(BackendError::Validation(format!(
                        "{} tokens but {} logprobs",
                        r.tokens.len(),
                        r.logprobs.len()
                    )));
                }
                if let Some(lp) = r.logprobs.iter().find(|lp| !(**lp <= 0.0) || !lp.is_finite()) {
                    return Err(BackendError::Validation(format!(
                        "logprob {lp} is not a finite value <= 0"
                    )));
                }
            }
            Response::HiddenStates(r) => {
                if r.matrix.is_empty() || r.dim == 0 {
                    return Err(BackendError::Validation("empty hidden-state matrix".into()));
                }
                if let Some(row) = r.matrix.iter().find(|row| row.len() != r.dim) {
                    return Err(BackendError::Validation(format!(
                        "hidden-state row of width {} but dim is {}",
                        row.len(),
                        r.dim
                    )));
                }
                if r.matrix.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(BackendError::Validation("non-finite hidden-state entry".into()));
                }
            }
            Response::Nsp(r) => {
                if !(0.0..=1.0).contains(&r.p_is_next) {
                    return Err(BackendError::Validation(format!(
                        "p_is_next {} outside [0, 1]",
                        r.p_is_next
                    )));
                }
            }
            Response::Error(_) => {}
        }
        Ok(())
    }
}

fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    // serde_json never emits raw newlines: string contents are escaped.
    let mut out = serde_json::to_vec(msg).expect("protocol messages always serialize");
    out.push(b'\n');
    out
}

fn decode<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T, BackendError> {
    let trimmed = bytes.trim_ascii();
    if trimmed.is_empty() {
        return Err(BackendError::Protocol("empty message".into()));
    }
    serde_json::from_slice(trimmed).map_err(|e| BackendError::Protocol(e.to_string()))
}

pub fn encode_request(req: &Request) -> Result<Vec<u8>, BackendError> {
    req.validate()?;
    Ok(encode(req))
}

pub fn decode_request(bytes: &[u8]) -> Result<Request, BackendError> {
    let req: Request = decode(bytes)?;
    req.validate()?;
    Ok(req)
}

pub fn encode_response(resp: &Response) -> Result<Vec<u8>, BackendError> {
    resp.validate()?;
    Ok(encode(resp))
}

pub fn decode_response(bytes: &[u8]) -> Result<Response, BackendError> {
    let resp: Response = decode(bytes)?;
    resp.validate()?;
    Ok(resp)
}

/// Best-effort `request_id` of a message that failed to decode.
pub fn sniff_request_id(bytes: &[u8]) -> Option<String> {
    let v: serde_json::Value = serde_json::from_slice(bytes.trim_ascii()).ok()?;
    v.get("request_id")?.as_str().map(str::to_string)
}
