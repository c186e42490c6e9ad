//! Model-inference backends: wire protocol, transports, and a deterministic
//! mock.
//!
//! A [`Backend`] answers three request kinds: per-token log-probabilities,
//! per-token final-layer hidden states, and next-sentence probability. The
//! `fetch_*` helpers validate inputs before dispatch and validate responses
//! after, so scoring code only ever sees well-formed values.

mod http;
mod mock;
pub mod protocol;
pub mod serve;
mod stdio;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub use http::HttpBackend;
pub use mock::MockBackend;
pub use protocol::{
    HiddenStateRequest, HiddenStateResponse, LogProbRequest, LogProbResponse, NspRequest,
    NspResponse, Request, Response, ScoringMode,
};
pub use stdio::StdioBackend;

/// NSP probabilities are clamped into `[NSP_CLAMP, 1 - NSP_CLAMP]`.
pub const NSP_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("model error: {0}")]
    Model(String),
    #[error("capability error: {0}")]
    Capability(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport { retriable: true, .. })
    }

    pub fn message(&self) -> String {
        match self {
            BackendError::Protocol(m)
            | BackendError::Validation(m)
            | BackendError::Model(m)
            | BackendError::Capability(m) => m.clone(),
            BackendError::Transport { message, .. } => message.clone(),
        }
    }

    pub(crate) fn transport(message: impl Into<String>, retriable: bool) -> Self {
        BackendError::Transport { message: message.into(), retriable }
    }
}

/// Anything that answers protocol requests. Implementations must be safe
/// to call from several threads at once.
pub trait Backend: Send + Sync {
    fn dispatch(&self, request: Request) -> Result<Response, BackendError>;

    /// Short human-readable description for reports.
    fn describe(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn dispatch(&self, request: Request) -> Result<Response, BackendError> {
        (**self).dispatch(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn dispatch(&self, request: Request) -> Result<Response, BackendError> {
        (**self).dispatch(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_request_id() -> String {
    format!("r{}", NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

fn call(backend: &dyn Backend, request: Request) -> Result<Response, BackendError> {
    request.validate()?;
    let id = request.request_id().to_string();
    let response = backend.dispatch(request)?;
    response.validate()?;
    if response.request_id() != id {
        return Err(BackendError::Protocol(format!(
            "response for {} received while waiting for {id}",
            response.request_id()
        )));
    }
    match response {
        Response::Error(e) => Err(e.into_error()),
        other => Ok(other),
    }
}

fn unexpected(kind: &str, got: &Response) -> BackendError {
    BackendError::Protocol(format!("expected a {kind} response, got {got:?}"))
}

/// Per-token natural-log probabilities of `target` given `context`.
pub fn fetch_logprobs(
    backend: &dyn Backend,
    context: &str,
    target: &str,
    mode: ScoringMode,
) -> Result<LogProbResponse, BackendError> {
    let request = Request::Logprobs(LogProbRequest {
        request_id: next_request_id(),
        context: context.to_string(),
        target: target.to_string(),
        mode,
    });
    match call(backend, request)? {
        Response::Logprobs(r) => Ok(r),
        other => Err(unexpected("logprobs", &other)),
    }
}

/// Final-layer per-token vectors for `text`.
pub fn fetch_hidden_states(backend: &dyn Backend, text: &str) -> Result<HiddenStateResponse, BackendError> {
    let request = Request::HiddenStates(HiddenStateRequest {
        request_id: next_request_id(),
        target: text.to_string(),
    });
    match call(backend, request)? {
        Response::HiddenStates(r) => Ok(r),
        other => Err(unexpected("hidden_states", &other)),
    }
}

/// Probability that `sentence_b` follows `sentence_a`, clamped away from 0 and 1.
pub fn fetch_nsp(backend: &dyn Backend, sentence_a: &str, sentence_b: &str) -> Result<NspResponse, BackendError> {
    let request = Request::Nsp(NspRequest {
        request_id: next_request_id(),
        context: sentence_a.to_string(),
        target: sentence_b.to_string(),
    });
    match call(backend, request)? {
        Response::Nsp(mut r) => {
            r.p_is_next = r.p_is_next.clamp(NSP_CLAMP, 1.0 - NSP_CLAMP);
            Ok(r)
        }
        other => Err(unexpected("nsp", &other)),
    }
}

/// Parses `mock`, `mock:<vocab>:<dim>[:<seed>]`, `stdio:<cmd>` or `http:<url>`.
pub fn connect(spec: &str, timeout: std::time::Duration) -> Result<Box<dyn Backend>, BackendError> {
    if spec == "mock" {
        return Ok(Box::new(MockBackend::default()));
    }
    if let Some(rest) = spec.strip_prefix("mock:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| BackendError::Validation(format!("bad mock backend spec {spec:?}")))
        };
        if parts.len() < 2 || parts.len() > 3 {
            return Err(BackendError::Validation(format!("bad mock backend spec {spec:?}")));
        }
        let seed = if parts.len() == 3 { num(parts[2])? } else { 0 };
        return Ok(Box::new(MockBackend::new(num(parts[0])? as usize, num(parts[1])? as usize, seed)?));
    }
    if let Some(cmd) = spec.strip_prefix("stdio:") {
        return Ok(Box::new(StdioBackend::spawn(cmd, timeout)?));
    }
    if spec.starts_with("http:") || spec.starts_with("https:") {
        let url = spec.strip_prefix("http:").filter(|u| !u.starts_with("//")).unwrap_or(spec);
        return Ok(Box::new(HttpBackend::new(url, timeout)));
    }
    Err(BackendError::Validation(format!(
        "unknown backend {spec:?}; expected mock, stdio:<cmd> or http:<url>"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Response);

    impl Backend for Fixed {
        fn dispatch(&self, request: Request) -> Result<Response, BackendError> {
            let mut resp = self.0.clone();
            match &mut resp {
                Response::Logprobs(r) => r.request_id = request.request_id().into(),
                Response::Nsp(r) => r.request_id = request.request_id().into(),
                _ => {}
            }
            Ok(resp)
        }

        fn describe(&self) -> String {
            "fixed".into()
        }
    }

    #[test]
    fn nsp_is_clamped() {
        let b = Fixed(Response::Nsp(NspResponse { request_id: String::new(), p_is_next: 1.0 }));
        let r = fetch_nsp(&b, "A.", "B.").unwrap();
        assert!(r.p_is_next < 1.0 && r.p_is_next > 0.0);
        let b = Fixed(Response::Nsp(NspResponse { request_id: String::new(), p_is_next: 0.0 }));
        assert_eq!(fetch_nsp(&b, "A.", "B.").unwrap().p_is_next, NSP_CLAMP);
    }

    #[test]
    fn wrong_kind_is_protocol_error() {
        let b = Fixed(Response::Nsp(NspResponse { request_id: String::new(), p_is_next: 0.3 }));
        assert!(matches!(
            fetch_logprobs(&b, "", "x", ScoringMode::Causal),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn mismatched_request_id_is_protocol_error() {
        struct Stale;
        impl Backend for Stale {
            fn dispatch(&self, _: Request) -> Result<Response, BackendError> {
                Ok(Response::Nsp(NspResponse { request_id: "other".into(), p_is_next: 0.3 }))
            }
            fn describe(&self) -> String {
                "stale".into()
            }
        }
        assert!(matches!(fetch_nsp(&Stale, "a", "b"), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn connect_specs() {
        let t = std::time::Duration::from_secs(1);
        assert!(connect("mock", t).is_ok());
        assert!(connect("mock:8:3:7", t).is_ok());
        assert!(connect("mock:1:3", t).is_err());
        assert!(connect("grpc:foo", t).is_err());
        assert!(connect("http://127.0.0.1:9", t).is_ok());
    }
}
