use std::time::Duration;

use ureq::Agent;

use super::protocol::{decode_response, encode_request, Request, Response};
use super::{Backend, BackendError};

/// JSON over HTTP POST to `/v1/logprobs`, `/v1/hidden_states` and `/v1/nsp`.
pub struct HttpBackend {
    base: String,
    agent: Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let base = if base_url.contains("://") {
            base_url.to_string()
        } else {
            format!("http://{base_url}")
        };
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }
}

impl Backend for HttpBackend {
    fn dispatch(&self, request: Request) -> Result<Response, BackendError> {
        let body = encode_request(&request)?;
        let url = format!("{}{}", self.base, request.http_path());
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(&body[..])
            .map_err(|e| {
                let retriable = matches!(
                    e,
                    ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed
                );
                BackendError::transport(format!("{url}: {e}"), retriable)
            })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::transport(format!("{url}: reading body: {e}"), true))?;
        match (status, decode_response(text.as_bytes())) {
            (200, decoded) => decoded,
            (_, Ok(Response::Error(e))) => Err(e.into_error()),
            (400..=499, _) => Err(BackendError::Validation(format!("{url} returned {status}: {text}"))),
            (_, _) => Err(BackendError::Model(format!("{url} returned {status}: {text}"))),
        }
    }

    fn describe(&self) -> String {
        format!("http:{}", self.base)
    }
}

#[cfg(test)]
mod tests {
    use super::super::serve::serve_http;
    use super::super::{fetch_hidden_states, fetch_logprobs, fetch_nsp, MockBackend, ScoringMode};
    use super::*;
    use std::net::TcpListener;
    use std::thread;

    fn server(backend: MockBackend, requests: usize) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || serve_http(&backend, listener, Some(requests)));
        format!("http://{addr}")
    }

    #[test]
    fn endpoints_round_trip() {
        let url = server(MockBackend::new(8, 3, 1).unwrap(), 3);
        let client = HttpBackend::new(&url, Duration::from_secs(5));
        let r = fetch_logprobs(&client, "", "a b", ScoringMode::Masked).unwrap();
        assert_eq!(r.logprobs, vec![-(8f64).ln(); 2]);
        let h = fetch_hidden_states(&client, "a b c").unwrap();
        assert_eq!((h.n_tokens(), h.dim), (3, 3));
        assert_eq!(fetch_nsp(&client, "A.", "B.").unwrap().p_is_next, 0.5);
    }

    #[test]
    fn capability_error_over_http() {
        let url = server(MockBackend::default().causal_only(), 1);
        let client = HttpBackend::new(&url, Duration::from_secs(5));
        assert!(matches!(fetch_nsp(&client, "A.", "B."), Err(BackendError::Capability(_))));
    }

    #[test]
    fn unreachable_endpoint() {
        // bind then drop to get a port nobody listens on
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let client = HttpBackend::new(&format!("127.0.0.1:{port}"), Duration::from_secs(2));
        let err = fetch_logprobs(&client, "", "x", ScoringMode::Causal).unwrap_err();
        assert!(matches!(err, BackendError::Transport { .. }), "{err:?}");
    }
}
