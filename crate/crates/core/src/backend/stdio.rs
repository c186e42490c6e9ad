use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::protocol::{decode_response, encode_request, sniff_request_id, Request, Response};
use super::{Backend, BackendError};

type Waiter = Sender<Result<Response, BackendError>>;

#[derive(Default)]
struct Pending {
    waiters: HashMap<String, Waiter>,
    /// Set once the reader hits end of stream or an I/O error.
    closed: Option<String>,
}

/// Newline-delimited JSON over a child process's stdin/stdout.
///
/// Several requests may be in flight at once; responses are matched to
/// callers by `request_id`, so the child may answer out of order.
pub struct StdioBackend {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<Mutex<Pending>>,
    timeout: Duration,
    child: Option<Mutex<Child>>,
    label: String,
}

impl StdioBackend {
    /// Spawns `command` (split on whitespace, no shell quoting).
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, BackendError> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| BackendError::Validation("empty stdio backend command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::transport(format!("cannot start {program:?}: {e}"), false))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut backend = StdioBackend::from_streams(BufReader::new(stdout), stdin, timeout);
        backend.child = Some(Mutex::new(child));
        backend.label = format!("stdio:{command}");
        Ok(backend)
    }

    /// Client over arbitrary streams; a reader thread owns `reader`.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let pending = Arc::new(Mutex::new(Pending::default()));
        let shared = Arc::clone(&pending);
        thread::spawn(move || read_loop(reader, shared));
        StdioBackend {
            writer: Mutex::new(Box::new(writer)),
            pending,
            timeout,
            child: None,
            label: "stdio".into(),
        }
    }
}

fn read_loop<R: BufRead>(mut reader: R, pending: Arc<Mutex<Pending>>) {
    let mut line = Vec::new();
    let reason = loop {
        line.clear();
        match reader.read_until(b'\n', &mut line) {
            Ok(0) => break "backend closed its output".to_string(),
            Ok(_) => {}
            Err(e) => break format!("read failed: {e}"),
        }
        if line.trim_ascii().is_empty() {
            continue;
        }
        let (id, result) = match decode_response(&line) {
            Ok(resp) => (Some(resp.request_id().to_string()), Ok(resp)),
            Err(e) => (sniff_request_id(&line), Err(e)),
        };
        let mut p = pending.lock().unwrap();
        match id.and_then(|id| p.waiters.remove(&id)) {
            Some(waiter) => {
                let _ = waiter.send(result);
            }
            // unroutable garbage: nobody to blame, drop it
            None => continue,
        }
    };
    let mut p = pending.lock().unwrap();
    for (_, waiter) in p.waiters.drain() {
        let _ = waiter.send(Err(BackendError::transport(reason.clone(), false)));
    }
    p.closed = Some(reason);
}

impl Backend for StdioBackend {
    fn dispatch(&self, request: Request) -> Result<Response, BackendError> {
        let bytes = encode_request(&request)?;
        let id = request.request_id().to_string();
        let (tx, rx) = mpsc::channel();
        {
            let mut p = self.pending.lock().unwrap();
            if let Some(reason) = &p.closed {
                return Err(BackendError::transport(reason.clone(), false));
            }
            if p.waiters.insert(id.clone(), tx).is_some() {
                return Err(BackendError::Validation(format!("duplicate in-flight request_id {id}")));
            }
        }
        let written = {
            let mut w = self.writer.lock().unwrap();
            w.write_all(&bytes).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().unwrap().waiters.remove(&id);
            return Err(BackendError::transport(format!("write failed: {e}"), false));
        }
        match rx.recv_timeout(self.timeout) {
            Ok(result) => result,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().waiters.remove(&id);
                Err(BackendError::transport(
                    format!("no response to {id} within {:?}", self.timeout),
                    true,
                ))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(BackendError::transport("backend reader stopped", false))
            }
        }
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

impl Drop for StdioBackend {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap();
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::protocol::{decode_request, encode_response, LogProbResponse};
    use super::super::serve::serve_lines;
    use super::super::{fetch_hidden_states, fetch_logprobs, fetch_nsp, MockBackend, ScoringMode};
    use super::*;
    use std::io::{pipe, BufReader};

    fn connected(backend: MockBackend) -> StdioBackend {
        let (server_in, client_out) = pipe().unwrap();
        let (client_in, server_out) = pipe().unwrap();
        thread::spawn(move || {
            let _ = serve_lines(&backend, BufReader::new(server_in), server_out);
        });
        StdioBackend::from_streams(BufReader::new(client_in), client_out, Duration::from_secs(5))
    }

    #[test]
    fn round_trip_through_pipes() {
        let client = connected(MockBackend::new(4, 4, 3).unwrap());
        let direct = MockBackend::new(4, 4, 3).unwrap();
        let r = fetch_logprobs(&client, "ctx", "a b c", ScoringMode::Causal).unwrap();
        assert_eq!(r.logprobs, vec![(0.25f64).ln(); 3]);
        let h = fetch_hidden_states(&client, "a b").unwrap();
        assert_eq!(h.matrix, fetch_hidden_states(&direct, "a b").unwrap().matrix);
        assert_eq!(fetch_nsp(&client, "A.", "B.").unwrap().p_is_next, 0.5);
    }

    #[test]
    fn errors_cross_the_wire() {
        let client = connected(MockBackend::default().causal_only());
        assert!(matches!(fetch_nsp(&client, "A.", "B."), Err(BackendError::Capability(_))));
    }

    #[test]
    fn concurrent_requests_matched_by_id() {
        // A server that answers each batch of four requests in reverse order.
        let (server_in, client_out) = pipe().unwrap();
        let (client_in, mut server_out) = pipe().unwrap();
        thread::spawn(move || {
            let mut reader = BufReader::new(server_in);
            loop {
                let mut batch = Vec::new();
                for _ in 0..4 {
                    let mut line = Vec::new();
                    if reader.read_until(b'\n', &mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    batch.push(decode_request(&line).unwrap());
                }
                for req in batch.into_iter().rev() {
                    let Request::Logprobs(r) = req else { panic!() };
                    let n = r.target.split_whitespace().count();
                    let resp = Response::Logprobs(LogProbResponse {
                        request_id: r.request_id,
                        tokens: vec!["t".into(); n],
                        logprobs: vec![-1.0; n],
                        truncated_to: None,
                    });
                    server_out.write_all(&encode_response(&resp).unwrap()).unwrap();
                }
                server_out.flush().unwrap();
            }
        });
        let client = Arc::new(StdioBackend::from_streams(
            BufReader::new(client_in),
            client_out,
            Duration::from_secs(5),
        ));
        let handles: Vec<_> = (1..=4)
            .map(|n| {
                let client = Arc::clone(&client);
                thread::spawn(move || {
                    let target = vec!["w"; n].join(" ");
                    let r = fetch_logprobs(client.as_ref(), "", &target, ScoringMode::Causal).unwrap();
                    (n, r.logprobs.len())
                })
            })
            .collect();
        for h in handles {
            let (n, got) = h.join().unwrap();
            assert_eq!(n, got);
        }
    }

    #[test]
    fn closed_stream_is_transport_error() {
        let (server_in, client_out) = pipe().unwrap();
        let (client_in, server_out) = pipe().unwrap();
        drop(server_out);
        let client = StdioBackend::from_streams(BufReader::new(client_in), client_out, Duration::from_secs(2));
        let err = fetch_logprobs(&client, "", "x", ScoringMode::Causal).unwrap_err();
        assert!(matches!(err, BackendError::Transport { .. }), "{err:?}");
        drop(server_in);
    }

    #[test]
    fn silent_backend_times_out_retriably() {
        let (_server_in, client_out) = pipe().unwrap();
        let (client_in, _server_out) = pipe().unwrap();
        let client =
            StdioBackend::from_streams(BufReader::new(client_in), client_out, Duration::from_millis(100));
        let err = fetch_logprobs(&client, "", "x", ScoringMode::Causal).unwrap_err();
        assert!(err.is_retriable(), "{err:?}");
    }

    #[test]
    fn missing_program_is_transport_error() {
        let err = StdioBackend::spawn("/definitely/not/a/program", Duration::from_secs(1)).err().unwrap();
        assert!(matches!(err, BackendError::Transport { .. }));
    }
}
