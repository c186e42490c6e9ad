use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::protocol::{ErrorCode, ErrorResponse, HiddenStateResponse, LogProbResponse, NspResponse, Request, Response};
use super::{Backend, BackendError};

/// Deterministic stand-in for a language model.
///
/// Tokens are whitespace-separated. Every token gets log-probability
/// `ln(1/V)`, hidden vectors are drawn from a generator seeded by a hash of
/// `(seed, token, position)`, and the next-sentence probability is 0.5.
#[derive(Debug, Clone)]
pub struct MockBackend {
    vocab_size: usize,
    dim: usize,
    seed: u64,
    nsp_head: bool,
    max_window: Option<usize>,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend {
            vocab_size: 4,
            dim: 16,
            seed: 0,
            nsp_head: true,
            max_window: None,
        }
    }
}

impl MockBackend {
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Result<Self, BackendError> {
        if vocab_size < 2 {
            return Err(BackendError::Validation(format!("mock vocabulary size {vocab_size} < 2")));
        }
        if dim == 0 {
            return Err(BackendError::Validation("mock hidden width must be >= 1".into()));
        }
        Ok(MockBackend { vocab_size, dim, seed, ..Default::default() })
    }

    /// A backend without a next-sentence head, like a causal-only model.
    pub fn causal_only(mut self) -> Self {
        self.nsp_head = false;
        self
    }

    /// Limit on context + target tokens; older context tokens are dropped first.
    pub fn with_window(mut self, tokens: usize) -> Self {
        self.max_window = Some(tokens);
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The hidden vector of `token` at `position`.
    pub fn token_vector(&self, token: &str, position: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(token_key(self.seed, token, position));
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn truncation(&self, context_tokens: usize, target_tokens: usize) -> Option<usize> {
        let window = self.max_window?;
        let total = context_tokens + target_tokens;
        (total > window).then(|| window.max(target_tokens))
    }
}

/// 64-bit FNV-1a over the seed, the token bytes and the position.
fn token_key(seed: u64, token: &str, position: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(&seed.to_le_bytes());
    feed(token.as_bytes());
    feed(&[0xff]);
    feed(&(position as u64).to_le_bytes());
    h
}

impl Backend for MockBackend {
    fn dispatch(&self, request: Request) -> Result<Response, BackendError> {
        request.validate()?;
        Ok(match request {
            Request::Logprobs(r) => {
                let tokens: Vec<String> = r.target.split_whitespace().map(str::to_string).collect();
                let lp = -(self.vocab_size as f64).ln();
                let truncated_to = self.truncation(r.context.split_whitespace().count(), tokens.len());
                Response::Logprobs(LogProbResponse {
                    request_id: r.request_id,
                    logprobs: vec![lp; tokens.len()],
                    tokens,
                    truncated_to,
                })
            }
            Request::HiddenStates(r) => {
                let matrix: Vec<Vec<f64>> = r
                    .target
                    .split_whitespace()
                    .enumerate()
                    .map(|(i, tok)| self.token_vector(tok, i))
                    .collect();
                Response::HiddenStates(HiddenStateResponse {
                    request_id: r.request_id,
                    matrix,
                    dim: self.dim,
                    truncated_to: None,
                })
            }
            Request::Nsp(r) if self.nsp_head => Response::Nsp(NspResponse {
                request_id: r.request_id,
                p_is_next: 0.5,
            }),
            Request::Nsp(r) => Response::Error(ErrorResponse::new(
                r.request_id,
                ErrorCode::Capability,
                "backend has no next-sentence head",
            )),
        })
    }

    fn describe(&self) -> String {
        format!("mock(vocab={}, dim={}, seed={})", self.vocab_size, self.dim, self.seed)
    }
}
