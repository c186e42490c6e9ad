//! Serving side of the protocol: exposes any [`Backend`] over NDJSON
//! streams or a minimal HTTP/1.1 listener. Used by the CLI's `serve-mock`
//! command and by transport tests.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};

use super::protocol::{decode_request, encode_response, sniff_request_id, ErrorCode, ErrorResponse, Response};
use super::Backend;

fn answer(backend: &dyn Backend, bytes: &[u8]) -> Response {
    match decode_request(bytes) {
        Ok(req) => {
            let id = req.request_id().to_string();
            match backend.dispatch(req) {
                Ok(resp) => match resp.validate() {
                    Ok(()) => resp,
                    Err(e) => Response::Error(ErrorResponse::new(id, ErrorCode::Model, e.message())),
                },
                Err(e) => Response::Error(ErrorResponse::from_error(id, &e)),
            }
        }
        Err(e) => Response::Error(ErrorResponse::from_error(sniff_request_id(bytes).unwrap_or_default(), &e)),
    }
}

fn encode(resp: &Response) -> Vec<u8> {
    encode_response(resp).unwrap_or_else(|e| {
        encode_response(&Response::Error(ErrorResponse::new(
            resp.request_id(),
            ErrorCode::Model,
            e.message(),
        )))
        .expect("error responses always encode")
    })
}

/// Answers one request per input line until end of input. Malformed lines
/// get an error response; the loop keeps going.
pub fn serve_lines<R: BufRead, W: Write>(backend: &dyn Backend, mut reader: R, mut writer: W) -> io::Result<()> {
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(());
        }
        if line.trim_ascii().is_empty() {
            continue;
        }
        writer.write_all(&encode(&answer(backend, &line)))?;
        writer.flush()?;
    }
}

/// Maps an HTTP request to `(status, body)`.
///
/// 200 with the response body, 404 for unknown paths, 4xx for validation or
/// protocol errors, 5xx for model and capability errors.
pub fn route_http(backend: &dyn Backend, method: &str, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
    if method == "GET" && path == "/v1/health" {
        return (200, b"{\"status\":\"ok\"}\n".to_vec());
    }
    if method != "POST" {
        return (405, error_body("", ErrorCode::Protocol, "only POST is supported"));
    }
    let expected_kind = match path {
        "/v1/logprobs" => "logprobs",
        "/v1/hidden_states" => "hidden_states",
        "/v1/nsp" => "nsp",
        _ => return (404, error_body("", ErrorCode::Protocol, &format!("no route {path}"))),
    };
    if let Ok(req) = decode_request(body) {
        if req.http_path() != path {
            return (
                400,
                error_body(req.request_id(), ErrorCode::Protocol, &format!("{path} only accepts {expected_kind}")),
            );
        }
    }
    let resp = answer(backend, body);
    let status = match &resp {
        Response::Error(e) => match e.error.code {
            ErrorCode::Validation | ErrorCode::Protocol => 400,
            ErrorCode::Capability => 501,
            ErrorCode::Model => 500,
        },
        _ => 200,
    };
    (status, encode(&resp))
}

fn error_body(id: &str, code: ErrorCode, message: &str) -> Vec<u8> {
    encode(&Response::Error(ErrorResponse::new(id, code, message)))
}

/// Serves connections sequentially, one request per connection. Stops
/// after `max_requests` requests when given.
pub fn serve_http(backend: &dyn Backend, listener: TcpListener, max_requests: Option<usize>) -> io::Result<()> {
    let mut served = 0usize;
    for stream in listener.incoming() {
        let stream = stream?;
        if let Err(e) = handle_connection(backend, stream) {
            if e.kind() != io::ErrorKind::UnexpectedEof {
                return Err(e);
            }
        }
        served += 1;
        if max_requests.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

fn handle_connection(backend: &dyn Backend, stream: TcpStream) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 {
            break;
        }
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let (status, payload) = route_http(backend, &method, &path, &body);
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        501 => "Not Implemented",
        _ => "Internal Server Error",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    )?;
    out.write_all(&payload)?;
    out.flush()
}
