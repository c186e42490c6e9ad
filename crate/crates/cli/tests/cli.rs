use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_sentread");

fn sentread(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sentread(args);
    assert!(
        out.status.success(),
        "sentread {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path, seed: &str) -> PathBuf {
    ok(&["simulate", dir.to_str().unwrap(), "--seed", seed]);
    dir.join("config.toml")
}

fn read_outputs(out: &Path) -> Vec<Vec<u8>> {
    ["metrics.csv", "evaluation.json", "correlation.json", "ingest_report.json"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect()
}

#[test]
fn two_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate(dir.path(), "7");
    let cfg = config.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&["run", "--config", cfg, "--out", a.to_str().unwrap()]);
    assert!(stdout.contains("surprisal_cr_bits"), "{stdout}");
    ok(&["--config", cfg, "--out", b.to_str().unwrap(), "ingest"]);
    ok(&["--config", cfg, "--out", b.to_str().unwrap(), "score"]);
    ok(&["--config", cfg, "--out", b.to_str().unwrap(), "evaluate"]);
    ok(&["--config", cfg, "--out", b.to_str().unwrap(), "correlate"]);
    assert_eq!(read_outputs(&a), read_outputs(&b));
}

#[test]
fn stdio_transport_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate(dir.path(), "3");
    let cfg = config.to_str().unwrap();
    let local = dir.path().join("local");
    let remote = dir.path().join("remote");
    ok(&["--config", cfg, "--out", local.to_str().unwrap(), "ingest"]);
    ok(&["--config", cfg, "--out", local.to_str().unwrap(), "score"]);
    let backend = format!("stdio:{BIN} serve-mock --seed 3");
    ok(&["--config", cfg, "--out", remote.to_str().unwrap(), "ingest"]);
    ok(&[
        "--config",
        cfg,
        "--out",
        remote.to_str().unwrap(),
        "--backend",
        &backend,
        "score",
    ]);
    assert_eq!(
        fs::read(local.join("metrics.csv")).unwrap(),
        fs::read(remote.join("metrics.csv")).unwrap()
    );
}

#[test]
fn http_transport_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate(dir.path(), "5");
    let cfg = config.to_str().unwrap();
    let mut server = Command::new(BIN)
        .args(["serve-mock", "--http", "127.0.0.1:0", "--seed", "5"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let local = dir.path().join("local");
    let remote = dir.path().join("remote");
    ok(&["--config", cfg, "--out", local.to_str().unwrap(), "--methods", "cr,relevance", "run"]);
    let backend = format!("http:{url}");
    let result = sentread(&[
        "--config",
        cfg,
        "--out",
        remote.to_str().unwrap(),
        "--methods",
        "cr,relevance",
        "--backend",
        &backend,
        "run",
    ]);
    server.kill().ok();
    server.wait().ok();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert_eq!(read_outputs(&local), read_outputs(&remote));
    let header = fs::read_to_string(local.join("metrics.csv")).unwrap();
    let second = header.lines().nth(1).unwrap();
    // NLL and NSP were not requested, so their fields stay empty
    let fields: Vec<&str> = second.split(',').collect();
    assert_eq!(fields.len(), 10);
    assert!(fields[7].is_empty() && fields[8].is_empty() && !fields[9].is_empty());
}

#[test]
fn serve_mock_speaks_ndjson() {
    let mut child = Command::new(BIN)
        .args(["serve-mock", "--vocab", "8"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        writeln!(
            stdin,
            r#"{{"request_id":"a","kind":"logprobs","context":"","target":"one two","mode":"causal"}}"#
        )
        .unwrap();
        writeln!(stdin, "not json").unwrap();
    }
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[0].contains(r#""request_id":"a""#) && lines[0].contains(r#""kind":"logprobs""#), "{}", lines[0]);
    assert!(lines[1].contains(r#""kind":"error""#), "{}", lines[1]);
}

#[test]
fn ingest_warns_about_skipped_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate(dir.path(), "1");
    let reading = dir.path().join("reading.tsv");
    let mut text = fs::read_to_string(&reading).unwrap();
    text.push_str("p01\tnope\t0\t3\t900\n");
    fs::write(&reading, text).unwrap();
    let out = sentread(&["--config", config.to_str().unwrap(), "ingest"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("1 reading rows skipped"), "{stderr}");
}

#[test]
fn bad_input_fails_with_message() {
    let out = sentread(&["ingest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    let dir = tempfile::tempdir().unwrap();
    let config = simulate(dir.path(), "1");
    let out = sentread(&["--config", config.to_str().unwrap(), "--methods", "cr,bogus", "ingest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = sentread(&["--config", config.to_str().unwrap(), "evaluate"]);
    assert!(!out.status.success(), "evaluate before ingest must fail");
}
