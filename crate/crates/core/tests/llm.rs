use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use suction_core::llm::{
    load_cassette, Cassette, CassetteEntry, CassetteError, ChatRequest, HttpTransport, ImagePart, LlmClient, LlmError,
    RateLimiter, Transport,
};

/// Serves one canned HTTP response and hands back the raw request.
fn serve_once(response: String) -> (String, mpsc::Receiver<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if line == "\r\n" || line.is_empty() {
                break;
            }
            head.push_str(&line);
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        stream.write_all(response.as_bytes()).unwrap();
        stream.flush().unwrap();
        tx.send((head, String::from_utf8(body).unwrap())).unwrap();
    });
    (url, rx)
}

fn http(status: &str, extra: &str, body: &str) -> String {
    format!("HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n{extra}\r\n{body}", body.len())
}

fn request() -> ChatRequest {
    ChatRequest::new("vision-model", "system text", "Look at this image.")
        .with_image(ImagePart::png(&[137, 80, 78, 71]))
}

#[test]
fn live_success_sends_chat_completions_shape() {
    let body = r#"{"choices":[{"message":{"role":"assistant","content":"1. P2 2. P1"}}]}"#;
    let (url, rx) = serve_once(http("200 OK", "Content-Type: application/json\r\n", body));
    let t = HttpTransport::new(format!("{url}/v1/"), Some("secret".into()));
    assert_eq!(t.send(&request()).unwrap(), "1. P2 2. P1");
    let (head, sent) = rx.recv().unwrap();
    assert!(head.starts_with("POST /v1/chat/completions "));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer secret"));
    let v: serde_json::Value = serde_json::from_str(&sent).unwrap();
    assert_eq!(v["model"], "vision-model");
    assert_eq!(v["temperature"], 0.0);
    assert_eq!(v["messages"][0]["role"], "system");
    assert_eq!(v["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
}

#[test]
fn status_429_maps_to_rate_limit_with_retry_after() {
    let (url, _rx) = serve_once(http("429 Too Many Requests", "Retry-After: 7\r\n", "slow down"));
    let err = HttpTransport::new(url, None).send(&request()).unwrap_err();
    assert_eq!(err, LlmError::RateLimited { retry_after: Some(Duration::from_secs(7)) });
    assert_eq!(err.retry_after(), Some(Duration::from_secs(7)));
    assert!(err.is_retryable());
}

#[test]
fn server_errors_and_bad_bodies_are_typed() {
    let (url, _rx) = serve_once(http("503 Service Unavailable", "", "busy"));
    let err = HttpTransport::new(url, None).send(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Http { status: 503, ref body } if body == "busy"));
    assert!(err.is_retryable());

    let (url, _rx) = serve_once(http("200 OK", "", "{\"choices\":[]}"));
    assert!(matches!(HttpTransport::new(url, None).send(&request()), Err(LlmError::Malformed(_))));

    let (url, _rx) = serve_once(http("200 OK", "", "not json"));
    assert!(matches!(HttpTransport::new(url, None).send(&request()), Err(LlmError::Malformed(_))));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = HttpTransport::new(format!("http://127.0.0.1:{port}"), None).send(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Transport(_) | LlmError::Timeout(_)), "{err:?}");
}

#[test]
fn record_then_replay_without_network() {
    let body = r#"{"choices":[{"message":{"content":"Start with P1."}}]}"#;
    let (url, _rx) = serve_once(http("200 OK", "", body));
    let live =
        LlmClient::recording(Box::new(HttpTransport::new(url, None)), RateLimiter::new(1, 1.0), Cassette::default());
    assert_eq!(live.complete(&request()).unwrap(), "Start with P1.");
    assert_eq!(live.network_calls(), 1);
    let cassette = live.recorded().unwrap();
    assert_eq!(cassette.entries.len(), 1);
    assert_eq!(cassette.entries[0].fingerprint, request().fingerprint());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    cassette.save(&path).unwrap();
    let loaded = load_cassette(&path).unwrap();
    assert_eq!(loaded, cassette);

    let replay = LlmClient::replay(&loaded);
    assert!(replay.is_replay());
    assert_eq!(replay.complete(&request()).unwrap(), "Start with P1.");
    let mut other = request();
    other.user.push_str(" Again.");
    match replay.complete(&other) {
        Err(LlmError::ReplayMiss { fingerprint }) => assert_eq!(fingerprint, other.fingerprint()),
        r => panic!("expected replay miss, got {r:?}"),
    }
    assert_eq!(replay.network_calls(), 0);
}

#[test]
fn cassette_files_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    assert!(load_cassette(&empty).unwrap().entries.is_empty());

    let entry = CassetteEntry { fingerprint: "ab".into(), response: "P1".into(), latency_ms: 3, note: None };
    let dup = Cassette { schema_version: 1, entries: vec![entry.clone(), entry.clone()] };
    let path = dir.path().join("dup.json");
    std::fs::write(&path, serde_json::to_string(&dup).unwrap()).unwrap();
    assert!(matches!(load_cassette(&path), Err(CassetteError::Duplicate(f)) if f == "ab"));

    let old = Cassette { schema_version: 99, entries: vec![entry] };
    std::fs::write(&path, serde_json::to_string(&old).unwrap()).unwrap();
    assert!(matches!(load_cassette(&path), Err(CassetteError::Version { found: 99, .. })));

    assert!(matches!(load_cassette(&dir.path().join("missing.json")), Err(CassetteError::Io { .. })));
}

#[test]
fn fingerprint_matches_canonical_encoding() {
    use sha2::{Digest, Sha256};
    let r = ChatRequest::new("m", "s", "u");
    let mut h = Sha256::new();
    for (k, v) in
        [("model", "m"), ("system", "s"), ("user", "u"), ("image", ""), ("temperature", "0.0"), ("max_tokens", "600")]
    {
        for part in [k, v] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
    }
    let expected: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(r.fingerprint(), expected);
}
