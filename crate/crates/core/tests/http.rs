use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use rapp_core::agents::transport::{ChatMessage, ChatTransport, HttpTransport, TransportError};
use rapp_core::retrieval::{Embedder, RemoteEmbedder, RetrievalError};
use serde_json::{json, Value};

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

/// Serves a single canned response on a loopback port and hands back what it received.
fn serve_once(status: u16, body: Value) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut headers = Vec::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let (k, v) = line.split_once(':').unwrap();
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let len: usize = headers.iter().find(|(k, _)| k == "content-length").map(|(_, v)| v.parse().unwrap()).unwrap_or(0);
        let mut buf = vec![0; len];
        reader.read_exact(&mut buf).unwrap();
        let payload = body.to_string();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
            payload.len()
        )
        .unwrap();
        stream.flush().unwrap();
        tx.send(Captured { request_line: request_line.trim_end().to_string(), headers, body: serde_json::from_slice(&buf).unwrap() })
            .unwrap();
    });
    (base, rx)
}

fn header<'a>(c: &'a Captured, name: &str) -> Option<&'a str> {
    c.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

#[test]
fn chat_request_and_response_follow_the_completions_format() {
    let (base, rx) = serve_once(200, json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": "{\"ok\":true}"}}]}));
    let mut t = HttpTransport::new(format!("{base}/v1/"), "test-model");
    t.api_key = Some("sk-123".into());
    let reply = t.complete(&[ChatMessage::system("sys"), ChatMessage::user("hi")]).unwrap();
    assert_eq!(reply, "{\"ok\":true}");
    assert_eq!(t.descriptor(), "http:test-model");

    let c = rx.recv().unwrap();
    assert_eq!(c.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(header(&c, "authorization"), Some("Bearer sk-123"));
    assert_eq!(
        c.body,
        json!({
            "model": "test-model",
            "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}],
            "temperature": 0.0
        })
    );
}

#[test]
fn chat_server_error_is_a_transport_error() {
    let (base, _rx) = serve_once(500, json!({"error": "boom"}));
    let mut t = HttpTransport::new(base, "m");
    assert!(matches!(t.complete(&[ChatMessage::user("x")]), Err(TransportError::Http(_))));
}

#[test]
fn chat_reply_without_choices_is_malformed() {
    let (base, _rx) = serve_once(200, json!({"choices": []}));
    let mut t = HttpTransport::new(base, "m");
    assert!(matches!(t.complete(&[ChatMessage::user("x")]), Err(TransportError::Response(_))));
}

#[test]
fn embedding_request_and_response() {
    let (base, rx) = serve_once(200, json!({"data": [{"index": 0, "embedding": [3.0, 4.0, 0.0]}]}));
    let e = RemoteEmbedder { base_url: base, model: "emb".into(), api_key: None, dim: 3 };
    let v = e.embed("hello").unwrap();
    let norm = v.norm();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!((v.components[0] - 0.6).abs() < 1e-12);

    let c = rx.recv().unwrap();
    assert_eq!(c.request_line, "POST /embeddings HTTP/1.1");
    assert_eq!(header(&c, "authorization"), None);
    assert_eq!(c.body, json!({"model": "emb", "input": "hello"}));
}

#[test]
fn embedding_dimension_mismatch_is_reported() {
    let (base, _rx) = serve_once(200, json!({"data": [{"embedding": [1.0, 0.0]}]}));
    let e = RemoteEmbedder { base_url: base, model: "emb".into(), api_key: None, dim: 3 };
    assert!(matches!(e.embed("hello"), Err(RetrievalError::DimensionMismatch(2, 3))));
}

#[test]
fn unreachable_endpoint_fails_cleanly() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut t = HttpTransport::new(format!("http://127.0.0.1:{port}"), "m");
    assert!(matches!(t.complete(&[ChatMessage::user("x")]), Err(TransportError::Http(_))));
}
