use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use pacit_core::selfinstruct::{BackendError, ChatBackend, ChatRequest, GenerationConfig, HttpBackend};
use serde_json::{json, Value};

struct Seen {
    auth: Option<String>,
    body: Value,
}

/// Serves one scripted (status, body) reply per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut auth = None;
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap_or((line, ""));
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Seen { auth, body: serde_json::from_slice(&buf).unwrap() }).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn backend(url: &str, key_env: &str) -> HttpBackend {
    let cfg = GenerationConfig {
        endpoint: url.to_string(),
        api_key_env: key_env.to_string(),
        request_timeout_secs: 5,
        ..Default::default()
    };
    HttpBackend::from_config(&cfg).unwrap()
}

fn ok_body(text: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn sends_chat_request_with_bearer_auth() {
    std::env::set_var("PACIT_HTTP_TEST_KEY", "sk-test");
    let (url, rx) = serve(vec![(200, ok_body("hello"))]);
    let b = backend(&url, "PACIT_HTTP_TEST_KEY");
    let req = ChatRequest::single_user("gpt-3.5-turbo-0613", "make a pair", 0.7);
    assert_eq!(b.complete(&req).unwrap(), "hello");
    let seen = rx.recv().unwrap();
    assert_eq!(seen.auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen.body["model"], "gpt-3.5-turbo-0613");
    assert_eq!(seen.body["temperature"], 0.7);
    assert_eq!(seen.body["messages"][0]["role"], "user");
    assert_eq!(seen.body["messages"][0]["content"], "make a pair");
}

#[test]
fn status_codes_classify_errors() {
    let (url, _rx) = serve(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (401, r#"{"error":"bad key"}"#.into()),
        (200, "not json".into()),
        (200, json!({"choices": []}).to_string()),
    ]);
    let b = backend(&url, "PACIT_HTTP_TEST_UNSET");
    let req = ChatRequest::single_user("m", "p", 0.7);
    assert!(matches!(b.complete(&req), Err(BackendError::Transient(_))));
    assert!(matches!(b.complete(&req), Err(BackendError::Transient(_))));
    match b.complete(&req) {
        Err(BackendError::Fatal(m)) => assert!(m.contains("401") && m.contains("bad key"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(b.complete(&req), Err(BackendError::Transient(_))));
    assert!(matches!(b.complete(&req), Err(BackendError::Transient(_))));
}

#[test]
fn unreachable_endpoint_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = backend(&format!("http://127.0.0.1:{port}/v1/chat/completions"), "PACIT_HTTP_TEST_UNSET");
    let req = ChatRequest::single_user("m", "p", 0.7);
    assert!(matches!(b.complete(&req), Err(BackendError::Transient(_))));
}
