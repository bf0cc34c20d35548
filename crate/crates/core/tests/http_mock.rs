//! Chat-completions client against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use seqroute::agents::{ChatCompletionsBackend, EndpointConfig, Usage};
use seqroute::TransportError;

struct Captured {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    let handle = thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            seen.lock().unwrap().push(Captured {
                path: request_line.split_whitespace().nth(1).unwrap_or("").to_string(),
                authorization,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, log, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 42, "completion_tokens": 7},
    })
    .to_string()
}

fn config(base_url: String) -> EndpointConfig {
    EndpointConfig {
        base_url,
        model: "mock-model".into(),
        api_key_env: Some("SEQROUTE_TEST_KEY".into()),
        backoff_ms: 1,
        ..EndpointConfig::default()
    }
}

fn set_key() {
    // Every test sets the same value, so concurrent writes are harmless.
    std::env::set_var("SEQROUTE_TEST_KEY", "secret");
}

#[test]
fn fixed_reply_and_usage_pass_through() {
    set_key();
    let (base, log, handle) = serve(vec![(200, ok_body("forty-two"))]);
    let backend = ChatCompletionsBackend::new(config(base)).unwrap();
    let reply = backend.llm_respond("You are the judge.", "Task: add", "Role: x\nResponse: 40 + 2").unwrap();
    handle.join().unwrap();
    assert_eq!(reply.text, "forty-two");
    assert_eq!(reply.usage, Usage { prompt_tokens: 42, completion_tokens: 7 });
    let log = log.lock().unwrap();
    assert_eq!(log[0].path, "/v1/chat/completions");
    assert_eq!(log[0].authorization.as_deref(), Some("Bearer secret"));
    let body = &log[0].body;
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "You are the judge.");
    let user = body["messages"][1]["content"].as_str().unwrap();
    assert!(user.starts_with("Task: add") && user.ends_with("Response: 40 + 2"), "{user}");
}

#[test]
fn server_errors_are_retried() {
    set_key();
    let (base, log, handle) = serve(vec![(500, "{}".into()), (500, "{}".into()), (200, ok_body("third time"))]);
    let backend = ChatCompletionsBackend::new(config(base)).unwrap();
    let reply = backend.llm_respond("s", "u", "").unwrap();
    handle.join().unwrap();
    assert_eq!(reply.text, "third time");
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded() {
    set_key();
    let (base, _, handle) = serve(vec![(503, "{}".into()), (429, "{}".into())]);
    let backend = ChatCompletionsBackend::new(EndpointConfig { max_attempts: 2, ..config(base) }).unwrap();
    let err = backend.llm_respond("s", "u", "").unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, TransportError::Exhausted { attempts: 2, .. }), "{err}");
}

#[test]
fn auth_and_client_errors_are_not_retried() {
    set_key();
    let (base, log, handle) = serve(vec![(401, "{}".into()), (400, "bad model".into())]);
    let backend = ChatCompletionsBackend::new(config(base)).unwrap();
    assert!(matches!(backend.llm_respond("s", "u", ""), Err(TransportError::Auth { status: 401 })));
    match backend.llm_respond("s", "u", "") {
        Err(TransportError::Rejected { status: 400, body }) => assert_eq!(body, "bad model"),
        other => panic!("unexpected {other:?}"),
    }
    handle.join().unwrap();
    assert_eq!(log.lock().unwrap().len(), 2);
}

#[test]
fn malformed_success_body_is_typed() {
    set_key();
    let (base, _, handle) = serve(vec![(200, r#"{"choices":[]}"#.into())]);
    let backend = ChatCompletionsBackend::new(config(base)).unwrap();
    assert!(matches!(backend.llm_respond("s", "u", ""), Err(TransportError::Malformed(_))));
    handle.join().unwrap();
}
