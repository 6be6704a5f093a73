use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use reflect_core::llm::{Completion, CompletionRequest, Gateway, LlmError, RetryPolicy, Sleeper};
use reflect_service::provider::{HttpTransport, ENV_KEY, ENV_MODEL, ENV_URL};
use serde_json::Value;

struct Captured {
    headers: Vec<String>,
    body: Value,
}

/// Answers one connection per scripted `(status, body)` and records requests.
fn fake_server(script: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                headers.push(line.trim_end().to_owned());
            }
            let len: usize = headers
                .iter()
                .find_map(|h| h.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                .unwrap_or(0);
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push(Captured {
                headers,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

#[derive(Default, Clone)]
struct Recorder(Arc<Mutex<Vec<Duration>>>);

impl Sleeper for Recorder {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn request() -> CompletionRequest {
    CompletionRequest::new("system text", "user text", 50).with_seed(Some(11))
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (url, server) = fake_server(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (429, "{\"error\":\"slow down\"}".into()),
        (200, ok_body("hello there")),
    ]);
    let sleeps = Recorder::default();
    let transport = HttpTransport::new(url, "test-model", "sk-test").unwrap();
    let gw = Gateway::with_sleeper(Box::new(transport), RetryPolicy::default(), Box::new(sleeps.clone()));
    assert_eq!(gw.complete(&request()).unwrap(), "hello there");
    assert_eq!(*sleeps.0.lock().unwrap(), [Duration::from_secs(1), Duration::from_secs(2)]);

    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 3);
    let last = &seen[2];
    assert!(last.headers.iter().any(|h| h == "authorization: Bearer sk-test" || h == "Authorization: Bearer sk-test"));
    assert_eq!(last.body["model"], "test-model");
    assert_eq!(last.body["temperature"], 0);
    assert_eq!(last.body["seed"], 11);
    assert_eq!(last.body["messages"][0]["content"], "system text");
    assert_eq!(last.body["messages"][1]["content"], "user text");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = fake_server(vec![(400, "{\"error\":\"bad\"}".into())]);
    let sleeps = Recorder::default();
    let gw = Gateway::with_sleeper(
        Box::new(HttpTransport::new(url, "m", "k").unwrap()),
        RetryPolicy::default(),
        Box::new(sleeps.clone()),
    );
    let err = gw.complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::ProviderFailure { attempts: 1, .. }), "{err:?}");
    assert!(sleeps.0.lock().unwrap().is_empty());
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn gives_up_after_three_server_errors() {
    let (url, server) = fake_server(vec![(503, "{}".into()), (502, "{}".into()), (500, "{}".into())]);
    let gw = Gateway::with_sleeper(
        Box::new(HttpTransport::new(url, "m", "k").unwrap()),
        RetryPolicy::default(),
        Box::new(Recorder::default()),
    );
    let err = gw.complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::ProviderFailure { attempts: 3, .. }));
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn malformed_success_bodies_are_fatal() {
    let (url, server) = fake_server(vec![(200, "{\"choices\":[]}".into())]);
    let gw = Gateway::with_sleeper(
        Box::new(HttpTransport::new(url, "m", "k").unwrap()),
        RetryPolicy::default(),
        Box::new(Recorder::default()),
    );
    assert!(matches!(gw.complete(&request()), Err(LlmError::ProviderFailure { attempts: 1, .. })));
    server.join().unwrap();
}

#[test]
fn configuration_comes_from_the_environment_lookup() {
    let missing = HttpTransport::from_lookup(|_| None).unwrap_err();
    assert!(matches!(missing, LlmError::ConfigError(ref m) if m.contains(ENV_KEY)));
    let empty = HttpTransport::from_lookup(|k| (k == ENV_KEY).then(|| "  ".to_owned())).unwrap_err();
    assert!(matches!(empty, LlmError::ConfigError(_)));
    let bad_url = HttpTransport::from_lookup(|k| match k {
        ENV_KEY => Some("k".into()),
        ENV_URL => Some("ftp://example".into()),
        _ => None,
    });
    assert!(matches!(bad_url, Err(LlmError::ConfigError(_))));
    let ok = HttpTransport::from_lookup(|k| match k {
        ENV_KEY => Some("super-secret".into()),
        ENV_MODEL => Some("m1".into()),
        _ => None,
    })
    .unwrap();
    assert!(!format!("{ok:?}").contains("super-secret"));
}
