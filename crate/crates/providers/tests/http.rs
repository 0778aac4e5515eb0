use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use proact_core::lmgr::{ChatMessage, CompletionParams, EmbeddingProvider, LlmProvider, RetryPolicy, Retrying};
use proact_core::Error;
use proact_providers::{EndpointConfig, HttpChat, HttpEmbeddings};
use serde_json::Value;

struct Recorded {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves canned `(status, body)` responses in order, one per connection.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Recorded>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
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
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(Recorded {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                authorization,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), log)
}

fn config(base_url: String) -> EndpointConfig {
    EndpointConfig {
        base_url,
        model: "test-model".into(),
        api_key: Some("secret".into()),
        timeout_secs: 5,
    }
}

const PARAMS: CompletionParams = CompletionParams {
    temperature: 0.0,
    max_tokens: 16,
};

#[test]
fn chat_request_and_response_shape() {
    let (url, log) = serve(vec![(200, r#"{"choices":[{"message":{"role":"assistant","content":"2"}}]}"#.into())]);
    let chat = HttpChat::new(config(url)).unwrap();
    let answer = chat
        .complete(&[ChatMessage::system("sys"), ChatMessage::user("pick")], &PARAMS)
        .unwrap();
    assert_eq!(answer, "2");
    let log = log.lock().unwrap();
    assert_eq!(log[0].path, "/v1/chat/completions");
    assert_eq!(log[0].authorization.as_deref(), Some("Bearer secret"));
    assert_eq!(log[0].body["model"], "test-model");
    assert_eq!(log[0].body["messages"][0]["role"], "system");
    assert_eq!(log[0].body["messages"][1]["content"], "pick");
    assert_eq!(log[0].body["max_tokens"], 16);
}

#[test]
fn embeddings_are_batched_reordered_and_normalized() {
    let (url, log) = serve(vec![
        (200, r#"{"data":[{"index":1,"embedding":[0,2]},{"index":0,"embedding":[3,4]}]}"#.into()),
        (200, r#"{"data":[{"index":0,"embedding":[1,0]}]}"#.into()),
    ]);
    let emb = HttpEmbeddings::new(config(url), 2).unwrap();
    let texts: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let vectors = emb.embed(&texts).unwrap();
    assert_eq!(vectors, [vec![0.6, 0.8], vec![0.0, 1.0], vec![1.0, 0.0]]);
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].path, "/v1/embeddings");
    assert_eq!(log[0].body["input"], serde_json::json!(["a", "b"]));
    assert_eq!(log[1].body["input"], serde_json::json!(["c"]));
    assert_eq!(emb.model_id(), "test-model");
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, log) = serve(vec![
        (503, "{}".into()),
        (200, r#"{"choices":[{"message":{"content":"ok"}}]}"#.into()),
    ]);
    let policy = RetryPolicy {
        max_retries: 3,
        initial_backoff: std::time::Duration::ZERO,
    };
    let chat = Retrying::new(HttpChat::new(config(url)).unwrap(), policy);
    assert_eq!(chat.complete(&[ChatMessage::user("x")], &PARAMS).unwrap(), "ok");
    assert_eq!(log.lock().unwrap().len(), 2);

    let (url, _) = serve(vec![(500, "boom".into())]);
    let err = HttpChat::new(config(url)).unwrap().complete(&[ChatMessage::user("x")], &PARAMS);
    assert!(matches!(err, Err(Error::Provider(m)) if m.contains("500")));
}

#[test]
fn missing_model_is_rejected() {
    let cfg = EndpointConfig::default();
    assert!(matches!(HttpChat::new(cfg), Err(Error::InvalidArgument(_))));
}
