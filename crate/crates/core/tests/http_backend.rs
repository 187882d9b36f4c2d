//! The completions client against a minimal in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use icl_consistency::model::{predict_greedy, Backend, BackendError, HttpBackend, HttpMode, HttpOptions};
use icl_consistency::PromptInstance;
use serde_json::{json, Value};

enum Reply {
    /// Echo every prompt with whitespace tokens; the last token gets the mapped log-probability.
    Echo,
    Status(u16, &'static str),
    Text(&'static str),
}

fn label_logprob(token: &str) -> f64 {
    match token.trim() {
        "Yes" => -0.2,
        "Maybe" => -1.5,
        "No" => -2.5,
        _ => -9.0,
    }
}

fn echo_choice(index: usize, text: &str) -> Value {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut start = 0;
    for i in 1..=chars.len() {
        if i == chars.len() || (chars[i].is_whitespace() && !chars[i - 1].is_whitespace()) {
            tokens.push(chars[start..i].iter().collect::<String>());
            offsets.push(start);
            start = i;
        }
    }
    let n = tokens.len();
    let logprobs: Vec<Value> = (0..n)
        .map(|j| match j {
            0 => Value::Null,
            j if j == n - 1 => json!(label_logprob(&tokens[j])),
            _ => json!(-0.5),
        })
        .collect();
    json!({
        "index": index,
        "text": text,
        "logprobs": {"tokens": tokens, "token_logprobs": logprobs, "text_offset": offsets},
    })
}

/// Serves one reply per connection and forwards each request body.
fn serve(replies: Vec<Reply>) -> (String, mpsc::Receiver<(String, Value)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap();
            let (status, payload) = match reply {
                Reply::Echo => {
                    let choices: Vec<Value> = body["prompt"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .enumerate()
                        .map(|(i, p)| echo_choice(i, p.as_str().unwrap()))
                        .collect();
                    (200, json!({"choices": choices}).to_string())
                }
                Reply::Status(code, text) => (code, json!({"error": {"message": text}}).to_string()),
                Reply::Text(text) => (200, json!({"choices": [{"index": 0, "text": text}]}).to_string()),
            };
            tx.send((headers, body)).unwrap();
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn backend(url: String, mode: HttpMode) -> HttpBackend {
    HttpBackend::new(HttpOptions {
        url,
        model: "test-model".into(),
        api_key: Some("secret".into()),
        timeout: Duration::from_secs(10),
        mode,
        max_attempts: 3,
        backoff: Duration::from_millis(10),
        max_tokens: 4,
    })
    .unwrap()
}

fn prompt() -> PromptInstance {
    PromptInstance {
        setup_id: "0000020".into(),
        data_id: "d1".into(),
        text: "Given that a Does it follow that b Yes, no, or maybe?\n\nANSWER: ".into(),
        label_space: vec!["Yes".into(), "Maybe".into(), "No".into()],
        in_context_ids: vec![],
        target_template_id: 14,
        gold: Some(0),
        target_offset: 0,
        metadata: Default::default(),
    }
}

#[test]
fn scores_labels_from_echoed_logprobs() {
    let (url, rx) = serve(vec![Reply::Echo]);
    let b = backend(url, HttpMode::Logprobs);
    let scores = b.score_labels(&prompt()).unwrap();
    let expected: Vec<f64> = {
        let w = [-0.2f64, -1.5, -2.5].map(f64::exp);
        let z: f64 = w.iter().sum();
        w.iter().map(|v| v / z).collect()
    };
    for (a, e) in scores.normalize().scores.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
    assert_eq!(predict_greedy(&scores.normalize()), 0);

    let (headers, body) = rx.recv().unwrap();
    assert!(headers.to_ascii_lowercase().contains("authorization: bearer secret"));
    assert_eq!(body["max_tokens"], 0);
    assert_eq!(body["echo"], true);
    assert_eq!(body["prompt"].as_array().unwrap().len(), 3);
    assert!(body["prompt"][1].as_str().unwrap().ends_with("ANSWER: Maybe"));
}

#[test]
fn retries_server_errors() {
    let (url, rx) = serve(vec![Reply::Status(503, "overloaded"), Reply::Echo]);
    let b = backend(url, HttpMode::Logprobs);
    assert!(b.score_labels(&prompt()).is_ok());
    assert_eq!(rx.try_iter().count(), 2);
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, _rx) = serve((0..3).map(|_| Reply::Status(500, "boom")).collect());
    let err = backend(url, HttpMode::Logprobs).score_labels(&prompt()).unwrap_err();
    assert!(matches!(err, BackendError::Server { status: 500, .. }), "{err:?}");
}

#[test]
fn reports_missing_logprob_support() {
    let (url, _rx) = serve(vec![Reply::Status(400, "echo and logprobs are not supported")]);
    let err = backend(url, HttpMode::Logprobs).score_labels(&prompt()).unwrap_err();
    assert!(matches!(err, BackendError::LogprobsUnsupported(_)), "{err:?}");
}

#[test]
fn generation_mode_returns_text() {
    let (url, rx) = serve(vec![Reply::Text(" Maybe\n")]);
    let b = backend(url, HttpMode::Generate);
    assert_eq!(b.complete(&prompt()).unwrap(), " Maybe\n");
    let (_, body) = rx.recv().unwrap();
    assert_eq!(body["max_tokens"], 4);
}

#[test]
fn connection_refused_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut options = HttpOptions {
        url: format!("http://127.0.0.1:{port}/v1/completions"),
        max_attempts: 1,
        ..HttpOptions::default()
    };
    options.timeout = Duration::from_secs(2);
    let err = HttpBackend::new(options).unwrap().score_labels(&prompt()).unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
}
