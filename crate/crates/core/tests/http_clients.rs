//! Remote clients against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use uhoi::extraction::{extract_t2g, HttpTextToGraph};
use uhoi::generation::{
    ChatCompletionsProvider, GenerationProvider, GenerationRequest, SamplingConfig,
};
use uhoi::http::RetryPolicy;
use uhoi::vocab::{EmbeddingSimilarity, HttpEmbeddings, Similarity};
use uhoi::Error;

struct Seen {
    body: Value,
    auth: Option<String>,
}

struct Server {
    url: String,
    calls: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Seen>>>,
}

/// Serves every POST with `handler(call_index, body) -> (status, body)`.
fn serve<F>(handler: F) -> Server
where
    F: Fn(usize, &Value) -> (u16, Value) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (c, s) = (calls.clone(), seen.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let body: Value = serde_json::from_slice(&buf).unwrap_or(Value::Null);
            let n = c.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(n, &body);
            s.lock().unwrap().push(Seen { body, auth });
            let text = reply.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    Server { url, calls, seen }
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        initial_delay_ms: 1,
        max_delay_ms: 5,
        multiplier: 2.0,
    }
}

fn chat_reply(texts: &[String]) -> Value {
    json!({"choices": texts.iter().map(|t| json!({"message": {"role": "assistant", "content": t}})).collect::<Vec<_>>()})
}

fn request(n: usize, image: Option<Vec<u8>>) -> GenerationRequest {
    let sampling = SamplingConfig {
        num_samples: n,
        ..SamplingConfig::default()
    };
    GenerationRequest::new(
        "img1:0:1",
        image,
        "What are the interactions?".into(),
        &sampling,
    )
    .unwrap()
}

#[test]
fn chat_sends_image_and_collects_n() {
    let server = serve(|_, body| {
        let n = body["n"].as_u64().unwrap() as usize;
        (
            200,
            chat_reply(&(0..n).map(|i| format!("text {i}")).collect::<Vec<_>>()),
        )
    });
    let p = ChatCompletionsProvider::new(
        &server.url,
        "tiny-vlm",
        Some("sk-test".into()),
        fast_retry(0),
    );
    let r = p.generate(&request(3, Some(vec![1, 2, 3]))).unwrap();
    assert_eq!(r.texts, vec!["text 0", "text 1", "text 2"]);
    assert_eq!(r.model, "tiny-vlm");
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);
    let seen = server.seen.lock().unwrap();
    let body = &seen[0].body;
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(body["model"], "tiny-vlm");
    assert_eq!(body["temperature"], 0.2);
    assert_eq!(body["max_tokens"], 2048);
    let parts = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(parts[0]["image_url"]["url"], "data:image/png;base64,AQID");
    assert_eq!(parts[1]["text"], "What are the interactions?");
}

#[test]
fn chat_without_n_support_repeats_calls() {
    let server = serve(|i, body| {
        assert_eq!(body["n"], 1);
        (200, chat_reply(&[format!("call {i}")]))
    });
    let p =
        ChatCompletionsProvider::new(&server.url, "m", None, fast_retry(0)).with_n_support(false);
    let r = p.generate(&request(4, None)).unwrap();
    assert_eq!(r.texts, vec!["call 0", "call 1", "call 2", "call 3"]);
    let seen = server.seen.lock().unwrap();
    assert!(seen[0].auth.is_none());
    assert_eq!(
        seen[0].body["messages"][0]["content"],
        "What are the interactions?"
    );
}

#[test]
fn transient_errors_are_retried() {
    let server = serve(|i, _| {
        if i < 2 {
            (503, json!({"error": "busy"}))
        } else {
            (200, chat_reply(&["ok".into()]))
        }
    });
    let p = ChatCompletionsProvider::new(&server.url, "m", None, fast_retry(3));
    assert_eq!(p.generate(&request(1, None)).unwrap().texts, vec!["ok"]);
    assert_eq!(server.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_give_up_and_client_errors_are_fatal() {
    let busy = serve(|_, _| (429, json!({})));
    let p = ChatCompletionsProvider::new(&busy.url, "m", None, fast_retry(2));
    let err = p.generate(&request(1, None)).unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err}");
    assert!(err.to_string().contains("img1:0:1"), "{err}");
    assert_eq!(busy.calls.load(Ordering::SeqCst), 3);

    let bad = serve(|_, _| (400, json!({})));
    let p = ChatCompletionsProvider::new(&bad.url, "m", None, fast_retry(5));
    assert!(p.generate(&request(1, None)).is_err());
    assert_eq!(bad.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn embeddings_are_batched_and_cached() {
    let server = serve(|_, body| {
        let vectors: Vec<Value> = body["inputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| match p.as_str().unwrap() {
                "ride" => json!([1.0, 0.0]),
                "riding" => json!([0.8, 0.6]),
                _ => json!([0.0, 1.0]),
            })
            .collect();
        (200, json!({ "vectors": vectors }))
    });
    let sim = EmbeddingSimilarity::new(HttpEmbeddings::new(&server.url, None, fast_retry(0), 2));
    sim.prefetch(&["ride".into(), "riding".into(), "eat".into()])
        .unwrap();
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);
    assert!((sim.similarity("ride", "riding").unwrap() - 0.8).abs() < 1e-6);
    assert!(sim.similarity("ride", "eat").unwrap().abs() < 1e-12);
    assert_eq!(sim.similarity("eat", "eat").unwrap(), 1.0);
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);
    assert_eq!(sim.cached(), 3);
}

#[test]
fn embedding_count_mismatch_is_an_error() {
    let server = serve(|_, _| (200, json!({"vectors": [[1.0]]})));
    let sim = EmbeddingSimilarity::new(HttpEmbeddings::new(&server.url, None, fast_retry(0), 1));
    assert!(sim.prefetch(&["a".into(), "b".into()]).is_err());
}

#[test]
fn text_to_graph_client() {
    let server = serve(|_, body| {
        assert_eq!(body["text"], "The man rides the bike.");
        (
            200,
            json!({"triplets": [{"subject": "Man", "predicate": "rides", "object": "the bike"}]}),
        )
    });
    let t2g = HttpTextToGraph::new(&server.url, None, fast_retry(0));
    let out = extract_t2g("The man rides the bike.", &t2g, 4).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].key().to_string(), "man|rides|bike");
    assert_eq!(out[0].sample_index, 4);
    // empty text never reaches the server
    assert!(extract_t2g("  ", &t2g, 0).unwrap().is_empty());
    assert_eq!(server.calls.load(Ordering::SeqCst), 1);
}
