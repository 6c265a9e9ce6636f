use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use erlink_core::embedding::{embed_batch, remote_embed, EmbedError, RemoteEmbedder, MAX_REMOTE_CHUNK};
use erlink_core::record::SerializedSentence;
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

type Handler = dyn Fn(&str, &str, Option<Value>) -> (u16, Value) + Send + Sync;

/// Serves requests with `handler` until the returned server is dropped.
struct Mock {
    url: String,
    server: Arc<Server>,
    seen: Arc<Mutex<Vec<Value>>>,
    worker: Option<thread::JoinHandle<()>>,
}

impl Mock {
    fn start(handler: Box<Handler>) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (Arc::clone(&server), Arc::clone(&seen));
        let worker = thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let parsed: Option<Value> = serde_json::from_str(&body).ok();
                if let Some(v) = &parsed {
                    log.lock().unwrap().push(v.clone());
                }
                let (code, reply) = handler(req.method().as_str(), req.url(), parsed);
                let resp = Response::from_string(reply.to_string())
                    .with_status_code(code)
                    .with_header(Header::from_bytes("Content-Type", "application/json").unwrap());
                let _ = req.respond(resp);
            }
        });
        Self {
            url,
            server,
            seen,
            worker: Some(worker),
        }
    }

    fn requests(&self) -> Vec<Value> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for Mock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

const DIM: usize = 4;

fn vector_for(text: &str) -> Vec<f32> {
    let n = text.len() as f32;
    vec![n, 1.0, (n * 0.5).sin(), 2.0]
}

fn echo(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    match (method, url) {
        ("GET", "/healthz") => (200, json!({"status": "ok", "dim": DIM})),
        ("POST", "/embed") => {
            let Some(texts) = body.as_ref().and_then(|b| b["texts"].as_array()) else {
                return (400, json!({"error": "malformed"}));
            };
            if texts.is_empty() || texts.len() > MAX_REMOTE_CHUNK {
                return (400, json!({"error": "bad batch size"}));
            }
            let embeddings: Vec<Vec<f32>> = texts.iter().map(|t| vector_for(t.as_str().unwrap())).collect();
            (200, json!({"embeddings": embeddings, "dim": DIM, "model": "mock"}))
        }
        _ => (404, json!({})),
    }
}

fn sentences(texts: &[&str]) -> Vec<SerializedSentence> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| SerializedSentence {
            record_id: format!("r{i}"),
            text: (*t).to_owned(),
        })
        .collect()
}

fn timeout() -> Duration {
    Duration::from_secs(5)
}

#[test]
fn three_texts_round_trip() {
    let mock = Mock::start(Box::new(echo));
    let batch = remote_embed(&mock.url, &sentences(&["a", "bb", "ccc"]), timeout()).unwrap();
    assert_eq!(batch.len(), 3);
    assert_eq!(batch.dim(), DIM);
    assert_eq!(batch.ids(), ["r0", "r1", "r2"]);
    for (i, (_, row)) in batch.rows().enumerate() {
        let norm: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        let raw = vector_for(["a", "bb", "ccc"][i]);
        let raw_norm: f32 = raw.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((row[0] - raw[0] / raw_norm).abs() < 1e-6);
    }
    let reqs = mock.requests();
    assert_eq!(reqs, vec![json!({"texts": ["a", "bb", "ccc"], "normalize": true})]);
}

#[test]
fn health_reports_dim_and_loading() {
    let mock = Mock::start(Box::new(echo));
    let client = RemoteEmbedder::new(&mock.url, timeout());
    let h = client.health().unwrap();
    assert_eq!((h.status.as_str(), h.dim), ("ok", DIM));

    let loading = Mock::start(Box::new(|_, _, _| (503, json!({"status": "loading"}))));
    let err = RemoteEmbedder::new(&loading.url, timeout()).health().unwrap_err();
    assert!(matches!(err, EmbedError::ProviderUnavailable(_)));
}

#[test]
fn large_inputs_are_chunked_in_order() {
    let mock = Mock::start(Box::new(echo));
    let texts: Vec<String> = (0..600).map(|i| "x".repeat(i % 37 + 1)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let client = RemoteEmbedder::new(&mock.url, timeout()).with_dim(DIM).with_parallelism(3);
    let batch = embed_batch(&client, &sentences(&refs)).unwrap();
    assert_eq!(batch.len(), 600);
    let sizes: Vec<usize> = mock.requests().iter().map(|r| r["texts"].as_array().unwrap().len()).collect();
    let mut sorted = sizes.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![88, 256, 256]);
    for (i, (_, row)) in batch.rows().enumerate() {
        let raw = vector_for(refs[i]);
        let n: f32 = raw.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((row[0] - raw[0] / n).abs() < 1e-6, "row {i} out of order");
    }
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let url = {
        let probe = Server::http("127.0.0.1:0").unwrap();
        format!("http://{}", probe.server_addr().to_ip().unwrap())
    };
    let err = remote_embed(&url, &sentences(&["a"]), Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, EmbedError::ProviderUnavailable(_)), "{err:?}");
}

#[test]
fn count_mismatch_is_protocol_error() {
    let mock = Mock::start(Box::new(|_, _, _| {
        (200, json!({"embeddings": [[1.0, 0.0, 0.0, 0.0]], "dim": DIM, "model": "mock"}))
    }));
    let err = remote_embed(&mock.url, &sentences(&["a", "b"]), timeout()).unwrap_err();
    assert!(matches!(err, EmbedError::ProtocolError(_)), "{err:?}");
}

#[test]
fn wrong_vector_length_is_dimension_mismatch() {
    let mock = Mock::start(Box::new(|_, _, _| {
        (200, json!({"embeddings": [[1.0, 0.0]], "dim": DIM, "model": "mock"}))
    }));
    let err = remote_embed(&mock.url, &sentences(&["a"]), timeout()).unwrap_err();
    assert!(matches!(err, EmbedError::DimensionMismatch { expected: 4, actual: 2 }), "{err:?}");

    let echo_mock = Mock::start(Box::new(echo));
    let client = RemoteEmbedder::new(&echo_mock.url, timeout()).with_dim(768);
    let err = embed_batch(&client, &sentences(&["a"])).unwrap_err();
    assert!(matches!(err, EmbedError::DimensionMismatch { expected: 768, actual: 4 }), "{err:?}");
}

#[test]
fn service_status_codes_map_to_errors() {
    let loading = Mock::start(Box::new(|_, _, _| (503, json!({}))));
    assert!(matches!(
        remote_embed(&loading.url, &sentences(&["a"]), timeout()),
        Err(EmbedError::ProviderUnavailable(_))
    ));
    let rejecting = Mock::start(Box::new(|_, _, _| (400, json!({"error": "bad"}))));
    assert!(matches!(
        remote_embed(&rejecting.url, &sentences(&["a"]), timeout()),
        Err(EmbedError::ProtocolError(_))
    ));
    let garbage = Mock::start(Box::new(|_, _, _| (200, json!({"nope": 1}))));
    assert!(matches!(
        remote_embed(&garbage.url, &sentences(&["a"]), timeout()),
        Err(EmbedError::ProtocolError(_))
    ));
}

#[test]
fn empty_input_is_rejected_locally() {
    let mock = Mock::start(Box::new(echo));
    assert!(matches!(remote_embed(&mock.url, &[], timeout()), Err(EmbedError::InvalidBatch(_))));
    assert!(mock.requests().is_empty());
}
