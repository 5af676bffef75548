//! Wire-level tests for the remote embedding and chat backends against a
//! minimal in-process HTTP stub: request shapes, auth headers, env-var
//! overrides, retry behavior, and failure surfacing.

use cindex::embed::{Embedder, ProviderConfig};
use cindex::llm::{Gateway, GatewayConfig, PromptTemplate, TemplateKind};
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone)]
struct Captured {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serve `scripts` (status, body) responses in order, one connection each,
/// recording what arrived.
fn spawn_stub(scripts: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().unwrap();
    let captured = Arc::new(Mutex::new(Vec::new()));
    let cap = Arc::clone(&captured);
    std::thread::spawn(move || {
        for (status, body) in scripts {
            let (mut stream, _) = match listener.accept() {
                Ok(s) => s,
                Err(_) => return,
            };
            let mut buf = Vec::new();
            let mut tmp = [0u8; 4096];
            let header_end = loop {
                let n = stream.read(&mut tmp).unwrap_or(0);
                if n == 0 {
                    break usize::MAX;
                }
                buf.extend_from_slice(&tmp[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos;
                }
            };
            if header_end == usize::MAX {
                continue;
            }
            let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
            let content_length: usize = header_text
                .lines()
                .find_map(|l| {
                    let lower = l.to_lowercase();
                    lower
                        .strip_prefix("content-length:")
                        .map(|v| v.trim().parse().unwrap())
                })
                .unwrap_or(0);
            let mut body_bytes = buf[header_end + 4..].to_vec();
            while body_bytes.len() < content_length {
                let n = stream.read(&mut tmp).unwrap_or(0);
                if n == 0 {
                    break;
                }
                body_bytes.extend_from_slice(&tmp[..n]);
            }
            let path = header_text
                .lines()
                .next()
                .and_then(|l| l.split_whitespace().nth(1))
                .unwrap_or("")
                .to_string();
            let auth = header_text.lines().find_map(|l| {
                let lower = l.to_lowercase();
                lower
                    .strip_prefix("authorization:")
                    .map(|v| v.trim().to_string())
            });
            cap.lock().unwrap().push(Captured {
                path,
                auth,
                body: serde_json::from_slice(&body_bytes).unwrap_or(serde_json::Value::Null),
            });
            let resp = format!(
                "HTTP/1.1 {status} STUB\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (format!("http://{addr}"), captured)
}

fn remote_embed_cfg(endpoint: &str, dim: usize) -> ProviderConfig {
    let mut cfg = ProviderConfig::mock(dim, 0);
    cfg.endpoint = endpoint.to_string();
    cfg.model = "embed-模型".into();
    cfg.backoff_ms = 0;
    cfg.retries = 3;
    cfg
}

fn embed_response(rows: &[Vec<f32>]) -> String {
    serde_json::json!({
        "data": rows.iter().map(|r| serde_json::json!({ "embedding": r })).collect::<Vec<_>>()
    })
    .to_string()
}

#[test]
fn embed_http_sends_documented_body_and_auth() {
    let (endpoint, captured) = spawn_stub(vec![(
        200,
        embed_response(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]),
    )]);
    std::env::set_var(cindex::embed::EMBED_API_KEY_VAR, "embed-secret");
    let embedder = Embedder::new(remote_embed_cfg(&endpoint, 3)).unwrap();
    let rows = embedder
        .embed_batch(&["alpha".to_string(), "beta".to_string()])
        .unwrap();
    std::env::remove_var(cindex::embed::EMBED_API_KEY_VAR);
    assert_eq!(rows, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let captured = captured.lock().unwrap();
    assert_eq!(captured.len(), 1);
    assert_eq!(captured[0].path, "/embeddings");
    assert_eq!(captured[0].auth.as_deref(), Some("bearer embed-secret"));
    assert_eq!(captured[0].body["model"], "embed-模型");
    assert_eq!(
        captured[0].body["input"],
        serde_json::json!(["alpha", "beta"])
    );
}

#[test]
fn embed_http_retries_then_succeeds_and_reports_exhaustion() {
    // first server: one 500 then success
    let (endpoint, _) = spawn_stub(vec![
        (500, "{}".into()),
        (200, embed_response(&[vec![0.5, 0.5]])),
    ]);
    let embedder = Embedder::new(remote_embed_cfg(&endpoint, 2)).unwrap();
    let rows = embedder.embed_batch(&["x".to_string()]).unwrap();
    assert_eq!(rows[0], vec![0.5, 0.5]);
    assert_eq!(embedder.backend_calls(), 2, "initial call plus one retry");

    // second server: persistent failure
    let (endpoint, _) = spawn_stub(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (500, "{}".into()),
        (500, "{}".into()),
    ]);
    let embedder = Embedder::new(remote_embed_cfg(&endpoint, 2)).unwrap();
    match embedder.embed_batch(&["x".to_string()]) {
        Err(cindex::embed::EmbedError::Endpoint { attempts, msg }) => {
            assert_eq!(attempts, 4);
            assert!(msg.contains("500"), "{msg}");
        }
        other => panic!("unexpected: {other:?}"),
    }
}

#[test]
fn embed_http_rejects_wrong_dimension() {
    let (endpoint, _) = spawn_stub(vec![(200, embed_response(&[vec![1.0, 2.0, 3.0]]))]);
    let embedder = Embedder::new(remote_embed_cfg(&endpoint, 2)).unwrap();
    assert!(matches!(
        embedder.embed_batch(&["x".to_string()]),
        Err(cindex::embed::EmbedError::CacheDimensionMismatch { got: 3, want: 2 })
    ));
}

fn chat_response(content: &str) -> String {
    serde_json::json!({
        "choices": [{ "message": { "role": "assistant", "content": content } }]
    })
    .to_string()
}

#[test]
fn chat_http_body_auth_retries_and_endpoint_override() {
    let (endpoint, captured) = spawn_stub(vec![(200, chat_response("a fine generated query"))]);
    std::env::set_var(cindex::llm::LLM_API_KEY_VAR, "llm-secret");
    let mut cfg = GatewayConfig::mock();
    cfg.endpoint = endpoint.clone();
    cfg.model = "chat-model".into();
    cfg.backoff_ms = 0;
    let gateway = Gateway::new(cfg.clone()).unwrap();
    let template = PromptTemplate::default_for(TemplateKind::QueryPlain);
    let doc = cindex::corpus::Document {
        id: "d".into(),
        title: "t".into(),
        abstract_text: "a".into(),
    };
    let out = gateway.generate_query(&template, &doc, None).unwrap();
    assert_eq!(out.text, "a fine generated query");
    {
        let captured = captured.lock().unwrap();
        assert_eq!(captured[0].path, "/chat/completions");
        assert_eq!(captured[0].auth.as_deref(), Some("bearer llm-secret"));
        assert_eq!(captured[0].body["model"], "chat-model");
        assert_eq!(captured[0].body["temperature"], 0.7);
        assert_eq!(captured[0].body["messages"][0]["role"], "user");
        let prompt = captured[0].body["messages"][0]["content"].as_str().unwrap();
        assert!(prompt.contains("Document: t a"), "{prompt}");
    }
    std::env::remove_var(cindex::llm::LLM_API_KEY_VAR);

    // persistent 500s exhaust the retry budget, one log entry per dispatch
    let (endpoint, _) = spawn_stub(vec![(500, "{}".into()); 3]);
    let mut cfg_fail = cfg.clone();
    cfg_fail.endpoint = endpoint;
    cfg_fail.retries = 2;
    let gateway = Gateway::new(cfg_fail).unwrap();
    match gateway.generate_snippet(&doc, "q") {
        Err(cindex::llm::LlmError::Endpoint { attempts: 3, .. }) => {}
        other => panic!("unexpected: {other:?}"),
    }
    assert_eq!(gateway.call_log().count(cindex::llm::Purpose::SnippetGen), 3);

    // CONCEPT_LLM_ENDPOINT beats the configured endpoint
    let (real, captured2) = spawn_stub(vec![(200, chat_response("routed"))]);
    std::env::set_var(cindex::llm::LLM_ENDPOINT_VAR, &real);
    let mut cfg_override = cfg;
    cfg_override.endpoint = "http://127.0.0.1:9".into();
    let gateway = Gateway::new(cfg_override).unwrap();
    std::env::remove_var(cindex::llm::LLM_ENDPOINT_VAR);
    let out = gateway.generate_query(&template, &doc, None).unwrap();
    assert_eq!(out.text, "routed");
    assert_eq!(captured2.lock().unwrap().len(), 1);
}
