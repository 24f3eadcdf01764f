use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use super::{MockLlm, OracleSpec};
use crate::embedding::mock_embed;
use crate::llm::{ChatMessage, GenerationRequest, LanguageModel, OracleHint, Prompt};

#[derive(Debug, Clone)]
pub struct MockServerConfig {
    pub embed_dim: usize,
    pub embed_seed: u64,
    /// Canned vectors returned verbatim (pre-normalization) for these texts.
    pub fixed_embeddings: HashMap<String, Vec<f64>>,
    pub oracle: OracleSpec,
    /// Answer the first N requests with HTTP 503.
    pub fail_first: usize,
    pub workers: usize,
}

impl Default for MockServerConfig {
    fn default() -> Self {
        MockServerConfig {
            embed_dim: 32,
            embed_seed: 0,
            fixed_embeddings: HashMap::new(),
            oracle: OracleSpec::AlwaysNone,
            fail_first: 0,
            workers: 4,
        }
    }
}

struct Shared {
    config: MockServerConfig,
    llm: MockLlm,
    requests: AtomicUsize,
}

/// Local HTTP server speaking the OpenAI-compatible `/embeddings`,
/// `/chat/completions` and `/completions` shapes. Paths may carry any prefix
/// (e.g. `/v1`). Stops when dropped.
pub struct MockServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(config: MockServerConfig) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server has no IP address"))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            llm: MockLlm::new(config.oracle.clone()),
            config,
            requests: AtomicUsize::new(0),
        });
        let workers = (0..shared.config.workers.max(1))
            .map(|_| {
                let server = server.clone();
                let shared = shared.clone();
                thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&shared, req);
                    }
                })
            })
            .collect();
        Ok(MockServer {
            server,
            shared,
            addr,
            workers,
        })
    }

    /// Base URL including the `/v1` prefix.
    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// LLM calls served (excludes failed and embedding requests).
    pub fn llm_calls(&self) -> usize {
        self.shared.llm.calls()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn respond(req: Request, status: u16, body: Value) {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = req.respond(resp);
}

fn handle(shared: &Shared, mut req: Request) {
    let n = shared.requests.fetch_add(1, Ordering::SeqCst);
    if n < shared.config.fail_first {
        return respond(req, 503, json!({"error": "warming up"}));
    }
    if req.method() != &Method::Post {
        return respond(req, 405, json!({"error": "POST only"}));
    }
    let mut raw = String::new();
    if req.as_reader().read_to_string(&mut raw).is_err() {
        return respond(req, 400, json!({"error": "unreadable body"}));
    }
    let body: Value = match serde_json::from_str(&raw) {
        Ok(v) => v,
        Err(e) => return respond(req, 400, json!({"error": e.to_string()})),
    };
    let url = req.url().to_owned();
    let result = if url.ends_with("/embeddings") {
        embeddings(shared, &body)
    } else if url.ends_with("/chat/completions") {
        chat(shared, &body)
    } else if url.ends_with("/completions") {
        completion(shared, &body)
    } else {
        return respond(req, 404, json!({"error": format!("no route for {url}")}));
    };
    match result {
        Ok(v) => respond(req, 200, v),
        Err(msg) => respond(req, 400, json!({"error": msg})),
    }
}

fn embeddings(shared: &Shared, body: &Value) -> Result<Value, String> {
    let inputs = body
        .get("input")
        .and_then(Value::as_array)
        .ok_or("`input` must be an array")?;
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let text = t.as_str().unwrap_or_default();
            let vector = shared
                .config
                .fixed_embeddings
                .get(text)
                .cloned()
                .unwrap_or_else(|| mock_embed(text, shared.config.embed_dim, shared.config.embed_seed).into_inner());
            json!({"object": "embedding", "index": i, "embedding": vector})
        })
        .collect();
    Ok(json!({"object": "list", "data": data, "model": body.get("model")}))
}

fn run_llm(shared: &Shared, prompt: &Prompt, body: &Value, top_logprobs: Option<u32>) -> Result<(String, Option<Vec<crate::llm::TokenLogprob>>), String> {
    let req = GenerationRequest {
        prompt,
        max_tokens: body.get("max_tokens").and_then(Value::as_u64).unwrap_or(16) as u32,
        temperature: body.get("temperature").and_then(Value::as_f64).unwrap_or(0.0),
        top_logprobs,
        hint: OracleHint::default(),
    };
    let g = shared.llm.generate(&req).map_err(|e| e.to_string())?;
    Ok((g.text, g.top_logprobs))
}

fn chat(shared: &Shared, body: &Value) -> Result<Value, String> {
    let messages = body
        .get("messages")
        .and_then(Value::as_array)
        .ok_or("`messages` must be an array")?;
    let mut parsed: Vec<ChatMessage> = messages
        .iter()
        .map(|m| ChatMessage {
            role: m.get("role").and_then(Value::as_str).unwrap_or_default().to_owned(),
            content: m.get("content").and_then(Value::as_str).unwrap_or_default().to_owned(),
        })
        .collect();
    let prefix = match parsed.last() {
        Some(m) if m.role == "assistant" => parsed.pop().map(|m| m.content).unwrap_or_default(),
        _ => String::new(),
    };
    let user = parsed.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
    let prompt = Prompt::single_turn(user, prefix);
    let top = body
        .get("logprobs")
        .and_then(Value::as_bool)
        .filter(|&b| b)
        .map(|_| body.get("top_logprobs").and_then(Value::as_u64).unwrap_or(1) as u32);
    let (text, lps) = run_llm(shared, &prompt, body, top)?;
    let mut choice = json!({
        "index": 0,
        "message": {"role": "assistant", "content": text},
        "finish_reason": "length"
    });
    if let Some(lps) = lps {
        let alts: Vec<Value> = lps.iter().map(|t| json!({"token": t.token, "logprob": t.logprob})).collect();
        choice["logprobs"] = json!({"content": [{"token": text, "logprob": lps[0].logprob, "top_logprobs": alts}]});
    }
    Ok(json!({"object": "chat.completion", "choices": [choice]}))
}

fn completion(shared: &Shared, body: &Value) -> Result<Value, String> {
    let rendered = body.get("prompt").and_then(Value::as_str).ok_or("`prompt` must be a string")?;
    let prompt = Prompt {
        messages: Vec::new(),
        assistant_prefix: String::new(),
        rendered: rendered.to_owned(),
    };
    let top = body.get("logprobs").and_then(Value::as_u64).map(|n| n as u32);
    let (text, lps) = run_llm(shared, &prompt, body, top)?;
    let mut choice = json!({"index": 0, "text": text, "finish_reason": "length"});
    if let Some(lps) = lps {
        let map: serde_json::Map<String, Value> = lps.iter().map(|t| (t.token.clone(), json!(t.logprob))).collect();
        choice["logprobs"] = json!({"tokens": [text], "top_logprobs": [map]});
    }
    Ok(json!({"object": "text_completion", "choices": [choice]}))
}
