//! Local completion server backed by an enumerable backend, used to test the
//! remote client without a real model.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

use super::remote::{CompletionRequest, CompletionResponse, CompletionSample};
use super::{PatternBackend, EOS};
use crate::seq::Sequence;

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// Answer this many requests with `fail_status` before serving.
    pub fail_first: usize,
    pub fail_status: u16,
    /// Whether log-probabilities are returned.
    pub logprobs: bool,
    /// If set, requests must carry `Authorization: Bearer <key>`.
    pub api_key: Option<String>,
}

impl StubOptions {
    pub fn serving() -> Self {
        Self { fail_first: 0, fail_status: 503, logprobs: true, api_key: None }
    }
}

pub struct StubServer {
    url: String,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    received: Arc<Mutex<Vec<serde_json::Value>>>,
    hits: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start(backend: Box<dyn PatternBackend>, options: StubOptions) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let server = Arc::new(server);
        let received = Arc::new(Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let received = Arc::clone(&received);
            let hits = Arc::clone(&hits);
            std::thread::spawn(move || serve(&server, backend.as_ref(), &options, &received, &hits))
        };
        Ok(Self { url: format!("http://127.0.0.1:{port}"), server, handle: Some(handle), received, hits })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.received.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Number of HTTP requests, including failed ones.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn serve(
    server: &Server,
    backend: &dyn PatternBackend,
    options: &StubOptions,
    received: &Mutex<Vec<serde_json::Value>>,
    hits: &AtomicUsize,
) {
    while let Ok(mut req) = server.recv() {
        let n = hits.fetch_add(1, Ordering::SeqCst);
        let mut body = String::new();
        let _ = req.as_reader().read_to_string(&mut body);
        let (status, reply) = handle(backend, options, n, req.url(), req.headers(), &body, received);
        let resp = Response::from_string(reply).with_status_code(status).with_header(json_header());
        let _ = req.respond(resp);
    }
}

fn error(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn handle(
    backend: &dyn PatternBackend,
    options: &StubOptions,
    n: usize,
    url: &str,
    headers: &[Header],
    body: &str,
    received: &Mutex<Vec<serde_json::Value>>,
) -> (u16, String) {
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(body) {
        received.lock().unwrap_or_else(|e| e.into_inner()).push(v);
    }
    if n < options.fail_first {
        return (options.fail_status, error("injected failure"));
    }
    if url != "/v1/complete" {
        return (404, error("unknown path"));
    }
    if let Some(key) = &options.api_key {
        let expected = format!("Bearer {key}");
        let ok = headers.iter().any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected);
        if !ok {
            return (401, error("missing or wrong API key"));
        }
    }
    let request: CompletionRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return (400, error(&e.to_string())),
    };
    match answer(backend, options, &request) {
        Ok(resp) => (200, serde_json::to_string(&resp).expect("response serializes")),
        Err(e) => (500, error(&e.to_string())),
    }
}

fn answer(
    backend: &dyn PatternBackend,
    options: &StubOptions,
    request: &CompletionRequest,
) -> super::Result<CompletionResponse> {
    let context = Sequence::new(&request.context);
    if let Some(cont) = &request.continuation {
        let tokens = Sequence::new(cont).tokens();
        let mut lps = Vec::with_capacity(tokens.len() + 1);
        for i in 0..=tokens.len() {
            let d = backend.next_distribution_after(&context, &tokens[..i])?;
            let t = tokens.get(i).map_or(EOS, |t| t.as_str());
            lps.push(d.prob(t).ln());
        }
        let token_logprobs = options.logprobs.then_some(lps);
        return Ok(CompletionResponse { samples: vec![CompletionSample { text: cont.clone(), token_logprobs }] });
    }
    let seed = request.seed.unwrap_or(0);
    let mut samples = Vec::with_capacity(request.n);
    for s in backend.sample_completions(&context, request.max_tokens, request.n, seed)? {
        let token_logprobs = if options.logprobs && request.logprobs {
            let tokens = s.tokens();
            let mut lps = Vec::with_capacity(tokens.len());
            for i in 0..tokens.len() {
                lps.push(backend.next_distribution_after(&context, &tokens[..i])?.prob(&tokens[i]).ln());
            }
            Some(lps)
        } else {
            None
        };
        samples.push(CompletionSample { text: s.to_string(), token_logprobs });
    }
    Ok(CompletionResponse { samples })
}
