//! HTTP client for a completion endpoint.
//!
//! Wire protocol: `POST {endpoint}/v1/complete` with
//! `{"context", "max_tokens", "n", "temperature", "seed"?, "logprobs"}` and
//! an optional `"continuation"` string when scoring; the reply is
//! `{"samples": [{"text", "token_logprobs"?}]}`. When scoring, the
//! `token_logprobs` of the first sample hold one entry per continuation
//! token followed by one for end of sequence.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::kl::monte_carlo_kl;
use super::{BackendConfig, BackendError, BackendKind, Corpus, Estimate, NextSymbolDistribution, PatternBackend, Result};
use crate::seq::Sequence;

pub const ENDPOINT_VAR: &str = "NORMLAB_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "NORMLAB_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Samples per Monte-Carlo estimate.
    pub samples: usize,
    pub temperature: f64,
    /// Pseudo-count added to every outcome in plug-in estimates.
    pub pseudo_count: f64,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key: None,
            max_retries: 3,
            backoff_ms: 50,
            timeout_ms: 30_000,
            max_in_flight: 4,
            samples: 256,
            temperature: 1.0,
            pseudo_count: 0.5,
            bootstrap_resamples: 200,
            seed: 0,
        }
    }
}

impl RemoteConfig {
    /// Reads the endpoint and key from the environment.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|e| !e.is_empty())?;
        let api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Some(Self { endpoint, api_key, ..Self::default() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRequest {
    pub context: String,
    pub max_tokens: usize,
    pub n: usize,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub logprobs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSample {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub samples: Vec<CompletionSample>,
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut busy = self.gate.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.gate.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: BackendConfig,
    remote: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        let remote = config
            .remote
            .clone()
            .filter(|r| !r.endpoint.is_empty())
            .ok_or_else(|| BackendError::InvalidConfig("remote backend requires an endpoint".into()))?;
        Self::with_remote(config, remote)
    }

    pub fn connect(remote: RemoteConfig) -> Result<Self> {
        let config = BackendConfig { kind: BackendKind::Remote, remote: Some(remote.clone()), ..BackendConfig::default() };
        Self::with_remote(config, remote)
    }

    fn with_remote(config: BackendConfig, remote: RemoteConfig) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(remote.timeout_ms)))
            .build()
            .into();
        let gate = Gate { busy: Mutex::new(0), freed: Condvar::new(), limit: remote.max_in_flight.max(1) };
        Ok(Self { config, remote, agent, gate })
    }

    pub fn remote_config(&self) -> &RemoteConfig {
        &self.remote
    }

    fn url(&self) -> String {
        format!("{}/v1/complete", self.remote.endpoint.trim_end_matches('/'))
    }

    /// Sends one request, retrying transport failures and 5xx replies.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        let _slot = self.gate.enter();
        let mut attempts = 0;
        let mut last_status = None;
        let mut message = String::new();
        while attempts <= self.remote.max_retries {
            if attempts > 0 {
                let wait = self.remote.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            attempts += 1;
            let mut req = self.agent.post(&self.url()).header("Content-Type", "application/json");
            if let Some(key) = &self.remote.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(request) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    last_status = Some(status);
                    if status >= 500 {
                        message = format!("server replied {status}");
                        continue;
                    }
                    if status >= 400 {
                        let body = resp.body_mut().read_to_string().unwrap_or_default();
                        return Err(BackendError::Protocol(format!("server replied {status}: {body}")));
                    }
                    return resp
                        .body_mut()
                        .read_json::<CompletionResponse>()
                        .map_err(|e| BackendError::Protocol(e.to_string()));
                }
                Err(e) => message = e.to_string(),
            }
        }
        Err(BackendError::RemoteUnavailable { message, attempts, last_status })
    }

    fn score(&self, context: &Sequence, continuation: &Sequence) -> Result<Vec<f64>> {
        let resp = self.complete(&CompletionRequest {
            context: context.to_string(),
            max_tokens: 0,
            n: 1,
            temperature: self.remote.temperature,
            seed: None,
            logprobs: true,
            continuation: Some(continuation.to_string()),
        })?;
        resp.samples
            .into_iter()
            .next()
            .and_then(|s| s.token_logprobs)
            .ok_or_else(|| BackendError::NotSupported("endpoint returned no token log-probabilities".into()))
    }
}

impl PatternBackend for RemoteBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn is_enumerable(&self) -> bool {
        false
    }

    fn next_distribution_after(&self, _context: &Sequence, _appended: &[String]) -> Result<NextSymbolDistribution> {
        Err(BackendError::NotEnumerable)
    }

    fn sample_completion(&self, context: &Sequence, max_len: usize, seed: u64) -> Result<Sequence> {
        Ok(self.sample_completions(context, max_len, 1, seed)?.into_iter().next().unwrap_or_default())
    }

    fn sample_completions(&self, context: &Sequence, max_len: usize, n: usize, seed: u64) -> Result<Vec<Sequence>> {
        let resp = self.complete(&CompletionRequest {
            context: context.to_string(),
            max_tokens: max_len,
            n,
            temperature: self.remote.temperature,
            seed: Some(seed),
            logprobs: false,
            continuation: None,
        })?;
        if resp.samples.len() != n {
            return Err(BackendError::Protocol(format!("asked for {n} samples, got {}", resp.samples.len())));
        }
        Ok(resp.samples.into_iter().map(|s| Sequence::new(s.text)).collect())
    }

    fn log_prob(&self, context: &Sequence, continuation: &Sequence) -> Result<f64> {
        let n = continuation.token_count();
        if n == 0 {
            return Ok(0.0);
        }
        let lps = self.score(context, continuation)?;
        if lps.len() < n {
            return Err(BackendError::Protocol("fewer log-probabilities than continuation tokens".into()));
        }
        Ok(lps[..n].iter().sum())
    }

    fn log_prob_complete(&self, context: &Sequence, continuation: &Sequence) -> Result<f64> {
        let n = continuation.token_count();
        let lps = self.score(context, continuation)?;
        if lps.len() != n + 1 {
            return Err(BackendError::NotSupported("endpoint does not score end of sequence".into()));
        }
        Ok(lps.iter().sum())
    }

    fn consolidate(&mut self, _corpus: &Corpus) -> Result<()> {
        Err(BackendError::NotSupported("remote backends cannot be consolidated".into()))
    }

    fn kl_divergence(&self, c1: &Sequence, c2: &Sequence, horizon: usize) -> Result<Estimate> {
        if horizon == 0 {
            return Err(BackendError::InvalidConfig("KL horizon must be at least 1".into()));
        }
        let n = self.remote.samples;
        let seed = crate::rng::derive(self.remote.seed, &[&c1.as_str(), &c2.as_str(), &horizon]);
        let draw = |c: &Sequence, s: u64| -> Result<Vec<String>> {
            Ok(self.sample_completions(c, horizon, n, s)?.into_iter().map(|x| x.to_string()).collect())
        };
        let p = draw(c1, crate::rng::derive(seed, &[&"p"]))?;
        let q = draw(c2, crate::rng::derive(seed, &[&"q"]))?;
        Ok(monte_carlo_kl(&p, &q, self.remote.pseudo_count, self.remote.bootstrap_resamples, seed))
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        let mut cfg = self.config.clone();
        if let Some(r) = cfg.remote.as_mut() {
            r.api_key = None;
        }
        serde_json::to_value(cfg).map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn clone_box(&self) -> Box<dyn PatternBackend> {
        Box::new(Self::with_remote(self.config.clone(), self.remote.clone()).expect("config already validated"))
    }
}
