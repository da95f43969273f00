//! Remote provider adapters speaking JSON over HTTP.
//!
//! Request and response shapes:
//!
//! | adapter | request body | response body |
//! |---|---|---|
//! | chat | `{"model", "messages": [{"role": "user", "content"}], "temperature", "max_tokens"}` | `{"choices": [{"message": {"content"}}]}` |
//! | dense | `{"model", "input": [text]}` | `{"data": [{"embedding": [f32]}]}` |
//! | sparse | `{"model", "input": [text]}` | `{"data": [{"indices": [u32], "values": [f32]}]}` |
//! | scorer | `{"model", "query", "passages": [text]}` | `{"scores": [f64]}` |
//!
//! The API secret is read from the environment variable named in the
//! config and sent as a bearer token.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ensure_nonempty, ChatProvider, ChatRequest, DenseEmbedder, DenseVector, Limiter, PairScorer,
    SparseEncoder, SparseWeights, Truncation,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API secret.
    pub api_key_env: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub retry_budget: u32,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: None,
            model: String::new(),
            timeout_ms: 30_000,
            retry_budget: 3,
            max_in_flight: Limiter::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self, name: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            errs.push(format!("providers.{name}.endpoint must be an http(s) URL"));
        }
        if self.timeout_ms == 0 {
            errs.push(format!("providers.{name}.timeout_ms must be > 0"));
        }
        errs
    }

    fn secret(&self) -> Result<Option<String>> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Config(vec![format!("environment variable {var} is not set")])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Connection, DNS or timeout failure.
    Network(String),
    /// Non-success HTTP status with the response body.
    Status(u16, String),
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<Value, TransportFailure>;
}

#[derive(Debug, Clone, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<Value, TransportFailure> {
        let mut req = ureq::post(url).timeout(timeout);
        if let Some(token) = bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| TransportFailure::Network(e.to_string())),
            Err(ureq::Error::Status(code, resp)) => {
                Err(TransportFailure::Status(code, resp.into_string().unwrap_or_default()))
            }
            Err(e) => Err(TransportFailure::Network(e.to_string())),
        }
    }
}

/// Shared retry and concurrency handling for one endpoint.
struct Client {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    limiter: Limiter,
}

impl Client {
    fn new(config: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self> {
        let errs = config.validate("endpoint");
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let limiter = Limiter::new(config.max_in_flight);
        Ok(Self {
            config,
            transport,
            limiter,
        })
    }

    /// One initial attempt plus up to `retry_budget` retries on network
    /// failures, 429 and 5xx.
    fn post(&self, body: &Value) -> Result<Value> {
        let secret = self.config.secret()?;
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let max_attempts = self.config.retry_budget + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport
                    .post_json(&self.config.endpoint, secret.as_deref(), body, timeout)
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(TransportFailure::Network(msg)) if attempts >= max_attempts => {
                    return Err(Error::Transport {
                        attempts,
                        message: msg,
                    })
                }
                Err(TransportFailure::Status(status, msg))
                    if attempts >= max_attempts || !(status == 429 || status >= 500) =>
                {
                    return Err(Error::Provider {
                        status,
                        message: msg,
                    })
                }
                Err(e) => {
                    log::warn!("attempt {attempts} to {} failed: {e:?}", self.config.endpoint);
                    std::thread::sleep(Duration::from_millis(50 * u64::from(attempts)));
                }
            }
        }
    }
}

fn malformed(what: &str) -> Error {
    Error::Provider {
        status: 200,
        message: format!("malformed response: {what}"),
    }
}

pub struct HttpChat(Client);

impl HttpChat {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self> {
        Ok(Self(Client::new(config, transport)?))
    }
}

impl ChatProvider for HttpChat {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let body = json!({
            "model": self.0.config.model,
            "messages": [{"role": "user", "content": request.filled_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let resp = self.0.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed("choices[0].message.content"))
    }
}

pub struct HttpDense {
    client: Client,
    dimension: usize,
}

impl HttpDense {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>, dimension: usize) -> Result<Self> {
        Ok(Self {
            client: Client::new(config, transport)?,
            dimension,
        })
    }
}

impl DenseEmbedder for HttpDense {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_dense(&self, texts: &[&str]) -> Result<Vec<DenseVector>> {
        ensure_nonempty(texts)?;
        let body = json!({"model": self.client.config.model, "input": texts});
        let resp = self.client.post(&body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .filter(|d| d.len() == texts.len())
            .ok_or_else(|| malformed("data array of input length"))?;
        data.iter()
            .map(|item| {
                let values: Vec<f32> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| malformed("embedding"))?
                    .iter()
                    .map(|v| v.as_f64().map(|f| f as f32).ok_or_else(|| malformed("embedding value")))
                    .collect::<Result<_>>()?;
                DenseVector::new(values, self.dimension)
            })
            .collect()
    }
}

pub struct HttpSparse {
    client: Client,
    vocab_size: u32,
}

impl HttpSparse {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>, vocab_size: u32) -> Result<Self> {
        Ok(Self {
            client: Client::new(config, transport)?,
            vocab_size,
        })
    }
}

impl SparseEncoder for HttpSparse {
    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn embed_sparse(&self, texts: &[&str]) -> Result<Vec<SparseWeights>> {
        ensure_nonempty(texts)?;
        let body = json!({"model": self.client.config.model, "input": texts});
        let resp = self.client.post(&body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .filter(|d| d.len() == texts.len())
            .ok_or_else(|| malformed("data array of input length"))?;
        data.iter()
            .map(|item| {
                let ids = item.get("indices").and_then(Value::as_array);
                let vals = item.get("values").and_then(Value::as_array);
                let (Some(ids), Some(vals)) = (ids, vals) else {
                    return Err(malformed("indices/values"));
                };
                if ids.len() != vals.len() {
                    return Err(malformed("indices/values length mismatch"));
                }
                let entries = ids
                    .iter()
                    .zip(vals)
                    .map(|(i, v)| match (i.as_u64(), v.as_f64()) {
                        (Some(i), Some(v)) if i <= u64::from(u32::MAX) => Ok((i as u32, v as f32)),
                        _ => Err(malformed("sparse entry")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                SparseWeights::new(entries, self.vocab_size)
            })
            .collect()
    }
}

pub struct HttpScorer {
    client: Client,
    truncation: Truncation,
}

impl HttpScorer {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>, truncation: Truncation) -> Result<Self> {
        Ok(Self {
            client: Client::new(config, transport)?,
            truncation,
        })
    }
}

impl PairScorer for HttpScorer {
    fn truncation(&self) -> Truncation {
        self.truncation
    }

    fn score_truncated(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        let body = json!({"model": self.client.config.model, "query": query, "passages": passages});
        let resp = self.client.post(&body)?;
        resp.get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("scores"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed("score value")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::TemplateId;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    /// Replays scripted outcomes and records requests.
    struct Scripted {
        outcomes: Mutex<Vec<std::result::Result<Value, TransportFailure>>>,
        calls: AtomicU32,
        seen: Mutex<Vec<(Option<String>, Value)>>,
    }

    impl Scripted {
        fn new(mut outcomes: Vec<std::result::Result<Value, TransportFailure>>) -> Arc<Self> {
            outcomes.reverse();
            Arc::new(Self {
                outcomes: Mutex::new(outcomes),
                calls: AtomicU32::new(0),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn post_json(
            &self,
            _url: &str,
            bearer: Option<&str>,
            body: &Value,
            _timeout: Duration,
        ) -> std::result::Result<Value, TransportFailure> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen
                .lock()
                .unwrap()
                .push((bearer.map(str::to_string), body.clone()));
            self.outcomes
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Err(TransportFailure::Network("exhausted".into())))
        }
    }

    fn config(retry_budget: u32) -> ProviderConfig {
        ProviderConfig {
            endpoint: "http://localhost:9/v1".into(),
            retry_budget,
            ..Default::default()
        }
    }

    fn request() -> ChatRequest {
        ChatRequest::new(TemplateId::Reader, "prompt".into(), 0.0, 32).unwrap()
    }

    #[test]
    fn chat_parses_completion() {
        let t = Scripted::new(vec![Ok(json!({"choices": [{"message": {"content": "B"}}]}))]);
        let chat = HttpChat::new(config(0), t.clone()).unwrap();
        assert_eq!(chat.chat(&request()).unwrap(), "B");
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].1["messages"][0]["content"], "prompt");
        assert_eq!(seen[0].1["max_tokens"], 32);
    }

    #[test]
    fn timeout_exhausts_retry_budget() {
        let t = Scripted::new(vec![]);
        let chat = HttpChat::new(config(2), t.clone()).unwrap();
        match chat.chat(&request()).unwrap_err() {
            Error::Transport { attempts, .. } => assert_eq!(attempts, 3),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_error_is_not_retried() {
        let t = Scripted::new(vec![Err(TransportFailure::Status(401, "denied".into()))]);
        let chat = HttpChat::new(config(5), t.clone()).unwrap();
        assert!(matches!(chat.chat(&request()), Err(Error::Provider { status: 401, .. })));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_error_then_success() {
        let t = Scripted::new(vec![
            Err(TransportFailure::Status(503, "busy".into())),
            Ok(json!({"scores": [0.5, -1.0]})),
        ]);
        let scorer = HttpScorer::new(config(1), t.clone(), Truncation::default()).unwrap();
        assert_eq!(scorer.score_pairs("q", &["a", "b"]).unwrap(), vec![0.5, -1.0]);
    }

    #[test]
    fn scorer_request_is_truncated() {
        let t = Scripted::new(vec![Ok(json!({"scores": [1.0]}))]);
        let trunc = Truncation {
            query_tokens: 2,
            passage_tokens: 3,
            subword_multiplier: 1.0,
        };
        let scorer = HttpScorer::new(config(0), t.clone(), trunc).unwrap();
        scorer.score_pairs("a b c d", &["1 2 3 4 5"]).unwrap();
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].1["query"], "a b");
        assert_eq!(seen[0].1["passages"][0], "1 2 3");
    }

    #[test]
    fn sparse_drops_nonpositive_and_checks_vocab() {
        let t = Scripted::new(vec![
            Ok(json!({"data": [{"indices": [1, 2], "values": [0.7, 0.0]}]})),
            Ok(json!({"data": [{"indices": [99], "values": [1.0]}]})),
        ]);
        let enc = HttpSparse::new(config(0), t, 50).unwrap();
        assert_eq!(enc.embed_sparse(&["x"]).unwrap()[0].len(), 1);
        assert!(enc.embed_sparse(&["x"]).is_err());
    }

    #[test]
    fn dense_checks_dimension() {
        let t = Scripted::new(vec![Ok(json!({"data": [{"embedding": [1.0, 2.0]}]}))]);
        let enc = HttpDense::new(config(0), t, 3).unwrap();
        assert!(matches!(enc.embed_dense(&["x"]), Err(Error::Contract(_))));
    }

    #[test]
    fn bearer_from_env() {
        std::env::set_var("RAGMED_TEST_SECRET", "s3cret");
        let t = Scripted::new(vec![Ok(json!({"choices": [{"message": {"content": ""}}]}))]);
        let cfg = ProviderConfig {
            api_key_env: Some("RAGMED_TEST_SECRET".into()),
            ..config(0)
        };
        HttpChat::new(cfg, t.clone()).unwrap().chat(&request()).unwrap();
        assert_eq!(t.seen.lock().unwrap()[0].0.as_deref(), Some("s3cret"));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ProviderConfig {
            endpoint: "ftp://x".into(),
            timeout_ms: 0,
            ..Default::default()
        };
        match HttpChat::new(cfg, Arc::new(UreqTransport)) {
            Err(Error::Config(v)) => assert_eq!(v.len(), 2),
            _ => panic!("expected config error"),
        }
    }
}
