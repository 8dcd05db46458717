//! Completion backends: a scripted mock and an optional HTTP client.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{record, Determinism, FieldType, InputField, Tool, ToolDescriptor, ToolError, ToolRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64) -> Self {
        Self {
            model: model.into(),
            messages: vec![Message {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature,
        }
    }

    fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("timeout after {0:.1}s")]
    Timeout(f64),
    #[error("http status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("no scripted response matches the prompt")]
    NoMatch,
    #[error("injected failure")]
    Injected,
    #[error("endpoint not configured: {0}")]
    NotConfigured(String),
}

impl From<LlmError> for ToolError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Timeout(_) => ToolError::Timeout(e.to_string()),
            other => ToolError::Failed(other.to_string()),
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Regex-scripted responses, first match wins, with a seeded failure stream.
/// One failure draw is taken per call, so failures land on the same calls
/// for the same seed.
pub struct MockBackend {
    script: Vec<(Regex, String)>,
    fallback: Option<String>,
    failure_rate: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("patterns", &self.script.iter().map(|(r, _)| r.as_str()).collect::<Vec<_>>())
            .field("failure_rate", &self.failure_rate)
            .finish()
    }
}

impl MockBackend {
    pub fn new(script: &[(&str, &str)]) -> Result<Self, regex::Error> {
        let script = script
            .iter()
            .map(|(p, r)| Ok((Regex::new(p)?, r.to_string())))
            .collect::<Result<_, regex::Error>>()?;
        Ok(Self {
            script,
            fallback: None,
            failure_rate: 0.0,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
        })
    }

    pub fn from_pairs(script: Vec<(Regex, String)>) -> Self {
        Self {
            script,
            fallback: None,
            failure_rate: 0.0,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    pub fn with_failures(mut self, rate: f64, seed: u64) -> Self {
        self.failure_rate = rate.clamp(0.0, 1.0);
        self.rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
        self
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        if self.failure_rate > 0.0 {
            let draw: f64 = self.rng.lock().expect("mock rng poisoned").random();
            if draw < self.failure_rate {
                return Err(LlmError::Injected);
            }
        }
        let prompt = request.prompt_text();
        self.script
            .iter()
            .find(|(re, _)| re.is_match(&prompt))
            .map(|(_, r)| r.clone())
            .or_else(|| self.fallback.clone())
            .ok_or(LlmError::NoMatch)
    }
}

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig};

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{CompletionBackend, CompletionRequest, LlmError};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct HttpConfig {
        pub endpoint: String,
        pub model: String,
        /// Environment variable holding the bearer key; unset means no
        /// Authorization header.
        #[serde(default)]
        pub key_env: Option<String>,
        #[serde(default = "default_timeout")]
        pub timeout_secs: f64,
        #[serde(default)]
        pub retries: u32,
    }

    fn default_timeout() -> f64 {
        30.0
    }

    #[derive(Deserialize)]
    struct CompletionResponse {
        content: String,
    }

    pub struct HttpBackend {
        config: HttpConfig,
        agent: ureq::Agent,
    }

    impl HttpBackend {
        pub fn new(config: HttpConfig) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
                .http_status_as_error(false)
                .build()
                .into();
            Self { config, agent }
        }

        fn once(&self, request: &CompletionRequest) -> Result<String, LlmError> {
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(var) = &self.config.key_env {
                let key = std::env::var(var).map_err(|_| LlmError::NotConfigured(format!("{var} is unset")))?;
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send_json(request).map_err(|e| match e {
                ureq::Error::Timeout(_) => LlmError::Timeout(self.config.timeout_secs),
                other => LlmError::Transport(other.to_string()),
            })?;
            let status = resp.status().as_u16();
            if !(200..300).contains(&status) {
                return Err(LlmError::Status(status));
            }
            resp.body_mut()
                .read_json::<CompletionResponse>()
                .map(|r| r.content)
                .map_err(|e| match e {
                    ureq::Error::Timeout(_) => LlmError::Timeout(self.config.timeout_secs),
                    other => LlmError::Malformed(other.to_string()),
                })
        }
    }

    impl CompletionBackend for HttpBackend {
        fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
            let mut last = self.once(request);
            for _ in 0..self.config.retries {
                if last.is_ok() {
                    break;
                }
                last = self.once(request);
            }
            last
        }
    }
}

/// Exposes a backend as a registry tool taking a single prompt.
pub struct LlmTool {
    descriptor: ToolDescriptor,
    backend: Arc<dyn CompletionBackend>,
    model: String,
    temperature: f64,
}

impl LlmTool {
    pub fn new(name: &str, backend: Arc<dyn CompletionBackend>, model: &str, temperature: f64) -> Self {
        Self {
            descriptor: ToolDescriptor {
                name: name.into(),
                description: "Sends a prompt to a completion backend".into(),
                inputs: vec![InputField::required("prompt", FieldType::Text)],
                determinism: Determinism::External,
            },
            backend,
            model: model.into(),
            temperature,
        }
    }
}

impl Tool for LlmTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, inputs: &ToolRecord, _: &mut ChaCha8Rng) -> Result<ToolRecord, ToolError> {
        let prompt = inputs["prompt"].as_str().unwrap_or_default();
        let req = CompletionRequest::user(&self.model, prompt, self.temperature);
        let text = self.backend.complete(&req)?;
        Ok(record([("text", json!(text))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(b: &dyn CompletionBackend, prompt: &str) -> Result<String, LlmError> {
        b.complete(&CompletionRequest::user("mock", prompt, 0.0))
    }

    #[test]
    fn scripted_echo() {
        let b = MockBackend::new(&[("^ping$", "pong")]).unwrap();
        assert_eq!(ask(&b, "ping"), Ok("pong".into()));
        assert_eq!(ask(&b, "hello"), Err(LlmError::NoMatch));
    }

    #[test]
    fn seeded_failures_repeat() {
        let run = || {
            let b = MockBackend::new(&[(".", "ok")]).unwrap().with_failures(0.15, 11);
            (0..200).map(|_| ask(&b, "x").is_err()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let rate = a.iter().filter(|f| **f).count() as f64 / a.len() as f64;
        assert!((0.05..0.25).contains(&rate), "{rate}");
    }

    #[cfg(feature = "http")]
    #[test]
    fn unreachable_endpoint_times_out() {
        use std::net::TcpListener;
        use std::time::Instant;
        // accepts the connection but never answers
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let _hold = std::thread::spawn(move || {
            let conns: Vec<_> = listener.incoming().take(1).collect();
            std::thread::sleep(std::time::Duration::from_secs(3));
            drop(conns);
        });
        let b = HttpBackend::new(HttpConfig {
            endpoint: format!("http://{addr}/v1/complete"),
            model: "m".into(),
            key_env: None,
            timeout_secs: 0.3,
            retries: 0,
        });
        let start = Instant::now();
        let err = ask(&b, "hi").unwrap_err();
        assert_eq!(err, LlmError::Timeout(0.3));
        assert!(start.elapsed().as_secs_f64() < 2.5);
    }
}
