//! Chat-completions client with retries, a global in-flight limit and an
//! offline mock backend.

mod backoff;
mod mock;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::header::{HeaderMap, AUTHORIZATION, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use backoff::Backoff;
pub use mock::mock_completion;

use crate::prompt::DiagnosisPrompt;

/// The only place a remote credential is read from.
pub const API_KEY_ENV: &str = "IMAGEDX_LLM_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const SYSTEM_MESSAGE: &str = "You are a clinical reporting assistant. Given a description of a classified medical imaging study, write a concise structured diagnosis report for review by a physician. Use exactly the section headings requested.";

const BODY_EXCERPT_CHARS: usize = 256;
const REDACTED: &str = "[REDACTED]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Remote,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Mock => "mock",
            Backend::Remote => "remote",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Backend::Mock),
            "remote" => Ok(Backend::Remote),
            other => Err(format!("unknown LLM backend {other:?} (expected mock or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub backend: Backend,
    pub model_name: String,
    pub endpoint_url: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Jitter as a fraction of the exponential delay.
    pub backoff_jitter: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            model_name: DEFAULT_MODEL.into(),
            endpoint_url: DEFAULT_ENDPOINT.into(),
            temperature: 0.2,
            max_output_tokens: 1024,
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
            backoff_jitter: 0.25,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::InvalidConfig(m));
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad(format!("timeout must be positive, got {}", self.timeout_secs));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be at least 1".into());
        }
        if !(self.backoff_jitter.is_finite() && self.backoff_jitter >= 0.0) {
            return bad("backoff_jitter must be >= 0".into());
        }
        if self.backend == Backend::Remote {
            match reqwest::Url::parse(&self.endpoint_url) {
                Ok(u) if matches!(u.scheme(), "http" | "https") => {}
                _ => return bad(format!("invalid endpoint_url {:?}", self.endpoint_url)),
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    fn models_url(&self) -> String {
        match self.endpoint_url.strip_suffix("/chat/completions") {
            Some(base) => format!("{base}/models"),
            None => self.endpoint_url.clone(),
        }
    }
}

/// API key wrapper that never prints its contents.
#[derive(Clone)]
pub struct Credential(String);

impl Credential {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .map(Self)
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Credential({REDACTED})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum LlmError {
    #[error("no API credential: set {API_KEY_ENV} to use the remote backend")]
    MissingCredential,
    #[error("LLM request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("LLM endpoint is rate limiting; gave up after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("LLM endpoint error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    RemoteError { status: Option<u16>, message: String },
    #[error("LLM returned an empty completion")]
    EmptyCompletion,
    #[error("invalid LLM configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub model_name: String,
    pub latency_secs: f64,
    pub token_usage: Option<TokenUsage>,
    pub attempt_count: u32,
    /// Sleep before each retry, in order.
    pub backoff_delays_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub backend: Backend,
    pub model_name: String,
    pub healthy: bool,
    pub detail: String,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    model: Option<String>,
    #[serde(default)]
    choices: Vec<ChatChoice>,
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

/// Outcome of one HTTP exchange.
enum Attempt {
    Done(Completion),
    Fatal(LlmError),
    Transient {
        error: LlmError,
        retry_after: Option<Duration>,
    },
}

/// Shared, cloneable handle. All clones share one in-flight limiter.
#[derive(Clone)]
pub struct LlmGateway {
    cfg: Arc<LlmConfig>,
    credential: Option<Credential>,
    client: reqwest::Client,
    limiter: Arc<Semaphore>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("cfg", &self.cfg)
            .field("credential", &self.credential)
            .finish()
    }
}

impl LlmGateway {
    /// Reads the credential from the environment.
    pub fn new(cfg: LlmConfig) -> Result<Self, LlmError> {
        Self::with_credential(cfg, Credential::from_env())
    }

    pub fn with_credential(cfg: LlmConfig, credential: Option<Credential>) -> Result<Self, LlmError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| LlmError::InvalidConfig(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            limiter: Arc::new(Semaphore::new(cfg.max_in_flight)),
            cfg: Arc::new(cfg),
            credential,
            client,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub async fn complete(&self, prompt: &DiagnosisPrompt) -> Result<Completion, LlmError> {
        let started = Instant::now();
        if self.cfg.backend == Backend::Mock {
            return Ok(Completion {
                text: mock_completion(prompt, &self.cfg.model_name),
                model_name: self.cfg.model_name.clone(),
                latency_secs: started.elapsed().as_secs_f64(),
                token_usage: None,
                attempt_count: 1,
                backoff_delays_ms: Vec::new(),
            });
        }
        let credential = self.credential.as_ref().ok_or(LlmError::MissingCredential)?;
        let mut backoff = Backoff::new(
            Duration::from_millis(self.cfg.backoff_base_ms),
            Duration::from_millis(self.cfg.backoff_max_ms),
            self.cfg.backoff_jitter,
        );
        let mut delays = Vec::new();
        let mut attempt = 1u32;
        loop {
            match self.attempt(prompt, credential, attempt).await {
                Attempt::Done(mut c) => {
                    c.latency_secs = started.elapsed().as_secs_f64();
                    c.backoff_delays_ms = delays;
                    return Ok(c);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient { error, retry_after } => {
                    if attempt > self.cfg.max_retries {
                        tracing::warn!(attempts = attempt, error = %error, "LLM request failed");
                        return Err(error);
                    }
                    let delay = backoff.next_delay(rand::random::<f64>(), retry_after);
                    tracing::info!(
                        attempt,
                        delay_ms = delay.as_millis() as u64,
                        error = %error,
                        "transient LLM failure, retrying"
                    );
                    delays.push(delay.as_millis() as u64);
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }

    async fn attempt(&self, prompt: &DiagnosisPrompt, credential: &Credential, attempt: u32) -> Attempt {
        let body = ChatRequest {
            model: &self.cfg.model_name,
            messages: [
                ChatMessage {
                    role: "system",
                    content: SYSTEM_MESSAGE,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.text,
                },
            ],
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_output_tokens,
        };
        let _permit = self.limiter.acquire().await.expect("limiter is never closed");
        let sent = self
            .client
            .post(&self.cfg.endpoint_url)
            .header(AUTHORIZATION, format!("Bearer {}", credential.0))
            .json(&body)
            .send()
            .await;
        let response = match sent {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Transient {
                    error: self.transport_error(&e, attempt),
                    retry_after: None,
                }
            }
        };
        let status = response.status();
        let retry_after = parse_retry_after(response.headers());
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Transient {
                    error: self.transport_error(&e, attempt),
                    retry_after: None,
                }
            }
        };
        tracing::debug!(attempt, status = status.as_u16(), "LLM response received");
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Transient {
                error: LlmError::RateLimited { attempts: attempt },
                retry_after,
            };
        }
        if !status.is_success() {
            let error = self.remote_error(Some(status), &text);
            return if status.is_server_error() {
                Attempt::Transient {
                    error,
                    retry_after,
                }
            } else {
                Attempt::Fatal(error)
            };
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                return Attempt::Fatal(self.remote_error(Some(status), &format!("malformed response ({e}): {text}")))
            }
        };
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Attempt::Fatal(LlmError::EmptyCompletion);
        }
        Attempt::Done(Completion {
            text: content,
            model_name: parsed.model.unwrap_or_else(|| self.cfg.model_name.clone()),
            latency_secs: 0.0,
            token_usage: parsed.usage,
            attempt_count: attempt,
            backoff_delays_ms: Vec::new(),
        })
    }

    /// Mock is always healthy; remote issues one authenticated GET without retries.
    pub async fn healthcheck(&self) -> Result<HealthStatus, LlmError> {
        let status = |detail: String| HealthStatus {
            backend: self.cfg.backend,
            model_name: self.cfg.model_name.clone(),
            healthy: true,
            detail,
        };
        if self.cfg.backend == Backend::Mock {
            return Ok(status("offline mock backend".into()));
        }
        let credential = self.credential.as_ref().ok_or(LlmError::MissingCredential)?;
        let url = self.cfg.models_url();
        let response = self
            .client
            .get(&url)
            .header(AUTHORIZATION, format!("Bearer {}", credential.0))
            .send()
            .await
            .map_err(|e| self.transport_error(&e, 1))?;
        let code = response.status();
        if code == StatusCode::TOO_MANY_REQUESTS {
            return Err(LlmError::RateLimited { attempts: 1 });
        }
        if !code.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(self.remote_error(Some(code), &text));
        }
        Ok(status(format!("endpoint reachable (HTTP {})", code.as_u16())))
    }

    fn transport_error(&self, e: &reqwest::Error, attempts: u32) -> LlmError {
        if e.is_timeout() {
            LlmError::Timeout { attempts }
        } else {
            self.remote_error(None, &e.to_string())
        }
    }

    fn remote_error(&self, status: Option<StatusCode>, body: &str) -> LlmError {
        let excerpt: String = self.redact(body).chars().take(BODY_EXCERPT_CHARS).collect();
        LlmError::RemoteError {
            status: status.map(|s| s.as_u16()),
            message: excerpt,
        }
    }

    /// Removes any occurrence of the credential from `text`.
    pub fn redact(&self, text: &str) -> String {
        match &self.credential {
            Some(c) if !c.0.is_empty() => text.replace(&c.0, REDACTED),
            _ => text.to_string(),
        }
    }
}

fn parse_retry_after(headers: &HeaderMap) -> Option<Duration> {
    let secs: f64 = headers.get(RETRY_AFTER)?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}
