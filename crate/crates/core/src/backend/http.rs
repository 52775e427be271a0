//! Blocking client for OpenAI-compatible `/v1/chat/completions` servers.
//!
//! One request per sample. Connection failures, timeouts, 429 and 5xx are
//! retried with exponential backoff; 401/403 and other 4xx are not.

use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    body_excerpt, request_fingerprint, Backend, BackendError, RawCompletion, SamplingParams,
};
use crate::prompts::PromptBundle;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ALIGN_DM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` counts from 1.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    /// Reads the API key from [`API_KEY_ENV`] when set.
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    fn client(&self) -> Result<Client, BackendError> {
        Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| BackendError::Network(e.to_string()))
    }

    fn authorize(
        &self,
        request: reqwest::blocking::RequestBuilder,
    ) -> reqwest::blocking::RequestBuilder {
        match &self.api_key {
            Some(key) => request.bearer_auth(key),
            None => request,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fatal(BackendError),
}

fn classify_send_error(e: reqwest::Error) -> Attempt {
    if e.is_timeout() {
        Attempt::Retry(BackendError::Timeout(e.to_string()))
    } else {
        Attempt::Retry(BackendError::Network(e.to_string()))
    }
}

fn classify_status(status: StatusCode, body: String) -> Attempt {
    if status.is_success() {
        return Attempt::Done(body);
    }
    let excerpt = body_excerpt(&body);
    let code = status.as_u16();
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Attempt::Fatal(BackendError::Auth {
            status: code,
            excerpt,
        }),
        StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(BackendError::Backend {
            status: code,
            excerpt,
        }),
        s if s.is_server_error() => Attempt::Retry(BackendError::Backend {
            status: code,
            excerpt,
        }),
        _ => Attempt::Fatal(BackendError::Backend {
            status: code,
            excerpt,
        }),
    }
}

fn with_retries(
    retry: &RetryPolicy,
    mut send: impl FnMut() -> Result<reqwest::blocking::Response, reqwest::Error>,
) -> Result<String, BackendError> {
    let attempts = retry.max_attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        let outcome = match send() {
            Err(e) => classify_send_error(e),
            Ok(resp) => {
                let status = resp.status();
                match resp.text() {
                    Ok(body) => classify_status(status, body),
                    Err(e) => classify_send_error(e),
                }
            }
        };
        match outcome {
            Attempt::Done(body) => return Ok(body),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(e) => {
                log::warn!("attempt {attempt}/{attempts} failed: {e}");
                last = Some(e);
                if attempt < attempts {
                    std::thread::sleep(retry.delay_after(attempt));
                }
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpConfig,
    client: Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = config.client()?;
        Ok(HttpBackend { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

impl Backend for HttpBackend {
    fn backend_id(&self) -> String {
        self.config.model.clone()
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &SamplingParams,
        sample_index: u32,
    ) -> Result<RawCompletion, BackendError> {
        let url = format!("{}/v1/chat/completions", self.config.base_url);
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &bundle.system,
                },
                ChatMessage {
                    role: "user",
                    content: &bundle.user,
                },
            ],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let started = Instant::now();
        let text = with_retries(&self.config.retry, || {
            self.config
                .authorize(self.client.post(&url))
                .json(&body)
                .send()
        })?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("{e}: {}", body_excerpt(&text))))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| {
                BackendError::Protocol(format!("no choices in {}", body_excerpt(&text)))
            })?
            .message
            .content
            .unwrap_or_default();
        Ok(RawCompletion {
            text: content,
            backend_id: self.backend_id(),
            latency_ms,
            request_fingerprint: request_fingerprint(bundle, params, sample_index),
        })
    }
}

/// Asks the server which model it serves (`GET {base_url}/v1/models`).
pub fn probe(config: &HttpConfig) -> Result<String, BackendError> {
    let client = config.client()?;
    let url = format!("{}/v1/models", config.base_url);
    let text = with_retries(&config.retry, || config.authorize(client.get(&url)).send())?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| BackendError::Protocol(format!("{e}: {}", body_excerpt(&text))))?;
    value["data"][0]["id"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol(format!("no model id in {}", body_excerpt(&text))))
}

#[cfg(test)]
pub(crate) mod test_server {
    //! Minimal HTTP/1.1 server that replays canned responses in order.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    #[derive(Debug, Clone)]
    pub struct Recorded {
        pub request_line: String,
        pub headers: Vec<(String, String)>,
        pub body: String,
    }

    impl Recorded {
        pub fn header(&self, name: &str) -> Option<&str> {
            self.headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v.as_str())
        }
    }

    pub struct TestServer {
        pub base_url: String,
        pub requests: Arc<Mutex<Vec<Recorded>>>,
    }

    /// Serves `responses` (status, body) one per connection, then stops.
    pub fn serve(responses: Vec<(u16, String)>) -> TestServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else {
                    return;
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut headers = Vec::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        headers.push((k.trim().to_string(), v.trim().to_string()));
                    }
                }
                let len = headers
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                    .map_or(0, |(_, v)| v.parse::<usize>().unwrap());
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(Recorded {
                    request_line: request_line.trim_end().to_string(),
                    headers,
                    body: String::from_utf8(buf).unwrap(),
                });
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        TestServer { base_url, requests }
    }
}
