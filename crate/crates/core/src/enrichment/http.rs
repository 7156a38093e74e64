//! Client for chat-completion style endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::provider::{truncate_for_log, Provider, ProviderError, ProviderRequest};

pub const DEFAULT_TOKEN_ENV: &str = "LEXBRIDGE_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles each attempt.
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    /// Environment variable holding the bearer token. Unset means no auth.
    pub token_env: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            model: String::new(),
            temperature: 0.0,
            max_tokens: 512,
            retries: 2,
            backoff_ms: 500,
            timeout_secs: 60,
            token_env: DEFAULT_TOKEN_ENV.to_owned(),
        }
    }
}

pub struct HttpProvider {
    config: EndpointConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("url", &self.config.url)
            .field("model", &self.config.model)
            .field("authenticated", &self.token.is_some())
            .finish()
    }
}

impl HttpProvider {
    /// Validates the endpoint URL and reads the token from the environment.
    pub fn new(config: EndpointConfig) -> Result<Self, ProviderError> {
        let url = reqwest::Url::parse(&config.url)
            .map_err(|e| ProviderError::Config(format!("bad endpoint url `{}`: {e}", config.url)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(ProviderError::Config(format!(
                "endpoint url `{}` must be http or https",
                config.url
            )));
        }
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            config,
            token,
            client,
        })
    }

    fn body(&self, request: &ProviderRequest) -> Value {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": [{"role": "user", "content": request.prompt}],
        })
    }

    fn attempt(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        let mut builder = self.client.post(&self.config.url).json(&self.body(request));
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: truncate_for_log(&text),
            });
        }
        extract_content(&text)
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion reply.
pub fn extract_content(body: &str) -> Result<String, ProviderError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| ProviderError::Parse(format!("reply is not JSON ({e}): {}", truncate_for_log(body))))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| {
            ProviderError::Parse(format!(
                "reply has no choices[0].message.content: {}",
                truncate_for_log(body)
            ))
        })
}

impl Provider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(reply) => return Ok(reply),
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    log::warn!(
                        "request for `{}` failed ({e}); retry {} of {}",
                        request.subject_id,
                        attempt + 1,
                        self.config.retries
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrichment::provider::{parse_phrases, PromptKind};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves `responses` in order, one per connection, then stops.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&hits);
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream);
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut req_body = vec![0; content_length];
                reader.read_exact(&mut req_body).unwrap();
                bodies.push(String::from_utf8(req_body).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1/chat/completions"), hits, handle)
    }

    fn chat_reply(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn request() -> ProviderRequest {
        ProviderRequest {
            kind: PromptKind::Query,
            subject_id: "q1".into(),
            prompt: "expand this".into(),
            max_phrases: 16,
        }
    }

    fn config(url: String) -> EndpointConfig {
        EndpointConfig {
            url,
            model: "test-model".into(),
            backoff_ms: 1,
            token_env: "LEXBRIDGE_TEST_TOKEN_UNSET".into(),
            ..Default::default()
        }
    }

    #[test]
    fn successful_reply_round_trip() {
        let (url, _, handle) = serve(vec![(200, chat_reply(r#"["term a","term b"]"#))]);
        let provider = HttpProvider::new(config(url)).unwrap();
        let reply = provider.complete(&request()).unwrap();
        assert_eq!(parse_phrases(&reply, 16).unwrap(), ["term a", "term b"]);
        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["messages"][0]["content"], "expand this");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits, handle) = serve(vec![
            (503, "busy".into()),
            (500, "oops".into()),
            (200, chat_reply("[\"ok\"]")),
        ]);
        let provider = HttpProvider::new(config(url)).unwrap();
        assert_eq!(provider.complete(&request()).unwrap(), "[\"ok\"]");
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let (url, hits, handle) = serve(vec![(502, "a".into()), (502, "b".into()), (502, "c".into())]);
        let provider = HttpProvider::new(config(url)).unwrap();
        let err = provider.complete(&request()).unwrap_err();
        assert_eq!(err, ProviderError::Status { status: 502, body: "c".into() });
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits, handle) = serve(vec![(401, "denied".into())]);
        let provider = HttpProvider::new(config(url)).unwrap();
        assert!(matches!(
            provider.complete(&request()),
            Err(ProviderError::Status { status: 401, .. })
        ));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn malformed_body_is_a_parse_error() {
        let (url, _, handle) = serve(vec![(200, "<html>".into())]);
        let provider = HttpProvider::new(config(url)).unwrap();
        assert!(matches!(provider.complete(&request()), Err(ProviderError::Parse(_))));
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_a_network_error() {
        // bind then drop to get a port that refuses connections
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut cfg = config(format!("http://127.0.0.1:{port}/"));
        cfg.retries = 1;
        let provider = HttpProvider::new(cfg).unwrap();
        assert!(matches!(provider.complete(&request()), Err(ProviderError::Network(_))));
    }

    #[test]
    fn bad_urls_are_config_errors() {
        for url in ["", "not a url", "ftp://example.com/x"] {
            assert!(matches!(
                HttpProvider::new(config(url.into())),
                Err(ProviderError::Config(_))
            ));
        }
    }

    #[test]
    fn content_extraction() {
        assert_eq!(extract_content(&chat_reply("hi")).unwrap(), "hi");
        assert!(extract_content(r#"{"choices": []}"#).is_err());
    }
}
