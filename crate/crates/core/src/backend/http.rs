use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendIdentity, TextBackend};
use crate::infer::SamplingParams;

/// Connection settings for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub name: String,
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key; unset means no auth header.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, api_key, agent })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub(crate) fn request_body(&self, prompt: &str, sampling: &SamplingParams) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        });
        if let Some(seed) = sampling.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl TextBackend for HttpBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: self.config.name.clone(),
            model: self.config.model.clone(),
        }
    }

    fn generate(&self, prompt: &str, sampling: &SamplingParams) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.request_body(prompt, sampling)).map_err(map_transport)?;
        let status = resp.status().as_u16();
        if status == 408 || status == 504 {
            return Err(BackendError::Timeout);
        }
        if !(200..300).contains(&status) {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            let detail: String = detail.chars().take(300).collect();
            return Err(if status == 429 || status >= 500 {
                BackendError::Transport(format!("http {status}: {detail}"))
            } else {
                BackendError::Refused(format!("http {status}: {detail}"))
            });
        }
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(map_transport)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Failed("response has no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(BackendError::Refused("content filtered".into()));
        }
        choice
            .message
            .content
            .ok_or_else(|| BackendError::Refused("empty message content".into()))
    }
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;

    fn serve_once(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut req_body = vec![0; len];
            reader.read_exact(&mut req_body).unwrap();
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            head + &String::from_utf8(req_body).unwrap()
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn backend(base_url: String) -> HttpBackend {
        HttpBackend::new(HttpBackendConfig {
            name: "local".into(),
            base_url,
            model: "tiny".into(),
            api_key_env: None,
            timeout_secs: 5,
        })
        .unwrap()
    }

    #[test]
    fn sends_sampling_and_reads_content() {
        let (url, server) = serve_once("200 OK", r#"{"choices":[{"message":{"content":"Answer: B"}}]}"#);
        let b = backend(url);
        let sampling = SamplingParams {
            seed: Some(9),
            ..SamplingParams::default()
        };
        assert_eq!(b.generate("hello", &sampling).unwrap(), "Answer: B");
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        let (_, body) = request.split_once("\r\n\r\n").unwrap();
        let body: Value = serde_json::from_str(body).unwrap();
        assert_eq!(body["temperature"], json!(0.7));
        assert_eq!(body["top_p"], json!(0.9));
        assert_eq!(body["seed"], json!(9));
        assert_eq!(body["model"], json!("tiny"));
    }

    #[test]
    fn client_errors_are_refusals_and_server_errors_transient() {
        let (url, server) = serve_once("400 Bad Request", r#"{"error":"nope"}"#);
        let err = backend(url).generate("x", &SamplingParams::default()).unwrap_err();
        server.join().unwrap();
        assert!(matches!(err, BackendError::Refused(_)));

        let (url, server) = serve_once("503 Service Unavailable", "{}");
        let err = backend(url).generate("x", &SamplingParams::default()).unwrap_err();
        server.join().unwrap();
        assert!(err.is_transient());
    }

    #[test]
    fn missing_key_variable_is_config_error() {
        let err = HttpBackend::new(HttpBackendConfig {
            name: "x".into(),
            base_url: "http://127.0.0.1:1".into(),
            model: "m".into(),
            api_key_env: Some("CURALOOP_TEST_UNSET_KEY_VAR".into()),
            timeout_secs: 1,
        })
        .unwrap_err();
        assert!(matches!(err, BackendError::Config(_)));
    }
}
