//! Chat-completion classifier backend. Optional; nothing in the pipeline
//! requires it.

use std::io::Read;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{build_prompt, Classifier, ClassifierError, VideoMeta};
use crate::topics::TopicProfile;

fn default_key_env() -> String {
    "FYPAUDIT_LLM_API_KEY".into()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_min_interval_ms() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Minimum spacing between requests (rate ceiling).
    #[serde(default = "default_min_interval_ms")]
    pub min_interval_ms: u64,
}

pub struct LlmBackend {
    config: LlmConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    last_call: Mutex<Option<Instant>>,
}

impl LlmBackend {
    pub fn from_config(config: LlmConfig) -> Result<Self, ClassifierError> {
        if config.endpoint.is_empty() || config.model.is_empty() {
            return Err(ClassifierError::Config("endpoint and model are required".into()));
        }
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        Ok(Self { config, api_key, agent, last_call: Mutex::new(None) })
    }

    fn throttle(&self) {
        let min = Duration::from_millis(self.config.min_interval_ms);
        let mut last = self.last_call.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min {
                std::thread::sleep(min - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn ask(&self, prompt: &str) -> Result<String, ClassifierError> {
        self.throttle();
        let payload = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match req.send_string(&payload.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                return Err(ClassifierError::Backend(format!("status {code}: {}", r.into_string().unwrap_or_default())))
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                return Err(if msg.contains("timed out") || msg.contains("Timeout") {
                    ClassifierError::Timeout(msg)
                } else {
                    ClassifierError::Backend(msg)
                });
            }
        };
        let mut body = String::new();
        response.into_reader().read_to_string(&mut body).map_err(|e| ClassifierError::Backend(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|_| ClassifierError::Parse(body.chars().take(200).collect()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClassifierError::Parse(body.chars().take(200).collect()))
    }
}

impl Classifier for LlmBackend {
    fn classify(&self, meta: &VideoMeta, topic: &TopicProfile) -> Result<bool, ClassifierError> {
        let answer = self.ask(&build_prompt(meta, topic))?;
        parse_answer(&answer)
    }
}

/// Accepts a leading "yes" or "no" word, case-insensitively. Anything else
/// is a parse failure.
pub fn parse_answer(answer: &str) -> Result<bool, ClassifierError> {
    let first: String = answer.trim_start().chars().take_while(|c| c.is_alphabetic()).collect();
    match first.to_ascii_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(ClassifierError::Parse(answer.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{serve, HttpRequest, HttpResponse, Transport, TransportError};
    use std::sync::Arc;

    #[test]
    fn parses_strict_answers() {
        assert!(parse_answer("Yes").unwrap());
        assert!(parse_answer("  yes.").unwrap());
        assert!(!parse_answer("NO").unwrap());
        assert!(!parse_answer("No, it is not").unwrap());
        assert!(parse_answer("Not sure").is_err());
        assert!(parse_answer("Nope").is_err());
        assert!(parse_answer("").is_err());
        assert!(parse_answer("I think yes").is_err());
    }

    struct FakeChat {
        reply: &'static str,
    }

    impl Transport for FakeChat {
        fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
            let body: serde_json::Value = serde_json::from_slice(&request.body).unwrap();
            assert_eq!(body["model"], "test-model");
            let prompt = body["messages"][0]["content"].as_str().unwrap();
            assert!(prompt.starts_with("You are a classifier"));
            assert_eq!(request.header("authorization"), None);
            let out = json!({"choices": [{"message": {"role": "assistant", "content": self.reply}}]});
            Ok(HttpResponse::ok(out.to_string().into_bytes()))
        }
    }

    fn backend(url: String) -> LlmBackend {
        LlmBackend::from_config(LlmConfig {
            endpoint: url,
            model: "test-model".into(),
            api_key_env: "FYPAUDIT_TEST_UNSET_KEY".into(),
            timeout_ms: 5_000,
            min_interval_ms: 0,
        })
        .unwrap()
    }

    #[test]
    fn talks_to_chat_endpoint() {
        let topic = crate::topics::default_topics().remove(0);
        let meta = VideoMeta { description: "pasta night".into(), ..Default::default() };

        let server = serve("127.0.0.1:0", Arc::new(FakeChat { reply: "Yes" }), 1).unwrap();
        assert!(backend(format!("{}/v1/chat/completions", server.url())).classify(&meta, &topic).unwrap());
        server.shutdown();

        let server = serve("127.0.0.1:0", Arc::new(FakeChat { reply: "Maybe?" }), 1).unwrap();
        let err = backend(format!("{}/v1/chat/completions", server.url())).classify(&meta, &topic).unwrap_err();
        assert!(matches!(err, ClassifierError::Parse(_)));
        server.shutdown();
    }

    #[test]
    fn unreachable_endpoint_is_backend_error() {
        let topic = crate::topics::default_topics().remove(0);
        let err = backend("http://127.0.0.1:1/v1".into()).classify(&VideoMeta::default(), &topic).unwrap_err();
        assert!(matches!(err, ClassifierError::Backend(_) | ClassifierError::Timeout(_)));
    }

    #[test]
    fn rejects_incomplete_config() {
        let cfg = LlmConfig {
            endpoint: String::new(),
            model: "m".into(),
            api_key_env: default_key_env(),
            timeout_ms: 1,
            min_interval_ms: 0,
        };
        assert!(matches!(LlmBackend::from_config(cfg), Err(ClassifierError::Config(_))));
    }
}
