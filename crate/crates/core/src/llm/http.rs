use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{
    estimate_messages, estimate_tokens, BackendConfig, ChatBackend, ChatMessage, Completion,
    LlmError, Role, Session, TokenUsage,
};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Chat-completions client. The API key is read once from `api_key_env` and never logged.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.check()?;
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            LlmError::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            config,
            api_key,
            agent,
        })
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let request = ChatRequest {
            model: &self.config.model_name,
            messages,
            temperature: self.config.temperature,
            top_p: self.config.top_p,
            max_tokens: self.config.max_output_tokens,
        };
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&request)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            429 => return Err(LlmError::RateLimited(body)),
            400 if body.contains("context_length_exceeded") => {
                return Err(LlmError::ContextOverflow {
                    estimated: estimate_messages(messages),
                    limit: self.config.max_context_tokens,
                })
            }
            500..=599 => return Err(LlmError::Transport(format!("HTTP {status}: {body}"))),
            _ => return Err(LlmError::BadResponse(format!("HTTP {status}: {body}"))),
        }
        let parsed: ChatResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| LlmError::BadResponse("no message content in choices[0]".into()))?;
        // Reported usage wins over the estimate.
        let usage = match parsed.usage {
            Some(u) => TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            },
            None => TokenUsage {
                prompt_tokens: estimate_messages(messages) as u64,
                completion_tokens: estimate_tokens(&content) as u64,
            },
        };
        Ok(Completion {
            reply: ChatMessage {
                role: Role::Assistant,
                content,
            },
            usage,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        _session: &Session,
        messages: &[ChatMessage],
    ) -> Result<Completion, LlmError> {
        let estimated = estimate_messages(messages);
        if estimated > self.config.max_context_tokens {
            return Err(LlmError::ContextOverflow {
                estimated,
                limit: self.config.max_context_tokens,
            });
        }
        let mut attempt = 1;
        loop {
            match self.attempt(messages) {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    let delay = self
                        .config
                        .backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(16));
                    warn!(attempt, delay_ms = delay, error = %e, "retrying chat completion");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn max_context_tokens(&self) -> usize {
        self.config.max_context_tokens
    }
}
