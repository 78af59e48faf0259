//! Chat-completions HTTP backend with top-logprob extraction.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, ChatMessage, GatewayError, GenerationRequest, GenerationResult, RetryPolicy, TokenAlternative};

/// How a forced assistant prefix is delivered to the server.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// Append the prefix as a trailing assistant message and ask the server to
    /// continue it (`continue_final_message`).
    #[default]
    ContinueAssistant,
    /// Send the prefix as a final user message and read the first generated token.
    QuestionAsUserMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub prefix_mode: PrefixMode,
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl HttpConfig {
    /// Reads `GATEWAY_BASE_URL`, `GATEWAY_MODEL` and optionally `GATEWAY_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let var = |k: &str| std::env::var(k).map_err(|_| GatewayError::InvalidRequest(format!("{k} is not set")));
        Ok(Self {
            base_url: var("GATEWAY_BASE_URL")?,
            model: var("GATEWAY_MODEL")?,
            api_key: std::env::var("GATEWAY_API_KEY").ok(),
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
            prefix_mode: PrefixMode::default(),
        })
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    continue_final_message: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    add_generation_prompt: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireTokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct WireTokenLogprob {
    #[serde(default)]
    top_logprobs: Vec<WireTopLogprob>,
}

#[derive(Debug, Deserialize)]
struct WireTopLogprob {
    token: String,
    logprob: f64,
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    name: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        let name = format!("http:{}", config.model);
        Self { config, agent, name }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// The exact JSON body sent for `request`.
    pub fn request_body(&self, request: &GenerationRequest) -> String {
        let mut messages = request.messages.clone();
        let (mut continue_final, mut add_prompt) = (None, None);
        if let Some(prefix) = &request.assistant_prefix {
            match self.config.prefix_mode {
                PrefixMode::ContinueAssistant => {
                    messages.push(ChatMessage::assistant(prefix.clone()));
                    continue_final = Some(true);
                    add_prompt = Some(false);
                }
                PrefixMode::QuestionAsUserMessage => messages.push(ChatMessage::user(prefix.clone())),
            }
        }
        let wire = WireRequest {
            model: &self.config.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_new_tokens,
            seed: request.seed,
            logprobs: request.want_token_alternatives,
            top_logprobs: request.want_token_alternatives.then_some(request.alternatives_top_k),
            continue_final_message: continue_final,
            add_generation_prompt: add_prompt,
        };
        serde_json::to_string(&wire).expect("request serializes")
    }

    /// Decodes a chat-completions response body.
    pub fn parse_response(
        &self,
        body: &str,
        request: &GenerationRequest,
        latency_ms: u64,
    ) -> Result<GenerationResult, GatewayError> {
        let wire: WireResponse =
            serde_json::from_str(body).map_err(|e| GatewayError::Protocol(format!("bad response JSON: {e}")))?;
        let choice =
            wire.choices.into_iter().next().ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
        let mut text = choice.message.content.unwrap_or_default();
        if let Some(prefix) = &request.assistant_prefix {
            if let Some(rest) = text.strip_prefix(prefix.as_str()) {
                text = rest.to_string();
            }
        }
        let alternatives = if request.want_token_alternatives {
            let first = choice
                .logprobs
                .and_then(|l| l.content)
                .and_then(|c| c.into_iter().next())
                .ok_or_else(|| GatewayError::Protocol("server did not return token logprobs".into()))?;
            if first.top_logprobs.is_empty() {
                return Err(GatewayError::Protocol("server returned no top_logprobs".into()));
            }
            let mut alts: Vec<TokenAlternative> = first
                .top_logprobs
                .into_iter()
                .map(|t| TokenAlternative { token: t.token, probability: t.logprob.exp().min(1.0) })
                .collect();
            alts.sort_by(|a, b| b.probability.total_cmp(&a.probability));
            Some(alts)
        } else {
            None
        };
        Ok(GenerationResult {
            text,
            first_token_alternatives: alternatives,
            backend_name: self.name.clone(),
            latency_ms,
        })
    }

    fn send_once(&self, body: &str) -> Result<String, GatewayError> {
        let mut call = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_string(body) {
            Ok(resp) => resp.into_string().map_err(|e| GatewayError::Transport(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => {
                Err(GatewayError::Status { status, body: resp.into_string().unwrap_or_default() })
            }
            Err(ureq::Error::Transport(t)) => Err(GatewayError::Transport(t.to_string())),
        }
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let body = self.request_body(request);
        let start = Instant::now();
        let response = self.config.retry.run(|| self.send_once(&body))?;
        self.parse_response(&response, request, start.elapsed().as_millis() as u64)
    }
}
