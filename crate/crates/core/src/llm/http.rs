use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Generation, GenerationRequest, LanguageModel, TokenLogprob};
use crate::error::{Error, Result};
use crate::http_util::{agent, join_url, post_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `POST {endpoint}/chat/completions` with structured messages.
    Chat,
    /// `POST {endpoint}/completions` with the flat rendered template.
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api: ApiStyle,
    #[serde(with = "crate::config::duration_secs")]
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: "http://127.0.0.1:8001/v1".into(),
            model_name: "reranker".into(),
            api: ApiStyle::Completion,
            timeout: Duration::from_secs(60),
            retries: 2,
        }
    }
}

/// OpenAI-compatible client (vLLM, llama.cpp server, OpenAI, ...).
pub struct HttpLanguageModel {
    config: LlmConfig,
    agent: ureq::Agent,
}

impl HttpLanguageModel {
    pub fn new(config: LlmConfig) -> Self {
        let agent = agent(config.timeout);
        HttpLanguageModel { config, agent }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn chat_body(&self, req: &GenerationRequest<'_>) -> Value {
        let mut messages: Vec<Value> = req
            .prompt
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        if !req.prompt.assistant_prefix.is_empty() {
            messages.push(json!({"role": "assistant", "content": req.prompt.assistant_prefix}));
        }
        let mut body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(n) = req.top_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(n);
        }
        body
    }

    fn completion_body(&self, req: &GenerationRequest<'_>) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "prompt": req.prompt.rendered,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(n) = req.top_logprobs {
            body["logprobs"] = json!(n);
        }
        body
    }
}

fn first_choice(resp: &Value) -> Result<&Value> {
    resp.get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Protocol("response has no choices".into()))
}

/// Extracts text and first-position top logprobs from a chat response.
pub fn parse_chat_response(resp: &Value) -> Result<Generation> {
    let choice = first_choice(resp)?;
    let text = match choice.pointer("/message/content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(Error::Protocol(format!("unexpected message content: {other}"))),
    };
    let top_logprobs = choice
        .pointer("/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)
        .map(|alts| {
            alts.iter()
                .filter_map(|a| {
                    Some(TokenLogprob {
                        token: a.get("token")?.as_str()?.to_owned(),
                        logprob: a.get("logprob")?.as_f64()?,
                    })
                })
                .collect()
        });
    Ok(Generation { text, top_logprobs })
}

/// Extracts text and first-position top logprobs from a legacy completion
/// response (`logprobs.top_logprobs[0]` is a token -> logprob map).
pub fn parse_completion_response(resp: &Value) -> Result<Generation> {
    let choice = first_choice(resp)?;
    let text = choice
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Protocol("completion choice lacks `text`".into()))?
        .to_owned();
    let top_logprobs = choice
        .pointer("/logprobs/top_logprobs/0")
        .and_then(Value::as_object)
        .map(|m| {
            let mut alts: Vec<TokenLogprob> = m
                .iter()
                .filter_map(|(t, lp)| {
                    Some(TokenLogprob {
                        token: t.clone(),
                        logprob: lp.as_f64()?,
                    })
                })
                .collect();
            alts.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.token.cmp(&b.token)));
            alts
        });
    Ok(Generation { text, top_logprobs })
}

impl LanguageModel for HttpLanguageModel {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation> {
        match self.config.api {
            ApiStyle::Chat => {
                let url = join_url(&self.config.endpoint_url, "chat/completions");
                let resp = post_json(&self.agent, &url, &self.chat_body(req), self.config.retries)?;
                parse_chat_response(&resp)
            }
            ApiStyle::Completion => {
                let url = join_url(&self.config.endpoint_url, "completions");
                let resp = post_json(&self.agent, &url, &self.completion_body(req), self.config.retries)?;
                parse_completion_response(&resp)
            }
        }
    }
}
