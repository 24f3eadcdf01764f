//! Language-model backends: prompt representation, the [`LanguageModel`]
//! trait, an OpenAI-compatible HTTP client and an in-flight limiter.

mod http;
mod limit;

pub use http::{parse_chat_response, parse_completion_response, ApiStyle, HttpLanguageModel, LlmConfig};
pub use limit::InflightLimit;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// A single-turn prompt in both structured and flat-text form.
///
/// `rendered` uses literal `<im_start>`/`<im_end>` markers and is what a raw
/// completion endpoint receives; chat endpoints receive `messages` followed
/// by `assistant_prefix` as a partial assistant turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<ChatMessage>,
    pub assistant_prefix: String,
    pub rendered: String,
}

impl Prompt {
    pub fn single_turn(user: impl Into<String>, assistant_prefix: impl Into<String>) -> Self {
        let user = user.into();
        let assistant_prefix = assistant_prefix.into();
        let rendered = render_chat_template(&user, &assistant_prefix);
        Prompt {
            messages: vec![ChatMessage::user(user)],
            assistant_prefix,
            rendered,
        }
    }

    pub fn user_content(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub fn render_chat_template(user: &str, assistant_prefix: &str) -> String {
    format!("<im_start>user\n{user}\n<im_end>\n<im_start>assistant\n{assistant_prefix}")
}

/// Side-channel facts only mock backends look at. Real backends ignore it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleHint {
    /// Option letter of the gold concept, when it is among the options.
    pub gold_letter: Option<char>,
    /// For point-wise judgments: whether the candidate is the gold concept.
    pub candidate_is_gold: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a Prompt,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Request this many alternatives for the first output position.
    pub top_logprobs: Option<u32>,
    pub hint: OracleHint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    /// Alternatives at the first output position, if requested and returned.
    pub top_logprobs: Option<Vec<TokenLogprob>>,
}

impl Generation {
    pub fn text(text: impl Into<String>) -> Self {
        Generation {
            text: text.into(),
            top_logprobs: None,
        }
    }
}

pub trait LanguageModel: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation>;
}

impl<L: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<L> {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation> {
        (**self).generate(request)
    }
}

impl<L: LanguageModel + ?Sized> LanguageModel for Box<L> {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation> {
        (**self).generate(request)
    }
}
