//! Generative query reformulation.
//!
//! An LLM is asked, zero-shot, for the standard scientific name of the
//! mention. That feedback string is embedded and mixed into the mention
//! vector with a Rocchio-style convex combination
//! `q = alpha * m + (1 - alpha) * f`, and the result re-normalized.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::llm::{GenerationRequest, LanguageModel, OracleHint, Prompt};
use crate::scalar::Scalar;

/// Weight of the mention vector.
pub const DEFAULT_ALPHA: f64 = 0.6;

/// Zero-shot feedback prompt; `{m}` is the mention and `{T}` its context.
pub const DEFAULT_FEEDBACK_PROMPT: &str =
    "What is the standard scientific name for the biomedical entity '{m}' as used in '{T}'? Answer with the name only.";

pub const FEEDBACK_MAX_TOKENS: u32 = 32;

/// Inputs must be unit length within this tolerance.
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionQuery {
    pub mention: String,
    pub context: String,
    pub doc_id: String,
}

impl MentionQuery {
    pub fn new(mention: impl Into<String>, context: impl Into<String>, doc_id: impl Into<String>) -> Result<Self> {
        let q = MentionQuery {
            mention: mention.into(),
            context: context.into(),
            doc_id: doc_id.into(),
        };
        if q.mention.is_empty() {
            return Err(Error::Contract("mention must be non-empty".into()));
        }
        if !q.mention_in_context() {
            log::warn!("doc {}: mention {:?} does not occur in its context", q.doc_id, q.mention);
        }
        Ok(q)
    }

    pub fn mention_in_context(&self) -> bool {
        self.context.contains(&self.mention)
    }
}

/// Substitutes `{name}` placeholders in one left-to-right pass, so values
/// containing placeholder syntax are never re-expanded.
pub(crate) fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in vars {
            let ph = format!("{{{name}}}");
            if tail.starts_with(&ph) {
                out.push_str(value);
                rest = &tail[ph.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn feedback_prompt(q: &MentionQuery, template: &str) -> Prompt {
    let user = fill_template(template, &[("m", &q.mention), ("T", &q.context)]);
    Prompt::single_turn(user, "")
}

/// First line of the answer with whitespace and one pair of surrounding
/// quotes removed.
pub fn clean_feedback(raw: &str) -> String {
    let first = raw.trim_start().lines().next().unwrap_or("").trim();
    let pairs = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('`', '`')];
    for (open, close) in pairs {
        if first.len() >= 2 && first.starts_with(open) && first.ends_with(close) {
            let inner = &first[open.len_utf8()..first.len() - close.len_utf8()];
            return inner.trim().to_owned();
        }
    }
    first.to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub text: String,
    /// The LLM failed or gave nothing usable; `text` is the mention itself.
    pub fallback: bool,
    pub error: Option<String>,
}

/// Never fails: backend errors and empty answers degrade to the mention.
pub fn generate_feedback(q: &MentionQuery, llm: &dyn LanguageModel, template: &str) -> FeedbackOutcome {
    let prompt = feedback_prompt(q, template);
    let req = GenerationRequest {
        prompt: &prompt,
        max_tokens: FEEDBACK_MAX_TOKENS,
        temperature: 0.0,
        top_logprobs: None,
        hint: OracleHint::default(),
    };
    let fallback = |error: String| FeedbackOutcome {
        text: q.mention.clone(),
        fallback: true,
        error: Some(error),
    };
    match llm.generate(&req) {
        Ok(g) => {
            let text = clean_feedback(&g.text);
            if text.is_empty() {
                fallback("empty feedback".into())
            } else {
                FeedbackOutcome {
                    text,
                    fallback: false,
                    error: None,
                }
            }
        }
        Err(e) => {
            log::warn!("feedback generation failed for {:?}: {e}", q.mention);
            fallback(e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedQuery<T: Scalar = f64> {
    pub vector: EmbeddingVector<T>,
    /// `alpha * m + (1 - alpha) * f` was the zero vector; `vector` is `m`.
    pub degenerate: bool,
}

/// Rocchio fusion of two unit vectors.
///
/// `alpha == 1` returns `mention` and `alpha == 0` returns `feedback`
/// bit-for-bit.
pub fn fuse_query<T: Scalar>(
    mention: &EmbeddingVector<T>,
    feedback: &EmbeddingVector<T>,
    alpha: f64,
) -> Result<FusedQuery<T>> {
    if mention.dim() != feedback.dim() {
        return Err(Error::Contract(format!(
            "mention dim {} differs from feedback dim {}",
            mention.dim(),
            feedback.dim()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha {alpha} outside [0, 1]")));
    }
    if !mention.is_unit(UNIT_TOL) || !feedback.is_unit(UNIT_TOL) {
        return Err(Error::Contract("fusion inputs must be unit-normalized".into()));
    }
    if alpha == 1.0 {
        return Ok(FusedQuery {
            vector: mention.clone(),
            degenerate: false,
        });
    }
    if alpha == 0.0 {
        return Ok(FusedQuery {
            vector: feedback.clone(),
            degenerate: false,
        });
    }
    let a = T::from_f64_lossy(alpha);
    let b = T::from_f64_lossy(1.0 - alpha);
    let mixed: Vec<T> = mention
        .as_slice()
        .iter()
        .zip(feedback.as_slice())
        .map(|(&m, &f)| a * m + b * f)
        .collect();
    let mixed = EmbeddingVector::new(mixed)?;
    Ok(match mixed.normalize() {
        Some(vector) if mixed.norm() > T::epsilon() => FusedQuery {
            vector,
            degenerate: false,
        },
        _ => FusedQuery {
            vector: mention.clone(),
            degenerate: true,
        },
    })
}

/// Feedback text, alpha and resulting query, as recorded in traces.
#[derive(Debug, Clone, PartialEq)]
pub struct GenQrFeedback {
    pub feedback_text: String,
    pub fused_query: EmbeddingVector,
    pub alpha: f64,
}
