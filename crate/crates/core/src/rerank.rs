//! Second-stage re-ranking.
//!
//! Set-wise: one LLM call sees every candidate as a lettered option plus a
//! trailing "None of the above" and answers with a single letter.
//! Point-wise: one yes/no judgment per candidate, scored by the normalized
//! probability of "yes".

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateSet, OptionList};
use crate::error::{Error, Result};
use crate::genqr::{fill_template, MentionQuery};
use crate::kb::ConceptId;
use crate::llm::{GenerationRequest, LanguageModel, OracleHint, Prompt};

/// Partial assistant turn the model continues from.
pub const ASSISTANT_PREFIX: &str = "<think></think>\nAnswer:";

pub const DEFAULT_POINTWISE_PROMPT: &str =
    "Does '{alias}' denote the same biomedical concept as '{m}' in context '{T}'? Answer yes or no.";

/// Point-wise NIL threshold on the top candidate's score.
pub const DEFAULT_NIL_THRESHOLD: f64 = 0.5;

const POINTWISE_TOP_LOGPROBS: u32 = 5;

pub type RerankPrompt = Prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    Setwise,
    Pointwise,
    /// Take the rank-1 retrieval hit.
    None,
}

/// Outcome of re-ranking one mention.
///
/// Exactly one of `predicted` / `is_nil` is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankDecision {
    pub predicted: Option<ConceptId>,
    pub is_nil: bool,
    /// No valid answer; `predicted` is the rank-1 retrieved concept.
    pub fell_back: bool,
    pub raw_answer: String,
    /// What the re-ranker itself ranks first, even when it declares NIL
    /// (point-wise argmax). `None` for a set-wise "None" answer.
    pub ranked_choice: Option<ConceptId>,
    pub llm_error: Option<String>,
    pub llm_calls: usize,
    /// Wall-clock time; not serialized so traces stay reproducible.
    #[serde(skip)]
    pub latency: Duration,
}

impl RerankDecision {
    fn nil(raw_answer: String) -> Self {
        RerankDecision {
            predicted: None,
            is_nil: true,
            fell_back: false,
            raw_answer,
            ranked_choice: None,
            llm_error: None,
            llm_calls: 0,
            latency: Duration::ZERO,
        }
    }

    fn choose(id: ConceptId, raw_answer: String) -> Self {
        RerankDecision {
            predicted: Some(id.clone()),
            is_nil: false,
            fell_back: false,
            raw_answer,
            ranked_choice: Some(id),
            llm_error: None,
            llm_calls: 0,
            latency: Duration::ZERO,
        }
    }

    /// Rank-1 retrieved concept, or NIL when nothing was retrieved.
    pub fn top1_fallback(cs: &CandidateSet, raw_answer: String, llm_error: Option<String>) -> Self {
        let top1 = cs.top1().cloned();
        RerankDecision {
            is_nil: top1.is_none(),
            predicted: top1.clone(),
            fell_back: true,
            raw_answer,
            ranked_choice: top1,
            llm_error,
            llm_calls: 0,
            latency: Duration::ZERO,
        }
    }

    /// First-stage-only decision.
    pub fn retrieval_top1(cs: &CandidateSet) -> Self {
        match cs.top1() {
            Some(id) => Self::choose(id.clone(), String::new()),
            None => Self::nil(String::new()),
        }
    }
}

pub fn build_prompt(q: &MentionQuery, opts: &OptionList) -> RerankPrompt {
    let user = format!(
        "<Instruct>: Given the context {}, select the correct biomedical concept corresponding to {}. \
         Answer using one of the provided options.\n<Options>: \n{}",
        q.context,
        q.mention,
        opts.render()
    );
    Prompt::single_turn(user, ASSISTANT_PREFIX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsedAnswer {
    Candidate(usize),
    None,
    Invalid,
}

/// First non-whitespace character, uppercased, must be an option letter.
pub fn parse_answer(raw: &str, opts: &OptionList) -> ParsedAnswer {
    let Some(c) = raw.trim().chars().next() else {
        return ParsedAnswer::Invalid;
    };
    let c = c.to_ascii_uppercase();
    if c == opts.none_letter {
        ParsedAnswer::None
    } else if let Some(i) = opts.candidate_index(c) {
        ParsedAnswer::Candidate(i)
    } else {
        ParsedAnswer::Invalid
    }
}

/// One LLM call, one letter.
pub fn select_setwise(
    prompt: &RerankPrompt,
    opts: &OptionList,
    cs: &CandidateSet,
    llm: &dyn LanguageModel,
    hint: OracleHint,
) -> RerankDecision {
    let started = Instant::now();
    let req = GenerationRequest {
        prompt,
        max_tokens: 1,
        temperature: 0.0,
        top_logprobs: None,
        hint,
    };
    let mut decision = match llm.generate(&req) {
        Err(e) => RerankDecision::top1_fallback(cs, String::new(), Some(e.to_string())),
        Ok(g) => match parse_answer(&g.text, opts) {
            ParsedAnswer::Candidate(i) => match cs.candidates.get(i) {
                Some(c) => RerankDecision::choose(c.concept_id.clone(), g.text),
                None => RerankDecision::top1_fallback(cs, g.text, None),
            },
            ParsedAnswer::None => RerankDecision::nil(g.text),
            ParsedAnswer::Invalid => RerankDecision::top1_fallback(cs, g.text, None),
        },
    };
    decision.llm_calls = 1;
    decision.latency = started.elapsed();
    decision
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseScore {
    pub concept_id: ConceptId,
    pub yes_probability: f64,
}

pub fn pointwise_prompt(q: &MentionQuery, alias: &str, template: &str) -> Prompt {
    let user = fill_template(template, &[("alias", alias), ("m", &q.mention), ("T", &q.context)]);
    Prompt::single_turn(user, "")
}

/// `P(yes) / (P(yes) + P(no))` from first-position alternatives; tokens are
/// compared after trimming and lowercasing.
pub fn yes_probability(alternatives: &[crate::llm::TokenLogprob]) -> Result<f64> {
    let mass = |word: &str| -> f64 {
        alternatives
            .iter()
            .filter(|t| t.token.trim().eq_ignore_ascii_case(word))
            .map(|t| t.logprob.exp())
            .sum()
    };
    let (yes, no) = (mass("yes"), mass("no"));
    if !yes.is_finite() || !no.is_finite() || yes + no <= 0.0 {
        return Err(Error::Protocol("no yes/no token among the returned logprobs".into()));
    }
    Ok((yes / (yes + no)).clamp(0.0, 1.0))
}

/// One judgment per candidate, in candidate order.
pub fn score_pointwise(
    q: &MentionQuery,
    cs: &CandidateSet,
    llm: &dyn LanguageModel,
    template: &str,
    gold: Option<&ConceptId>,
) -> Result<Vec<PointwiseScore>> {
    cs.candidates
        .iter()
        .map(|c| {
            let prompt = pointwise_prompt(q, &c.display_alias, template);
            let req = GenerationRequest {
                prompt: &prompt,
                max_tokens: 1,
                temperature: 0.0,
                top_logprobs: Some(POINTWISE_TOP_LOGPROBS),
                hint: OracleHint {
                    gold_letter: None,
                    candidate_is_gold: gold.map(|g| g == &c.concept_id),
                },
            };
            let g = llm.generate(&req)?;
            let alts = g
                .top_logprobs
                .ok_or_else(|| Error::Protocol("backend returned no token probabilities".into()))?;
            Ok(PointwiseScore {
                concept_id: c.concept_id.clone(),
                yes_probability: yes_probability(&alts)?,
            })
        })
        .collect()
}

/// Highest score wins (earlier candidate on ties). With `nil_sensitive`, a
/// winner below `threshold` turns the decision into NIL.
pub fn decide_pointwise(scores: &[PointwiseScore], threshold: f64, nil_sensitive: bool) -> RerankDecision {
    let best = scores
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, b)) if s.yes_probability <= b => acc,
            _ => Some((i, s.yes_probability)),
        });
    let Some((i, score)) = best else {
        return RerankDecision::nil(String::new());
    };
    let id = scores[i].concept_id.clone();
    let raw = format!("{score:.6}");
    if nil_sensitive && score < threshold {
        RerankDecision {
            ranked_choice: Some(id),
            ..RerankDecision::nil(raw)
        }
    } else {
        RerankDecision::choose(id, raw)
    }
}
