//! Deterministic stand-ins for the embedding and LLM backends, so the whole
//! pipeline runs offline.
//!
//! The mock LLM reads the "None of the above" letter from the prompt itself
//! (the last option line). A template change that breaks option parsing
//! therefore also breaks the mock-driven tests.

mod server;

pub use server::{MockServer, MockServerConfig};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::llm::{Generation, GenerationRequest, LanguageModel, Prompt, TokenLogprob};

fn default_gold_yes() -> f64 {
    0.9
}

fn default_other_yes() -> f64 {
    0.1
}

/// Scripted LLM behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum OracleSpec {
    /// Answers the gold letter (out-of-band hint) or the none letter.
    /// Yes/no judgments give `gold_yes` to the gold candidate and
    /// `other_yes` to every other one.
    AlwaysGold {
        #[serde(default = "default_gold_yes")]
        gold_yes: f64,
        #[serde(default = "default_other_yes")]
        other_yes: f64,
    },
    /// Always picks "None of the above"; yes/no judgments lean "no".
    AlwaysNone,
    /// Always answers `letter`.
    FixedLetter { letter: String },
    /// Answers `map[key]` for the first key quoted as `'key'` in the prompt,
    /// else `default` (empty when unset).
    CannedMap {
        map: BTreeMap<String, String>,
        #[serde(default)]
        default: Option<String>,
    },
    /// Sleeps, then delegates.
    Delay { millis: u64, inner: Box<OracleSpec> },
}

impl OracleSpec {
    pub fn always_gold() -> Self {
        OracleSpec::AlwaysGold {
            gold_yes: default_gold_yes(),
            other_yes: default_other_yes(),
        }
    }

    pub fn delayed(self, millis: u64) -> Self {
        OracleSpec::Delay {
            millis,
            inner: Box::new(self),
        }
    }
}

/// Letter of the last `X: ...` option line in the prompt.
pub fn none_letter_from_prompt(prompt: &str) -> Option<char> {
    prompt.lines().rev().find_map(|line| {
        let mut chars = line.chars();
        let letter = chars.next()?;
        (letter.is_ascii_uppercase() && chars.as_str().starts_with(": ")).then_some(letter)
    })
}

fn canned_lookup<'a>(map: &'a BTreeMap<String, String>, prompt: &str) -> Option<&'a str> {
    map.iter()
        .find(|(k, _)| prompt.contains(&format!("'{k}'")))
        .map(|(_, v)| v.as_str())
}

/// Text answer of the oracle for a prompt.
///
/// `gold_letter` is the out-of-band gold option, if the gold concept is
/// among the options.
pub fn mock_llm_answer(prompt: &Prompt, oracle: &OracleSpec, gold_letter: Option<char>) -> String {
    let none = || none_letter_from_prompt(&prompt.rendered).map(String::from).unwrap_or_default();
    match oracle {
        OracleSpec::AlwaysGold { .. } => gold_letter.map(String::from).unwrap_or_else(none),
        OracleSpec::AlwaysNone => none(),
        OracleSpec::FixedLetter { letter } => letter.clone(),
        OracleSpec::CannedMap { map, default } => canned_lookup(map, &prompt.rendered)
            .map(str::to_owned)
            .or_else(|| default.clone())
            .unwrap_or_default(),
        OracleSpec::Delay { millis, inner } => {
            thread::sleep(Duration::from_millis(*millis));
            mock_llm_answer(prompt, inner, gold_letter)
        }
    }
}

/// Probability of "yes" the oracle assigns in a yes/no judgment.
fn yes_probability(oracle: &OracleSpec, candidate_is_gold: Option<bool>) -> f64 {
    match oracle {
        OracleSpec::AlwaysGold { gold_yes, other_yes } => {
            if candidate_is_gold == Some(true) {
                *gold_yes
            } else {
                *other_yes
            }
        }
        OracleSpec::AlwaysNone => default_other_yes(),
        OracleSpec::FixedLetter { .. } | OracleSpec::CannedMap { .. } => 0.5,
        OracleSpec::Delay { inner, .. } => yes_probability(inner, candidate_is_gold),
    }
}

fn judgment(oracle: &OracleSpec, candidate_is_gold: Option<bool>, n: u32) -> Generation {
    if let OracleSpec::Delay { millis, .. } = oracle {
        thread::sleep(Duration::from_millis(*millis));
    }
    let p = yes_probability(oracle, candidate_is_gold).clamp(1e-12, 1.0 - 1e-12);
    let mut alts = vec![
        TokenLogprob {
            token: "yes".into(),
            logprob: p.ln(),
        },
        TokenLogprob {
            token: "no".into(),
            logprob: (1.0 - p).ln(),
        },
    ];
    alts.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    alts.truncate(n.max(1) as usize);
    Generation {
        text: alts[0].token.clone(),
        top_logprobs: Some(alts),
    }
}

/// In-process oracle LLM with call and concurrency accounting.
#[derive(Debug)]
pub struct MockLlm {
    oracle: OracleSpec,
    calls: AtomicUsize,
    inflight: AtomicUsize,
    max_inflight: AtomicUsize,
}

impl MockLlm {
    pub fn new(oracle: OracleSpec) -> Self {
        MockLlm {
            oracle,
            calls: AtomicUsize::new(0),
            inflight: AtomicUsize::new(0),
            max_inflight: AtomicUsize::new(0),
        }
    }

    pub fn oracle(&self) -> &OracleSpec {
        &self.oracle
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous `generate` calls observed.
    pub fn max_inflight(&self) -> usize {
        self.max_inflight.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.max_inflight.store(0, Ordering::SeqCst);
    }
}

struct InflightGuard<'a>(&'a AtomicUsize);

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl LanguageModel for MockLlm {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InflightGuard(&self.inflight);
        self.max_inflight.fetch_max(now, Ordering::SeqCst);

        Ok(match req.top_logprobs {
            Some(n) => judgment(&self.oracle, req.hint.candidate_is_gold, n),
            None => Generation::text(mock_llm_answer(req.prompt, &self.oracle, req.hint.gold_letter)),
        })
    }
}
