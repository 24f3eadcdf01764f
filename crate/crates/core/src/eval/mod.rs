//! Accuracy, NIL-sensitive accuracy, significance against the retrieval
//! baseline, throughput and cross-dataset transfer tables.

mod dataset;
mod stats;
mod transfer;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, parse_dataset, AnnotatedMention, Dataset, NIL_GOLD};
pub use stats::{paired_t_test, TTest, SIGNIFICANCE_LEVEL};
pub use transfer::{transfer_matrix, TransferCell, TransferMatrix};

use crate::error::{Error, Result};
use crate::genqr::MentionQuery;
use crate::kb::{ConceptId, KnowledgeBase};
use crate::pipeline::{LinkSettings, LinkTrace, Linker};
use crate::rerank::RerankDecision;
use crate::scalar::Scalar;

pub const DEFAULT_WARMUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutcomeBits {
    pub baseline: u8,
    pub system: u8,
    pub system_nil_sensitive: u8,
}

/// Correctness of one decision.
///
/// Plain scoring never credits NIL: a NIL or invalid decision is replaced by
/// what the re-ranker ranked first, then by the retrieval top-1.
/// NIL-sensitive scoring credits NIL only on gold-NIL mentions.
pub fn score_outcome(decision: &RerankDecision, gold: Option<&ConceptId>, top1: Option<&ConceptId>) -> OutcomeBits {
    let hit = |p: Option<&ConceptId>| u8::from(matches!((p, gold), (Some(p), Some(g)) if p == g));
    let effective = decision.predicted.as_ref().or(decision.ranked_choice.as_ref()).or(top1);
    let nil_ok = decision.is_nil && gold.is_none();
    OutcomeBits {
        baseline: hit(top1),
        system: hit(effective),
        system_nil_sensitive: u8::from(nil_ok) | hit(decision.predicted.as_ref()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub mention_idx: usize,
    pub doc_id: String,
    pub mention: String,
    pub gold: Option<ConceptId>,
    pub top1: Option<ConceptId>,
    pub gold_in_top_k: bool,
    pub baseline_correct: u8,
    pub system_correct: u8,
    pub system_correct_nil_sensitive: u8,
    pub decision: RerankDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub settings: LinkSettings,
    /// Full effective configuration, filled in by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
    pub dataset_digest: String,
    pub n: usize,
    pub acc_at_1: f64,
    pub nil_sensitive_acc_at_1: f64,
    pub baseline_acc: f64,
    /// Share of all mentions whose gold concept is among the top-k hits
    /// (gold-NIL mentions count as misses).
    pub recall_at_k: f64,
    #[serde(with = "extended_f64")]
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub significant_at_95: bool,
    pub throughput_qps: Option<f64>,
    pub gold_nil: usize,
    pub gold_missing_from_kb: usize,
    pub llm_calls: usize,
    pub genqr_fallbacks: usize,
    pub llm_errors: usize,
    pub mention_errors: usize,
    pub outcomes: Vec<EvalOutcome>,
}

fn mean(bits: impl Iterator<Item = u8>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        bits.map(f64::from).sum::<f64>() / n as f64
    }
}

impl EvalReport {
    pub fn system_bits(&self) -> Vec<u8> {
        self.outcomes.iter().map(|o| o.system_correct).collect()
    }

    pub fn baseline_bits(&self) -> Vec<u8> {
        self.outcomes.iter().map(|o| o.baseline_correct).collect()
    }

    fn system_label(&self) -> String {
        let s = &self.settings;
        let mode = match s.rerank_mode {
            crate::rerank::RerankMode::Setwise => "set-wise",
            crate::rerank::RerankMode::Pointwise => "point-wise",
            crate::rerank::RerankMode::None => "retrieval",
        };
        if s.genqr_enabled {
            format!("{mode} + genqr (alpha={})", s.alpha)
        } else {
            mode.to_string()
        }
    }

    /// Plain-text summary. `+` marks accuracy significantly above the
    /// retrieval top-1 baseline.
    pub fn to_text_table(&self) -> String {
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        let better = self.significant_at_95 && self.t_statistic.is_some_and(|t| t > 0.0);
        let mark = if better { "+" } else { "" };
        let qps = self.throughput_qps.map_or("-".to_string(), |q| format!("{q:.2}"));
        let label = self.system_label();
        let w = label.len().max(16);

        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>10}  {:>8}", "system", "Acc@1", "NIL Acc@1", "Q/s");
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>10}  {:>8}", "retrieval top-1", pct(self.baseline_acc), "-", "-");
        let _ = writeln!(
            out,
            "{:<w$}  {:>8}  {:>10}  {:>8}",
            label,
            format!("{}{mark}", pct(self.acc_at_1)),
            pct(self.nil_sensitive_acc_at_1),
            qps
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "n = {}  gold NIL = {}  gold missing from KB = {}  recall@{} = {}",
            self.n,
            self.gold_nil,
            self.gold_missing_from_kb,
            self.settings.k,
            pct(self.recall_at_k)
        );
        match (self.t_statistic, self.p_value) {
            (Some(t), Some(p)) => {
                let _ = writeln!(out, "paired t-test vs top-1: t = {t:.4}  p = {p:.4}");
            }
            _ => {
                let _ = writeln!(out, "paired t-test vs top-1: n/a");
            }
        }
        out
    }
}

pub struct EvalRun {
    pub traces: Vec<LinkTrace>,
    pub report: EvalReport,
}

/// Accuracy pass. Mentions are linked in parallel; outcomes keep dataset
/// order. `kb` is only used to count gold ids it does not contain.
pub fn evaluate<T: Scalar>(linker: &Linker<T>, dataset: &Dataset, kb: Option<&KnowledgeBase>) -> Result<EvalRun> {
    let queries = dataset.queries();
    let traces = linker.link_all(&queries, true);
    let report = build_report(linker.settings().clone(), dataset, kb, &traces)?;
    Ok(EvalRun { traces, report })
}

pub fn build_report(
    settings: LinkSettings,
    dataset: &Dataset,
    kb: Option<&KnowledgeBase>,
    traces: &[LinkTrace],
) -> Result<EvalReport> {
    if traces.len() != dataset.len() {
        return Err(Error::Contract(format!(
            "{} traces for {} mentions",
            traces.len(),
            dataset.len()
        )));
    }
    let outcomes: Vec<EvalOutcome> = traces
        .iter()
        .zip(&dataset.mentions)
        .map(|(t, m)| {
            let bits = score_outcome(&t.decision, m.gold.as_ref(), t.top1());
            EvalOutcome {
                mention_idx: t.mention_idx,
                doc_id: t.doc_id.clone(),
                mention: t.mention.clone(),
                gold: m.gold.clone(),
                top1: t.top1().cloned(),
                gold_in_top_k: m.gold.as_ref().is_some_and(|g| t.hits.iter().any(|h| &h.concept_id == g)),
                baseline_correct: bits.baseline,
                system_correct: bits.system,
                system_correct_nil_sensitive: bits.system_nil_sensitive,
                decision: t.decision.clone(),
            }
        })
        .collect();

    let n = outcomes.len();
    let test = if n >= 2 {
        let s: Vec<u8> = outcomes.iter().map(|o| o.system_correct).collect();
        let b: Vec<u8> = outcomes.iter().map(|o| o.baseline_correct).collect();
        Some(paired_t_test(&s, &b)?)
    } else {
        None
    };

    Ok(EvalReport {
        settings,
        config: serde_json::Value::Null,
        dataset_digest: dataset.digest.clone(),
        n,
        acc_at_1: mean(outcomes.iter().map(|o| o.system_correct), n),
        nil_sensitive_acc_at_1: mean(outcomes.iter().map(|o| o.system_correct_nil_sensitive), n),
        baseline_acc: mean(outcomes.iter().map(|o| o.baseline_correct), n),
        recall_at_k: mean(outcomes.iter().map(|o| u8::from(o.gold_in_top_k)), n),
        t_statistic: test.map(|t| t.t_statistic),
        p_value: test.map(|t| t.p_value),
        significant_at_95: test.is_some_and(|t| t.significant_at_95),
        throughput_qps: None,
        gold_nil: dataset.gold_nil(),
        gold_missing_from_kb: kb.map_or(0, |kb| dataset.gold_missing_from(kb)),
        llm_calls: traces.iter().map(|t| t.decision.llm_calls).sum(),
        genqr_fallbacks: traces.iter().filter(|t| t.genqr_fallback).count(),
        llm_errors: traces.iter().filter(|t| t.decision.llm_error.is_some()).count(),
        mention_errors: traces.iter().filter(|t| t.error.is_some()).count(),
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub qps: f64,
    pub timed_mentions: usize,
    pub warmup: usize,
    pub elapsed: Duration,
}

/// Links mentions strictly one after another and reports queries per
/// second over everything after the first `warmup` mentions. At least one
/// mention is always timed.
pub fn measure_throughput<T: Scalar>(
    linker: &Linker<T>,
    mentions: &[(MentionQuery, Option<ConceptId>)],
    warmup: usize,
) -> Result<Throughput> {
    if mentions.is_empty() {
        return Err(Error::Contract("throughput needs at least one mention".into()));
    }
    let warmup = warmup.min(mentions.len() - 1);
    for (i, (q, gold)) in mentions[..warmup].iter().enumerate() {
        linker.link(i, q, gold.as_ref());
    }
    let started = Instant::now();
    for (i, (q, gold)) in mentions.iter().enumerate().skip(warmup) {
        linker.link(i, q, gold.as_ref());
    }
    let elapsed = started.elapsed();
    let timed = mentions.len() - warmup;
    Ok(Throughput {
        qps: timed as f64 / elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
        timed_mentions: timed,
        warmup,
        elapsed,
    })
}

/// `Option<f64>` that survives JSON round trips for infinities.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) if x.is_nan() => s.serialize_some("nan"),
            Some(x) => s.serialize_some(if *x > 0.0 { "inf" } else { "-inf" }),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) => Some(t.parse::<f64>().map_err(serde::de::Error::custom)?),
        })
    }
}
