//! Chat-format instruction-tuning data for the set-wise re-ranker.
//!
//! Each mention becomes one user turn (the set-wise prompt over its
//! retrieved candidates, one alias sampled per concept) and one assistant
//! turn naming the gold letter, or the None letter when the gold concept is
//! NIL or was not retrieved.

use serde::{Deserialize, Serialize};

use crate::candidates::{build_options, dedup_by_concept, DedupMode};
use crate::error::{Error, Result};
use crate::eval::Dataset;
use crate::llm::ChatMessage;
use crate::pipeline::{mention_seed, Linker};
use crate::rerank::{build_prompt, ASSISTANT_PREFIX};
use crate::scalar::Scalar;

/// Keeps option-order shuffling independent of alias sampling.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464C_4521;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub mention_idx: usize,
    pub doc_id: String,
    pub answer_letter: char,
    pub none_letter: char,
    /// Gold concept exists but is not among the candidates.
    pub gold_not_retrieved: bool,
    pub sample: TrainingSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub seed: u64,
    pub shuffle: bool,
}

pub fn assistant_answer(letter: char) -> String {
    format!("{ASSISTANT_PREFIX} {letter}")
}

/// Builds one record per mention, in dataset order. Any retrieval failure
/// aborts the export.
pub fn export_training<T: Scalar>(linker: &Linker<T>, dataset: &Dataset, opts: &ExportOptions) -> Result<Vec<ExportRecord>> {
    dataset
        .mentions
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let retrieval = linker
                .retrieve(&m.query)
                .map_err(|e| Error::Data(format!("mention #{i} ({}): {e}", m.query.doc_id)))?;
            let seed = mention_seed(opts.seed, i);
            let mut cs = dedup_by_concept(&retrieval.hits, DedupMode::Training, Some(seed));
            if opts.shuffle {
                cs = cs.shuffled(seed ^ SHUFFLE_STREAM);
            }
            let options = build_options(&cs)?;
            let gold_pos = m.gold.as_ref().and_then(|g| cs.position(g));
            let answer_letter = gold_pos.and_then(|p| options.letter_of(p)).unwrap_or(options.none_letter);
            let gold_not_retrieved = m.gold.is_some() && gold_pos.is_none();
            if gold_not_retrieved {
                log::info!("mention #{i}: gold concept not retrieved; labelled with the None option");
            }
            let prompt = build_prompt(&m.query, &options);
            Ok(ExportRecord {
                mention_idx: i,
                doc_id: m.query.doc_id.clone(),
                answer_letter,
                none_letter: options.none_letter,
                gold_not_retrieved,
                sample: TrainingSample {
                    messages: vec![
                        ChatMessage::user(prompt.user_content()),
                        ChatMessage::assistant(assistant_answer(answer_letter)),
                    ],
                },
            })
        })
        .collect()
}

/// JSONL with one `{"messages": [...]}` object per line.
pub fn to_jsonl(records: &[ExportRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r.sample).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_format() {
        assert_eq!(assistant_answer('B'), "<think></think>\nAnswer: B");
    }

    #[test]
    fn sample_serializes_role_then_content() {
        let s = TrainingSample {
            messages: vec![ChatMessage::user("q"), ChatMessage::assistant("a")],
        };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"messages":[{"role":"user","content":"q"},{"role":"assistant","content":"a"}]}"#
        );
    }
}
