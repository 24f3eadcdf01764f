//! From alias hits to a concept-level, lettered option list.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::RetrievalHit;
use crate::kb::ConceptId;

/// Letters A..Z minus the one reserved for "None of the above".
pub const MAX_CANDIDATES: usize = 25;

pub const NONE_OF_THE_ABOVE: &str = "None of the above.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    /// Keep each concept's highest-scoring alias.
    Inference,
    /// Sample one of each concept's retrieved aliases uniformly.
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub concept_id: ConceptId,
    pub display_alias: String,
    pub best_score: f64,
    /// Record ordinal of the concept's best hit (tie-break key).
    pub best_ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub source_hits: Vec<RetrievalHit>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Concept of the rank-1 alias hit.
    pub fn top1(&self) -> Option<&ConceptId> {
        self.source_hits.first().map(|h| &h.concept_id)
    }

    pub fn position(&self, id: &ConceptId) -> Option<usize> {
        self.candidates.iter().position(|c| &c.concept_id == id)
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.position(id).is_some()
    }

    /// Same candidates in a seeded random order.
    pub fn shuffled(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.candidates.shuffle(&mut rng);
        self
    }
}

/// Groups hits by concept.
///
/// Candidates come out ordered by each concept's best score (record ordinal
/// on ties) in both modes; only the displayed alias differs. Training-mode
/// sampling is a pure function of `rng_seed` (0 when absent).
pub fn dedup_by_concept(hits: &[RetrievalHit], mode: DedupMode, rng_seed: Option<u64>) -> CandidateSet {
    debug_assert!(hits.windows(2).all(|w| w[0].rank < w[1].rank), "hits must be sorted by rank");

    let mut groups: Vec<(Candidate, Vec<&str>)> = Vec::new();
    let mut slot: HashMap<&ConceptId, usize> = HashMap::new();
    for hit in hits {
        match slot.get(&hit.concept_id) {
            Some(&i) => groups[i].1.push(&hit.alias),
            None => {
                slot.insert(&hit.concept_id, groups.len());
                groups.push((
                    Candidate {
                        concept_id: hit.concept_id.clone(),
                        display_alias: hit.alias.clone(),
                        best_score: hit.score,
                        best_ordinal: hit.ordinal,
                    },
                    vec![&hit.alias],
                ));
            }
        }
    }

    if mode == DedupMode::Training {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.unwrap_or(0));
        for (cand, aliases) in &mut groups {
            let pick = rng.random_range(0..aliases.len());
            cand.display_alias = aliases[pick].to_owned();
        }
    }

    CandidateSet {
        candidates: groups.into_iter().map(|(c, _)| c).collect(),
        source_hits: hits.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionEntry {
    pub letter: char,
    pub text: String,
}

/// Lettered options plus the trailing "None of the above" letter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionList {
    pub options: Vec<OptionEntry>,
    pub none_letter: char,
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

impl OptionList {
    /// Index of the candidate behind `letter`, if it is a candidate letter.
    pub fn candidate_index(&self, letter: char) -> Option<usize> {
        let i = (letter as u32).checked_sub('A' as u32)? as usize;
        (i < self.options.len()).then_some(i)
    }

    pub fn letter_of(&self, index: usize) -> Option<char> {
        self.options.get(index).map(|o| o.letter)
    }

    /// `{letter}: {text}` lines, the None option last.
    pub fn render(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("{}: {}", o.letter, o.text))
            .chain(std::iter::once(format!("{}: {NONE_OF_THE_ABOVE}", self.none_letter)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn build_options(cs: &CandidateSet) -> Result<OptionList> {
    if cs.len() > MAX_CANDIDATES {
        return Err(Error::Contract(format!(
            "{} candidates do not fit in A..Z with a None option; use k <= {MAX_CANDIDATES} or fewer distinct concepts",
            cs.len()
        )));
    }
    let options = cs
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.display_alias.is_empty() {
                return Err(Error::Contract(format!("candidate {} has an empty alias", c.concept_id)));
            }
            Ok(OptionEntry {
                letter: letter(i),
                text: c.display_alias.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OptionList {
        none_letter: letter(options.len()),
        options,
    })
}
