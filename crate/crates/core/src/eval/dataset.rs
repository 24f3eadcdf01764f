//! Annotated mention datasets, one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genqr::MentionQuery;
use crate::kb::{ConceptId, KnowledgeBase};

/// Gold value that also means NIL.
pub const NIL_GOLD: &str = "-1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedMention {
    pub query: MentionQuery,
    pub span: Option<[usize; 2]>,
    /// `None` means the mention is unlinkable.
    pub gold: Option<ConceptId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    doc_id: String,
    context: String,
    mention: String,
    #[serde(default)]
    span: Option<[usize; 2]>,
    #[serde(default)]
    gold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub mentions: Vec<AnnotatedMention>,
    /// sha256 of the raw bytes, hex.
    pub digest: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn gold_nil(&self) -> usize {
        self.mentions.iter().filter(|m| m.gold.is_none()).count()
    }

    /// Non-NIL gold ids the KB does not know. Such mentions stay in the
    /// dataset and are simply never linkable.
    pub fn gold_missing_from(&self, kb: &KnowledgeBase) -> usize {
        self.mentions
            .iter()
            .filter_map(|m| m.gold.as_ref())
            .filter(|g| !kb.contains(g))
            .count()
    }

    /// Pairs of query and gold, the shape the linker consumes.
    pub fn queries(&self) -> Vec<(MentionQuery, Option<ConceptId>)> {
        self.mentions.iter().map(|m| (m.query.clone(), m.gold.clone())).collect()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), path)
}

/// Parses JSONL from any reader; `origin` only labels error messages.
pub fn parse_dataset(mut reader: impl Read, origin: impl AsRef<Path>) -> Result<Dataset> {
    let origin = origin.as_ref();
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(origin, e))?;
    let digest = format!("{:x}", Sha256::digest(&raw));

    let mut mentions = Vec::new();
    for (i, line) in BufReader::new(raw.as_slice()).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if rec.mention.is_empty() {
            return Err(Error::parse(origin, lineno, "empty mention"));
        }
        if let Some([start, end]) = rec.span {
            if start > end || rec.context.get(start..end).is_none() {
                return Err(Error::parse(origin, lineno, format!("span [{start}, {end}] outside context")));
            }
        }
        let gold = match rec.gold {
            None => None,
            Some(g) if g == NIL_GOLD => None,
            Some(g) => Some(ConceptId::new(g).map_err(|e| Error::parse(origin, lineno, e.to_string()))?),
        };
        let query = MentionQuery::new(rec.mention, rec.context, rec.doc_id)?;
        mentions.push(AnnotatedMention {
            query,
            span: rec.span,
            gold,
        });
    }
    Ok(Dataset { mentions, digest })
}
