//! Knowledge-base model: concept identifiers mapped to ordered alias lists.
//!
//! Alias strings are compared exactly (case-preserving). The same alias may
//! belong to several concepts; every occurrence is kept so that the
//! re-ranker, not the loader, resolves ambiguity.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Namespace-qualified concept identifier, e.g. `MESH:C535396`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(Error::Contract("concept id must be non-empty".into()));
        }
        Ok(ConceptId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: ConceptId,
    /// First alias is the preferred name.
    pub aliases: Vec<String>,
}

impl Concept {
    pub fn preferred_name(&self) -> &str {
        &self.aliases[0]
    }
}

/// One `(alias, concept)` pair; the unit that gets embedded and indexed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasRecord {
    pub alias: String,
    pub concept_id: ConceptId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbFormat {
    Jsonl,
    TwoColumnTsv,
}

impl KbFormat {
    /// `.tsv`/`.tab` files are TSV, everything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => KbFormat::TwoColumnTsv,
            _ => KbFormat::Jsonl,
        }
    }
}

/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    concepts: Vec<Concept>,
    by_id: HashMap<ConceptId, usize>,
    // alias -> indices into `concepts`, in occurrence order
    alias_table: HashMap<String, Vec<usize>>,
}

#[derive(Deserialize)]
struct JsonlConcept {
    id: String,
    aliases: Vec<String>,
}

impl KnowledgeBase {
    pub fn load(path: impl AsRef<Path>, format: KbFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut builder = KnowledgeBaseBuilder::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match format {
                KbFormat::Jsonl => {
                    let entry: JsonlConcept = serde_json::from_str(&line)
                        .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
                    if entry.aliases.is_empty() {
                        return Err(Error::parse(path, lineno, "`aliases` must be non-empty"));
                    }
                    let id = ConceptId::new(entry.id)
                        .map_err(|_| Error::parse(path, lineno, "`id` must be non-empty"))?;
                    for alias in entry.aliases {
                        if alias.is_empty() {
                            return Err(Error::parse(path, lineno, "empty alias string"));
                        }
                        builder.push(id.clone(), alias);
                    }
                }
                KbFormat::TwoColumnTsv => {
                    let (id, alias) = line.split_once('\t').ok_or_else(|| {
                        Error::parse(path, lineno, "expected `concept_id<TAB>alias`")
                    })?;
                    if id.is_empty() || alias.is_empty() || alias.contains('\t') {
                        return Err(Error::parse(path, lineno, "expected `concept_id<TAB>alias`"));
                    }
                    builder.push(ConceptId(id.to_owned()), alias.to_owned());
                }
            }
        }
        builder.build()
    }

    pub fn from_concepts(concepts: impl IntoIterator<Item = Concept>) -> Result<Self> {
        let mut builder = KnowledgeBaseBuilder::default();
        for concept in concepts {
            if concept.aliases.is_empty() {
                return Err(Error::Contract(format!("concept {} has no aliases", concept.id)));
            }
            for alias in concept.aliases {
                if alias.is_empty() {
                    return Err(Error::Contract(format!("concept {} has an empty alias", concept.id)));
                }
                builder.push(concept.id.clone(), alias);
            }
        }
        builder.build()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &ConceptId) -> Option<&Concept> {
        self.by_id.get(id).map(|&i| &self.concepts[i])
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.by_id.contains_key(id)
    }

    /// All concepts carrying this exact alias, in load order.
    pub fn concepts_for_alias(&self, alias: &str) -> Vec<&ConceptId> {
        self.alias_table
            .get(alias)
            .map(|ids| ids.iter().map(|&i| &self.concepts[i].id).collect())
            .unwrap_or_default()
    }

    /// One record per `(concept, alias)` pair: concepts in load order,
    /// aliases in stored order.
    pub fn alias_records(&self) -> Vec<AliasRecord> {
        self.concepts
            .iter()
            .flat_map(|c| {
                c.aliases.iter().map(move |a| AliasRecord {
                    alias: a.clone(),
                    concept_id: c.id.clone(),
                })
            })
            .collect()
    }

    pub fn alias_count(&self) -> usize {
        self.concepts.iter().map(|c| c.aliases.len()).sum()
    }
}

#[derive(Default)]
struct KnowledgeBaseBuilder {
    concepts: Vec<Concept>,
    by_id: HashMap<ConceptId, usize>,
}

impl KnowledgeBaseBuilder {
    fn push(&mut self, id: ConceptId, alias: String) {
        let idx = match self.by_id.get(&id) {
            Some(&i) => i,
            None => {
                self.concepts.push(Concept {
                    id: id.clone(),
                    aliases: Vec::new(),
                });
                self.by_id.insert(id, self.concepts.len() - 1);
                self.concepts.len() - 1
            }
        };
        let aliases = &mut self.concepts[idx].aliases;
        if !aliases.contains(&alias) {
            aliases.push(alias);
        }
    }

    fn build(self) -> Result<KnowledgeBase> {
        if self.concepts.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        let mut alias_table: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, c) in self.concepts.iter().enumerate() {
            for a in &c.aliases {
                alias_table.entry(a.clone()).or_default().push(i);
            }
        }
        Ok(KnowledgeBase {
            concepts: self.concepts,
            by_id: self.by_id,
            alias_table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_single_concept() {
        let f = write_tmp(
            r#"{"id":"MESH:C535396","aliases":["atelosteogenesis, type 1","AO1","giant cell chondrodysplasia"]}"#,
            ".jsonl",
        );
        let kb = KnowledgeBase::load(f.path(), KbFormat::Jsonl).unwrap();
        assert_eq!(kb.len(), 1);
        assert_eq!(kb.concepts()[0].aliases.len(), 3);
        assert_eq!(kb.concepts()[0].preferred_name(), "atelosteogenesis, type 1");
        assert_eq!(kb.alias_records().len(), 3);
    }

    #[test]
    fn duplicate_ids_merge_in_first_seen_order() {
        let f = write_tmp(
            "{\"id\":\"X\",\"aliases\":[\"a\"]}\n{\"id\":\"Y\",\"aliases\":[\"c\"]}\n{\"id\":\"X\",\"aliases\":[\"b\",\"a\"]}\n",
            ".jsonl",
        );
        let kb = KnowledgeBase::load(f.path(), KbFormat::Jsonl).unwrap();
        assert_eq!(kb.len(), 2);
        let x = kb.get(&ConceptId::new("X").unwrap()).unwrap();
        assert_eq!(x.aliases, vec!["a", "b"]);
    }

    #[test]
    fn tsv_shared_alias_keeps_both_mappings() {
        let f = write_tmp("G1\tp53\nG2\tp53\nG2\tTP53\n", ".tsv");
        let kb = KnowledgeBase::load(f.path(), KbFormat::TwoColumnTsv).unwrap();
        let owners: Vec<_> = kb.concepts_for_alias("p53").into_iter().map(|c| c.as_str().to_owned()).collect();
        assert_eq!(owners, vec!["G1", "G2"]);
        let p53_records = kb.alias_records().into_iter().filter(|r| r.alias == "p53").count();
        assert_eq!(p53_records, 2);
        // exact comparison: no case folding
        assert_eq!(kb.concepts_for_alias("tp53").len(), 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("{\"id\":\"X\",\"aliases\":[\"a\"]}\nnot json\n", ".jsonl");
        match KnowledgeBase::load(f.path(), KbFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("X\ta\nno-tab-here\n", ".tsv");
        match KnowledgeBase::load(f.path(), KbFormat::TwoColumnTsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_aliases_rejected() {
        let f = write_tmp("{\"id\":\"X\",\"aliases\":[]}\n", ".jsonl");
        assert!(matches!(
            KnowledgeBase::load(f.path(), KbFormat::Jsonl),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("", ".jsonl");
        let err = KnowledgeBase::load(f.path(), KbFormat::Jsonl).unwrap_err();
        assert_eq!(err.to_string(), "empty knowledge base");
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(KbFormat::from_path(Path::new("kb.tsv")), KbFormat::TwoColumnTsv);
        assert_eq!(KbFormat::from_path(Path::new("kb.jsonl")), KbFormat::Jsonl);
    }
}
