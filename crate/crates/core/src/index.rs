//! Exact top-k cosine search over embedded alias records.
//!
//! Rows are stored unit-normalized in one row-major block, so a query's
//! cosine similarity against every alias is a single pass of dot products.
//! Ties are broken by record ordinal, which makes results fully
//! deterministic.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::kb::{AliasRecord, ConceptId, KnowledgeBase};
use crate::scalar::{dot, Scalar};

const SNAPSHOT_MAGIC: &[u8; 8] = b"BLNKIDX1";

/// Default number of alias hits handed to the candidate stage.
pub const DEFAULT_TOP_K: usize = 20;

/// Aliases sent to the embedder per request while building.
const BUILD_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub alias: String,
    pub concept_id: ConceptId,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    /// Position of the alias record in the index.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AliasIndex<T: Scalar = f64> {
    dim: usize,
    matrix: Vec<T>,
    records: Vec<AliasRecord>,
}

/// Descending score, then ascending ordinal.
fn hit_order<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(&b.1))
}

impl<T: Scalar> AliasIndex<T> {
    /// Embeds every alias record of `kb` (in `alias_records` order).
    pub fn build(kb: &KnowledgeBase, embedder: &dyn Embedder) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::Contract("cannot index an empty knowledge base".into()));
        }
        let records = kb.alias_records();
        let mut vectors = Vec::with_capacity(records.len());
        for (chunk_idx, chunk) in records.chunks(BUILD_BATCH).enumerate() {
            let texts: Vec<String> = chunk.iter().map(|r| r.alias.clone()).collect();
            let batch = embedder.embed_batch(&texts).map_err(|e| {
                let offset = chunk_idx * BUILD_BATCH;
                match e {
                    Error::Transport(m) => Error::Transport(format!("alias batch at offset {offset}: {m}")),
                    Error::Protocol(m) => Error::Protocol(format!("alias batch at offset {offset}: {m}")),
                    other => other,
                }
            })?;
            vectors.extend(batch);
        }
        Self::from_vectors(records, &vectors)
    }

    /// Builds from precomputed vectors, normalizing each row.
    pub fn from_vectors<U: Scalar>(records: Vec<AliasRecord>, vectors: &[EmbeddingVector<U>]) -> Result<Self> {
        if records.len() != vectors.len() {
            return Err(Error::Contract(format!(
                "{} records but {} vectors",
                records.len(),
                vectors.len()
            )));
        }
        let dim = vectors
            .first()
            .map(|v| v.dim())
            .ok_or_else(|| Error::Contract("index needs at least one record".into()))?;
        let mut matrix = Vec::with_capacity(dim * vectors.len());
        for (i, v) in vectors.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::Contract(format!(
                    "row {i} has dim {} but index dim is {dim}",
                    v.dim()
                )));
            }
            let row = v
                .cast::<T>()
                .normalize()
                .ok_or_else(|| Error::Data(format!("row {i} ({}) is a zero vector", records[i].alias)))?;
            matrix.extend_from_slice(row.as_slice());
        }
        Ok(AliasIndex { dim, matrix, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AliasRecord] {
        &self.records
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`k` by cosine similarity.
    pub fn search(&self, query: &EmbeddingVector<T>, k: usize) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(Error::Contract("k must be >= 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::Contract(format!(
                "query dim {} does not match index dim {}",
                query.dim(),
                self.dim
            )));
        }
        let query = query
            .normalize()
            .ok_or_else(|| Error::Contract("query is a zero vector".into()))?;
        let q = query.as_slice();

        let mut scored: Vec<(T, usize)> = self
            .matrix
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| (dot(q, row), i))
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, hit_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(hit_order);

        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (score, ordinal))| {
                let rec = &self.records[ordinal];
                RetrievalHit {
                    alias: rec.alias.clone(),
                    concept_id: rec.concept_id.clone(),
                    score: score.to_f64_lossless(),
                    rank: rank + 1,
                    ordinal,
                }
            })
            .collect())
    }

    /// Writes the snapshot format: magic, `dim` (u32 LE), `rows` (u64 LE),
    /// `rows x dim` f32 LE, then per record a length-prefixed alias and a
    /// length-prefixed concept id (u32 LE lengths).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(SNAPSHOT_MAGIC)?;
        write(&(self.dim as u32).to_le_bytes())?;
        write(&(self.records.len() as u64).to_le_bytes())?;
        for v in &self.matrix {
            write(&v.to_f32_le())?;
        }
        for rec in &self.records {
            for s in [rec.alias.as_str(), rec.concept_id.as_str()] {
                write(&(s.len() as u32).to_le_bytes())?;
                write(s.as_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a snapshot written by [`save`](Self::save). Rows are
    /// re-normalized after the f32 round trip.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let corrupt = |what: &str| Error::Data(format!("{}: corrupt index snapshot ({what})", path.display()));
        let mut read_exact = |buf: &mut [u8]| r.read_exact(buf);

        let mut magic = [0u8; 8];
        read_exact(&mut magic).map_err(|_| corrupt("missing header"))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        read_exact(&mut b4).map_err(|_| corrupt("missing dim"))?;
        let dim = u32::from_le_bytes(b4) as usize;
        read_exact(&mut b8).map_err(|_| corrupt("missing row count"))?;
        let rows = u64::from_le_bytes(b8) as usize;
        if dim == 0 || rows == 0 {
            return Err(corrupt("empty index"));
        }

        let mut vectors = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut row = Vec::with_capacity(dim);
            for _ in 0..dim {
                read_exact(&mut b4).map_err(|_| corrupt("truncated matrix"))?;
                row.push(T::from_f32_le(b4));
            }
            vectors.push(EmbeddingVector::new(row).map_err(|_| corrupt("non-finite row"))?);
        }
        let mut read_string = |what: &str| -> Result<String> {
            let mut len = [0u8; 4];
            read_exact(&mut len).map_err(|_| corrupt(what))?;
            let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
            read_exact(&mut buf).map_err(|_| corrupt(what))?;
            String::from_utf8(buf).map_err(|_| corrupt(what))
        };
        let mut records = Vec::with_capacity(rows);
        for _ in 0..rows {
            let alias = read_string("truncated record table")?;
            let concept_id = ConceptId::new(read_string("truncated record table")?)
                .map_err(|_| corrupt("empty concept id"))?;
            records.push(AliasRecord { alias, concept_id });
        }
        Self::from_vectors(records, &vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{mock_embed, MockEmbedder};
    use crate::kb::Concept;
    use proptest::prelude::*;

    fn kb3() -> KnowledgeBase {
        KnowledgeBase::from_concepts([
            Concept {
                id: ConceptId::new("MESH:C535396").unwrap(),
                aliases: vec!["atelosteogenesis, type 1".into(), "AO1".into()],
            },
            Concept {
                id: ConceptId::new("MESH:D009203").unwrap(),
                aliases: vec!["myocardial infarction".into()],
            },
        ])
        .unwrap()
    }

    fn records(n: usize) -> Vec<AliasRecord> {
        (0..n)
            .map(|i| AliasRecord {
                alias: format!("a{i}"),
                concept_id: ConceptId::new(format!("C{}", i / 3)).unwrap(),
            })
            .collect()
    }

    fn brute_force(index: &AliasIndex<f64>, q: &EmbeddingVector, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = (0..index.len())
            .map(|i| {
                let s: f64 = q.as_slice().iter().zip(index.row(i)).map(|(a, b)| a * b).sum();
                (i, s)
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn one_row_per_alias_record() {
        let kb = kb3();
        let idx = AliasIndex::<f64>::build(&kb, &MockEmbedder::new(8, 0)).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.records(), kb.alias_records().as_slice());
        for i in 0..idx.len() {
            let n: f64 = idx.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rebuild_is_identical() {
        let kb = kb3();
        let a = AliasIndex::<f64>::build(&kb, &MockEmbedder::new(8, 0)).unwrap();
        let b = AliasIndex::<f64>::build(&kb, &MockEmbedder::new(8, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_match_ranks_first() {
        let kb = kb3();
        let idx = AliasIndex::<f64>::build(&kb, &MockEmbedder::new(16, 0)).unwrap();
        let q = mock_embed("AO1", 16, 0);
        let hits = idx.search(&q, 2).unwrap();
        assert_eq!(hits[0].alias, "AO1");
        assert_eq!(hits[0].rank, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_saturates_at_record_count() {
        let kb = kb3();
        let idx = AliasIndex::<f64>::build(&kb, &MockEmbedder::new(16, 0)).unwrap();
        let hits = idx.search(&mock_embed("x", 16, 0), 50).unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn contract_errors() {
        let kb = kb3();
        let idx = AliasIndex::<f64>::build(&kb, &MockEmbedder::new(16, 0)).unwrap();
        assert!(matches!(idx.search(&mock_embed("x", 8, 0), 1), Err(Error::Contract(_))));
        assert!(matches!(idx.search(&mock_embed("x", 16, 0), 0), Err(Error::Contract(_))));
    }

    #[test]
    fn ties_break_by_ordinal() {
        let v = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let w = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        let idx = AliasIndex::<f64>::from_vectors(records(4), &[w.clone(), v.clone(), w, v.clone()]).unwrap();
        let hits = idx.search(&v, 3).unwrap();
        let ords: Vec<_> = hits.iter().map(|h| h.ordinal).collect();
        assert_eq!(ords, vec![1, 3, 0]);
    }

    #[test]
    fn matches_brute_force_on_random_vectors() {
        let n = 300;
        let vecs: Vec<_> = (0..n).map(|i| mock_embed(&format!("r{i}"), 24, 11)).collect();
        let idx = AliasIndex::<f64>::from_vectors(records(n), &vecs).unwrap();
        for qi in 0..30 {
            let q = mock_embed(&format!("q{qi}"), 24, 11);
            let got: Vec<_> = idx.search(&q, 20).unwrap().iter().map(|h| (h.ordinal, h.score)).collect();
            assert_eq!(got, brute_force(&idx, &q, 20));
        }
    }

    #[test]
    fn f32_index_agrees_with_f64_on_top_hit() {
        let n = 100;
        let vecs: Vec<_> = (0..n).map(|i| mock_embed(&format!("r{i}"), 32, 5)).collect();
        let idx64 = AliasIndex::<f64>::from_vectors(records(n), &vecs).unwrap();
        let idx32 = AliasIndex::<f32>::from_vectors(records(n), &vecs).unwrap();
        let q = vecs[42].clone();
        assert_eq!(idx64.search(&q, 1).unwrap()[0].ordinal, 42);
        assert_eq!(idx32.search(&q.cast(), 1).unwrap()[0].ordinal, 42);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        let vecs: Vec<_> = (0..10).map(|i| mock_embed(&format!("r{i}"), 8, 1)).collect();
        let idx32 = AliasIndex::<f32>::from_vectors(records(10), &vecs).unwrap();
        idx32.save(&path).unwrap();
        let back = AliasIndex::<f32>::load(&path).unwrap();
        assert_eq!(back.records(), idx32.records());
        for i in 0..10 {
            for (a, b) in back.row(i).iter().zip(idx32.row(i)) {
                assert!((a - b).abs() <= 2.0 * f32::EPSILON);
            }
        }

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"BLNKIDX1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 10);

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(AliasIndex::<f32>::load(&path), Err(Error::Data(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn search_k_is_prefix_of_k_plus_one(seed in 0u64..1000, k in 1usize..30) {
            let n = 40;
            let vecs: Vec<_> = (0..n).map(|i| mock_embed(&format!("r{}", i % 25), 6, seed)).collect();
            let idx = AliasIndex::<f64>::from_vectors(records(n), &vecs).unwrap();
            let q = mock_embed("query", 6, seed);
            let a = idx.search(&q, k).unwrap();
            let b = idx.search(&q, k + 1).unwrap();
            prop_assert_eq!(a.len(), k.min(n));
            prop_assert_eq!(&a[..], &b[..a.len()]);
            for h in &b {
                prop_assert!(h.score >= -1.0 - 1e-9 && h.score <= 1.0 + 1e-9);
            }
        }
    }
}
