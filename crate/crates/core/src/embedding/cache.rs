//! Append-only on-disk embedding cache.
//!
//! Record layout, repeated until EOF:
//!
//! ```text
//! key_len: u32 LE | key bytes | dim: u32 LE | dim x f32 LE
//! ```
//!
//! with `key = model_name + "\0" + text`. Vectors are stored as `f32` and
//! re-normalized in `f64` when read, so a value returned on a cold call is
//! bit-identical to the one later served from disk.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use super::{validate_batch_input, Embedder, EmbeddingVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(model_name: &str, text: &str) -> Self {
        CacheKey(format!("{model_name}\0{text}"))
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

pub struct EmbeddingCache {
    path: PathBuf,
    entries: HashMap<CacheKey, Vec<f32>>,
    writer: BufWriter<File>,
    discarded: usize,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache")
            .field("path", &self.path)
            .field("entries", &self.entries.len())
            .finish()
    }
}

enum Record {
    Valid(CacheKey, Vec<f32>),
    Corrupt(String),
}

fn read_u32(buf: &[u8], pos: usize) -> Option<u32> {
    buf.get(pos..pos + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

/// Parses one record at `pos`; `None` when the bytes run out mid-record.
fn parse_record(buf: &[u8], pos: usize) -> Option<(Record, usize)> {
    let key_len = read_u32(buf, pos)? as usize;
    let key_start = pos + 4;
    let key_bytes = buf.get(key_start..key_start.checked_add(key_len)?)?;
    let dim_pos = key_start + key_len;
    let dim = read_u32(buf, dim_pos)? as usize;
    let vals_start = dim_pos + 4;
    let vals_end = vals_start.checked_add(dim.checked_mul(4)?)?;
    let raw = buf.get(vals_start..vals_end)?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let record = match std::str::from_utf8(key_bytes) {
        Err(_) => Record::Corrupt("key is not UTF-8".into()),
        Ok(k) if !k.contains('\0') => Record::Corrupt("key lacks model separator".into()),
        Ok(_) if dim == 0 => Record::Corrupt("zero-dimensional vector".into()),
        Ok(_) if values.iter().any(|v| !v.is_finite()) => {
            Record::Corrupt("non-finite vector component".into())
        }
        Ok(_) if values.iter().all(|&v| v == 0.0) => Record::Corrupt("zero vector".into()),
        Ok(k) => Record::Valid(CacheKey(k.to_owned()), values),
    };
    Some((record, vals_end))
}

fn decode(values: &[f32]) -> Option<EmbeddingVector> {
    EmbeddingVector::normalized(values.iter().map(|&v| v as f64).collect()).ok()
}

impl EmbeddingCache {
    /// Opens (creating if needed) the cache at `path`.
    ///
    /// Corrupt entries are dropped with a warning. A torn trailing record is
    /// cut off so later appends stay aligned.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut buf = Vec::new();
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut buf).map_err(|e| Error::io(&path, e))?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&path, e)),
        }

        let mut entries = HashMap::new();
        let mut discarded = 0;
        let mut pos = 0;
        while pos < buf.len() {
            match parse_record(&buf, pos) {
                Some((Record::Valid(k, v), next)) => {
                    entries.insert(k, v);
                    pos = next;
                }
                Some((Record::Corrupt(why), next)) => {
                    log::warn!("{}: discarding cache entry at byte {pos}: {why}", path.display());
                    discarded += 1;
                    pos = next;
                }
                None => {
                    log::warn!(
                        "{}: truncated cache record at byte {pos}, dropping {} trailing bytes",
                        path.display(),
                        buf.len() - pos
                    );
                    discarded += 1;
                    break;
                }
            }
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if pos < buf.len() {
            file.set_len(pos as u64).map_err(|e| Error::io(&path, e))?;
        }
        Ok(EmbeddingCache {
            path,
            entries,
            writer: BufWriter::new(file),
            discarded,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Corrupt or torn records skipped while opening.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    pub fn get(&self, key: &CacheKey) -> Option<EmbeddingVector> {
        self.entries.get(key).and_then(|v| decode(v))
    }

    /// Appends a record and returns the vector exactly as a later `get`
    /// would.
    pub fn insert(&mut self, key: CacheKey, vector: &EmbeddingVector) -> Result<EmbeddingVector> {
        let values: Vec<f32> = vector.as_slice().iter().map(|&v| v as f32).collect();
        let decoded = decode(&values)
            .ok_or_else(|| Error::Data("vector underflows to zero in f32".into()))?;
        let key_bytes = key.as_bytes();
        let mut record = Vec::with_capacity(8 + key_bytes.len() + 4 * values.len());
        record.extend_from_slice(&(key_bytes.len() as u32).to_le_bytes());
        record.extend_from_slice(key_bytes);
        record.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in &values {
            record.extend_from_slice(&v.to_le_bytes());
        }
        self.writer.write_all(&record).map_err(|e| Error::io(&self.path, e))?;
        self.entries.insert(key, values);
        Ok(decoded)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

struct CacheState {
    cache: EmbeddingCache,
    inflight: HashSet<CacheKey>,
}

/// Wraps an [`Embedder`] with a persistent cache keyed by
/// `(model_name, exact text)`.
///
/// Concurrent callers asking for the same uncached text wait for the first
/// request instead of issuing a duplicate provider call.
pub struct CachedEmbedder<E> {
    inner: E,
    state: Mutex<CacheState>,
    ready: Condvar,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn open(inner: E, cache_path: impl AsRef<Path>) -> Result<Self> {
        let cache = EmbeddingCache::open(cache_path)?;
        Ok(CachedEmbedder {
            inner,
            state: Mutex::new(CacheState {
                cache,
                inflight: HashSet::new(),
            }),
            ready: Condvar::new(),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cached_entries(&self) -> usize {
        self.state.lock().unwrap().cache.len()
    }

    fn release(&self, keys: &[CacheKey]) {
        let mut st = self.state.lock().unwrap();
        for k in keys {
            st.inflight.remove(k);
        }
        self.ready.notify_all();
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        validate_batch_input(texts)?;
        let model = self.inner.model_name().to_owned();
        let keys: Vec<CacheKey> = texts.iter().map(|t| CacheKey::new(&model, t)).collect();
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];

        loop {
            // claim the misses nobody else is computing
            let mut mine: Vec<usize> = Vec::new();
            let mut waiting = false;
            {
                let mut st = self.state.lock().unwrap();
                let mut claimed: HashSet<&CacheKey> = HashSet::new();
                for (i, key) in keys.iter().enumerate() {
                    if out[i].is_some() {
                        continue;
                    }
                    if let Some(v) = st.cache.get(key) {
                        out[i] = Some(v);
                    } else if claimed.contains(key) {
                        // duplicate within this batch; filled on the next pass
                    } else if st.inflight.contains(key) {
                        waiting = true;
                    } else {
                        claimed.insert(key);
                        mine.push(i);
                    }
                }
                for &i in &mine {
                    st.inflight.insert(keys[i].clone());
                }
                if mine.is_empty() && waiting {
                    while keys
                        .iter()
                        .enumerate()
                        .any(|(i, k)| out[i].is_none() && st.inflight.contains(k))
                    {
                        st = self.ready.wait(st).unwrap();
                    }
                    continue;
                }
            }
            if mine.is_empty() {
                break;
            }

            let request: Vec<String> = mine.iter().map(|&i| texts[i].clone()).collect();
            let claimed_keys: Vec<CacheKey> = mine.iter().map(|&i| keys[i].clone()).collect();
            let vectors = match self.inner.embed_batch(&request) {
                Ok(v) => v,
                Err(e) => {
                    self.release(&claimed_keys);
                    return Err(e);
                }
            };
            let stored: Result<Vec<EmbeddingVector>> = {
                let mut st = self.state.lock().unwrap();
                let res = claimed_keys
                    .iter()
                    .zip(&vectors)
                    .map(|(k, v)| st.cache.insert(k.clone(), v))
                    .collect::<Result<Vec<_>>>()
                    .and_then(|v| st.cache.flush().map(|_| v));
                res
            };
            self.release(&claimed_keys);
            for (slot, v) in mine.iter().zip(stored?) {
                out[*slot] = Some(v);
            }
        }

        Ok(out.into_iter().map(|v| v.expect("all slots filled")).collect())
    }
}
