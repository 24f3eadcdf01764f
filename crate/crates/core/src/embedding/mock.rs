use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{check_uniform_dim, validate_batch_input, Embedder, EmbeddingVector};
use crate::error::Result;

/// Pseudorandom unit vector that is a pure function of `(text, dim, seed)`.
///
/// The text is hashed together with the seed into a ChaCha stream, from
/// which `dim` standard-normal draws are taken and normalized. Distinct
/// texts land on (almost surely) distinct directions.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim > 0, "mock embedding dim must be positive");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dim as u64).to_le_bytes());
    hasher.update(text.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    loop {
        let values: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Ok(v) = EmbeddingVector::normalized(values) {
            return v;
        }
    }
}

/// Deterministic offline embedder; counts provider invocations.
#[derive(Debug)]
pub struct MockEmbedder {
    name: String,
    dim: usize,
    seed: u64,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockEmbedder {
            name: format!("mock-{dim}-{seed}"),
            dim,
            seed,
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of `embed_batch` invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Number of individual texts embedded so far.
    pub fn texts_embedded(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

impl Embedder for MockEmbedder {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        validate_batch_input(texts)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        let out: Vec<_> = texts.iter().map(|t| mock_embed(t, self.dim, self.seed)).collect();
        check_uniform_dim(&out)?;
        Ok(out)
    }
}
