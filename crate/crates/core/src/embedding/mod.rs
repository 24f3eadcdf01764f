//! Turning strings into unit-normalized dense vectors.
//!
//! Every [`Embedder`] returns unit-length vectors, so cosine similarity is a
//! plain dot product downstream.

mod cache;
mod http;
mod mock;

pub use cache::{CacheKey, CachedEmbedder, EmbeddingCache};
pub use http::{EmbeddingProviderConfig, HttpEmbedder};
pub use mock::{mock_embed, MockEmbedder};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};

/// Fixed-dimension dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct EmbeddingVector<T: Scalar = f64> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Rejects empty or non-finite input.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("embedding must have dim >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingVector { values })
    }

    /// Builds a unit vector from raw values.
    pub fn normalized(values: Vec<T>) -> Result<Self> {
        let v = Self::new(values)?;
        v.normalize()
            .ok_or_else(|| Error::Data("cannot normalize a zero vector".into()))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }

    /// Unit-length copy; `None` for the zero vector.
    ///
    /// Idempotent: a vector whose squared norm is within the rounding bound of
    /// a dot product of this length is already unit and is returned as is.
    pub fn normalize(&self) -> Option<Self> {
        let sq = dot(&self.values, &self.values);
        if (sq - T::one()).abs() <= unit_tolerance::<T>(self.dim()) {
            return Some(self.clone());
        }
        let norm = sq.sqrt();
        if norm <= T::min_positive_value() || !norm.is_finite() {
            return None;
        }
        Some(EmbeddingVector {
            values: self.values.iter().map(|&v| v / norm).collect(),
        })
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm().to_f64_lossless() - 1.0).abs() <= tol
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossless()))
                .collect(),
        }
    }
}

// Worst-case rounding error of sum(v_i / n)^2 over `dim` terms.
fn unit_tolerance<T: Scalar>(dim: usize) -> T {
    T::epsilon() * T::from_usize(2 * dim + 8).unwrap_or_else(T::one)
}

/// Anything that maps a batch of strings to unit vectors of a shared dimension.
pub trait Embedder: Send + Sync {
    /// Identifier used in cache keys.
    fn model_name(&self) -> &str;

    /// One vector per text, in request order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text.to_owned()])?;
        out.pop()
            .ok_or_else(|| Error::Protocol("embedder returned no vectors".into()))
    }
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_batch(texts)
    }
}

pub(crate) fn validate_batch_input(texts: &[String]) -> Result<()> {
    if texts.is_empty() {
        return Err(Error::Contract("embed_batch requires at least one text".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(Error::Contract(format!("text #{i} is empty")));
    }
    Ok(())
}

pub(crate) fn check_uniform_dim(vectors: &[EmbeddingVector]) -> Result<()> {
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(Error::Protocol(format!(
                "dimension mismatch within batch: {} vs {}",
                first.dim(),
                bad.dim()
            )));
        }
    }
    Ok(())
}
