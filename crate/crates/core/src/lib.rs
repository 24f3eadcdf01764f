//! Biomedical entity linking: dense alias retrieval with optional
//! generative query reformulation, followed by LLM re-ranking that can
//! answer "none of the above".
//!
//! Vector math is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod candidates;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod export;
pub mod genqr;
mod http_util;
pub mod index;
pub mod kb;
pub mod llm;
pub mod mock;
pub mod pipeline;
pub mod rerank;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use candidates::{Candidate, CandidateSet, DedupMode, OptionList};
pub use config::PipelineConfig;
pub use embedding::{Embedder, EmbeddingVector};
pub use genqr::MentionQuery;
pub use kb::{ConceptId, KnowledgeBase};
pub use llm::LanguageModel;
pub use pipeline::{Backends, LinkSettings, LinkTrace, Linker};
pub use rerank::{RerankDecision, RerankMode};

pub type Embedding = EmbeddingVector<f64>;
pub type Embedding32 = EmbeddingVector<f32>;
pub type AliasIndex64 = index::AliasIndex<f64>;
pub type AliasIndex32 = index::AliasIndex<f32>;
pub type Linker64 = Linker<f64>;
pub type Linker32 = Linker<f32>;
