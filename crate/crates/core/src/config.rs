//! Pipeline configuration. Every field has a default, so a config file only
//! needs to name what it changes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProviderConfig;
use crate::genqr::{DEFAULT_ALPHA, DEFAULT_FEEDBACK_PROMPT};
use crate::index::DEFAULT_TOP_K;
use crate::llm::LlmConfig;
use crate::mock::OracleSpec;
use crate::rerank::{RerankMode, DEFAULT_NIL_THRESHOLD, DEFAULT_POINTWISE_PROMPT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub kb_path: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    /// Index snapshot; built from the KB when absent or missing on disk.
    pub index_path: Option<PathBuf>,
    pub cache_path: Option<PathBuf>,
    pub embedding: EmbeddingProviderConfig,
    /// Re-ranker endpoint.
    pub llm: LlmConfig,
    /// Feedback generator endpoint.
    pub genqr_llm: LlmConfig,
    pub k: usize,
    pub alpha: f64,
    pub genqr_enabled: bool,
    pub rerank_mode: RerankMode,
    pub nil_sensitive: bool,
    pub pointwise_threshold: f64,
    pub seed: u64,
    pub max_inflight: usize,
    /// Present inference options in seeded random order (ablation).
    pub shuffle_options: bool,
    /// Shuffle options in exported training data.
    pub training_shuffle: bool,
    /// Mentions run before the throughput clock starts.
    pub throughput_warmup: usize,
    pub genqr_prompt: String,
    pub pointwise_prompt: String,
    pub mock_backends: bool,
    pub mock: MockBackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kb_path: None,
            dataset_path: None,
            index_path: None,
            cache_path: None,
            embedding: EmbeddingProviderConfig::default(),
            llm: LlmConfig::default(),
            genqr_llm: LlmConfig {
                model_name: "Qwen/Qwen3-14B".into(),
                ..LlmConfig::default()
            },
            k: DEFAULT_TOP_K,
            alpha: DEFAULT_ALPHA,
            genqr_enabled: true,
            rerank_mode: RerankMode::Setwise,
            nil_sensitive: false,
            pointwise_threshold: DEFAULT_NIL_THRESHOLD,
            seed: 0,
            max_inflight: 8,
            shuffle_options: false,
            training_shuffle: true,
            throughput_warmup: 5,
            genqr_prompt: DEFAULT_FEEDBACK_PROMPT.into(),
            pointwise_prompt: DEFAULT_POINTWISE_PROMPT.into(),
            mock_backends: false,
            mock: MockBackendConfig::default(),
        }
    }
}

/// Offline backends used with `mock_backends = true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockBackendConfig {
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub reranker: OracleSpec,
    pub genqr: OracleSpec,
}

impl Default for MockBackendConfig {
    fn default() -> Self {
        MockBackendConfig {
            embed_dim: 64,
            embed_seed: 0,
            reranker: OracleSpec::always_gold(),
            genqr: OracleSpec::CannedMap {
                map: Default::default(),
                default: None,
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if self.k == 0 {
            return Err(Error::Contract("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Contract(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.pointwise_threshold) {
            return Err(Error::Contract(format!(
                "threshold {} outside [0, 1]",
                self.pointwise_threshold
            )));
        }
        if self.embedding.batch_size == 0 {
            return Err(Error::Contract("embedding batch_size must be >= 1".into()));
        }
        if self.mock_backends && self.mock.embed_dim == 0 {
            return Err(Error::Contract("mock embed_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// `Duration` as fractional seconds.
pub mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.k, 20);
        assert_eq!(c.alpha, 0.6);
        assert_eq!(c.pointwise_threshold, 0.5);
        assert_eq!(c.rerank_mode, RerankMode::Setwise);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"k": 5, "llm": {"api": "chat"}}"#).unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.alpha, 0.6);
        assert_eq!(c.llm.api, crate::llm::ApiStyle::Chat);
        let back: PipelineConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let bad = PipelineConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
