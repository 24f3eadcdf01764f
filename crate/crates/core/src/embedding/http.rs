use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_uniform_dim, validate_batch_input, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::http_util::{agent, join_url, post_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub batch_size: usize,
    #[serde(with = "crate::config::duration_secs")]
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            endpoint_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "cambridgeltl/SapBERT-from-PubMedBERT-fulltext".into(),
            batch_size: 64,
            timeout: Duration::from_secs(30),
            retries: 3,
        }
    }
}

/// Client for an OpenAI-compatible `POST {endpoint}/embeddings` service.
pub struct HttpEmbedder {
    config: EmbeddingProviderConfig,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(config: EmbeddingProviderConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Contract("embedding batch_size must be >= 1".into()));
        }
        let agent = agent(config.timeout);
        Ok(HttpEmbedder { config, agent })
    }

    fn request_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let url = join_url(&self.config.endpoint_url, "embeddings");
        let body = json!({ "model": self.config.model_name, "input": texts });
        let resp = post_json(&self.agent, &url, &body, self.config.retries)?;
        parse_embeddings_response(&resp, texts.len())
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Orders `data` by `index` and normalizes each vector.
pub(crate) fn parse_embeddings_response(resp: &Value, expected: usize) -> Result<Vec<EmbeddingVector>> {
    let parsed: EmbeddingsResponse = serde_json::from_value(resp.clone())
        .map_err(|e| Error::Protocol(format!("malformed embeddings response: {e}")))?;
    let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
    for datum in parsed.data {
        let slot = slots
            .get_mut(datum.index)
            .ok_or_else(|| Error::Protocol(format!("embedding index {} out of range", datum.index)))?;
        let v = EmbeddingVector::normalized(datum.embedding)
            .map_err(|e| Error::Protocol(format!("embedding #{}: {e}", datum.index)))?;
        *slot = Some(v);
    }
    let out = slots
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Protocol(format!("missing embedding for input #{i}"))))
        .collect::<Result<Vec<_>>>()?;
    check_uniform_dim(&out)?;
    Ok(out)
}

impl Embedder for HttpEmbedder {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        validate_batch_input(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for (chunk_idx, chunk) in texts.chunks(self.config.batch_size).enumerate() {
            let vectors = self.request_chunk(chunk).map_err(|e| match e {
                Error::Transport(m) => Error::Transport(format!(
                    "batch at offset {}: {m}",
                    chunk_idx * self.config.batch_size
                )),
                other => other,
            })?;
            out.extend(vectors);
        }
        check_uniform_dim(&out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_is_reordered_by_index() {
        let resp = json!({"data": [
            {"index": 1, "embedding": [0.0, 2.0]},
            {"index": 0, "embedding": [3.0, 0.0]}
        ]});
        let out = parse_embeddings_response(&resp, 2).unwrap();
        assert_eq!(out[0].as_slice(), &[1.0, 0.0]);
        assert_eq!(out[1].as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_protocol_error() {
        let resp = json!({"data": [
            {"index": 0, "embedding": [1.0, 0.0]},
            {"index": 1, "embedding": [1.0, 0.0, 0.0]}
        ]});
        assert!(matches!(parse_embeddings_response(&resp, 2), Err(Error::Protocol(_))));
    }

    #[test]
    fn missing_entry_is_protocol_error() {
        let resp = json!({"data": [{"index": 0, "embedding": [1.0]}]});
        assert!(matches!(parse_embeddings_response(&resp, 2), Err(Error::Protocol(_))));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let e = HttpEmbedder::new(EmbeddingProviderConfig {
            endpoint_url: "http://127.0.0.1:9".into(),
            timeout: Duration::from_millis(300),
            retries: 1,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(e.embed_batch(&["x".into()]), Err(Error::Transport(_))));
    }
}
