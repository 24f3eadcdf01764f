//! End-to-end linking: feedback generation, fused-query retrieval,
//! concept dedup and re-ranking for one mention at a time.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{build_options, dedup_by_concept, Candidate, CandidateSet, DedupMode, OptionList};
use crate::config::PipelineConfig;
use crate::embedding::{CachedEmbedder, Embedder, HttpEmbedder, MockEmbedder};
use crate::error::{Error, Result};
use crate::genqr::{fuse_query, generate_feedback, FeedbackOutcome, MentionQuery};
use crate::index::{AliasIndex, RetrievalHit};
use crate::kb::ConceptId;
use crate::llm::{HttpLanguageModel, InflightLimit, LanguageModel, OracleHint};
use crate::mock::MockLlm;
use crate::rerank::{
    build_prompt, decide_pointwise, score_pointwise, select_setwise, PointwiseScore, RerankDecision, RerankMode,
};
use crate::scalar::Scalar;

/// The subset of [`PipelineConfig`] that shapes per-mention behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSettings {
    pub k: usize,
    pub alpha: f64,
    pub genqr_enabled: bool,
    pub rerank_mode: RerankMode,
    pub nil_sensitive: bool,
    pub pointwise_threshold: f64,
    pub shuffle_options: bool,
    pub seed: u64,
    pub genqr_prompt: String,
    pub pointwise_prompt: String,
}

impl From<&PipelineConfig> for LinkSettings {
    fn from(c: &PipelineConfig) -> Self {
        LinkSettings {
            k: c.k,
            alpha: c.alpha,
            genqr_enabled: c.genqr_enabled,
            rerank_mode: c.rerank_mode,
            nil_sensitive: c.nil_sensitive,
            pointwise_threshold: c.pointwise_threshold,
            shuffle_options: c.shuffle_options,
            seed: c.seed,
            genqr_prompt: c.genqr_prompt.clone(),
            pointwise_prompt: c.pointwise_prompt.clone(),
        }
    }
}

impl Default for LinkSettings {
    fn default() -> Self {
        (&PipelineConfig::default()).into()
    }
}

/// Per-mention seed derived from the run seed.
pub fn mention_seed(seed: u64, mention_idx: usize) -> u64 {
    seed ^ (mention_idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Everything recorded about one linked mention. Serializes to one line of
/// the decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTrace {
    pub mention_idx: usize,
    pub doc_id: String,
    pub mention: String,
    pub feedback_text: Option<String>,
    pub alpha: Option<f64>,
    pub genqr_fallback: bool,
    pub genqr_degenerate: bool,
    pub hits: Vec<RetrievalHit>,
    pub candidates: Vec<Candidate>,
    pub options: Option<OptionList>,
    pub pointwise_scores: Option<Vec<PointwiseScore>>,
    pub decision: RerankDecision,
    /// Final answer under the configured NIL policy.
    pub effective_prediction: Option<ConceptId>,
    pub error: Option<String>,
}

impl LinkTrace {
    pub fn top1(&self) -> Option<&ConceptId> {
        self.hits.first().map(|h| &h.concept_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<RetrievalHit>,
    pub feedback: Option<FeedbackOutcome>,
    pub degenerate: bool,
}

/// Concrete backend handles built from a config. Mock handles are kept so
/// callers can inspect call counts.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn LanguageModel>,
    pub genqr: Arc<dyn LanguageModel>,
    pub mock_embedder: Option<Arc<MockEmbedder>>,
    pub mock_reranker: Option<Arc<MockLlm>>,
    pub mock_genqr: Option<Arc<MockLlm>>,
}

impl Backends {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        let limit = config.max_inflight.max(1);
        let (raw_embedder, mock_embedder): (Arc<dyn Embedder>, _) = if config.mock_backends {
            let m = Arc::new(MockEmbedder::new(config.mock.embed_dim, config.mock.embed_seed));
            (m.clone(), Some(m))
        } else {
            (Arc::new(HttpEmbedder::new(config.embedding.clone())?), None)
        };
        let embedder: Arc<dyn Embedder> = match &config.cache_path {
            Some(path) => Arc::new(CachedEmbedder::open(raw_embedder, path)?),
            None => raw_embedder,
        };

        if config.mock_backends {
            let reranker = Arc::new(MockLlm::new(config.mock.reranker.clone()));
            let genqr = Arc::new(MockLlm::new(config.mock.genqr.clone()));
            Ok(Backends {
                embedder,
                reranker: Arc::new(InflightLimit::new(reranker.clone(), limit)),
                genqr: Arc::new(InflightLimit::new(genqr.clone(), limit)),
                mock_embedder,
                mock_reranker: Some(reranker),
                mock_genqr: Some(genqr),
            })
        } else {
            Ok(Backends {
                embedder,
                reranker: Arc::new(InflightLimit::new(HttpLanguageModel::new(config.llm.clone()), limit)),
                genqr: Arc::new(InflightLimit::new(HttpLanguageModel::new(config.genqr_llm.clone()), limit)),
                mock_embedder,
                mock_reranker: None,
                mock_genqr: None,
            })
        }
    }
}

pub struct Linker<T: Scalar = f64> {
    index: AliasIndex<T>,
    embedder: Arc<dyn Embedder>,
    reranker: Arc<dyn LanguageModel>,
    genqr: Arc<dyn LanguageModel>,
    settings: LinkSettings,
}

impl<T: Scalar> Linker<T> {
    pub fn new(
        index: AliasIndex<T>,
        embedder: Arc<dyn Embedder>,
        reranker: Arc<dyn LanguageModel>,
        genqr: Arc<dyn LanguageModel>,
        settings: LinkSettings,
    ) -> Self {
        Linker {
            index,
            embedder,
            reranker,
            genqr,
            settings,
        }
    }

    pub fn from_backends(index: AliasIndex<T>, backends: &Backends, settings: LinkSettings) -> Self {
        Self::new(
            index,
            backends.embedder.clone(),
            backends.reranker.clone(),
            backends.genqr.clone(),
            settings,
        )
    }

    pub fn index(&self) -> &AliasIndex<T> {
        &self.index
    }

    pub fn settings(&self) -> &LinkSettings {
        &self.settings
    }

    /// First stage only: (optionally reformulated) query -> top-k alias hits.
    pub fn retrieve(&self, q: &MentionQuery) -> Result<Retrieval> {
        let (query, feedback, degenerate) = if self.settings.genqr_enabled {
            let feedback = generate_feedback(q, self.genqr.as_ref(), &self.settings.genqr_prompt);
            let vectors = self
                .embedder
                .embed_batch(&[q.mention.clone(), feedback.text.clone()])?;
            let [m, f]: [_; 2] = vectors
                .try_into()
                .map_err(|_| Error::Protocol("embedder returned the wrong number of vectors".into()))?;
            let fused = fuse_query(&m, &f, self.settings.alpha)?;
            (fused.vector, Some(feedback), fused.degenerate)
        } else {
            (self.embedder.embed_one(&q.mention)?, None, false)
        };
        let hits = self.index.search(&query.cast::<T>(), self.settings.k)?;
        Ok(Retrieval {
            hits,
            feedback,
            degenerate,
        })
    }

    /// Links one mention. Backend failures degrade per stage and are
    /// recorded in the trace instead of being returned.
    ///
    /// `oracle_gold` is only forwarded to mock backends as an out-of-band
    /// hint; real backends never see it.
    pub fn link(&self, mention_idx: usize, q: &MentionQuery, oracle_gold: Option<&ConceptId>) -> LinkTrace {
        let mut trace = LinkTrace {
            mention_idx,
            doc_id: q.doc_id.clone(),
            mention: q.mention.clone(),
            feedback_text: None,
            alpha: None,
            genqr_fallback: false,
            genqr_degenerate: false,
            hits: Vec::new(),
            candidates: Vec::new(),
            options: None,
            pointwise_scores: None,
            decision: RerankDecision::top1_fallback(&CandidateSet::default(), String::new(), None),
            effective_prediction: None,
            error: None,
        };

        let retrieval = match self.retrieve(q) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("mention #{mention_idx}: retrieval failed: {e}");
                trace.error = Some(e.to_string());
                return trace;
            }
        };
        if let Some(fb) = &retrieval.feedback {
            trace.feedback_text = Some(fb.text.clone());
            trace.alpha = Some(self.settings.alpha);
            trace.genqr_fallback = fb.fallback;
        }
        trace.genqr_degenerate = retrieval.degenerate;

        let mut cs = dedup_by_concept(&retrieval.hits, DedupMode::Inference, None);
        if self.settings.shuffle_options {
            cs = cs.shuffled(mention_seed(self.settings.seed, mention_idx));
        }

        let decision = match self.settings.rerank_mode {
            RerankMode::None => RerankDecision::retrieval_top1(&cs),
            RerankMode::Setwise => match build_options(&cs) {
                Ok(opts) => {
                    let prompt = build_prompt(q, &opts);
                    let hint = OracleHint {
                        gold_letter: oracle_gold.and_then(|g| cs.position(g)).and_then(|i| opts.letter_of(i)),
                        candidate_is_gold: None,
                    };
                    let d = select_setwise(&prompt, &opts, &cs, self.reranker.as_ref(), hint);
                    trace.options = Some(opts);
                    d
                }
                Err(e) => {
                    trace.error = Some(e.to_string());
                    RerankDecision::top1_fallback(&cs, String::new(), None)
                }
            },
            RerankMode::Pointwise => {
                match score_pointwise(q, &cs, self.reranker.as_ref(), &self.settings.pointwise_prompt, oracle_gold) {
                    Ok(scores) => {
                        let mut d =
                            decide_pointwise(&scores, self.settings.pointwise_threshold, self.settings.nil_sensitive);
                        d.llm_calls = scores.len();
                        trace.pointwise_scores = Some(scores);
                        d
                    }
                    Err(e) => {
                        let mut d = RerankDecision::top1_fallback(&cs, String::new(), Some(e.to_string()));
                        d.llm_calls = cs.len();
                        d
                    }
                }
            }
        };

        trace.effective_prediction = if self.settings.nil_sensitive {
            decision.predicted.clone()
        } else {
            decision
                .predicted
                .clone()
                .or_else(|| decision.ranked_choice.clone())
                .or_else(|| cs.top1().cloned())
        };
        trace.decision = decision;
        trace.hits = retrieval.hits;
        trace.candidates = cs.candidates;
        trace
    }

    /// Links a batch; results keep input order. `parallel` fans out across
    /// the rayon pool (backend concurrency is still capped by the LLM
    /// in-flight limit).
    pub fn link_all(&self, mentions: &[(MentionQuery, Option<ConceptId>)], parallel: bool) -> Vec<LinkTrace> {
        if parallel {
            mentions
                .par_iter()
                .enumerate()
                .map(|(i, (q, gold))| self.link(i, q, gold.as_ref()))
                .collect()
        } else {
            mentions
                .iter()
                .enumerate()
                .map(|(i, (q, gold))| self.link(i, q, gold.as_ref()))
                .collect()
        }
    }
}
