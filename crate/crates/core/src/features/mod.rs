//! Behavior embedding: per-agent descriptors squeezed through an autoencoder.
//!
//! Each agent's evaluation episode is reduced to a 34-dimensional
//! [`BehaviorDescriptor`], the corpus is z-scored, and a small autoencoder is
//! trained full-batch on it. The 8-wide bottleneck activations become the
//! agent's [`FeatureVector`].

mod adam;
mod autoencoder;
mod descriptor;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamMoments, BETA1, BETA2, EPSILON};
pub use autoencoder::{
    loss, train_autoencoder, train_with_sizes, AeTrainConfig, Autoencoder, Forward, Gradients, TrainedAutoencoder,
    INIT_SCALE, LAYER_SIZES,
};
pub use descriptor::{
    build_all, build_descriptor, normalize_corpus, trigram_index, BehaviorDescriptor, NormStats, DEGENERATE_STD,
    DESCRIPTOR_LEN, OUTCOME_OFFSET, TRIGRAMS, UNIGRAM_OFFSET,
};

use crate::trace::{AgentKey, EpisodeTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentKey),
    #[error("corpus too small: need at least {needed} descriptors, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("input has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("autoencoder training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
}

/// Latent code of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub scenario_id: String,
    pub agent_id: usize,
    pub latent: Vec<f64>,
}

impl FeatureVector {
    pub fn key(&self) -> AgentKey {
        AgentKey::new(self.scenario_id.clone(), self.agent_id)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.latent
    }
}

impl AsRef<[f64]> for BehaviorDescriptor {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Latent codes for already-normalized descriptors, order preserved.
pub fn encode_all(ae: &Autoencoder, normalized: &[BehaviorDescriptor]) -> Result<Vec<FeatureVector>, FeatureError> {
    normalized
        .iter()
        .map(|d| {
            Ok(FeatureVector {
                scenario_id: d.key.scenario_id.clone(),
                agent_id: d.key.agent_id,
                latent: ae.forward(&d.values)?.latent,
            })
        })
        .collect()
}

/// Everything the embedding stage produces.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub descriptors: Vec<BehaviorDescriptor>,
    pub stats: NormStats,
    pub trained: TrainedAutoencoder,
    pub features: Vec<FeatureVector>,
}

/// Descriptors → z-score → autoencoder → latents, over every agent of
/// `traces` in key order.
pub fn embed(traces: &BTreeMap<String, EpisodeTrace>, cfg: &AeTrainConfig) -> Result<Embedding, FeatureError> {
    let descriptors = build_all(traces.values())?;
    let (normalized, stats) = normalize_corpus(&descriptors)?;
    let trained = train_autoencoder(&normalized, cfg)?;
    let features = encode_all(&trained.model, &normalized)?;
    Ok(Embedding { descriptors, stats, trained, features })
}
