use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::env::AgentAction;
use crate::trace::{AgentKey, EpisodeTrace};

pub const DESCRIPTOR_LEN: usize = 34;
pub const TRIGRAMS: usize = 27;
/// Offset of the unigram block.
pub const UNIGRAM_OFFSET: usize = TRIGRAMS;
/// Offset of the four outcome terms.
pub const OUTCOME_OFFSET: usize = TRIGRAMS + 3;

/// Fixed-length behavior summary of one agent's evaluation episode:
///
/// * `[0, 27)`: action trigram frequencies, `S < L < R` lexicographic
/// * `[27, 30)`: action rates
/// * `30`: fruit per alive step
/// * `31`: alive steps over the step cap
/// * `32`: died (0 or 1)
/// * `33`: mean reward per alive step, scaled by `1 + |fruit| + |death|`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDescriptor {
    #[serde(flatten)]
    pub key: AgentKey,
    pub values: Vec<f64>,
}

pub fn trigram_index(a: AgentAction, b: AgentAction, c: AgentAction) -> usize {
    9 * a.index() + 3 * b.index() + c.index()
}

pub fn build_descriptor(trace: &EpisodeTrace, agent_id: usize) -> Result<BehaviorDescriptor, FeatureError> {
    let key = AgentKey::new(trace.scenario_id(), agent_id);
    let summary = trace.summary.get(agent_id).ok_or_else(|| FeatureError::UnknownAgent(key.clone()))?;
    let actions: Vec<AgentAction> = trace.agent_steps(agent_id).filter_map(|s| s.action).collect();
    let mut values = vec![0.0; DESCRIPTOR_LEN];

    if actions.len() >= 3 {
        let windows = (actions.len() - 2) as f64;
        for w in actions.windows(3) {
            values[trigram_index(w[0], w[1], w[2])] += 1.0;
        }
        values[..TRIGRAMS].iter_mut().for_each(|v| *v /= windows);
    }
    if !actions.is_empty() {
        let n = actions.len() as f64;
        for a in &actions {
            values[UNIGRAM_OFFSET + a.index()] += 1.0;
        }
        values[UNIGRAM_OFFSET..OUTCOME_OFFSET].iter_mut().for_each(|v| *v /= n);
    }

    let cfg = &trace.config;
    let alive = f64::from(summary.alive_steps);
    if summary.alive_steps > 0 {
        values[OUTCOME_OFFSET] = f64::from(summary.fruits) / alive;
        let scale = cfg.fruit_reward.abs() + cfg.death_reward.abs() + 1.0;
        values[OUTCOME_OFFSET + 3] = summary.total_reward / alive / scale;
    }
    values[OUTCOME_OFFSET + 1] = alive / f64::from(cfg.max_steps);
    values[OUTCOME_OFFSET + 2] = if summary.death_tick.is_some() { 1.0 } else { 0.0 };
    Ok(BehaviorDescriptor { key, values })
}

/// Descriptors for every agent of every trace, in the iteration order given.
pub fn build_all<'a>(traces: impl IntoIterator<Item = &'a EpisodeTrace>) -> Result<Vec<BehaviorDescriptor>, FeatureError> {
    let mut out = Vec::new();
    for t in traces {
        for id in 0..t.config.num_agents {
            out.push(build_descriptor(t, id)?);
        }
    }
    Ok(out)
}

/// Per-dimension z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// Below this a dimension is treated as constant and only centered.
pub const DEGENERATE_STD: f64 = 1e-9;

impl NormStats {
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| if s < DEGENERATE_STD { v - m } else { (v - m) / s })
            .collect()
    }
}

pub fn normalize_corpus(
    descriptors: &[BehaviorDescriptor],
) -> Result<(Vec<BehaviorDescriptor>, NormStats), FeatureError> {
    if descriptors.len() < 2 {
        return Err(FeatureError::CorpusTooSmall { needed: 2, got: descriptors.len() });
    }
    let dim = descriptors[0].values.len();
    let n = descriptors.len() as f64;
    let mut mean = vec![0.0; dim];
    for d in descriptors {
        for (m, v) in mean.iter_mut().zip(&d.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for d in descriptors {
        for ((s, v), m) in var.iter_mut().zip(&d.values).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.into_iter().map(|s| (s / n).sqrt()).collect();
    let stats = NormStats { mean, std };
    let normalized = descriptors
        .iter()
        .map(|d| BehaviorDescriptor { key: d.key.clone(), values: stats.apply(&d.values) })
        .collect();
    Ok((normalized, stats))
}
