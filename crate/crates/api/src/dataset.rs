use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use marlviz_core::artifacts::{read_features, read_projection, ArtifactError};
use marlviz_core::env::ScenarioConfig;
use marlviz_core::features::FeatureVector;
use marlviz_core::projection::Projection2D;
use marlviz_core::trace::{index_dataset, AgentKey, EpisodeTrace, ManifestError, TraceError};
use marlviz_core::training::TrainSpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Mismatch(String),
}

/// Everything the server answers from, fixed once loaded.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub train_spec: TrainSpec,
    pub traces: BTreeMap<String, EpisodeTrace>,
    pub features: Vec<FeatureVector>,
    pub projection: Projection2D,
}

fn key_set<'a>(keys: impl Iterator<Item = AgentKey> + 'a) -> BTreeSet<AgentKey> {
    keys.collect()
}

impl LoadedDataset {
    /// Checks that features and projection cover exactly the dataset's agents.
    pub fn new(
        train_spec: TrainSpec,
        traces: BTreeMap<String, EpisodeTrace>,
        features: Vec<FeatureVector>,
        projection: Projection2D,
    ) -> Result<Self, LoadError> {
        let agents = key_set(traces.values().flat_map(EpisodeTrace::agent_keys));
        let check = |what: &str, keys: Vec<AgentKey>| {
            let n = keys.len();
            let set = key_set(keys.into_iter());
            if set.len() != n || set != agents {
                let missing = agents.difference(&set).count();
                let extra = set.difference(&agents).count();
                return Err(LoadError::Mismatch(format!(
                    "{what} do not match the dataset agents ({missing} missing, {extra} unknown, {} duplicated)",
                    n - set.len()
                )));
            }
            Ok(())
        };
        check("features", features.iter().map(FeatureVector::key).collect())?;
        check(
            "projection points",
            projection.points.iter().map(|p| AgentKey::new(p.scenario_id.clone(), p.agent_id)).collect(),
        )?;
        Ok(LoadedDataset { train_spec, traces, features, projection })
    }

    pub fn load(data: &Path, features: &Path, projection: &Path) -> Result<Self, LoadError> {
        let index = index_dataset(data)?;
        let traces = index.load_traces()?;
        Self::new(index.train_spec, traces, read_features(features)?, read_projection(projection)?)
    }

    pub fn grid(&self) -> Vec<ScenarioConfig> {
        self.traces.values().map(|t| t.config.clone()).collect()
    }

    pub fn agent_count(&self) -> usize {
        self.traces.values().map(|t| t.config.num_agents).sum()
    }
}
