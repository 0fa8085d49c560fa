//! Feature and projection files handed between pipeline stages.
//!
//! Both are canonical JSON, so the same inputs always produce the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::canonical::to_canonical_json;
use crate::features::FeatureVector;
use crate::projection::Projection2D;
use crate::trace::write_atomic;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut text = to_canonical_json(value)
        .map_err(|e| ArtifactError::Json { path: path.to_owned(), message: e.to_string() })?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|source| ArtifactError::Io { path: path.to_owned(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
    let bytes = fs::read(path).map_err(|source| ArtifactError::Io { path: path.to_owned(), source })?;
    serde_json::from_slice(&bytes).map_err(|e| ArtifactError::Json { path: path.to_owned(), message: e.to_string() })
}

/// `features.json` → `features.history.json`.
pub fn history_path(features: &Path) -> PathBuf {
    let stem = features.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
    features.with_file_name(format!("{stem}.history.json"))
}

/// Writes the feature array and, next to it, the `(epoch, loss)` history.
pub fn write_features(path: &Path, features: &[FeatureVector], history: &[(usize, f64)]) -> Result<(), ArtifactError> {
    write_json(path, features)?;
    write_json(&history_path(path), history)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>, ArtifactError> {
    read_json(path)
}

pub fn read_history(features: &Path) -> Result<Vec<(usize, f64)>, ArtifactError> {
    read_json(&history_path(features))
}

pub fn write_projection(path: &Path, projection: &Projection2D) -> Result<(), ArtifactError> {
    write_json(path, projection)
}

pub fn read_projection(path: &Path) -> Result<Projection2D, ArtifactError> {
    read_json(path)
}
