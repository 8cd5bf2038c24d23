//! Lightweight packet-level classifiers over burst feature vectors.
//!
//! Four models are available as alternatives: k-nearest neighbours, a Gini
//! decision tree, a bagged random forest and a reconstruction autoencoder.
//! Every model stores the min-max scaling of its training set and applies it
//! to raw feature vectors at prediction time.

mod autoencoder;
mod dataset;
mod forest;
mod knn;
mod metrics;
mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use autoencoder::{AeParams, Autoencoder, AutoencoderModel};
pub use dataset::{LabeledDataset, Normalization, Row};
pub use forest::{ForestParams, RandomForestModel, DEFAULT_TREES};
pub use knn::{KnnModel, DEFAULT_K};
pub use metrics::{evaluate, evaluate_with, mean, nearest_rank, predict_timed, EvalMetrics};
pub use tree::{gini, DecisionTreeModel, Node, TreeCore, TreeParams, DEFAULT_MAX_DEPTH};

use crate::events::{FeatureVector, FEATURE_COUNT};
use crate::par::Exec;
use crate::types::Label;

const MODEL_FORMAT: &str = "homewatch-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown model kind {0:?} (expected knn, dtree, rforest or autoenc)")]
    UnknownKind(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::EmptyDataset => "EMPTY_DATASET",
            ModelError::Diverged { .. } => "DIVERGED",
            ModelError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            ModelError::UnknownKind(_) => "MODEL_KIND_UNKNOWN",
            ModelError::InvalidParam(_) => "INVALID_PARAM",
            ModelError::Format(_) => "MODEL_FORMAT",
            ModelError::Io { .. } => "IO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Dtree,
    Rforest,
    Autoenc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Knn, ModelKind::Dtree, ModelKind::Rforest, ModelKind::Autoenc];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Dtree => "dtree",
            ModelKind::Rforest => "rforest",
            ModelKind::Autoenc => "autoenc",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownKind(s.to_string()))
    }
}

/// Hyperparameters for every model kind; each kind reads its own fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub k: usize,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub autoencoder: AeParams,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            autoencoder: AeParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Knn(KnnModel),
    Dtree(DecisionTreeModel),
    Rforest(RandomForestModel),
    Autoenc(AutoencoderModel),
}

impl Model {
    pub fn train(kind: ModelKind, ds: &LabeledDataset, params: &TrainParams) -> Result<Self, ModelError> {
        Self::train_with(kind, ds, params, Exec::default())
    }

    pub fn train_with(kind: ModelKind, ds: &LabeledDataset, params: &TrainParams, exec: Exec) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Knn => Model::Knn(KnnModel::train(ds, params.k)?),
            ModelKind::Dtree => Model::Dtree(DecisionTreeModel::train(ds, params.tree)?),
            ModelKind::Rforest => Model::Rforest(RandomForestModel::train_with(ds, params.forest, params.seed, exec)?),
            ModelKind::Autoenc => Model::Autoenc(AutoencoderModel::train_with(ds, params.autoencoder, params.seed, exec)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Knn(_) => ModelKind::Knn,
            Model::Dtree(_) => ModelKind::Dtree,
            Model::Rforest(_) => ModelKind::Rforest,
            Model::Autoenc(_) => ModelKind::Autoenc,
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Label {
        match self {
            Model::Knn(m) => m.predict(fv),
            Model::Dtree(m) => m.predict(fv),
            Model::Rforest(m) => m.predict(fv),
            Model::Autoenc(m) => m.predict(fv),
        }
    }

    pub fn predict_batch(&self, rows: &[FeatureVector], exec: Exec) -> Vec<Label> {
        exec.map(rows, |fv| self.predict(fv))
    }

    pub fn normalization(&self) -> &Normalization {
        match self {
            Model::Knn(m) => &m.normalization,
            Model::Dtree(m) => &m.normalization,
            Model::Rforest(m) => &m.normalization,
            Model::Autoenc(m) => &m.normalization,
        }
    }

    pub fn dimension(&self) -> usize {
        self.normalization().dimension()
    }

    fn check(&self) -> Result<(), ModelError> {
        match self {
            Model::Knn(m) => m.check(),
            Model::Dtree(m) => m.check(),
            Model::Rforest(m) => m.check(),
            Model::Autoenc(m) => m.check(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = serde_json::json!({
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "dimension": FEATURE_COUNT,
            "model": self,
        });
        serde_json::to_string(&doc).expect("model serializes")
    }

    /// Parses a model file. `expected_dim` is the signature database
    /// dimension the model must agree with.
    pub fn from_json(text: &str, expected_dim: Option<usize>) -> Result<Self, ModelError> {
        let mut doc: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if doc.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
            return Err(ModelError::Format("not a homewatch model file".into()));
        }
        if doc.get("version").and_then(|v| v.as_u64()) != Some(MODEL_VERSION as u64) {
            return Err(ModelError::Format("unsupported model file version".into()));
        }
        let dim = doc
            .get("dimension")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Format("missing dimension".into()))? as usize;
        let want = expected_dim.unwrap_or(FEATURE_COUNT);
        if dim != want || dim != FEATURE_COUNT {
            return Err(ModelError::DimensionMismatch {
                expected: want,
                got: dim,
            });
        }
        let body = doc
            .get_mut("model")
            .map(serde_json::Value::take)
            .ok_or_else(|| ModelError::Format("missing model body".into()))?;
        let kind = body
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ModelError::Format("missing model kind".into()))?;
        kind.parse::<ModelKind>()?;
        let model: Model = serde_json::from_value(body).map_err(|e| ModelError::Format(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, expected_dim)
    }
}
