use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Normalization};
use super::tree::{TreeCore, TreeParams};
use super::ModelError;
use crate::events::{FeatureVector, FEATURE_COUNT};
use crate::par::Exec;
use crate::types::Label;

pub const DEFAULT_TREES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features drawn at each node; `FEATURE_COUNT` disables subsampling.
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            features_per_split: (FEATURE_COUNT as f64).sqrt().round() as usize,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub params: ForestParams,
    pub seed: u64,
    /// Per-tree stream seeds, derived from `seed`.
    pub tree_seeds: Vec<u64>,
    pub normalization: Normalization,
    pub trees: Vec<TreeCore>,
}

impl RandomForestModel {
    pub fn train(ds: &LabeledDataset, params: ForestParams, seed: u64) -> Result<Self, ModelError> {
        Self::train_with(ds, params, seed, Exec::default())
    }

    /// Each tree draws from its own seeded stream, so the result does not
    /// depend on `exec`.
    pub fn train_with(ds: &LabeledDataset, params: ForestParams, seed: u64, exec: Exec) -> Result<Self, ModelError> {
        if params.n_trees == 0 || params.features_per_split == 0 {
            return Err(ModelError::InvalidParam(
                "n_trees and features_per_split must be at least 1".into(),
            ));
        }
        let (x, y, normalization) = ds.prepared()?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| master.next_u64()).collect();
        let n = x.len();
        let trees = exec.map(&tree_seeds, |&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let fps = (params.features_per_split < FEATURE_COUNT).then_some((params.features_per_split, &mut rng));
            TreeCore::grow(&x, &y, idx, params.tree, fps)
        });
        Ok(Self {
            params,
            seed,
            tree_seeds,
            normalization,
            trees,
        })
    }

    /// Majority vote; a tie goes to ANOMALOUS.
    pub fn predict(&self, fv: &FeatureVector) -> Label {
        let q = self.normalization.apply(&fv.0);
        let anomalous = self.trees.iter().filter(|t| t.predict_row(&q).is_anomalous()).count();
        vote(anomalous, self.trees.len())
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        self.normalization.check()?;
        if self.trees.is_empty() {
            return Err(ModelError::Format("forest without trees".into()));
        }
        self.trees.iter().try_for_each(TreeCore::check)
    }
}

pub(crate) fn vote(anomalous: usize, total: usize) -> Label {
    if 2 * anomalous >= total {
        Label::Anomalous
    } else {
        Label::Benign
    }
}
