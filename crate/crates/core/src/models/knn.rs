use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Normalization, Row};
use super::ModelError;
use crate::events::FeatureVector;
use crate::types::Label;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub normalization: Normalization,
    rows: Vec<Row>,
    labels: Vec<Label>,
}

fn sq_dist(a: &Row, b: &Row) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    pub fn train(ds: &LabeledDataset, k: usize) -> Result<Self, ModelError> {
        if ds.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if k == 0 || k.is_multiple_of(2) || k > ds.len() {
            return Err(ModelError::InvalidParam(format!(
                "k must be odd and in 1..={}, got {k}",
                ds.len()
            )));
        }
        let (rows, labels, normalization) = ds.prepared()?;
        Ok(Self {
            k,
            normalization,
            rows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Indices of the k nearest training rows, nearest first; equal
    /// distances keep training order.
    pub fn neighbors(&self, fv: &FeatureVector) -> Vec<usize> {
        let q = self.normalization.apply(&fv.0);
        let mut d: Vec<(f64, usize)> = self.rows.iter().enumerate().map(|(i, r)| (sq_dist(r, &q), i)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, fv: &FeatureVector) -> Label {
        let nn = self.neighbors(fv);
        let anomalous = nn.iter().filter(|&&i| self.labels[i].is_anomalous()).count();
        if 2 * anomalous >= nn.len() {
            Label::Anomalous
        } else {
            Label::Benign
        }
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        self.normalization.check()?;
        if self.rows.len() != self.labels.len() || self.k == 0 || self.k.is_multiple_of(2) || self.k > self.rows.len() {
            return Err(ModelError::Format("inconsistent kNN model".into()));
        }
        Ok(())
    }
}
