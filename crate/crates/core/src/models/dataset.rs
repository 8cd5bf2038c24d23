use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::events::{FeatureVector, FEATURE_COUNT};
use crate::types::Label;

pub type Row = [f64; FEATURE_COUNT];

/// Per-feature min-max scaling fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a Row>) -> Result<Self, ModelError> {
        let mut min = vec![f64::INFINITY; FEATURE_COUNT];
        let mut max = vec![f64::NEG_INFINITY; FEATURE_COUNT];
        let mut n = 0usize;
        for r in rows {
            n += 1;
            for i in 0..FEATURE_COUNT {
                min[i] = min[i].min(r[i]);
                max[i] = max[i].max(r[i]);
            }
        }
        if n == 0 {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Self { min, max })
    }

    pub fn dimension(&self) -> usize {
        self.min.len()
    }

    /// Values outside the fitted range are not clipped; constant features map to 0.5.
    pub fn apply(&self, x: &Row) -> Row {
        let mut out = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            let span = self.max[i] - self.min[i];
            out[i] = if span > 0.0 { (x[i] - self.min[i]) / span } else { 0.5 };
        }
        out
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        if self.min.len() != FEATURE_COUNT || self.max.len() != FEATURE_COUNT {
            return Err(ModelError::DimensionMismatch {
                expected: FEATURE_COUNT,
                got: self.min.len().max(self.max.len()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub rows: Vec<(FeatureVector, Label)>,
    /// Set once the rows have been scaled.
    pub normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<(FeatureVector, Label)>) -> Self {
        Self {
            rows,
            normalization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// (benign, anomalous)
    pub fn class_counts(&self) -> (usize, usize) {
        let a = self.rows.iter().filter(|(_, l)| l.is_anomalous()).count();
        (self.rows.len() - a, a)
    }

    /// Scales every row into the training range. An already normalized
    /// dataset comes back unchanged with its original parameters.
    pub fn normalize(&self) -> Result<(LabeledDataset, Normalization), ModelError> {
        if let Some(n) = &self.normalization {
            return Ok((self.clone(), n.clone()));
        }
        let norm = Normalization::fit(self.rows.iter().map(|(f, _)| &f.0))?;
        let rows = self
            .rows
            .iter()
            .map(|(f, l)| (FeatureVector(norm.apply(&f.0)), *l))
            .collect();
        Ok((
            LabeledDataset {
                rows,
                normalization: Some(norm.clone()),
            },
            norm,
        ))
    }

    /// Scaled rows and labels, plus the parameters a model applies to raw queries.
    pub(crate) fn prepared(&self) -> Result<(Vec<Row>, Vec<Label>, Normalization), ModelError> {
        let (ds, norm) = self.normalize()?;
        let (x, y) = ds.rows.into_iter().map(|(f, l)| (f.0, l)).unzip();
        Ok((x, y, norm))
    }

    /// Stratified shuffle split; `train_fraction` of each class goes to the
    /// first returned set.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [Label::Benign, Label::Anomalous] {
            let mut idx: Vec<usize> = (0..self.rows.len()).filter(|&i| self.rows[i].1 == class).collect();
            idx.shuffle(&mut rng);
            let cut = (idx.len() as f64 * train_fraction).round() as usize;
            train.extend(idx[..cut].iter().copied());
            test.extend(idx[cut..].iter().copied());
        }
        train.sort_unstable();
        test.sort_unstable();
        let pick = |ix: &[usize]| LabeledDataset {
            rows: ix.iter().map(|&i| self.rows[i]).collect(),
            normalization: self.normalization.clone(),
        };
        (pick(&train), pick(&test))
    }
}
