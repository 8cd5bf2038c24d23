use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Normalization, Row};
use super::metrics::nearest_rank;
use super::ModelError;
use crate::events::{FeatureVector, FEATURE_COUNT};
use crate::par::Exec;
use crate::types::Label;

const D: usize = FEATURE_COUNT;
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Initial weights are uniform in [-init_scale, init_scale].
    pub init_scale: f64,
    pub percentile: f64,
}

impl Default for AeParams {
    fn default() -> Self {
        Self {
            hidden: 8,
            epochs: 1500,
            learning_rate: 0.5,
            init_scale: 0.5,
            percentile: 99.0,
        }
    }
}

/// D -> h (tanh) -> D (linear) network.
///
/// Parameters are one flat vector laid out as W1 (h x D, row-major), b1 (h),
/// W2 (D x h, row-major), b2 (D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub hidden: usize,
    pub weights: Vec<f64>,
}

impl Autoencoder {
    pub fn param_count(hidden: usize) -> usize {
        2 * hidden * D + hidden + D
    }

    pub fn new(hidden: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), Self::param_count(hidden));
        Self { hidden, weights }
    }

    pub fn random(hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let weights = (0..Self::param_count(hidden))
            .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
            .collect();
        Self { hidden, weights }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let h = self.hidden;
        let (w1, rest) = self.weights.split_at(h * D);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(D * h);
        (w1, b1, w2, b2)
    }

    fn forward(&self, x: &Row, a: &mut [f64]) -> Row {
        let (w1, b1, w2, b2) = self.split();
        let h = self.hidden;
        for j in 0..h {
            let z: f64 = b1[j] + (0..D).map(|i| w1[j * D + i] * x[i]).sum::<f64>();
            a[j] = z.tanh();
        }
        let mut y = [0.0; D];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = b2[i] + (0..h).map(|j| w2[i * h + j] * a[j]).sum::<f64>();
        }
        y
    }

    /// Mean squared reconstruction error of one row.
    pub fn error(&self, x: &Row) -> f64 {
        let mut a = vec![0.0; self.hidden];
        let y = self.forward(x, &mut a);
        y.iter().zip(x).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / D as f64
    }

    /// Sum of per-row errors and of their gradients over `rows`.
    fn chunk_grad(&self, rows: &[Row]) -> (f64, Vec<f64>) {
        let h = self.hidden;
        let (_, _, w2, _) = self.split();
        let mut g = vec![0.0; self.weights.len()];
        let (gw1, rest) = g.split_at_mut(h * D);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(D * h);
        let mut a = vec![0.0; h];
        let mut dz = vec![0.0; h];
        let mut loss = 0.0;
        for x in rows {
            let y = self.forward(x, &mut a);
            let mut dy = [0.0; D];
            for i in 0..D {
                let r = y[i] - x[i];
                loss += r * r / D as f64;
                dy[i] = 2.0 * r / D as f64;
            }
            for i in 0..D {
                gb2[i] += dy[i];
                for j in 0..h {
                    gw2[i * h + j] += dy[i] * a[j];
                }
            }
            for j in 0..h {
                let da: f64 = (0..D).map(|i| w2[i * h + j] * dy[i]).sum();
                dz[j] = da * (1.0 - a[j] * a[j]);
                gb1[j] += dz[j];
                for i in 0..D {
                    gw1[j * D + i] += dz[j] * x[i];
                }
            }
        }
        (loss, g)
    }

    /// Mean reconstruction loss over `rows` and its gradient with respect to
    /// [`Autoencoder::weights`]. Chunks are summed in order, so the result is
    /// identical for every `exec`.
    pub fn loss_and_gradient(&self, rows: &[Row], exec: Exec) -> (f64, Vec<f64>) {
        let parts = exec.map_chunks(rows, CHUNK, |c| self.chunk_grad(c));
        let n = rows.len().max(1) as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.weights.len()];
        for (l, g) in parts {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        grad.iter_mut().for_each(|v| *v /= n);
        (loss / n, grad)
    }

    pub fn loss(&self, rows: &[Row]) -> f64 {
        rows.iter().map(|r| self.error(r)).sum::<f64>() / rows.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub params: AeParams,
    pub seed: u64,
    pub normalization: Normalization,
    pub net: Autoencoder,
    pub threshold: f64,
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

impl AutoencoderModel {
    /// Fits the scaling on every row of `ds` and trains the network on the
    /// BENIGN rows only.
    pub fn train(ds: &LabeledDataset, params: AeParams, seed: u64) -> Result<Self, ModelError> {
        Self::train_with(ds, params, seed, Exec::default())
    }

    pub fn train_with(ds: &LabeledDataset, params: AeParams, seed: u64, exec: Exec) -> Result<Self, ModelError> {
        if params.hidden == 0 || params.learning_rate.is_nan() || params.learning_rate <= 0.0 || !(0.0..=100.0).contains(&params.percentile) {
            return Err(ModelError::InvalidParam(
                "hidden > 0, learning_rate > 0 and percentile in [0, 100] required".into(),
            ));
        }
        let (x, y, normalization) = ds.prepared()?;
        let rows: Vec<Row> = x.into_iter().zip(y).filter(|(_, l)| !l.is_anomalous()).map(|(r, _)| r).collect();
        if rows.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Autoencoder::random(params.hidden, params.init_scale, &mut rng);
        let mut loss_history = Vec::with_capacity(params.epochs + 1);
        for epoch in 0..=params.epochs {
            let (loss, grad) = net.loss_and_gradient(&rows, exec);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            loss_history.push(loss);
            if epoch == params.epochs {
                break;
            }
            for (w, g) in net.weights.iter_mut().zip(&grad) {
                *w -= params.learning_rate * g;
            }
        }
        let mut errs: Vec<f64> = exec.map(&rows, |r| net.error(r));
        errs.sort_by(f64::total_cmp);
        let threshold = nearest_rank(&errs, params.percentile);
        Ok(Self {
            params,
            seed,
            normalization,
            net,
            threshold,
            loss_history,
        })
    }

    pub fn score(&self, fv: &FeatureVector) -> f64 {
        self.net.error(&self.normalization.apply(&fv.0))
    }

    /// Error strictly above the threshold is ANOMALOUS.
    pub fn predict(&self, fv: &FeatureVector) -> Label {
        if self.score(fv) > self.threshold {
            Label::Anomalous
        } else {
            Label::Benign
        }
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        self.normalization.check()?;
        if self.net.weights.len() != Autoencoder::param_count(self.net.hidden)
            || self.net.weights.iter().any(|w| !w.is_finite())
            || self.threshold.is_nan() || self.threshold < 0.0
        {
            return Err(ModelError::Format("inconsistent autoencoder".into()));
        }
        Ok(())
    }
}
