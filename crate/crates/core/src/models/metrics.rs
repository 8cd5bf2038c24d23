use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use super::{Model, ModelError};
use crate::par::Exec;
use crate::types::Label;

/// Nearest-rank percentile of an ascending slice; 0 for an empty slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub mean_inference_ms: f64,
    pub p95_inference_ms: f64,
}

impl EvalMetrics {
    /// ANOMALOUS is the positive class. Undefined ratios are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { 0.0 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
            mean_inference_ms: 0.0,
            p95_inference_ms: 0.0,
        }
    }

    pub fn from_predictions(truth: &[Label], pred: &[Label]) -> Self {
        assert_eq!(truth.len(), pred.len());
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (t, p) in truth.iter().zip(pred) {
            match (t.is_anomalous(), p.is_anomalous()) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn with_timings(mut self, ms: &[f64]) -> Self {
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        self.mean_inference_ms = mean(&sorted);
        self.p95_inference_ms = nearest_rank(&sorted, 95.0);
        self
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Predicts every row, timing each call on the thread that made it.
pub fn predict_timed(model: &Model, ds: &LabeledDataset, exec: Exec) -> Vec<(Label, f64)> {
    exec.map(&ds.rows, |(fv, _)| {
        let t = Instant::now();
        let l = model.predict(fv);
        (l, t.elapsed().as_secs_f64() * 1e3)
    })
}

pub fn evaluate(model: &Model, test: &LabeledDataset) -> Result<EvalMetrics, ModelError> {
    evaluate_with(model, test, Exec::default())
}

pub fn evaluate_with(model: &Model, test: &LabeledDataset, exec: Exec) -> Result<EvalMetrics, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let out = predict_timed(model, test, exec);
    let truth: Vec<Label> = test.rows.iter().map(|(_, l)| *l).collect();
    let pred: Vec<Label> = out.iter().map(|(l, _)| *l).collect();
    let ms: Vec<f64> = out.iter().map(|(_, t)| *t).collect();
    Ok(EvalMetrics::from_predictions(&truth, &pred).with_timings(&ms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [Label::Benign, Label::Anomalous, Label::Benign];
        let m = EvalMetrics::from_predictions(&t, &t);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn precision_formula() {
        let m = EvalMetrics::from_counts(9, 1, 50, 3);
        assert!((m.precision - 0.9).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
    }

    #[test]
    fn no_positive_predictions() {
        let m = EvalMetrics::from_counts(0, 0, 10, 2);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!((m.accuracy - 10.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0), 95.0);
        assert_eq!(nearest_rank(&v, 99.0), 99.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&[3.0], 50.0), 3.0);
        assert_eq!(nearest_rank(&[], 50.0), 0.0);
    }

    #[test]
    fn json_uses_fn_key() {
        let m = EvalMetrics::from_counts(1, 2, 3, 4);
        let v = serde_json::to_value(&m).unwrap();
        for k in ["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn", "mean_inference_ms", "p95_inference_ms"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn identities(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
                let l = |b: bool| if b { Label::Anomalous } else { Label::Benign };
                let truth: Vec<Label> = pairs.iter().map(|p| l(p.0)).collect();
                let pred: Vec<Label> = pairs.iter().map(|p| l(p.1)).collect();
                let m = EvalMetrics::from_predictions(&truth, &pred);
                prop_assert_eq!(m.total(), pairs.len());
                let correct = pairs.iter().filter(|p| p.0 == p.1).count();
                prop_assert!((m.accuracy * pairs.len() as f64 - correct as f64).abs() < 1e-9);
                prop_assert_eq!(m.tp + m.tn, correct);
                if m.precision + m.recall > 0.0 {
                    let h = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
                    prop_assert!((m.f1 - h).abs() < 1e-12);
                }
                for v in [m.accuracy, m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
