use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Normalization, Row};
use super::ModelError;
use crate::events::{FeatureVector, FEATURE_COUNT};
use crate::types::Label;

pub const DEFAULT_MAX_DEPTH: usize = 12;
pub const DEFAULT_MIN_SAMPLES_LEAF: usize = 1;

/// Smallest impurity decrease that counts as progress.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        label: Label,
        /// [benign, anomalous]
        counts: [usize; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            min_samples_leaf: DEFAULT_MIN_SAMPLES_LEAF,
        }
    }
}

/// Gini impurity of a node with `a` anomalous rows out of `n`.
pub fn gini(n: usize, a: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = a as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

fn leaf(y: &[Label], idx: &[usize]) -> Node {
    let a = idx.iter().filter(|&&i| y[i].is_anomalous()).count();
    let b = idx.len() - a;
    Node::Leaf {
        label: if a >= b { Label::Anomalous } else { Label::Benign },
        counts: [b, a],
    }
}

/// Best (feature, threshold, decrease) over `features`, scanned in the given
/// order with thresholds ascending; only strictly better candidates replace
/// the incumbent.
pub(crate) fn best_split(
    x: &[Row],
    y: &[Label],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let n = idx.len();
    let total_a = idx.iter().filter(|&&i| y[i].is_anomalous()).count();
    let parent = gini(n, total_a);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = idx.to_vec();
    for &f in features {
        order.sort_by(|&i, &j| x[i][f].total_cmp(&x[j][f]).then(i.cmp(&j)));
        let mut left_a = 0;
        for p in 1..n {
            if y[order[p - 1]].is_anomalous() {
                left_a += 1;
            }
            let lo = x[order[p - 1]][f];
            let hi = x[order[p]][f];
            if lo == hi || p < min_leaf || n - p < min_leaf {
                continue;
            }
            let weighted = (p as f64 * gini(p, left_a) + (n - p) as f64 * gini(n - p, total_a - left_a)) / n as f64;
            let dec = parent - weighted;
            if dec <= MIN_DECREASE {
                continue;
            }
            if best.is_none_or(|(_, _, d)| dec > d + MIN_DECREASE) {
                let mut thr = lo + (hi - lo) / 2.0;
                if thr >= hi {
                    thr = lo;
                }
                best = Some((f, thr, dec));
            }
        }
    }
    best
}

/// Split/leaf arena shared by the single tree and the forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeCore {
    pub nodes: Vec<Node>,
}

impl TreeCore {
    /// `features_per_split = None` considers every feature at every node.
    pub(crate) fn grow(
        x: &[Row],
        y: &[Label],
        idx: Vec<usize>,
        params: TreeParams,
        features_per_split: Option<(usize, &mut ChaCha8Rng)>,
    ) -> Self {
        let mut core = TreeCore { nodes: Vec::new() };
        let mut fps = features_per_split;
        core.build(x, y, idx, 0, params, &mut fps);
        core
    }

    fn build(
        &mut self,
        x: &[Row],
        y: &[Label],
        idx: Vec<usize>,
        depth: usize,
        params: TreeParams,
        fps: &mut Option<(usize, &mut ChaCha8Rng)>,
    ) -> usize {
        let at = self.nodes.len();
        let node = leaf(y, &idx);
        self.nodes.push(node);
        let Node::Leaf { counts, .. } = self.nodes[at] else {
            unreachable!()
        };
        if depth >= params.max_depth || counts[0] == 0 || counts[1] == 0 || idx.len() < 2 * params.min_samples_leaf.max(1) {
            return at;
        }
        let features: Vec<usize> = match fps {
            Some((m, rng)) if *m < FEATURE_COUNT => {
                let mut f = sample(&mut **rng, FEATURE_COUNT, *m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..FEATURE_COUNT).collect(),
        };
        let Some((feature, threshold, _)) = best_split(x, y, &idx, &features, params.min_samples_leaf.max(1)) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] <= threshold);
        let left = self.build(x, y, l, depth + 1, params, fps);
        let right = self.build(x, y, r, depth + 1, params, fps);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    /// Routes a normalized row; `<=` goes left.
    pub fn predict_row(&self, q: &Row) -> Label {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { label, .. } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if q[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(ModelError::Format("empty tree".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split {
                feature, left, right, ..
            } = node
            {
                if *feature >= FEATURE_COUNT || *left <= i || *right <= i || *left >= n || *right >= n {
                    return Err(ModelError::Format(format!("bad split node {i}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub params: TreeParams,
    pub normalization: Normalization,
    pub tree: TreeCore,
}

impl DecisionTreeModel {
    /// Greedy Gini tree. Training is deterministic, so no seed is taken.
    pub fn train(ds: &LabeledDataset, params: TreeParams) -> Result<Self, ModelError> {
        let (x, y, normalization) = ds.prepared()?;
        let idx = (0..x.len()).collect();
        Ok(Self {
            params,
            normalization,
            tree: TreeCore::grow(&x, &y, idx, params, None),
        })
    }

    pub fn predict(&self, fv: &FeatureVector) -> Label {
        self.tree.predict_row(&self.normalization.apply(&fv.0))
    }

    /// Root (feature, threshold) in normalized coordinates.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.tree.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        self.normalization.check()?;
        self.tree.check()
    }
}
