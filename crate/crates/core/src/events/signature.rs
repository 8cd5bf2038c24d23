use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{featurize, Burst, EventError, FeatureVector, FEATURE_COUNT};
use crate::types::DeviceId;

const DB_MAGIC: &str = "homewatch-signatures";
const DB_VERSION: u32 = 1;

/// Tolerance floor applied to every signature feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignatureConfig {
    /// Fraction of |centroid| used as the minimum tolerance.
    pub floor_fraction: f64,
    /// Minimum absolute tolerance for count features.
    pub count_floor: f64,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        Self {
            floor_fraction: 0.05,
            count_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSignature {
    pub event_type: String,
    pub device_id: DeviceId,
    pub centroid: FeatureVector,
    pub tolerance: FeatureVector,
    pub sample_count: usize,
}

impl EventSignature {
    /// Mean of |fv_i - c_i| / tol_i, or `None` when any feature is outside
    /// its tolerance. Zero-tolerance features must match exactly.
    pub fn normalized_deviation(&self, fv: &FeatureVector) -> Option<f64> {
        let mut acc = 0.0;
        for i in 0..FEATURE_COUNT {
            let d = (fv.0[i] - self.centroid.0[i]).abs();
            let tol = self.tolerance.0[i];
            if d > tol {
                return None;
            }
            if tol > 0.0 {
                acc += d / tol;
            }
        }
        Some(acc / FEATURE_COUNT as f64)
    }
}

pub fn build_signatures(
    labeled: &[(Burst, String)],
    cfg: &SignatureConfig,
) -> Result<Vec<EventSignature>, EventError> {
    let rows: Vec<(DeviceId, String, FeatureVector)> = labeled
        .iter()
        .map(|(b, ev)| (b.device_id.clone(), ev.clone(), featurize(b)))
        .collect();
    build_signatures_from_features(&rows, cfg)
}

/// Groups rows by (device, event type); output is sorted by that key.
pub fn build_signatures_from_features(
    rows: &[(DeviceId, String, FeatureVector)],
    cfg: &SignatureConfig,
) -> Result<Vec<EventSignature>, EventError> {
    if rows.is_empty() {
        return Err(EventError::EmptyInput);
    }
    let mut groups: BTreeMap<(&DeviceId, &str), Vec<&FeatureVector>> = BTreeMap::new();
    for (dev, ev, fv) in rows {
        groups.entry((dev, ev.as_str())).or_default().push(fv);
    }
    let sigs = groups
        .into_iter()
        .map(|((dev, ev), fvs)| {
            let n = fvs.len() as f64;
            let mut centroid = [0.0; FEATURE_COUNT];
            let mut lo = [f64::INFINITY; FEATURE_COUNT];
            let mut hi = [f64::NEG_INFINITY; FEATURE_COUNT];
            for fv in &fvs {
                for i in 0..FEATURE_COUNT {
                    centroid[i] += fv.0[i];
                    lo[i] = lo[i].min(fv.0[i]);
                    hi[i] = hi[i].max(fv.0[i]);
                }
            }
            let mut tolerance = [0.0; FEATURE_COUNT];
            for i in 0..FEATURE_COUNT {
                centroid[i] /= n;
                // mean can sit off-centre of [lo, hi]; cover the farther end
                let spread = (hi[i] - centroid[i]).max(centroid[i] - lo[i]).max(0.0);
                let mut floor = cfg.floor_fraction * centroid[i].abs();
                if FeatureVector::is_count_feature(i) {
                    floor = floor.max(cfg.count_floor);
                }
                tolerance[i] = spread.max(floor);
            }
            EventSignature {
                event_type: ev.to_string(),
                device_id: dev.clone(),
                centroid: FeatureVector(centroid),
                tolerance: FeatureVector(tolerance),
                sample_count: fvs.len(),
            }
        })
        .collect();
    Ok(sigs)
}

/// Best-matching signature of `device`: smallest normalized deviation,
/// ties to the lexicographically smallest event type.
pub fn match_signature<'a>(
    fv: &FeatureVector,
    signatures: impl IntoIterator<Item = &'a EventSignature>,
    device: &DeviceId,
) -> Option<&'a EventSignature> {
    let mut best: Option<(f64, &EventSignature)> = None;
    for sig in signatures {
        if &sig.device_id != device {
            continue;
        }
        let Some(dev) = sig.normalized_deviation(fv) else {
            continue;
        };
        best = match best {
            Some((bd, bs)) if bd < dev || (bd == dev && bs.event_type <= sig.event_type) => Some((bd, bs)),
            _ => Some((dev, sig)),
        };
    }
    best.map(|(_, s)| s)
}

/// Immutable signature database indexed by device.
#[derive(Debug, Clone, Default)]
pub struct SignatureSet {
    signatures: Vec<EventSignature>,
    by_device: HashMap<DeviceId, Vec<usize>>,
}

impl SignatureSet {
    pub fn new(signatures: Vec<EventSignature>) -> Self {
        let mut by_device: HashMap<DeviceId, Vec<usize>> = HashMap::new();
        for (i, s) in signatures.iter().enumerate() {
            by_device.entry(s.device_id.clone()).or_default().push(i);
        }
        Self {
            signatures,
            by_device,
        }
    }

    pub fn signatures(&self) -> &[EventSignature] {
        &self.signatures
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    pub fn dimension(&self) -> usize {
        FEATURE_COUNT
    }

    pub fn match_features(&self, fv: &FeatureVector, device: &DeviceId) -> Option<&EventSignature> {
        let idx = self.by_device.get(device)?;
        match_signature(fv, idx.iter().map(|&i| &self.signatures[i]), device)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DB_MAGIC} v{DB_VERSION} dim={FEATURE_COUNT}\n");
        for s in &self.signatures {
            out.push_str(&serde_json::to_string(s).expect("signature serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EventError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| EventError::Format("missing header line".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(DB_MAGIC) {
            return Err(EventError::Format(format!("bad header {header:?}")));
        }
        let version = parts.next().and_then(|v| v.strip_prefix('v')).and_then(|v| v.parse::<u32>().ok());
        if version != Some(DB_VERSION) {
            return Err(EventError::Format(format!("unsupported version in {header:?}")));
        }
        let dim = parts
            .next()
            .and_then(|d| d.strip_prefix("dim="))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| EventError::Format(format!("missing dim in {header:?}")))?;
        if dim != FEATURE_COUNT {
            return Err(EventError::Format(format!(
                "dimension {dim} does not match feature vector dimension {FEATURE_COUNT}"
            )));
        }
        let mut sigs = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sig: EventSignature = serde_json::from_str(line)
                .map_err(|e| EventError::Format(format!("line {}: {e}", i + 2)))?;
            if sig.tolerance.0.iter().any(|t| t.is_nan() || *t < 0.0) || sig.sample_count == 0 {
                return Err(EventError::Format(format!("line {}: invalid signature", i + 2)));
            }
            sigs.push(sig);
        }
        Ok(Self::new(sigs))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EventError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| EventError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EventError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EventError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}
