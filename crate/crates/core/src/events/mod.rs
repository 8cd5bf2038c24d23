//! Turning packet streams into device events.
//!
//! Packets are split into per-device bursts, each burst is reduced to a
//! fixed 12-feature vector, and feature vectors are matched against learned
//! per-(device, event) signatures. Matched (or unmatched) bursts become
//! [`EventRecord`]s in a per-device chronological log.

mod burst;
mod features;
mod log;
mod signature;

pub use burst::{segment_bursts, Burst, DEFAULT_GAP_THRESHOLD};
pub use features::{featurize, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use log::{DeviceLog, EventLogs, EventRecord, EventType};
pub use signature::{
    build_signatures, build_signatures_from_features, match_signature, EventSignature,
    SignatureConfig, SignatureSet,
};

#[derive(Debug, thiserror::Error)]
pub enum EventError {
    #[error("no labeled bursts to build signatures from")]
    EmptyInput,
    #[error("event at ts={ts} for device {device} precedes last logged ts={last}")]
    OutOfOrder { device: String, ts: f64, last: f64 },
    #[error("log entry {index} of device {device} already has key {existing}")]
    KeyAlreadyAssigned {
        device: String,
        index: usize,
        existing: String,
    },
    #[error("signature database: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EventError {
    pub fn code(&self) -> &'static str {
        match self {
            EventError::EmptyInput => "EMPTY_INPUT",
            EventError::OutOfOrder { .. } => "OUT_OF_ORDER",
            EventError::KeyAlreadyAssigned { .. } => "KEY_IMMUTABLE",
            EventError::Format(_) => "SIGNATURE_FORMAT",
            EventError::Io { .. } => "IO",
        }
    }
}
