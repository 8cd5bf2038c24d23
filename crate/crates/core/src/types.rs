//! Identifiers and values shared by every stage of the controller pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Stable identifier of a registered device ("L1", "T1", ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for DeviceId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl From<&str> for DeviceId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Binary packet-level verdict. `Anomalous` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Benign,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }
}

/// Interaction-tree key "X.Y": X is the root reading's sequence number,
/// Y the event's position inside that tree. Both start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub x: u64,
    pub y: u64,
}

impl EventKey {
    pub fn new(x: u64, y: u64) -> Self {
        Self { x, y }
    }

    pub fn is_root(&self) -> bool {
        self.y == 1
    }
}

impl fmt::Display for EventKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid event key {0:?}, expected \"X.Y\" with X, Y >= 1")]
pub struct KeyParseError(pub String);

impl FromStr for EventKey {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || KeyParseError(s.to_string());
        let (x, y) = s.split_once('.').ok_or_else(err)?;
        let x: u64 = x.parse().map_err(|_| err())?;
        let y: u64 = y.parse().map_err(|_| err())?;
        if x == 0 || y == 0 {
            return Err(err());
        }
        Ok(Self { x, y })
    }
}

impl Serialize for EventKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Keys are only unique per root device, so anything that crosses trees
/// (device logs, exclusion sets) uses the pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub root: DeviceId,
    pub key: EventKey,
}

impl NodeRef {
    pub fn new(root: DeviceId, key: EventKey) -> Self {
        Self { root, key }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.root, self.key)
    }
}

/// Interaction verdict attached to a tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Validation {
    Pending,
    Valid,
    Anomalous,
}

impl Validation {
    pub fn as_str(self) -> &'static str {
        match self {
            Validation::Pending => "PENDING",
            Validation::Valid => "VALID",
            Validation::Anomalous => "ANOMALOUS",
        }
    }
}

/// Typed device state: on/off switch, numeric reading, or an enum mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceState {
    Bool(bool),
    Number(f64),
    Mode(String),
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceState::Bool(true) => f.write_str("on"),
            DeviceState::Bool(false) => f.write_str("off"),
            DeviceState::Number(v) => write!(f, "{v}"),
            DeviceState::Mode(m) => f.write_str(m),
        }
    }
}
