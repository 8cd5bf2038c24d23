//! Controller-side anomaly detection for smart-home IoT traffic.
//!
//! The pipeline reads packet traces, cuts them into per-device bursts,
//! fingerprints bursts against learned event signatures, screens them with a
//! lightweight classifier, arranges accepted events into interaction trees,
//! validates every interaction against automation rules and rolls affected
//! devices back when an interaction turns out to be illegitimate.
//!
//! [`sim`] provides a deterministic smart-home simulator that produces
//! labeled traces for all of the above.

pub mod events;
pub mod interaction;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod rollback;
pub mod sim;
pub mod trace;
pub mod types;

pub use types::{DeviceId, DeviceState, EventKey, Label, NodeRef, Validation};
