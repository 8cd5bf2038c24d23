use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Burst;
use crate::trace::TcpFlags;

pub const FEATURE_COUNT: usize = 12;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "src_port_mode",
    "dst_port_mode",
    "packet_count",
    "total_bytes",
    "mean_length",
    "length_variance",
    "duration_seconds",
    "syn_count",
    "ack_count",
    "fin_count",
    "rst_count",
    "fraction_outbound",
];

/// Fixed-order burst summary; see [`FEATURE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub const SRC_PORT_MODE: usize = 0;
    pub const DST_PORT_MODE: usize = 1;
    pub const PACKET_COUNT: usize = 2;
    pub const TOTAL_BYTES: usize = 3;
    pub const MEAN_LENGTH: usize = 4;
    pub const LENGTH_VARIANCE: usize = 5;
    pub const DURATION: usize = 6;
    pub const SYN_COUNT: usize = 7;
    pub const ACK_COUNT: usize = 8;
    pub const FIN_COUNT: usize = 9;
    pub const RST_COUNT: usize = 10;
    pub const FRACTION_OUTBOUND: usize = 11;

    /// Count-valued features get an absolute tolerance floor.
    pub const COUNT_FEATURES: [usize; 5] = [
        Self::PACKET_COUNT,
        Self::SYN_COUNT,
        Self::ACK_COUNT,
        Self::FIN_COUNT,
        Self::RST_COUNT,
    ];

    pub fn zeros() -> Self {
        Self([0.0; FEATURE_COUNT])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn is_count_feature(i: usize) -> bool {
        Self::COUNT_FEATURES.contains(&i)
    }
}

impl From<[f64; FEATURE_COUNT]> for FeatureVector {
    fn from(v: [f64; FEATURE_COUNT]) -> Self {
        Self(v)
    }
}

/// Most frequent value; ties go to the smaller port.
fn port_mode(ports: impl Iterator<Item = u16>) -> u16 {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for p in ports {
        *counts.entry(p).or_default() += 1;
    }
    // BTreeMap iterates ascending, and max_by_key keeps the last maximum, so
    // iterate in reverse to keep the smallest port on ties.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .map(|(p, _)| p)
        .unwrap_or(0)
}

pub fn featurize(burst: &Burst) -> FeatureVector {
    let recs = &burst.records;
    assert!(!recs.is_empty(), "featurize needs a nonempty burst");
    let n = recs.len() as f64;
    let total: f64 = recs.iter().map(|r| r.length as f64).sum();
    let mean = total / n;
    let variance = recs
        .iter()
        .map(|r| {
            let d = r.length as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let count_flag = |f: TcpFlags| recs.iter().filter(|r| r.tcp_flags.contains(f)).count() as f64;
    let outbound = recs.iter().filter(|r| r.direction.is_outbound()).count() as f64;

    let mut v = [0.0; FEATURE_COUNT];
    v[FeatureVector::SRC_PORT_MODE] = port_mode(recs.iter().map(|r| r.src_port)) as f64;
    v[FeatureVector::DST_PORT_MODE] = port_mode(recs.iter().map(|r| r.dst_port)) as f64;
    v[FeatureVector::PACKET_COUNT] = n;
    v[FeatureVector::TOTAL_BYTES] = total;
    v[FeatureVector::MEAN_LENGTH] = mean;
    v[FeatureVector::LENGTH_VARIANCE] = variance;
    v[FeatureVector::DURATION] = burst.end_ts - burst.start_ts;
    v[FeatureVector::SYN_COUNT] = count_flag(TcpFlags::SYN);
    v[FeatureVector::ACK_COUNT] = count_flag(TcpFlags::ACK);
    v[FeatureVector::FIN_COUNT] = count_flag(TcpFlags::FIN);
    v[FeatureVector::RST_COUNT] = count_flag(TcpFlags::RST);
    v[FeatureVector::FRACTION_OUTBOUND] = outbound / n;
    FeatureVector(v)
}
