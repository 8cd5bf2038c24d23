//! Packet trace ingestion.
//!
//! Both readers produce the same normalized [`PacketRecord`] stream: header
//! summary, timestamp and a direction relative to the controller. Records
//! that touch no known device are dropped and counted in [`IngestStats`].

mod jsonl;
mod pcap;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::types::DeviceId;

pub use jsonl::{read_jsonl, read_jsonl_str, record_to_json_line, write_jsonl, write_jsonl_string};
pub use pcap::{encode_pcap, parse_pcap, read_pcap, write_pcap, Endianness};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("malformed pcap header at byte offset {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("unsupported capture format: {0}")]
    UnsupportedLinktype(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: missing field `{key}`")]
    MissingField { line: usize, key: String },
    #[error("invalid trace metadata: {0}")]
    InvalidMeta(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TraceError {
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::MalformedHeader { .. } => "MALFORMED_HEADER",
            TraceError::UnsupportedLinktype(_) => "UNSUPPORTED_LINKTYPE",
            TraceError::Parse { .. } => "PARSE_ERROR",
            TraceError::MissingField { .. } => "MISSING_FIELD",
            TraceError::InvalidMeta(_) => "INVALID_META",
            TraceError::Io { .. } => "IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TraceError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Proto {
    Tcp,
    Udp,
    Other,
}

impl Proto {
    pub fn as_str(self) -> &'static str {
        match self {
            Proto::Tcp => "TCP",
            Proto::Udp => "UDP",
            Proto::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TCP" => Some(Proto::Tcp),
            "UDP" => Some(Proto::Udp),
            "OTHER" => Some(Proto::Other),
            _ => None,
        }
    }
}

/// TCP flag set. Bit values match the TCP header flag byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    const LETTERS: [(char, TcpFlags); 6] = [
        ('S', TcpFlags::SYN),
        ('A', TcpFlags::ACK),
        ('F', TcpFlags::FIN),
        ('R', TcpFlags::RST),
        ('P', TcpFlags::PSH),
        ('U', TcpFlags::URG),
    ];

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    /// Keeps only the six flags we model; ECE/CWR bits are dropped.
    pub const fn from_header_byte(b: u8) -> Self {
        TcpFlags(b & 0x3f)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn union(self, other: TcpFlags) -> Self {
        TcpFlags(self.0 | other.0)
    }

    /// Parses the "SAFRPU" letter form; order-insensitive, repeats allowed.
    pub fn parse_letters(s: &str) -> Option<Self> {
        let mut out = TcpFlags::empty();
        for c in s.chars() {
            let (_, f) = Self::LETTERS.iter().find(|(l, _)| *l == c)?;
            out = out.union(*f);
        }
        Some(out)
    }

    /// Canonical letter form in "SAFRPU" order.
    pub fn letters(self) -> String {
        Self::LETTERS
            .iter()
            .filter(|(_, f)| self.contains(*f))
            .map(|(l, _)| *l)
            .collect()
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        self.union(rhs)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.letters())
    }
}

/// Direction of a packet relative to the controller vantage point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    DeviceToController,
    ControllerToDevice,
    DeviceToExternal,
    ExternalToDevice,
}

impl Direction {
    /// Sent by the device (towards the controller or beyond).
    pub fn is_outbound(self) -> bool {
        matches!(self, Direction::DeviceToController | Direction::DeviceToExternal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub ts: f64,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: Proto,
    pub length: u32,
    #[serde(with = "flags_serde")]
    pub tcp_flags: TcpFlags,
    pub direction: Direction,
}

impl PacketRecord {
    /// The device-side address of this packet.
    pub fn device_addr(&self) -> Ipv4Addr {
        if self.direction.is_outbound() {
            self.src_addr
        } else {
            self.dst_addr
        }
    }

    pub(crate) fn check_invariants(&self) -> Result<(), String> {
        if self.length == 0 {
            return Err("length must be >= 1".into());
        }
        if !self.tcp_flags.is_empty() && self.proto != Proto::Tcp {
            return Err(format!("tcp flags {} on {} packet", self.tcp_flags, self.proto.as_str()));
        }
        if !self.ts.is_finite() || self.ts < 0.0 {
            return Err(format!("timestamp {} is not a finite non-negative number", self.ts));
        }
        Ok(())
    }
}

mod flags_serde {
    use super::TcpFlags;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &TcpFlags, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&f.letters())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TcpFlags, D::Error> {
        let s = String::deserialize(d)?;
        TcpFlags::parse_letters(&s).ok_or_else(|| serde::de::Error::custom(format!("bad flags {s:?}")))
    }
}

/// Address plan of the monitored network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub controller_addr: Ipv4Addr,
    pub device_map: BTreeMap<Ipv4Addr, DeviceId>,
    #[serde(default)]
    pub record_count: usize,
    #[serde(default)]
    pub time_span: f64,
}

impl TraceMeta {
    pub fn new(
        controller_addr: Ipv4Addr,
        device_map: BTreeMap<Ipv4Addr, DeviceId>,
    ) -> Result<Self, TraceError> {
        let meta = Self {
            controller_addr,
            device_map,
            record_count: 0,
            time_span: 0.0,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen = BTreeSet::new();
        for id in self.device_map.values() {
            if !seen.insert(id) {
                return Err(TraceError::InvalidMeta(format!("device id {id} mapped twice")));
            }
        }
        if self.device_map.contains_key(&self.controller_addr) {
            return Err(TraceError::InvalidMeta(format!(
                "controller address {} is also mapped to a device",
                self.controller_addr
            )));
        }
        Ok(())
    }

    pub fn device_of(&self, addr: Ipv4Addr) -> Option<&DeviceId> {
        self.device_map.get(&addr)
    }

    /// Classifies a packet's direction, or `None` when no device endpoint is
    /// involved (both ends unknown, or controller talking to an unknown host).
    pub fn classify(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Option<Direction> {
        let ctrl = self.controller_addr;
        let src_dev = self.device_map.contains_key(&src);
        let dst_dev = self.device_map.contains_key(&dst);
        match (src == ctrl, dst == ctrl) {
            (false, true) if src_dev => Some(Direction::DeviceToController),
            (true, false) if dst_dev => Some(Direction::ControllerToDevice),
            (false, false) if src_dev => Some(Direction::DeviceToExternal),
            (false, false) if dst_dev => Some(Direction::ExternalToDevice),
            _ => None,
        }
    }
}

/// Why records were dropped during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub non_ip: usize,
    pub ipv6: usize,
    pub truncated: usize,
    pub unmapped: usize,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<PacketRecord>,
    pub meta: TraceMeta,
    pub stats: IngestStats,
}

impl Trace {
    pub(crate) fn finish(records: Vec<PacketRecord>, meta: &TraceMeta, stats: IngestStats) -> Self {
        let mut meta = meta.clone();
        meta.record_count = records.len();
        meta.time_span = match (records.first(), records.last()) {
            (Some(a), Some(b)) => (b.ts - a.ts).max(0.0),
            _ => 0.0,
        };
        Trace {
            records,
            meta,
            stats,
        }
    }
}

/// Stable sort by timestamp: equal timestamps keep their input order.
pub fn sort_stable_by_time(mut records: Vec<PacketRecord>) -> Vec<PacketRecord> {
    records.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    records
}
