//! Canonical line-record trace format.
//!
//! One JSON object per line with exactly the keys
//! `ts, src, dst, sport, dport, proto, len, flags`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::net::Ipv4Addr;
use std::path::Path;

use serde_json::Value;

use super::{IngestStats, PacketRecord, Proto, TcpFlags, Trace, TraceError, TraceMeta};

const KEYS: [&str; 8] = ["ts", "src", "dst", "sport", "dport", "proto", "len", "flags"];

pub fn read_jsonl(path: impl AsRef<Path>, meta: &TraceMeta) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| TraceError::io(path, e))?;
    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TraceError::io(path, e))?;
        push_line(&line, idx + 1, meta, &mut records, &mut stats)?;
    }
    Ok(Trace::finish(records, meta, stats))
}

pub fn read_jsonl_str(text: &str, meta: &TraceMeta) -> Result<Trace, TraceError> {
    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    for (idx, line) in text.lines().enumerate() {
        push_line(line, idx + 1, meta, &mut records, &mut stats)?;
    }
    Ok(Trace::finish(records, meta, stats))
}

fn push_line(
    line: &str,
    line_no: usize,
    meta: &TraceMeta,
    out: &mut Vec<PacketRecord>,
    stats: &mut IngestStats,
) -> Result<(), TraceError> {
    if line.trim().is_empty() {
        return Ok(());
    }
    let parse_err = |reason: String| TraceError::Parse {
        line: line_no,
        reason,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(parse_err("record is not a JSON object".into()));
    };
    for key in obj.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(parse_err(format!("unexpected key `{key}`")));
        }
    }
    let get = |key: &str| -> Result<&Value, TraceError> {
        obj.get(key).ok_or_else(|| TraceError::MissingField {
            line: line_no,
            key: key.to_string(),
        })
    };

    let ts = get("ts")?
        .as_f64()
        .ok_or_else(|| parse_err("`ts` must be a number".into()))?;
    let src = addr_field(get("src")?, "src", line_no)?;
    let dst = addr_field(get("dst")?, "dst", line_no)?;
    let sport = port_field(get("sport")?, "sport", line_no)?;
    let dport = port_field(get("dport")?, "dport", line_no)?;
    let proto = get("proto")?
        .as_str()
        .and_then(Proto::parse)
        .ok_or_else(|| parse_err("`proto` must be \"TCP\", \"UDP\" or \"OTHER\"".into()))?;
    let len = get("len")?
        .as_u64()
        .filter(|&l| l >= 1 && l <= u32::MAX as u64)
        .ok_or_else(|| parse_err("`len` must be a positive integer".into()))?;
    let flags = get("flags")?
        .as_str()
        .and_then(TcpFlags::parse_letters)
        .ok_or_else(|| parse_err("`flags` must be a string over \"SAFRPU\"".into()))?;

    let Some(direction) = meta.classify(src, dst) else {
        stats.unmapped += 1;
        return Ok(());
    };
    let rec = PacketRecord {
        ts,
        src_addr: src,
        dst_addr: dst,
        src_port: sport,
        dst_port: dport,
        proto,
        length: len as u32,
        tcp_flags: flags,
        direction,
    };
    rec.check_invariants().map_err(parse_err)?;
    out.push(rec);
    Ok(())
}

fn addr_field(v: &Value, key: &str, line: usize) -> Result<Ipv4Addr, TraceError> {
    v.as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TraceError::Parse {
            line,
            reason: format!("`{key}` must be a dotted-quad IPv4 string"),
        })
}

fn port_field(v: &Value, key: &str, line: usize) -> Result<u16, TraceError> {
    v.as_u64()
        .and_then(|p| u16::try_from(p).ok())
        .ok_or_else(|| TraceError::Parse {
            line,
            reason: format!("`{key}` must be an integer in 0..=65535"),
        })
}

/// Renders one record in canonical form (no trailing newline).
pub fn record_to_json_line(r: &PacketRecord) -> String {
    // serde_json prints f64 in shortest round-trip form, so `ts` survives exactly.
    let ts = serde_json::to_string(&r.ts).expect("finite timestamp");
    let mut s = String::with_capacity(128);
    let _ = write!(
        s,
        "{{\"ts\":{ts},\"src\":\"{}\",\"dst\":\"{}\",\"sport\":{},\"dport\":{},\"proto\":\"{}\",\"len\":{},\"flags\":\"{}\"}}",
        r.src_addr,
        r.dst_addr,
        r.src_port,
        r.dst_port,
        r.proto.as_str(),
        r.length,
        r.tcp_flags.letters()
    );
    s
}

pub fn write_jsonl_string(records: &[PacketRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 128);
    for r in records {
        out.push_str(&record_to_json_line(r));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[PacketRecord]) -> Result<(), TraceError> {
    let path = path.as_ref();
    std::fs::write(path, write_jsonl_string(records)).map_err(|e| TraceError::io(path, e))
}
