//! Classic (microsecond) pcap reader and a small writer used for fixtures.

use std::net::Ipv4Addr;
use std::path::Path;

use super::{IngestStats, PacketRecord, Proto, TcpFlags, Trace, TraceError, TraceMeta};

const MAGIC_USEC: u32 = 0xA1B2_C3D4;
const MAGIC_USEC_SWAPPED: u32 = 0xD4C3_B2A1;
const MAGIC_NSEC: u32 = 0xA1B2_3C4D;
const MAGIC_NSEC_SWAPPED: u32 = 0x4D3C_B2A1;
const LINKTYPE_ETHERNET: u32 = 1;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86DD;
const ETHERTYPE_VLAN: u16 = 0x8100;

const IPPROTO_ICMP: u8 = 1;
const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endianness,
}

impl Reader<'_> {
    fn u16(&self, at: usize) -> u16 {
        let b = [self.buf[at], self.buf[at + 1]];
        match self.endian {
            Endianness::Little => u16::from_le_bytes(b),
            Endianness::Big => u16::from_be_bytes(b),
        }
    }

    fn u32(&self, at: usize) -> u32 {
        let b = [self.buf[at], self.buf[at + 1], self.buf[at + 2], self.buf[at + 3]];
        match self.endian {
            Endianness::Little => u32::from_le_bytes(b),
            Endianness::Big => u32::from_be_bytes(b),
        }
    }
}

pub fn read_pcap(path: impl AsRef<Path>, meta: &TraceMeta) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| TraceError::io(path, e))?;
    parse_pcap(&bytes, meta)
}

pub fn parse_pcap(bytes: &[u8], meta: &TraceMeta) -> Result<Trace, TraceError> {
    if bytes.len() < 4 {
        return Err(TraceError::MalformedHeader {
            offset: 0,
            reason: format!("file is {} bytes, no room for a magic number", bytes.len()),
        });
    }
    let magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let endian = match magic {
        MAGIC_USEC => Endianness::Little,
        MAGIC_USEC_SWAPPED => Endianness::Big,
        MAGIC_NSEC | MAGIC_NSEC_SWAPPED => {
            return Err(TraceError::UnsupportedLinktype(
                "nanosecond-resolution pcap (magic 0xA1B23C4D)".into(),
            ))
        }
        other => {
            return Err(TraceError::MalformedHeader {
                offset: 0,
                reason: format!("unknown magic 0x{other:08X}"),
            })
        }
    };
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(TraceError::MalformedHeader {
            offset: 0,
            reason: format!("global header truncated at {} of {GLOBAL_HEADER_LEN} bytes", bytes.len()),
        });
    }
    let rd = Reader { buf: bytes, endian };
    let major = rd.u16(4);
    if major != 2 {
        return Err(TraceError::MalformedHeader {
            offset: 4,
            reason: format!("unsupported pcap major version {major}"),
        });
    }
    let linktype = rd.u32(20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(TraceError::UnsupportedLinktype(format!("link type {linktype}")));
    }

    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    let mut off = GLOBAL_HEADER_LEN;
    while off < bytes.len() {
        if bytes.len() - off < RECORD_HEADER_LEN {
            return Err(TraceError::MalformedHeader {
                offset: off,
                reason: "packet header truncated".into(),
            });
        }
        let ts_sec = rd.u32(off);
        let ts_usec = rd.u32(off + 4);
        let incl_len = rd.u32(off + 8) as usize;
        let orig_len = rd.u32(off + 12);
        let data_start = off + RECORD_HEADER_LEN;
        if bytes.len() - data_start < incl_len {
            return Err(TraceError::MalformedHeader {
                offset: off,
                reason: format!(
                    "packet claims {incl_len} captured bytes, {} remain",
                    bytes.len() - data_start
                ),
            });
        }
        let frame = &bytes[data_start..data_start + incl_len];
        off = data_start + incl_len;

        let ts = ts_sec as f64 + ts_usec as f64 / 1e6;
        match decode_frame(frame) {
            Frame::Ipv4(h) => {
                let Some(direction) = meta.classify(h.src, h.dst) else {
                    stats.unmapped += 1;
                    continue;
                };
                records.push(PacketRecord {
                    ts,
                    src_addr: h.src,
                    dst_addr: h.dst,
                    src_port: h.sport,
                    dst_port: h.dport,
                    proto: h.proto,
                    length: orig_len.max(1),
                    tcp_flags: h.flags,
                    direction,
                });
            }
            Frame::Ipv6 => stats.ipv6 += 1,
            Frame::NonIp => stats.non_ip += 1,
            Frame::Truncated => stats.truncated += 1,
        }
    }
    Ok(Trace::finish(records, meta, stats))
}

struct Ipv4Summary {
    src: Ipv4Addr,
    dst: Ipv4Addr,
    proto: Proto,
    sport: u16,
    dport: u16,
    flags: TcpFlags,
}

enum Frame {
    Ipv4(Ipv4Summary),
    Ipv6,
    NonIp,
    Truncated,
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn decode_frame(frame: &[u8]) -> Frame {
    if frame.len() < 14 {
        return Frame::Truncated;
    }
    let mut ethertype = be16(frame, 12);
    let mut l3 = 14;
    if ethertype == ETHERTYPE_VLAN {
        if frame.len() < 18 {
            return Frame::Truncated;
        }
        ethertype = be16(frame, 16);
        l3 = 18;
    }
    match ethertype {
        ETHERTYPE_IPV4 => {}
        ETHERTYPE_IPV6 => return Frame::Ipv6,
        _ => return Frame::NonIp,
    }
    let ip = &frame[l3..];
    if ip.len() < 20 {
        return Frame::Truncated;
    }
    if ip[0] >> 4 != 4 {
        return Frame::NonIp;
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Frame::Truncated;
    }
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let l4 = &ip[ihl..];
    let (proto, sport, dport, flags) = match ip[9] {
        IPPROTO_TCP => {
            if l4.len() < 14 {
                return Frame::Truncated;
            }
            (Proto::Tcp, be16(l4, 0), be16(l4, 2), TcpFlags::from_header_byte(l4[13]))
        }
        IPPROTO_UDP => {
            if l4.len() < 4 {
                return Frame::Truncated;
            }
            (Proto::Udp, be16(l4, 0), be16(l4, 2), TcpFlags::empty())
        }
        _ => (Proto::Other, 0, 0, TcpFlags::empty()),
    };
    Frame::Ipv4(Ipv4Summary {
        src,
        dst,
        proto,
        sport,
        dport,
        flags,
    })
}

fn mac_for(ip: Ipv4Addr) -> [u8; 6] {
    let o = ip.octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Builds an Ethernet/IPv4 frame for `r`. The frame is padded to
/// `r.length` bytes when that is larger than the headers.
fn encode_frame(r: &PacketRecord) -> Vec<u8> {
    let l4_len = match r.proto {
        Proto::Tcp => 20,
        Proto::Udp => 8,
        Proto::Other => 8,
    };
    let min_len = 14 + 20 + l4_len;
    let frame_len = (r.length as usize).max(min_len);
    let mut f = Vec::with_capacity(frame_len);
    f.extend_from_slice(&mac_for(r.dst_addr));
    f.extend_from_slice(&mac_for(r.src_addr));
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_total = (frame_len - 14).min(u16::MAX as usize) as u16;
    let proto = match r.proto {
        Proto::Tcp => IPPROTO_TCP,
        Proto::Udp => IPPROTO_UDP,
        Proto::Other => IPPROTO_ICMP,
    };
    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&ip_total.to_be_bytes());
    ip[6] = 0x40; // don't fragment
    ip[8] = 64;
    ip[9] = proto;
    ip[12..16].copy_from_slice(&r.src_addr.octets());
    ip[16..20].copy_from_slice(&r.dst_addr.octets());
    let csum = ipv4_checksum(&ip);
    ip[10..12].copy_from_slice(&csum.to_be_bytes());
    f.extend_from_slice(&ip);

    match r.proto {
        Proto::Tcp => {
            let mut tcp = [0u8; 20];
            tcp[0..2].copy_from_slice(&r.src_port.to_be_bytes());
            tcp[2..4].copy_from_slice(&r.dst_port.to_be_bytes());
            tcp[12] = 5 << 4;
            tcp[13] = r.tcp_flags.bits();
            tcp[14..16].copy_from_slice(&0xffffu16.to_be_bytes());
            f.extend_from_slice(&tcp);
        }
        Proto::Udp => {
            let mut udp = [0u8; 8];
            udp[0..2].copy_from_slice(&r.src_port.to_be_bytes());
            udp[2..4].copy_from_slice(&r.dst_port.to_be_bytes());
            let ulen = (frame_len - 34).min(u16::MAX as usize) as u16;
            udp[4..6].copy_from_slice(&ulen.to_be_bytes());
            f.extend_from_slice(&udp);
        }
        Proto::Other => f.extend_from_slice(&[8, 0, 0, 0, 0, 0, 0, 0]),
    }
    f.resize(frame_len, 0);
    f
}

/// Serializes records as a classic microsecond pcap with Ethernet framing.
/// Timestamps are rounded to the nearest microsecond.
pub fn encode_pcap(records: &[PacketRecord], endian: Endianness) -> Vec<u8> {
    let w32 = |v: u32| match endian {
        Endianness::Little => v.to_le_bytes(),
        Endianness::Big => v.to_be_bytes(),
    };
    let w16 = |v: u16| match endian {
        Endianness::Little => v.to_le_bytes(),
        Endianness::Big => v.to_be_bytes(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(&w32(MAGIC_USEC));
    out.extend_from_slice(&w16(2));
    out.extend_from_slice(&w16(4));
    out.extend_from_slice(&w32(0)); // thiszone
    out.extend_from_slice(&w32(0)); // sigfigs
    out.extend_from_slice(&w32(65535));
    out.extend_from_slice(&w32(LINKTYPE_ETHERNET));
    for r in records {
        let micros = (r.ts * 1e6).round() as u64;
        let frame = encode_frame(r);
        out.extend_from_slice(&w32((micros / 1_000_000) as u32));
        out.extend_from_slice(&w32((micros % 1_000_000) as u32));
        out.extend_from_slice(&w32(frame.len() as u32));
        out.extend_from_slice(&w32(r.length));
        out.extend_from_slice(&frame);
    }
    out
}

pub fn write_pcap(
    path: impl AsRef<Path>,
    records: &[PacketRecord],
    endian: Endianness,
) -> Result<(), TraceError> {
    let path = path.as_ref();
    std::fs::write(path, encode_pcap(records, endian)).map_err(|e| TraceError::io(path, e))
}
