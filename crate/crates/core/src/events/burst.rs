use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::trace::{PacketRecord, TraceMeta};
use crate::types::DeviceId;

/// Bursts are split when a device is silent for at least this long.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1.0;

/// Contiguous packets of one device: the wire footprint of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub device_id: DeviceId,
    pub records: Vec<PacketRecord>,
    pub start_ts: f64,
    pub end_ts: f64,
}

impl Burst {
    fn open(device_id: DeviceId, first: PacketRecord) -> Self {
        Self {
            device_id,
            start_ts: first.ts,
            end_ts: first.ts,
            records: vec![first],
        }
    }

    /// True when the device opened the exchange (a report or reading rather
    /// than a command pushed by the controller).
    pub fn device_initiated(&self) -> bool {
        self.records[0].direction.is_outbound()
    }

    pub fn duration(&self) -> f64 {
        self.end_ts - self.start_ts
    }
}

/// Greedy per-device gap segmentation over a time-ordered stream.
///
/// Output is ordered by burst start (ties by first record position). Records
/// whose device endpoint is not in `meta` are ignored.
pub fn segment_bursts(records: &[PacketRecord], meta: &TraceMeta, gap_threshold: f64) -> Vec<Burst> {
    assert!(gap_threshold > 0.0, "gap_threshold must be positive");
    let mut bursts: Vec<Burst> = Vec::new();
    let mut open: HashMap<&DeviceId, usize> = HashMap::new();
    for r in records {
        let Some(dev) = meta.device_of(r.device_addr()) else {
            continue;
        };
        match open.get(dev) {
            Some(&idx) if r.ts - bursts[idx].end_ts < gap_threshold => {
                let b = &mut bursts[idx];
                b.end_ts = r.ts;
                b.records.push(r.clone());
            }
            _ => {
                open.insert(dev, bursts.len());
                bursts.push(Burst::open(dev.clone(), r.clone()));
            }
        }
    }
    bursts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Direction, Proto, TcpFlags};
    use std::collections::BTreeMap;
    use std::net::Ipv4Addr;

    const CTL: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

    fn meta() -> TraceMeta {
        let mut m = BTreeMap::new();
        m.insert(Ipv4Addr::new(10, 0, 0, 2), DeviceId::from("A"));
        m.insert(Ipv4Addr::new(10, 0, 0, 3), DeviceId::from("B"));
        TraceMeta::new(CTL, m).unwrap()
    }

    fn rec(ts: f64, dev: u8) -> PacketRecord {
        PacketRecord {
            ts,
            src_addr: Ipv4Addr::new(10, 0, 0, dev),
            dst_addr: CTL,
            src_port: 50000,
            dst_port: 8883,
            proto: Proto::Tcp,
            length: 66,
            tcp_flags: TcpFlags::ACK,
            direction: Direction::DeviceToController,
        }
    }

    /// O(n^2) oracle: no within-burst consecutive gap reaches the threshold,
    /// and every pair of consecutive bursts of one device is separated by at
    /// least the threshold.
    fn check_partition(records: &[PacketRecord], bursts: &[Burst], thr: f64) {
        let total: usize = bursts.iter().map(|b| b.records.len()).sum();
        assert_eq!(total, records.len());
        for b in bursts {
            for w in b.records.windows(2) {
                assert!(w[1].ts - w[0].ts < thr);
            }
            assert_eq!(b.start_ts, b.records[0].ts);
            assert_eq!(b.end_ts, b.records.last().unwrap().ts);
        }
        for (i, a) in bursts.iter().enumerate() {
            for b in bursts.iter().skip(i + 1) {
                if a.device_id == b.device_id {
                    let gap = if a.start_ts <= b.start_ts {
                        b.start_ts - a.end_ts
                    } else {
                        a.start_ts - b.end_ts
                    };
                    assert!(gap >= thr, "bursts {a:?} and {b:?} too close");
                }
            }
        }
    }

    #[test]
    fn empty_stream() {
        assert!(segment_bursts(&[], &meta(), 1.0).is_empty());
    }

    #[test]
    fn single_tight_burst() {
        let recs: Vec<_> = (0..5).map(|i| rec(i as f64 * 0.1, 2)).collect();
        let b = segment_bursts(&recs, &meta(), 1.0);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].records.len(), 5);
    }

    #[test]
    fn gap_splits_bursts() {
        let recs: Vec<_> = [0.0, 0.1, 3.0, 3.05].iter().map(|&t| rec(t, 2)).collect();
        let b = segment_bursts(&recs, &meta(), 1.0);
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].records.iter().map(|r| r.ts).collect::<Vec<_>>(), vec![0.0, 0.1]);
        assert_eq!(b[1].records.iter().map(|r| r.ts).collect::<Vec<_>>(), vec![3.0, 3.05]);
        check_partition(&recs, &b, 1.0);
    }

    #[test]
    fn gap_equal_to_threshold_splits() {
        let recs = vec![rec(0.0, 2), rec(1.0, 2)];
        assert_eq!(segment_bursts(&recs, &meta(), 1.0).len(), 2);
    }

    #[test]
    fn devices_are_independent() {
        let recs = vec![rec(0.0, 2), rec(0.2, 3), rec(0.5, 2), rec(2.0, 3)];
        let b = segment_bursts(&recs, &meta(), 1.0);
        assert_eq!(b.len(), 3);
        assert_eq!(b[0].device_id.as_str(), "A");
        assert_eq!(b[0].records.len(), 2);
        check_partition(&recs, &b, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn stream() -> impl Strategy<Value = Vec<PacketRecord>> {
            prop::collection::vec((0u32..400, 2u8..4), 0..120).prop_map(|mut v| {
                v.sort_by_key(|(t, _)| *t);
                v.into_iter().map(|(t, d)| rec(t as f64 * 0.05, d)).collect()
            })
        }

        proptest! {
            #[test]
            fn partition_holds(recs in stream(), thr in 0.05f64..3.0) {
                let b = segment_bursts(&recs, &meta(), thr);
                check_partition(&recs, &b, thr);
            }

            #[test]
            fn raising_threshold_never_adds_bursts(recs in stream(), lo in 0.05f64..2.0, bump in 0.0f64..2.0) {
                let a = segment_bursts(&recs, &meta(), lo).len();
                let b = segment_bursts(&recs, &meta(), lo + bump).len();
                prop_assert!(b <= a);
            }
        }
    }
}
