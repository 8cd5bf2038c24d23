use std::collections::HashMap;

use super::engine::LedgerEntry;
use super::SimError;
use crate::events::{featurize, Burst};
use crate::models::LabeledDataset;
use crate::types::{DeviceId, Label};

/// Ledger entry of every burst: same device, wire start within half a tick.
///
/// Returns positions into `ledger`; `None` for bursts nothing explains.
pub fn join_bursts(bursts: &[Burst], ledger: &[LedgerEntry], tick_seconds: f64) -> Result<Vec<Option<usize>>, SimError> {
    let mut by_dev: HashMap<&DeviceId, Vec<usize>> = HashMap::new();
    for (i, e) in ledger.iter().enumerate() {
        if e.wire {
            by_dev.entry(&e.device).or_default().push(i);
        }
    }
    for list in by_dev.values_mut() {
        list.sort_by(|&a, &b| ledger[a].ts.total_cmp(&ledger[b].ts));
    }
    let half = tick_seconds / 2.0;
    let mut out = Vec::with_capacity(bursts.len());
    for b in bursts {
        let Some(list) = by_dev.get(&b.device_id) else {
            out.push(None);
            continue;
        };
        let pos = list.partition_point(|&i| ledger[i].ts < b.start_ts);
        let mut best: Option<(f64, usize)> = None;
        let mut tied = false;
        for &i in list[pos.saturating_sub(2)..(pos + 2).min(list.len())].iter() {
            let d = (ledger[i].ts - b.start_ts).abs();
            if d > half {
                continue;
            }
            match best {
                Some((bd, _)) if d == bd => tied = true,
                Some((bd, _)) if d > bd => {}
                _ => {
                    best = Some((d, i));
                    tied = false;
                }
            }
        }
        if tied {
            return Err(SimError::JoinAmbiguous {
                device: b.device_id.to_string(),
                ts: b.start_ts,
            });
        }
        out.push(best.map(|(_, i)| i));
    }
    Ok(out)
}

/// Feature rows labeled by the ledger; unmatched bursts are ANOMALOUS.
pub fn label_dataset(bursts: &[Burst], ledger: &[LedgerEntry], tick_seconds: f64) -> Result<LabeledDataset, SimError> {
    let joined = join_bursts(bursts, ledger, tick_seconds)?;
    let rows = bursts
        .iter()
        .zip(&joined)
        .map(|(b, j)| {
            let label = j.map_or(Label::Anomalous, |i| ledger[i].packet_label());
            (featurize(b), label)
        })
        .collect();
    Ok(LabeledDataset::new(rows))
}

/// Benign bursts named by their ledger event, for signature extraction.
pub fn named_bursts(bursts: &[Burst], ledger: &[LedgerEntry], tick_seconds: f64) -> Result<Vec<(Burst, String)>, SimError> {
    let joined = join_bursts(bursts, ledger, tick_seconds)?;
    Ok(bursts
        .iter()
        .zip(joined)
        .filter_map(|(b, j)| {
            let e = &ledger[j?];
            (e.packet_label() == Label::Benign).then(|| (b.clone(), e.event.clone()))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DeviceState;

    fn entry(id: u64, dev: &str, ts: f64) -> LedgerEntry {
        LedgerEntry {
            id,
            tick: 0,
            ts,
            device: DeviceId::from(dev),
            event: "turn_on".into(),
            cause: None,
            tree: None,
            value: None,
            state_after: DeviceState::Bool(true),
            label: Label::Benign,
            kind: None,
            wire: true,
        }
    }

    fn burst(dev: &str, start: f64) -> Burst {
        use crate::trace::{Direction, PacketRecord, Proto, TcpFlags};
        let r = PacketRecord {
            ts: start,
            src_addr: [10, 0, 0, 2].into(),
            dst_addr: [10, 0, 0, 1].into(),
            src_port: 1,
            dst_port: 2,
            proto: Proto::Tcp,
            length: 60,
            tcp_flags: TcpFlags::SYN,
            direction: Direction::DeviceToController,
        };
        Burst {
            device_id: DeviceId::from(dev),
            records: vec![r],
            start_ts: start,
            end_ts: start,
        }
    }

    #[test]
    fn nearest_within_half_tick() {
        let ledger = vec![entry(0, "L1", 1.0), entry(1, "L1", 2.0), entry(2, "S1", 1.0)];
        let bursts = vec![burst("L1", 1.02), burst("L1", 2.0), burst("S1", 1.2), burst("K1", 1.0)];
        let j = join_bursts(&bursts, &ledger, 0.1).unwrap();
        assert_eq!(j, vec![Some(0), Some(1), None, None]);
        let ds = label_dataset(&bursts, &ledger, 0.1).unwrap();
        assert_eq!(ds.class_counts(), (2, 2));
    }

    #[test]
    fn equidistant_entries_are_ambiguous() {
        let ledger = vec![entry(0, "L1", 1.0), entry(1, "L1", 1.5)];
        let err = join_bursts(&[burst("L1", 1.25)], &ledger, 1.0).unwrap_err();
        assert_eq!(err.code(), "JOIN_AMBIGUOUS");
    }
}
