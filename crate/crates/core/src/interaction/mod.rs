//! Device registry, interaction trees and rule-based interaction validation.
//!
//! Each reading of a device opens an [`InteractionTree`] rooted at that
//! device. Events caused by the reading attach beneath it under keys "X.Y",
//! where X counts the root device's readings and Y counts events inside the
//! tree. Every non-root edge is checked against the [`RuleSet`].

mod registry;
mod rules;
mod tree;

use std::net::Ipv4Addr;

pub use registry::{DeviceRecord, DeviceStatus, Registry};
pub use rules::{AutomationRule, Comparator, Condition, ConditionField, DeviceSelector, EventPattern, RuleSet};
pub use tree::{new_tree, validate_interaction, InteractionTree, TreeNode};

use crate::types::{DeviceId, DeviceState};

/// Read access to device types and states for rule evaluation.
pub trait StateView {
    fn device_type(&self, id: &DeviceId) -> Option<&str>;
    fn state(&self, id: &DeviceId) -> Option<&DeviceState>;
}

#[derive(Debug, thiserror::Error)]
pub enum InteractionError {
    #[error("device id {0} is already registered")]
    DuplicateId(String),
    #[error("address {addr} is already registered to {existing}")]
    DuplicateAddr { addr: Ipv4Addr, existing: String },
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("device {0} is isolated")]
    DeviceIsolated(String),
    #[error("parent key {0} is not in the tree")]
    UnknownParent(String),
    #[error("key {0} is not in the tree")]
    UnknownKey(String),
    #[error("parent {0} has not been validated yet")]
    ParentPending(String),
    #[error("tree {0} is finalized")]
    TreeFinalized(String),
    #[error("rule {0} triggers itself")]
    RuleSelfLoop(String),
    #[error("rules: {0}")]
    RuleInvalid(String),
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl InteractionError {
    pub fn code(&self) -> &'static str {
        match self {
            InteractionError::DuplicateId(_) => "DUPLICATE_ID",
            InteractionError::DuplicateAddr { .. } => "DUPLICATE_ADDR",
            InteractionError::UnknownDevice(_) => "UNKNOWN_DEVICE",
            InteractionError::DeviceIsolated(_) => "DEVICE_ISOLATED",
            InteractionError::UnknownParent(_) => "UNKNOWN_PARENT",
            InteractionError::UnknownKey(_) => "UNKNOWN_KEY",
            InteractionError::ParentPending(_) => "PARENT_PENDING",
            InteractionError::TreeFinalized(_) => "TREE_FINALIZED",
            InteractionError::RuleSelfLoop(_) => "RULE_SELF_LOOP",
            InteractionError::RuleInvalid(_) => "RULE_INVALID",
            InteractionError::Format(_) => "REGISTRY_FORMAT",
            InteractionError::Io { .. } => "IO",
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::types::EventKey;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    #[derive(Debug, Clone)]
    enum Op {
        NewTree(usize),
        Attach { tree: usize, parent: usize, device: usize },
        Query { tree: usize, node: usize },
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            1 => (0usize..4).prop_map(Op::NewTree),
            4 => (any::<usize>(), any::<usize>(), 0usize..4).prop_map(|(tree, parent, device)| Op::Attach { tree, parent, device }),
            2 => (any::<usize>(), any::<usize>()).prop_map(|(tree, node)| Op::Query { tree, node }),
        ]
    }

    fn dfs(t: &InteractionTree, k: EventKey) -> BTreeSet<EventKey> {
        let mut seen = BTreeSet::new();
        let mut todo = vec![k];
        while let Some(k) = todo.pop() {
            if seen.insert(k) {
                for n in t.nodes() {
                    if n.parent == Some(k) {
                        todo.push(n.key);
                    }
                }
            }
        }
        seen
    }

    proptest! {
        #[test]
        fn random_operations_keep_invariants(ops in prop::collection::vec(op(), 1..300)) {
            let mut reg = Registry::new();
            let ids: Vec<DeviceId> = (0..4).map(|i| DeviceId::from(format!("D{i}"))).collect();
            for (i, id) in ids.iter().enumerate() {
                reg.register_device(DeviceRecord::new(id.clone(), "t", Ipv4Addr::new(10, 1, 0, i as u8 + 1), DeviceState::Bool(false))).unwrap();
            }
            let mut trees: Vec<InteractionTree> = Vec::new();
            let mut seen = HashSet::new();
            for op in ops {
                match op {
                    Op::NewTree(d) => {
                        let t = new_tree(&mut reg, &ids[d], "reading", None).unwrap();
                        prop_assert!(seen.insert((t.root_device.clone(), t.root_key)));
                        trees.push(t);
                    }
                    Op::Attach { tree, parent, device } if !trees.is_empty() => {
                        let ti = tree % trees.len();
                        let t = &mut trees[ti];
                        let keys: Vec<EventKey> = t.nodes().map(|n| n.key).collect();
                        let p = keys[parent % keys.len()];
                        let k = t.attach_event(&p, &ids[device], "ev").unwrap();
                        prop_assert!(seen.insert((t.root_device.clone(), k)));
                    }
                    Op::Query { tree, node } if !trees.is_empty() => {
                        let t = &trees[tree % trees.len()];
                        let keys: Vec<EventKey> = t.nodes().map(|n| n.key).collect();
                        let k = keys[node % keys.len()];
                        let got = t.affected_set(&k).unwrap();
                        let set: BTreeSet<EventKey> = got.iter().map(|p| p.0).collect();
                        prop_assert_eq!(set.len(), got.len());
                        prop_assert_eq!(set, dfs(t, k));
                        prop_assert!(got.windows(2).all(|w| w[0].0.y > w[1].0.y));
                    }
                    _ => {}
                }
            }
            for t in &trees {
                let ys: Vec<u64> = t.nodes().map(|n| n.key.y).collect();
                prop_assert_eq!(ys, (1..=t.len() as u64).collect::<Vec<_>>());
                prop_assert!(t.nodes().all(|n| n.key.x == t.x));
                for n in t.nodes() {
                    if let Some(p) = n.parent {
                        prop_assert!(p.y < n.key.y);
                        prop_assert!(t.node(&p).unwrap().children.contains(&n.key));
                    }
                }
            }
        }
    }
}
