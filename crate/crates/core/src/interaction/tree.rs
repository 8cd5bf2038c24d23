use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{InteractionError, Registry, RuleSet, StateView};
use crate::types::{DeviceId, DeviceState, EventKey, NodeRef, Validation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub key: EventKey,
    pub device_id: DeviceId,
    pub event_type: String,
    pub reading_value: Option<DeviceState>,
    pub parent: Option<EventKey>,
    pub children: Vec<EventKey>,
    pub validation: Validation,
}

/// Events caused, directly or transitively, by one root reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTree {
    pub root_device: DeviceId,
    pub x: u64,
    pub root_key: EventKey,
    nodes: BTreeMap<EventKey, TreeNode>,
    finalized: bool,
}

/// Starts a tree for a new reading of `root_device`, consuming its next X.
pub fn new_tree(
    registry: &mut Registry,
    root_device: &DeviceId,
    event_type: &str,
    reading: Option<DeviceState>,
) -> Result<InteractionTree, InteractionError> {
    let x = registry.next_reading_seq(root_device)?;
    let root_key = EventKey::new(x, 1);
    let mut nodes = BTreeMap::new();
    nodes.insert(
        root_key,
        TreeNode {
            key: root_key,
            device_id: root_device.clone(),
            event_type: event_type.to_string(),
            reading_value: reading,
            parent: None,
            children: Vec::new(),
            validation: Validation::Pending,
        },
    );
    Ok(InteractionTree {
        root_device: root_device.clone(),
        x,
        root_key,
        nodes,
        finalized: false,
    })
}

impl InteractionTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    pub fn node(&self, key: &EventKey) -> Option<&TreeNode> {
        self.nodes.get(key)
    }

    pub fn require(&self, key: &EventKey) -> Result<&TreeNode, InteractionError> {
        self.nodes
            .get(key)
            .ok_or_else(|| InteractionError::UnknownKey(key.to_string()))
    }

    /// Nodes in key order, which is attach order.
    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn node_ref(&self, key: EventKey) -> NodeRef {
        NodeRef::new(self.root_device.clone(), key)
    }

    pub fn attach_event(
        &mut self,
        parent_key: &EventKey,
        device_id: &DeviceId,
        event_type: &str,
    ) -> Result<EventKey, InteractionError> {
        self.attach_with_value(parent_key, device_id, event_type, None)
    }

    /// Adds a child of `parent_key` under the next free Y.
    pub fn attach_with_value(
        &mut self,
        parent_key: &EventKey,
        device_id: &DeviceId,
        event_type: &str,
        value: Option<DeviceState>,
    ) -> Result<EventKey, InteractionError> {
        if self.finalized {
            return Err(InteractionError::TreeFinalized(self.root_key.to_string()));
        }
        if !self.nodes.contains_key(parent_key) {
            return Err(InteractionError::UnknownParent(parent_key.to_string()));
        }
        let y = self.nodes.keys().next_back().map_or(1, |k| k.y + 1);
        let key = EventKey::new(self.x, y);
        self.nodes.get_mut(parent_key).expect("checked").children.push(key);
        self.nodes.insert(
            key,
            TreeNode {
                key,
                device_id: device_id.clone(),
                event_type: event_type.to_string(),
                reading_value: value,
                parent: Some(*parent_key),
                children: Vec::new(),
                validation: Validation::Pending,
            },
        );
        Ok(key)
    }

    /// Verdict for `key` from the rules and `view`, without recording it.
    pub fn judge(&self, key: &EventKey, rules: &RuleSet, view: &dyn StateView) -> Result<Validation, InteractionError> {
        let node = self.require(key)?;
        let Some(pk) = node.parent else {
            return Ok(Validation::Valid);
        };
        let parent = self.require(&pk)?;
        if parent.validation == Validation::Pending {
            return Err(InteractionError::ParentPending(pk.to_string()));
        }
        let licensed = rules
            .licensing_rule(
                (&parent.device_id, &parent.event_type, parent.reading_value.as_ref()),
                (&node.device_id, &node.event_type),
                view,
            )
            .is_some();
        Ok(if licensed { Validation::Valid } else { Validation::Anomalous })
    }

    pub fn set_validation(&mut self, key: &EventKey, v: Validation) -> Result<(), InteractionError> {
        self.nodes
            .get_mut(key)
            .ok_or_else(|| InteractionError::UnknownKey(key.to_string()))?
            .validation = v;
        Ok(())
    }

    /// `key` and every descendant, deepest (largest Y) first.
    pub fn affected_set(&self, key: &EventKey) -> Result<Vec<(EventKey, DeviceId)>, InteractionError> {
        self.require(key)?;
        let mut out = Vec::new();
        let mut stack = vec![*key];
        while let Some(k) = stack.pop() {
            let n = &self.nodes[&k];
            out.push((k, n.device_id.clone()));
            stack.extend(n.children.iter().copied());
        }
        out.sort_by_key(|p| std::cmp::Reverse(p.0.y));
        Ok(out)
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .values()
            .map(|n| {
                let mut d = 0;
                let mut cur = n.parent;
                while let Some(p) = cur {
                    d += 1;
                    cur = self.nodes[&p].parent;
                }
                d
            })
            .max()
            .unwrap_or(0)
    }

    /// One `X.Y parent=<key|-> device=<id> event=<type> verdict=<v>` line per node.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for n in self.nodes.values() {
            let parent = n.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = writeln!(
                out,
                "{} parent={parent} device={} event={} verdict={}",
                n.key,
                n.device_id,
                n.event_type,
                n.validation.as_str()
            );
        }
        out
    }
}

/// Records the verdict for `key`. Root readings are VALID by definition.
pub fn validate_interaction(
    tree: &mut InteractionTree,
    key: &EventKey,
    rules: &RuleSet,
    view: &dyn StateView,
) -> Result<Validation, InteractionError> {
    let v = tree.judge(key, rules, view)?;
    tree.set_validation(key, v)?;
    Ok(v)
}
