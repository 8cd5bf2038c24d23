use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InteractionError, StateView};
use crate::types::{DeviceId, DeviceState};

/// A device id, or `type:<device_type>` for every device of that type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DeviceSelector {
    Id(DeviceId),
    Type(String),
}

impl DeviceSelector {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("type:") {
            Some(t) => DeviceSelector::Type(t.to_string()),
            None => DeviceSelector::Id(DeviceId::from(s)),
        }
    }

    pub fn matches(&self, device: &DeviceId, view: &dyn StateView) -> bool {
        match self {
            DeviceSelector::Id(id) => id == device,
            DeviceSelector::Type(t) => view.device_type(device) == Some(t.as_str()),
        }
    }
}

impl fmt::Display for DeviceSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceSelector::Id(id) => write!(f, "{id}"),
            DeviceSelector::Type(t) => write!(f, "type:{t}"),
        }
    }
}

impl Serialize for DeviceSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DeviceSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() || s == "type:" {
            return Err(serde::de::Error::custom("empty device selector"));
        }
        Ok(DeviceSelector::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventPattern {
    pub device: DeviceSelector,
    pub event: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Ne,
}

impl Comparator {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => Comparator::Lt,
            "<=" | "≤" => Comparator::Le,
            "=" | "==" => Comparator::Eq,
            ">=" | "≥" => Comparator::Ge,
            ">" => Comparator::Gt,
            "!=" | "≠" => Comparator::Ne,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Eq => "=",
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
            Comparator::Ne => "!=",
        }
    }

    fn is_ordering(self) -> bool {
        !matches!(self, Comparator::Eq | Comparator::Ne)
    }

    /// False whenever the operands are not comparable.
    pub fn apply(self, lhs: &DeviceState, rhs: &DeviceState) -> bool {
        use DeviceState::*;
        match (lhs, rhs) {
            (Number(a), Number(b)) => match self {
                Comparator::Lt => a < b,
                Comparator::Le => a <= b,
                Comparator::Eq => a == b,
                Comparator::Ge => a >= b,
                Comparator::Gt => a > b,
                Comparator::Ne => a != b,
            },
            (Bool(_), Bool(_)) | (Mode(_), Mode(_)) => match self {
                Comparator::Eq => lhs == rhs,
                Comparator::Ne => lhs != rhs,
                _ => false,
            },
            _ => false,
        }
    }
}

impl Serialize for Comparator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Comparator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Comparator::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown comparator {s:?}")))
    }
}

/// Left-hand side of a condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ConditionField {
    /// Value carried by the triggering event.
    Reading,
    /// Current state of a registered device.
    State(DeviceId),
}

impl Serialize for ConditionField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ConditionField::Reading => s.serialize_str("reading"),
            ConditionField::State(id) => s.collect_str(&format_args!("state:{id}")),
        }
    }
}

impl<'de> Deserialize<'de> for ConditionField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "reading" {
            return Ok(ConditionField::Reading);
        }
        match s.strip_prefix("state:") {
            Some(id) if !id.is_empty() => Ok(ConditionField::State(DeviceId::from(id))),
            _ => Err(serde::de::Error::custom(format!(
                "condition field must be \"reading\" or \"state:<device>\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub field: ConditionField,
    pub op: Comparator,
    pub value: DeviceState,
}

impl Condition {
    pub fn eval(&self, reading: Option<&DeviceState>, view: &dyn StateView) -> bool {
        let lhs = match &self.field {
            ConditionField::Reading => reading,
            ConditionField::State(id) => view.state(id),
        };
        lhs.is_some_and(|l| self.op.apply(l, &self.value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomationRule {
    pub id: String,
    pub trigger: EventPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub action: EventPattern,
}

impl AutomationRule {
    fn check(&self) -> Result<(), InteractionError> {
        if self.trigger == self.action {
            return Err(InteractionError::RuleSelfLoop(self.id.clone()));
        }
        if let Some(c) = &self.condition {
            if c.op.is_ordering() && !matches!(c.value, DeviceState::Number(_)) {
                return Err(InteractionError::RuleInvalid(format!(
                    "rule {}: {} needs a numeric constant",
                    self.id,
                    c.op.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn trigger_matches(&self, device: &DeviceId, event: &str, view: &dyn StateView) -> bool {
        self.trigger.event == event && self.trigger.device.matches(device, view)
    }

    pub fn action_matches(&self, device: &DeviceId, event: &str, view: &dyn StateView) -> bool {
        self.action.event == event && self.action.device.matches(device, view)
    }

    /// Trigger, action and condition all hold.
    pub fn licenses(&self, parent: (&DeviceId, &str, Option<&DeviceState>), child: (&DeviceId, &str), view: &dyn StateView) -> bool {
        self.trigger_matches(parent.0, parent.1, view)
            && self.action_matches(child.0, child.1, view)
            && self.condition.as_ref().is_none_or(|c| c.eval(parent.2, view))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RulesFile {
    List(Vec<AutomationRule>),
    Wrapped { rules: Vec<AutomationRule> },
}

/// Validated rule list, indexed by trigger event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<AutomationRule>,
    by_trigger: HashMap<String, Vec<usize>>,
}

impl RuleSet {
    pub fn new(rules: Vec<AutomationRule>) -> Result<Self, InteractionError> {
        let mut by_trigger: HashMap<String, Vec<usize>> = HashMap::new();
        let mut ids = std::collections::HashSet::new();
        for (i, r) in rules.iter().enumerate() {
            r.check()?;
            if !ids.insert(r.id.as_str()) {
                return Err(InteractionError::RuleInvalid(format!("duplicate rule id {}", r.id)));
            }
            by_trigger.entry(r.trigger.event.clone()).or_default().push(i);
        }
        Ok(Self { rules, by_trigger })
    }

    pub fn rules(&self) -> &[AutomationRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Rules whose trigger matches, in file order.
    pub fn triggered_by<'s: 'q, 'q>(
        &'s self,
        device: &'q DeviceId,
        event: &str,
        view: &'q dyn StateView,
    ) -> impl Iterator<Item = &'s AutomationRule> + 'q {
        self.by_trigger
            .get(event)
            .into_iter()
            .flatten()
            .map(|&i| &self.rules[i])
            .filter(move |r| r.trigger.device.matches(device, view))
    }

    /// First rule (file order) that licenses `child` as a reaction to `parent`.
    pub fn licensing_rule(
        &self,
        parent: (&DeviceId, &str, Option<&DeviceState>),
        child: (&DeviceId, &str),
        view: &dyn StateView,
    ) -> Option<&AutomationRule> {
        self.triggered_by(parent.0, parent.1, view)
            .find(|r| r.action_matches(child.0, child.1, view) && r.condition.as_ref().is_none_or(|c| c.eval(parent.2, view)))
    }

    pub fn from_json(text: &str) -> Result<Self, InteractionError> {
        let file: RulesFile =
            serde_json::from_str(text).map_err(|e| InteractionError::RuleInvalid(e.to_string()))?;
        let rules = match file {
            RulesFile::List(r) | RulesFile::Wrapped { rules: r } => r,
        };
        Self::new(rules)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InteractionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InteractionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{DeviceRecord, Registry};
    use std::net::Ipv4Addr;

    fn registry() -> Registry {
        let mut r = Registry::new();
        let add = |r: &mut Registry, id: &str, t: &str, n: u8, s: DeviceState| {
            r.register_device(DeviceRecord::new(id, t, Ipv4Addr::new(10, 0, 0, n), s)).unwrap()
        };
        add(&mut r, "M1", "motion_sensor", 2, DeviceState::Bool(false));
        add(&mut r, "B1", "smart_bulb", 3, DeviceState::Bool(false));
        add(&mut r, "T1", "thermostat", 4, DeviceState::Number(72.0));
        add(&mut r, "AC", "ac", 5, DeviceState::Bool(false));
        r
    }

    const RULES: &str = r#"[
        {"id":"r1","trigger":{"device":"type:motion_sensor","event":"motion_detected"},
         "action":{"device":"type:smart_bulb","event":"turn_on"}},
        {"id":"r2","trigger":{"device":"T1","event":"temp_reading"},
         "condition":{"field":"reading","op":">","value":78},
         "action":{"device":"AC","event":"turn_on"}}
    ]"#;

    #[test]
    fn parse_and_license() {
        let reg = registry();
        let rs = RuleSet::from_json(RULES).unwrap();
        assert_eq!(rs.len(), 2);
        let m1 = DeviceId::from("M1");
        let b1 = DeviceId::from("B1");
        assert!(rs.licensing_rule((&m1, "motion_detected", None), (&b1, "turn_on"), &reg).is_some());
        assert!(rs.licensing_rule((&m1, "motion_detected", None), (&b1, "turn_off"), &reg).is_none());
        let t1 = DeviceId::from("T1");
        let ac = DeviceId::from("AC");
        let hot = DeviceState::Number(80.0);
        let mild = DeviceState::Number(70.0);
        assert!(rs.licensing_rule((&t1, "temp_reading", Some(&hot)), (&ac, "turn_on"), &reg).is_some());
        assert!(rs.licensing_rule((&t1, "temp_reading", Some(&mild)), (&ac, "turn_on"), &reg).is_none());
        // reading missing: condition cannot hold
        assert!(rs.licensing_rule((&t1, "temp_reading", None), (&ac, "turn_on"), &reg).is_none());
    }

    #[test]
    fn state_condition_reads_registry() {
        let mut reg = registry();
        let rs = RuleSet::from_json(
            r#"{"rules":[{"id":"r","trigger":{"device":"M1","event":"motion_detected"},
            "condition":{"field":"state:AC","op":"=","value":false},
            "action":{"device":"B1","event":"turn_on"}}]}"#,
        )
        .unwrap();
        let m1 = DeviceId::from("M1");
        let b1 = DeviceId::from("B1");
        assert!(rs.licensing_rule((&m1, "motion_detected", None), (&b1, "turn_on"), &reg).is_some());
        reg.set_state(&DeviceId::from("AC"), DeviceState::Bool(true)).unwrap();
        assert!(rs.licensing_rule((&m1, "motion_detected", None), (&b1, "turn_on"), &reg).is_none());
    }

    #[test]
    fn self_loops_and_bad_conditions_rejected() {
        let self_loop = r#"[{"id":"x","trigger":{"device":"B1","event":"turn_on"},"action":{"device":"B1","event":"turn_on"}}]"#;
        assert_eq!(RuleSet::from_json(self_loop).unwrap_err().code(), "RULE_SELF_LOOP");
        let bad = r#"[{"id":"x","trigger":{"device":"B1","event":"turn_on"},
            "condition":{"field":"reading","op":"<","value":"cool"},
            "action":{"device":"B2","event":"turn_on"}}]"#;
        assert_eq!(RuleSet::from_json(bad).unwrap_err().code(), "RULE_INVALID");
        let unknown_op = r#"[{"id":"x","trigger":{"device":"B1","event":"a"},
            "condition":{"field":"reading","op":"~","value":1},"action":{"device":"B2","event":"b"}}]"#;
        assert!(RuleSet::from_json(unknown_op).is_err());
    }

    #[test]
    fn comparators_respect_types() {
        let n = |v: f64| DeviceState::Number(v);
        assert!(Comparator::Le.apply(&n(3.0), &n(3.0)));
        assert!(!Comparator::Lt.apply(&n(3.0), &n(3.0)));
        assert!(Comparator::Ne.apply(&n(3.0), &n(4.0)));
        let m = |s: &str| DeviceState::Mode(s.into());
        assert!(Comparator::Eq.apply(&m("cool"), &m("cool")));
        assert!(!Comparator::Gt.apply(&m("heat"), &m("cool")));
        assert!(!Comparator::Eq.apply(&n(1.0), &DeviceState::Bool(true)));
        assert_eq!(Comparator::parse("≥"), Some(Comparator::Ge));
    }

    #[test]
    fn json_round_trip() {
        let rs = RuleSet::from_json(RULES).unwrap();
        assert_eq!(RuleSet::from_json(&rs.to_json()).unwrap(), rs);
    }
}
