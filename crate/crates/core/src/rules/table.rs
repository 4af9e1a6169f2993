//! Declarative rule table with JSON persistence. Guards are stored as
//! strings in the grammar documented in `expr`, so rule sets can be
//! swapped without recompiling.

use serde::{Deserialize, Serialize};

use super::expr::{parse, DeadBands, Expr};
use super::{HazardClass, RuleError};

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyRule {
    pub id: u8,
    pub guard: Expr,
    pub hazard: HazardClass,
}

#[derive(Debug, Serialize, Deserialize)]
struct RuleSpec {
    id: u8,
    guard: String,
    hazard: HazardClass,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableSpec {
    deadband: DeadBands,
    rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    pub deadband: DeadBands,
    pub rules: Vec<SafetyRule>,
}

/// Guard text of the twelve default safety rules. The conjunction of
/// a BG trend, an insulin-on-board trend, and the controller command
/// class implies a hazard: H2 when insulin is too low for a high and
/// not-falling BG, H1 when insulin keeps flowing into a low and
/// falling BG.
const DEFAULT_RULES: [(u8, &str, HazardClass); 12] = [
    (1, "(BG > BGT & BG' > 0) & (IOB' < 0) & u1", HazardClass::H2),
    (2, "(BG > BGT & BG' > 0) & (IOB' = 0) & u1", HazardClass::H2),
    (3, "(BG > BGT & BG' < 0) & (IOB' > 0) & u1", HazardClass::H2),
    (4, "(BG > BGT & BG' < 0) & (IOB' < 0) & u1", HazardClass::H2),
    (5, "(BG > BGT & BG' < 0) & (IOB' = 0) & u1", HazardClass::H2),
    (6, "(BG < BGT & BG' < 0) & (IOB' > 0) & u2", HazardClass::H1),
    (7, "(BG < BGT & BG' < 0) & (IOB' < 0) & u2", HazardClass::H1),
    (8, "(BG < BGT & BG' < 0) & (IOB' = 0) & u2", HazardClass::H1),
    (9, "BG > BGT & u3", HazardClass::H2),
    (10, "BG < 70 & !u3", HazardClass::H1),
    (11, "(BG > BGT & BG' > 0) & (IOB' <= 0) & u4", HazardClass::H2),
    (12, "(BG < BGT & BG' < 0) & (IOB' >= 0) & u4", HazardClass::H1),
];

impl RuleTable {
    /// The twelve context rules for the basal-bolus APS controller.
    pub fn default_table() -> Self {
        let rules = DEFAULT_RULES
            .iter()
            .map(|(id, guard, hazard)| SafetyRule {
                id: *id,
                guard: parse(guard).expect("default guard parses"),
                hazard: *hazard,
            })
            .collect();
        RuleTable {
            deadband: DeadBands::default(),
            rules,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, RuleError> {
        let spec: TableSpec = serde_json::from_str(json)?;
        let mut rules = Vec::with_capacity(spec.rules.len());
        let mut seen = std::collections::BTreeSet::new();
        for r in spec.rules {
            if !seen.insert(r.id) {
                return Err(RuleError::DuplicateRuleId(r.id));
            }
            rules.push(SafetyRule {
                id: r.id,
                guard: parse(&r.guard)?,
                hazard: r.hazard,
            });
        }
        Ok(RuleTable {
            deadband: spec.deadband,
            rules,
        })
    }

    pub fn to_json(&self) -> String {
        let spec = TableSpec {
            deadband: self.deadband,
            rules: self
                .rules
                .iter()
                .map(|r| RuleSpec {
                    id: r.id,
                    guard: r.guard.to_string(),
                    hazard: r.hazard,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&spec).expect("rule table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_has_twelve_unique_rules() {
        let t = RuleTable::default_table();
        assert_eq!(t.rules.len(), 12);
        let ids: std::collections::BTreeSet<u8> = t.rules.iter().map(|r| r.id).collect();
        assert_eq!(ids.len(), 12);
        assert_eq!(*ids.iter().next().unwrap(), 1);
        assert_eq!(*ids.iter().last().unwrap(), 12);
    }

    #[test]
    fn json_round_trip_preserves_table() {
        let t = RuleTable::default_table();
        let json = t.to_json();
        let back = RuleTable::from_json(&json).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let json = r#"{
            "deadband": {"bg_prime": 0.1, "iob_prime": 0.01},
            "rules": [
                {"id": 1, "guard": "BG < 70 & !u3", "hazard": "H1"},
                {"id": 1, "guard": "BG > BGT & u3", "hazard": "H2"}
            ]
        }"#;
        assert!(matches!(
            RuleTable::from_json(json),
            Err(RuleError::DuplicateRuleId(1))
        ));
    }

    #[test]
    fn bad_guard_reports_position() {
        let json = r#"{
            "deadband": {"bg_prime": 0.1, "iob_prime": 0.01},
            "rules": [{"id": 1, "guard": "BG >> 70", "hazard": "H1"}]
        }"#;
        let err = RuleTable::from_json(json).unwrap_err();
        assert!(matches!(err, RuleError::GuardParse { .. }), "{err}");
    }
}
