//! Context-dependent safety rules: twelve STL-style guards over
//! aggregated sensor windows, the rule-based monitor built from them,
//! and the indicator the semantic loss consumes.

pub mod engine;
pub mod expr;
pub mod table;

pub use engine::{aggregate_context, discretize, RuleEngine, WindowView, DEFAULT_RHO};
pub use expr::{parse, DeadBands, Expr};
pub use table::{RuleTable, SafetyRule};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("cannot parse guard {guard:?} at byte {pos}: {msg}")]
    GuardParse { guard: String, pos: usize, msg: String },
    #[error("window too short: {len} steps (need at least 2)")]
    WindowTooShort { len: usize },
    #[error("window channel lengths differ: bg={bg}, iob={iob}, rate={rate}")]
    WindowLengthMismatch { bg: usize, iob: usize, rate: usize },
    #[error("duplicate rule id {0}")]
    DuplicateRuleId(u8),
    #[error("rule table JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Discretized controller command classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlAction {
    #[serde(rename = "u1")]
    DecreaseInsulin,
    #[serde(rename = "u2")]
    IncreaseInsulin,
    #[serde(rename = "u3")]
    StopInsulin,
    #[serde(rename = "u4")]
    KeepInsulin,
}

impl ControlAction {
    pub const ALL: [ControlAction; 4] = [
        ControlAction::DecreaseInsulin,
        ControlAction::IncreaseInsulin,
        ControlAction::StopInsulin,
        ControlAction::KeepInsulin,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            ControlAction::DecreaseInsulin => "u1",
            ControlAction::IncreaseInsulin => "u2",
            ControlAction::StopInsulin => "u3",
            ControlAction::KeepInsulin => "u4",
        }
    }

    /// Index 0..4 in u1..u4 order, used for one-hot feature channels.
    pub fn index(self) -> usize {
        match self {
            ControlAction::DecreaseInsulin => 0,
            ControlAction::IncreaseInsulin => 1,
            ControlAction::StopInsulin => 2,
            ControlAction::KeepInsulin => 3,
        }
    }
}

/// H1: too much insulin, driving BG toward hypoglycemia.
/// H2: too little insulin, letting BG stay or rise too high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HazardClass {
    H1,
    H2,
}

/// Aggregated window state the guards are evaluated against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyContext {
    /// Mean sensed blood glucose over the window, mg/dL.
    pub bg: f64,
    /// Least-squares BG slope, mg/dL per step.
    pub bg_prime: f64,
    /// Mean insulin on board, U.
    pub iob: f64,
    /// Least-squares IOB slope, U per step.
    pub iob_prime: f64,
    /// Target blood glucose, mg/dL.
    pub bgt: f64,
    pub action: ControlAction,
}

/// Alias kept for re-export clarity: the aggregated context type.
pub type RuleContext = SafetyContext;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleVerdict {
    /// Ids of all rules whose guard held, ascending.
    pub fired: Vec<u8>,
    /// Hazard of the lowest-numbered fired rule, if any.
    pub hazard: Option<HazardClass>,
    pub is_unsafe: bool,
}
