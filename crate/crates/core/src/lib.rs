//! Closed-loop artificial pancreas testbench: trace simulation, an
//! STL-style safety-rule engine, hand-rolled neural safety monitors,
//! sensor perturbations and gradient attacks, and tolerance-window
//! robustness metrics.
//!
//! Everything downstream of a seed is deterministic: simulation,
//! dataset construction, training, attacks, and reports reproduce
//! byte-identically for equal inputs.

pub mod apsim;
pub mod metrics;
pub mod monitors;
pub mod neural;
pub mod perturb;
pub mod rules;
