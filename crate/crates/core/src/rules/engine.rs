//! Window aggregation, command discretization, and rule evaluation.

use super::expr::DeadBands;
use super::table::RuleTable;
use super::{ControlAction, RuleError, RuleVerdict, SafetyContext};

/// Relative dead-band for classifying rate changes as u1/u2/u4.
pub const DEFAULT_RHO: f64 = 0.05;

/// Borrowed view of one window's sensed channels.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    /// Sensed blood glucose, mg/dL.
    pub bg: &'a [f64],
    /// Insulin on board, U.
    pub iob: &'a [f64],
    /// Commanded basal rate, U/h.
    pub rate: &'a [f64],
}

/// Maps the last two commanded rates to a command class: u3 when the
/// pump is stopped, u2/u1 for a relative increase/decrease beyond
/// rho, u4 otherwise.
pub fn discretize(rate_t: f64, rate_prev: f64, rho: f64) -> ControlAction {
    debug_assert!(rate_t >= 0.0 && rate_prev >= 0.0, "pump rates are nonnegative");
    if rate_t == 0.0 {
        ControlAction::StopInsulin
    } else if rate_t > rate_prev * (1.0 + rho) {
        ControlAction::IncreaseInsulin
    } else if rate_t < rate_prev * (1.0 - rho) {
        ControlAction::DecreaseInsulin
    } else {
        ControlAction::KeepInsulin
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least-squares slope of `ys` against step index 0..n-1.
fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = mean(ys);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}

/// Aggregates a window into the context the guards read: channel
/// means, per-step least-squares slopes, and the discretized command
/// from the last two rates.
pub fn aggregate_context(w: WindowView<'_>, bgt: f64) -> Result<SafetyContext, RuleError> {
    if w.bg.len() != w.iob.len() || w.bg.len() != w.rate.len() {
        return Err(RuleError::WindowLengthMismatch {
            bg: w.bg.len(),
            iob: w.iob.len(),
            rate: w.rate.len(),
        });
    }
    if w.bg.len() < 2 {
        return Err(RuleError::WindowTooShort { len: w.bg.len() });
    }
    let n = w.rate.len();
    Ok(SafetyContext {
        bg: mean(w.bg),
        bg_prime: slope(w.bg),
        iob: mean(w.iob),
        iob_prime: slope(w.iob),
        bgt,
        action: discretize(w.rate[n - 1], w.rate[n - 2], DEFAULT_RHO),
    })
}

/// A rule table bound to its dead-bands, ready to evaluate contexts.
#[derive(Debug, Clone)]
pub struct RuleEngine {
    pub table: RuleTable,
}

impl RuleEngine {
    pub fn new(table: RuleTable) -> Self {
        RuleEngine { table }
    }

    pub fn default_engine() -> Self {
        RuleEngine::new(RuleTable::default_table())
    }

    pub fn deadband(&self) -> &DeadBands {
        &self.table.deadband
    }

    /// Evaluates every guard; the verdict's hazard comes from the
    /// lowest-numbered fired rule.
    pub fn evaluate_rules(&self, ctx: &SafetyContext) -> RuleVerdict {
        let mut fired = Vec::new();
        let mut hazard = None;
        for rule in &self.table.rules {
            if rule.guard.eval(ctx, &self.table.deadband) {
                if fired.is_empty() {
                    hazard = Some(rule.hazard);
                }
                fired.push(rule.id);
            }
        }
        RuleVerdict {
            is_unsafe: !fired.is_empty(),
            fired,
            hazard,
        }
    }

    /// Eq-2 style indicator: 1.0 iff any rule fires on the context.
    pub fn indicator(&self, ctx: &SafetyContext) -> f64 {
        if self.evaluate_rules(ctx).is_unsafe {
            1.0
        } else {
            0.0
        }
    }

    /// The rule-based monitor: aggregate, then evaluate. The unsafe
    /// probability is exactly 0.0 or 1.0.
    pub fn monitor_window(&self, w: WindowView<'_>, bgt: f64) -> Result<(RuleVerdict, f64), RuleError> {
        let ctx = aggregate_context(w, bgt)?;
        let verdict = self.evaluate_rules(&ctx);
        let p_unsafe = if verdict.is_unsafe { 1.0 } else { 0.0 };
        Ok((verdict, p_unsafe))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::HazardClass;
    use approx::assert_abs_diff_eq;

    fn ctx(bg: f64, bg_prime: f64, iob_prime: f64, action: ControlAction) -> SafetyContext {
        SafetyContext {
            bg,
            bg_prime,
            iob: 1.0,
            iob_prime,
            bgt: 120.0,
            action,
        }
    }

    #[test]
    fn rule_1_example() {
        let eng = RuleEngine::default_engine();
        let v = eng.evaluate_rules(&ctx(200.0, 2.0, -0.1, ControlAction::DecreaseInsulin));
        assert_eq!(v.fired, vec![1]);
        assert_eq!(v.hazard, Some(HazardClass::H2));
        assert!(v.is_unsafe);
    }

    #[test]
    fn rule_10_fires_for_low_bg_without_stop() {
        let eng = RuleEngine::default_engine();
        // BG < BGT and falling with IOB flat would be rule 8 for u2;
        // with u4 it is rule 12, so pick a flat BG to isolate rule 10.
        let v = eng.evaluate_rules(&ctx(60.0, 0.0, 0.0, ControlAction::KeepInsulin));
        assert_eq!(v.fired, vec![10]);
        assert_eq!(v.hazard, Some(HazardClass::H1));
    }

    #[test]
    fn bg_exactly_at_target_is_safe() {
        let eng = RuleEngine::default_engine();
        for action in [
            ControlAction::DecreaseInsulin,
            ControlAction::IncreaseInsulin,
            ControlAction::KeepInsulin,
        ] {
            let v = eng.evaluate_rules(&ctx(120.0, 5.0, 0.5, action));
            assert!(!v.is_unsafe, "action {action:?} fired {:?}", v.fired);
        }
        // u3 at target BG: rule 9 needs BG > BGT, rule 10 needs BG < 70.
        let v = eng.evaluate_rules(&ctx(120.0, -5.0, 0.0, ControlAction::StopInsulin));
        assert!(!v.is_unsafe);
    }

    #[test]
    fn lowest_fired_rule_sets_hazard() {
        // BGT below 70 lets rule 10 (H1) overlap the BG > BGT rules
        // (H2); the verdict takes rule 1's hazard.
        let eng = RuleEngine::default_engine();
        let c = SafetyContext {
            bg: 65.0,
            bg_prime: 2.0,
            iob: 1.0,
            iob_prime: -0.1,
            bgt: 60.0,
            action: ControlAction::DecreaseInsulin,
        };
        let v = eng.evaluate_rules(&c);
        assert_eq!(v.fired, vec![1, 10]);
        assert_eq!(v.hazard, Some(HazardClass::H2));
    }

    #[test]
    fn aggregate_linear_series() {
        let bg = [100.0, 110.0, 120.0, 130.0, 140.0, 150.0];
        let iob = [1.0; 6];
        let rate = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let ctx = aggregate_context(
            WindowView {
                bg: &bg,
                iob: &iob,
                rate: &rate,
            },
            120.0,
        )
        .unwrap();
        assert_abs_diff_eq!(ctx.bg, 125.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.bg_prime, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.iob_prime, 0.0, epsilon = 1e-12);
        assert_eq!(ctx.action, ControlAction::KeepInsulin);
    }

    #[test]
    fn aggregate_constant_series() {
        let bg = [150.0; 6];
        let iob = [2.0; 6];
        let rate = [1.2; 6];
        let ctx = aggregate_context(
            WindowView {
                bg: &bg,
                iob: &iob,
                rate: &rate,
            },
            120.0,
        )
        .unwrap();
        assert_abs_diff_eq!(ctx.bg, 150.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ctx.bg_prime, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn short_window_rejected() {
        let bg = [100.0];
        let iob = [1.0];
        let rate = [1.0];
        let err = aggregate_context(
            WindowView {
                bg: &bg,
                iob: &iob,
                rate: &rate,
            },
            120.0,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::WindowTooShort { len: 1 }));
    }

    #[test]
    fn discretize_cases() {
        assert_eq!(discretize(0.0, 1.0, DEFAULT_RHO), ControlAction::StopInsulin);
        assert_eq!(discretize(0.0, 0.0, DEFAULT_RHO), ControlAction::StopInsulin);
        assert_eq!(discretize(1.0, 1.0, DEFAULT_RHO), ControlAction::KeepInsulin);
        assert_eq!(discretize(1.3, 1.0, DEFAULT_RHO), ControlAction::IncreaseInsulin);
        assert_eq!(discretize(0.7, 1.0, DEFAULT_RHO), ControlAction::DecreaseInsulin);
        assert_eq!(discretize(1.04, 1.0, DEFAULT_RHO), ControlAction::KeepInsulin);
        assert_eq!(discretize(0.96, 1.0, DEFAULT_RHO), ControlAction::KeepInsulin);
    }
}
