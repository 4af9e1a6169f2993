//! Basal-bolus controller: constant basal rate, meal bolus by carb
//! ratio, and an IOB-subtracted correction bolus above target.

use super::patient::{ControlCommand, PatientProfile};

/// Computes the command for one step from the sensed glucose, current
/// insulin on board, and any announced meal.
pub fn controller_step(
    sensed_bg: f64,
    iob: f64,
    announced_carbs: f64,
    profile: &PatientProfile,
    bgt: f64,
) -> ControlCommand {
    debug_assert!(sensed_bg > 0.0);
    let meal_bolus = announced_carbs / profile.carb_ratio;
    let correction = if sensed_bg > bgt {
        ((sensed_bg - bgt) / profile.insulin_sensitivity - iob).max(0.0)
    } else {
        0.0
    };
    ControlCommand {
        insulin_rate: profile.basal_insulin,
        bolus: meal_bolus + correction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apsim::patient::default_profiles;
    use approx::assert_abs_diff_eq;

    #[test]
    fn no_bolus_at_target() {
        let p = &default_profiles()[0];
        let cmd = controller_step(120.0, 0.0, 0.0, p, 120.0);
        assert_eq!(cmd.bolus, 0.0);
        assert_eq!(cmd.insulin_rate, p.basal_insulin);
    }

    #[test]
    fn one_unit_correction_one_sensitivity_above_target() {
        let p = &default_profiles()[0];
        let cmd = controller_step(120.0 + p.insulin_sensitivity, 0.0, 0.0, p, 120.0);
        assert_abs_diff_eq!(cmd.bolus, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn iob_above_need_leaves_meal_bolus_only() {
        let p = &default_profiles()[0];
        let cmd = controller_step(300.0, 10.0, 30.0, p, 120.0);
        assert_abs_diff_eq!(cmd.bolus, 30.0 / p.carb_ratio, epsilon = 1e-12);
    }

    #[test]
    fn below_target_never_corrects() {
        let p = &default_profiles()[0];
        let cmd = controller_step(80.0, 0.0, 0.0, p, 120.0);
        assert_eq!(cmd.bolus, 0.0);
    }
}
