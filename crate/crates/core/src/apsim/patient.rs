//! Minimal glucose-insulin patient model, explicit Euler at 5-minute
//! steps.
//!
//! States: blood glucose BG (mg/dL), remote insulin action X (1/min,
//! a deviation from basal action, so it can go negative when insulin
//! is suspended), plasma insulin I (U), insulin on board IOB (U of
//! delivered insulin in excess of basal), and active gut carbs (g).
//!
//! With basal insulin only and no meals the model sits exactly at
//! BG = basal_glucose: plasma insulin equals basal_insulin/(60*n),
//! X = 0, IOB = 0.

use serde::{Deserialize, Serialize};

use super::ApsimError;

/// One simulation step is 5 minutes.
pub const DT_MIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Glucose self-regulation rate toward basal, 1/min.
    pub glucose_decay: f64,
    /// Remote insulin action decay, 1/min.
    pub action_decay: f64,
    /// Insulin action gain, (1/min) per U of plasma insulin deviation.
    pub action_gain: f64,
    /// Plasma insulin clearance, 1/min.
    pub insulin_clearance: f64,
    /// Gut carbohydrate absorption rate, 1/min.
    pub carb_absorption: f64,
    /// Physiological BG rise per gram of absorbed carbohydrate,
    /// mg/dL. Deliberately larger than the therapy settings imply, so
    /// meal boluses under-cover and corrections do real work.
    pub carb_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: String,
    /// Fasting equilibrium glucose, mg/dL; must lie in [80, 160].
    pub basal_glucose: f64,
    /// Basal pump rate, U/h.
    pub basal_insulin: f64,
    /// Correction factor, mg/dL drop per U.
    pub insulin_sensitivity: f64,
    /// Grams of carbohydrate covered by one unit.
    pub carb_ratio: f64,
    pub dynamics: DynamicsParams,
    /// IOB exponential decay, 1/min.
    pub iob_decay: f64,
}

impl PatientProfile {
    /// Plasma insulin level at which clearance balances the basal
    /// delivery rate.
    pub fn basal_plasma_insulin(&self) -> f64 {
        self.basal_insulin / 60.0 / self.dynamics.insulin_clearance
    }

    /// BG rise per gram of absorbed carbohydrate, mg/dL.
    pub fn carb_gain(&self) -> f64 {
        self.dynamics.carb_gain
    }

    pub fn validate(&self) -> Result<(), ApsimError> {
        let d = &self.dynamics;
        let positive = [
            d.glucose_decay,
            d.action_decay,
            d.action_gain,
            d.insulin_clearance,
            d.carb_absorption,
            d.carb_gain,
            self.iob_decay,
            self.basal_insulin,
            self.insulin_sensitivity,
            self.carb_ratio,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(ApsimError::InvalidProfile {
                id: self.id.clone(),
                reason: "all rate constants must be strictly positive".into(),
            });
        }
        if !(80.0..=160.0).contains(&self.basal_glucose) {
            return Err(ApsimError::InvalidProfile {
                id: self.id.clone(),
                reason: format!("basal_glucose {} outside [80, 160]", self.basal_glucose),
            });
        }
        Ok(())
    }
}

/// Four synthetic adult profiles spanning the supported therapy
/// ranges. Action gains are scaled so one unit of insulin drops BG by
/// roughly the profile's sensitivity.
pub fn default_profiles() -> Vec<PatientProfile> {
    let make = |id: &str, gb: f64, basal: f64, sens: f64, ratio: f64, clearance: f64| {
        let action_decay = 0.02;
        PatientProfile {
            id: id.to_string(),
            basal_glucose: gb,
            basal_insulin: basal,
            insulin_sensitivity: sens,
            carb_ratio: ratio,
            dynamics: DynamicsParams {
                glucose_decay: 0.002,
                action_decay,
                action_gain: sens * action_decay * clearance / 120.0,
                insulin_clearance: clearance,
                carb_absorption: 0.015,
                // Therapy ratio covers about 71% of the true rise, so
                // correction doses carry real weight in the loop.
                carb_gain: 1.4 * sens / ratio,
            },
            iob_decay: 0.03,
        }
    };
    vec![
        make("adult_1", 125.0, 1.0, 40.0, 10.0, 0.10),
        make("adult_2", 115.0, 1.2, 35.0, 8.0, 0.11),
        make("adult_3", 135.0, 0.8, 45.0, 12.0, 0.09),
        make("adult_4", 120.0, 0.9, 50.0, 15.0, 0.10),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Step index; one step is 5 minutes.
    pub t: u32,
    pub bg: f64,
    pub remote_action: f64,
    pub plasma_insulin: f64,
    pub iob: f64,
    pub carbs_active: f64,
}

impl SimState {
    /// Exact fasting fixed point for the profile.
    pub fn equilibrium(profile: &PatientProfile) -> Self {
        SimState {
            t: 0,
            bg: profile.basal_glucose,
            remote_action: 0.0,
            plasma_insulin: profile.basal_plasma_insulin(),
            iob: 0.0,
            carbs_active: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    /// U/h, continuous.
    pub insulin_rate: f64,
    /// U delivered within this step.
    pub bolus: f64,
}

impl ControlCommand {
    pub fn basal(profile: &PatientProfile) -> Self {
        ControlCommand {
            insulin_rate: profile.basal_insulin,
            bolus: 0.0,
        }
    }
}

/// Advances the state by one 5-minute step. `meal_carbs` grams enter
/// the gut compartment at the start of the step.
pub fn step_patient(
    state: &SimState,
    profile: &PatientProfile,
    command: &ControlCommand,
    meal_carbs: f64,
) -> Result<SimState, ApsimError> {
    debug_assert!(meal_carbs >= 0.0);
    debug_assert!(command.insulin_rate >= 0.0 && command.bolus >= 0.0);
    let d = &profile.dynamics;
    let carbs = state.carbs_active + meal_carbs;

    let delivered = command.insulin_rate / 60.0 * DT_MIN + command.bolus;
    let basal_amount = profile.basal_insulin / 60.0 * DT_MIN;

    let d_bg = -d.glucose_decay * (state.bg - profile.basal_glucose)
        - state.remote_action * state.bg
        + profile.carb_gain() * d.carb_absorption * carbs;
    let d_action = -d.action_decay * state.remote_action
        + d.action_gain * (state.plasma_insulin - profile.basal_plasma_insulin());
    let d_insulin = -d.insulin_clearance * state.plasma_insulin + command.insulin_rate / 60.0;

    let next = SimState {
        t: state.t + 1,
        bg: (state.bg + d_bg * DT_MIN).clamp(1.0, 1000.0),
        remote_action: state.remote_action + d_action * DT_MIN,
        plasma_insulin: state.plasma_insulin + d_insulin * DT_MIN + command.bolus,
        iob: state.iob * (-profile.iob_decay * DT_MIN).exp() + (delivered - basal_amount).max(0.0),
        carbs_active: carbs * (1.0 - d.carb_absorption * DT_MIN).max(0.0),
    };
    let finite = next.bg.is_finite()
        && next.remote_action.is_finite()
        && next.plasma_insulin.is_finite()
        && next.iob.is_finite()
        && next.carbs_active.is_finite();
    if !finite {
        return Err(ApsimError::Divergence { step: next.t });
    }
    Ok(next)
}
