//! Fault injection on the sensor reading or the issued command.

use serde::{Deserialize, Serialize};

use super::patient::ControlCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Adds `magnitude` mg/dL to the sensed glucose.
    SensorBias,
    /// Holds the sensed glucose at its value from the fault's first
    /// step; magnitude is ignored.
    SensorFreeze,
    /// Replaces the basal rate with `magnitude` U/h and drops the
    /// bolus entirely.
    CommandOverwrite,
    /// Multiplies both rate and bolus by `magnitude`.
    CommandScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// First faulty step.
    pub start: u32,
    /// Number of consecutive faulty steps; at least 1.
    pub duration: u32,
    pub magnitude: f64,
}

impl FaultSpec {
    pub fn active_at(&self, t: u32) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    pub fn apply_to_sensor(&self, t: u32, sensed: f64, frozen: Option<f64>) -> f64 {
        if !self.active_at(t) {
            return sensed;
        }
        match self.kind {
            FaultKind::SensorBias => sensed + self.magnitude,
            FaultKind::SensorFreeze => frozen.unwrap_or(sensed),
            _ => sensed,
        }
    }

    pub fn apply_to_command(&self, t: u32, cmd: ControlCommand) -> ControlCommand {
        if !self.active_at(t) {
            return cmd;
        }
        match self.kind {
            FaultKind::CommandOverwrite => ControlCommand {
                insulin_rate: self.magnitude,
                bolus: 0.0,
            },
            FaultKind::CommandScale => ControlCommand {
                insulin_rate: cmd.insulin_rate * self.magnitude,
                bolus: cmd.bolus * self.magnitude,
            },
            _ => cmd,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activity_window_is_half_open() {
        let f = FaultSpec {
            kind: FaultKind::SensorBias,
            start: 10,
            duration: 5,
            magnitude: 40.0,
        };
        assert!(!f.active_at(9));
        assert!(f.active_at(10));
        assert!(f.active_at(14));
        assert!(!f.active_at(15));
    }

    #[test]
    fn bias_and_freeze_touch_sensor_only() {
        let bias = FaultSpec {
            kind: FaultKind::SensorBias,
            start: 0,
            duration: 1,
            magnitude: 40.0,
        };
        assert_eq!(bias.apply_to_sensor(0, 100.0, None), 140.0);
        let cmd = ControlCommand {
            insulin_rate: 1.0,
            bolus: 2.0,
        };
        assert_eq!(bias.apply_to_command(0, cmd), cmd);

        let freeze = FaultSpec {
            kind: FaultKind::SensorFreeze,
            start: 0,
            duration: 2,
            magnitude: 0.0,
        };
        assert_eq!(freeze.apply_to_sensor(1, 150.0, Some(90.0)), 90.0);
    }

    #[test]
    fn overwrite_zeroes_bolus() {
        let f = FaultSpec {
            kind: FaultKind::CommandOverwrite,
            start: 0,
            duration: 1,
            magnitude: 0.0,
        };
        let cmd = f.apply_to_command(
            0,
            ControlCommand {
                insulin_rate: 1.5,
                bolus: 4.0,
            },
        );
        assert_eq!(cmd.insulin_rate, 0.0);
        assert_eq!(cmd.bolus, 0.0);
    }
}
