//! Fatigue test condition (constant-amplitude harmonic vibration, 20 g,
//! 60 ± 20 Hz, 32 ± 8 h per orientation) and its compiled schedule.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut_sim::Axis;
use crate::excitation::{
    amplitude_for_acceleration, peak_acceleration_g, ExcitationSpec, Waveform,
};

pub const FREQUENCY_MIN_HZ: f64 = 40.0;
pub const FREQUENCY_MAX_HZ: f64 = 80.0;
pub const DURATION_MIN_H: f64 = 24.0;
pub const DURATION_MAX_H: f64 = 40.0;
/// Allowed relative mismatch between a phase's drive and the target acceleration.
pub const ACCELERATION_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FatigueTestCondition {
    #[serde(rename = "target_peak_acceleration_g")]
    pub target_peak_acceleration: f64,
    #[serde(rename = "frequency_hz")]
    pub frequency: f64,
    #[serde(rename = "duration_per_orientation_h")]
    pub duration_per_orientation: f64,
    pub orientations: Vec<Axis>,
    #[serde(default)]
    pub waveform: Waveform,
    /// Explicit drive amplitude in meters. When absent the amplitude is
    /// derived from the target acceleration.
    #[serde(
        default,
        rename = "amplitude_m",
        skip_serializing_if = "Option::is_none"
    )]
    pub amplitude: Option<f64>,
}

impl Default for FatigueTestCondition {
    fn default() -> Self {
        FatigueTestCondition {
            target_peak_acceleration: 20.0,
            frequency: 80.0,
            duration_per_orientation: 32.0,
            orientations: Axis::ALL.to_vec(),
            waveform: Waveform::Sine,
            amplitude: None,
        }
    }
}

/// One envelope breach: which field, the bound it broke, and its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub bound: String,
    pub actual: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: expected {}, got {}",
            self.field, self.bound, self.actual
        )
    }
}

fn violation(field: &str, bound: impl Into<String>, actual: impl fmt::Display) -> Violation {
    Violation {
        field: field.to_string(),
        bound: bound.into(),
        actual: actual.to_string(),
    }
}

/// A condition that passed [`validate_condition`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedCondition(FatigueTestCondition);

impl ValidatedCondition {
    pub fn condition(&self) -> &FatigueTestCondition {
        &self.0
    }

    pub fn into_inner(self) -> FatigueTestCondition {
        self.0
    }
}

/// Checks the condition against the test envelope, reporting every breach.
pub fn validate_condition(
    cond: &FatigueTestCondition,
) -> Result<ValidatedCondition, Vec<Violation>> {
    let mut violations = Vec::new();

    if !(cond.target_peak_acceleration > 0.0 && cond.target_peak_acceleration.is_finite()) {
        violations.push(violation(
            "target_peak_acceleration_g",
            "> 0",
            cond.target_peak_acceleration,
        ));
    }
    if !(cond.frequency >= FREQUENCY_MIN_HZ && cond.frequency <= FREQUENCY_MAX_HZ) {
        violations.push(violation(
            "frequency_hz",
            format!("within [{FREQUENCY_MIN_HZ}, {FREQUENCY_MAX_HZ}] Hz"),
            cond.frequency,
        ));
    }
    if !(cond.duration_per_orientation >= DURATION_MIN_H
        && cond.duration_per_orientation <= DURATION_MAX_H)
    {
        violations.push(violation(
            "duration_per_orientation_h",
            format!("within [{DURATION_MIN_H}, {DURATION_MAX_H}] h"),
            cond.duration_per_orientation,
        ));
    }
    if cond.orientations.is_empty() {
        violations.push(violation("orientations", "at least one of X, Y, Z", "[]"));
    }
    for (i, axis) in cond.orientations.iter().enumerate() {
        if cond.orientations[..i].contains(axis) {
            violations.push(violation(
                "orientations",
                "no duplicates",
                format!("{axis} repeated"),
            ));
        }
    }
    if let Some(amplitude) = cond.amplitude {
        match peak_acceleration_g(amplitude, cond.frequency) {
            Ok(n) => {
                let target = cond.target_peak_acceleration;
                if !((n - target).abs() <= ACCELERATION_TOLERANCE * target.abs()) {
                    violations.push(violation(
                        "amplitude_m",
                        format!(
                            "peak acceleration within {}% of {target} g",
                            ACCELERATION_TOLERANCE * 100.0
                        ),
                        format!("{amplitude} m -> {n:.2} g"),
                    ));
                }
            }
            Err(e) => violations.push(violation("amplitude_m", "non-negative", e)),
        }
    }

    if violations.is_empty() {
        Ok(ValidatedCondition(cond.clone()))
    } else {
        Err(violations)
    }
}

/// One orientation's fatigue run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub orientation: Axis,
    pub excitation: ExcitationSpec,
    pub planned_cycles: u64,
    #[serde(rename = "planned_duration_s")]
    pub planned_duration: f64,
}

/// When checkpoint measurements are taken. `before` precedes a batch's
/// first phase and `after` follows its last; mid checkpoints fire every
/// `mid_interval_cycles` of fatigue within a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub before: bool,
    pub after: bool,
    #[serde(default)]
    pub mid_interval_cycles: Option<u64>,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy {
            before: true,
            after: true,
            mid_interval_cycles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSchedule {
    pub target_peak_acceleration_g: f64,
    pub phases: Vec<Phase>,
    pub checkpoints: CheckpointPolicy,
}

impl CampaignSchedule {
    pub fn total_planned_cycles(&self) -> u64 {
        self.phases.iter().map(|p| p.planned_cycles).sum()
    }

    pub fn with_mid_checkpoints(mut self, interval_cycles: Option<u64>) -> Self {
        self.checkpoints.mid_interval_cycles = interval_cycles.filter(|&n| n > 0);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid test condition: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Validates `cond` and expands it into one phase per orientation.
pub fn compile_schedule(cond: &FatigueTestCondition) -> Result<CampaignSchedule, ScheduleError> {
    let cond = validate_condition(cond)
        .map_err(ScheduleError::Invalid)?
        .into_inner();
    let amplitude = match cond.amplitude {
        Some(a) => a,
        None => amplitude_for_acceleration(cond.target_peak_acceleration, cond.frequency)
            .expect("validated condition"),
    };
    let excitation = ExcitationSpec::new(cond.frequency, amplitude, cond.waveform, 1.0)
        .expect("validated condition");
    let duration_s = cond.duration_per_orientation * 3600.0;
    let planned_cycles = (cond.frequency * duration_s).round() as u64;
    let phases = cond
        .orientations
        .iter()
        .map(|&orientation| Phase {
            orientation,
            excitation,
            planned_cycles,
            planned_duration: duration_s,
        })
        .collect();
    Ok(CampaignSchedule {
        target_peak_acceleration_g: cond.target_peak_acceleration,
        phases,
        checkpoints: CheckpointPolicy::default(),
    })
}
