//! Vibration kinematics and the programmable drive waveform.
//!
//! Peak acceleration of harmonic base motion is `n_g = A·ω²/g` with
//! `ω = 2πf`. Amplitudes are zero-to-peak, in meters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gravitational acceleration used by every conversion in the crate, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Fixed physical constants. Not configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub g: f64,
}

impl PhysicalConstants {
    pub const STANDARD: PhysicalConstants = PhysicalConstants {
        g: STANDARD_GRAVITY,
    };

    /// `4π²/g`, the factor relating `A·f²` to peak acceleration in g.
    pub fn kinematic_coefficient(&self) -> f64 {
        4.0 * PI * PI / self.g
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExcitationError {
    #[error("frequency must be positive, got {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("amplitude must be non-negative, got {0} m")]
    NegativeAmplitude(f64),
    #[error("target acceleration must be non-negative, got {0} g")]
    NegativeAcceleration(f64),
    #[error("duty cycle must lie in (0, 1], got {0}")]
    DutyCycleOutOfRange(f64),
    #[error("sample time must be non-negative, got {0} s")]
    NegativeTime(f64),
}

fn check_frequency(frequency: f64) -> Result<(), ExcitationError> {
    // NaN fails this comparison too.
    if frequency > 0.0 && frequency.is_finite() {
        Ok(())
    } else {
        Err(ExcitationError::NonPositiveFrequency(frequency))
    }
}

/// Peak acceleration in g of harmonic motion with zero-to-peak `amplitude`
/// (m) at `frequency` (Hz).
pub fn peak_acceleration_g(amplitude: f64, frequency: f64) -> Result<f64, ExcitationError> {
    if !(amplitude >= 0.0) {
        return Err(ExcitationError::NegativeAmplitude(amplitude));
    }
    check_frequency(frequency)?;
    let omega = 2.0 * PI * frequency;
    Ok(amplitude * omega * omega / STANDARD_GRAVITY)
}

/// Inverse of [`peak_acceleration_g`]: the zero-to-peak amplitude (m) that
/// produces `target` g at `frequency`.
pub fn amplitude_for_acceleration(target: f64, frequency: f64) -> Result<f64, ExcitationError> {
    if !(target >= 0.0) {
        return Err(ExcitationError::NegativeAcceleration(target));
    }
    check_frequency(frequency)?;
    let omega = 2.0 * PI * frequency;
    Ok(target * STANDARD_GRAVITY / (omega * omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    #[default]
    Sine,
    Square,
    Triangle,
}

/// One programmed drive setting of the function generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExcitation", into = "RawExcitation")]
pub struct ExcitationSpec {
    frequency: f64,
    amplitude: f64,
    waveform: Waveform,
    duty_cycle: f64,
}

#[derive(Serialize, Deserialize)]
struct RawExcitation {
    frequency_hz: f64,
    amplitude_m: f64,
    #[serde(default)]
    waveform: Waveform,
    #[serde(default = "default_duty")]
    duty_cycle: f64,
}

fn default_duty() -> f64 {
    1.0
}

impl TryFrom<RawExcitation> for ExcitationSpec {
    type Error = ExcitationError;

    fn try_from(raw: RawExcitation) -> Result<Self, Self::Error> {
        ExcitationSpec::new(
            raw.frequency_hz,
            raw.amplitude_m,
            raw.waveform,
            raw.duty_cycle,
        )
    }
}

impl From<ExcitationSpec> for RawExcitation {
    fn from(spec: ExcitationSpec) -> Self {
        RawExcitation {
            frequency_hz: spec.frequency,
            amplitude_m: spec.amplitude,
            waveform: spec.waveform,
            duty_cycle: spec.duty_cycle,
        }
    }
}

impl ExcitationSpec {
    pub fn new(
        frequency: f64,
        amplitude: f64,
        waveform: Waveform,
        duty_cycle: f64,
    ) -> Result<Self, ExcitationError> {
        check_frequency(frequency)?;
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(ExcitationError::NegativeAmplitude(amplitude));
        }
        if !(duty_cycle > 0.0 && duty_cycle <= 1.0) {
            return Err(ExcitationError::DutyCycleOutOfRange(duty_cycle));
        }
        Ok(ExcitationSpec {
            frequency,
            amplitude,
            waveform,
            duty_cycle,
        })
    }

    /// Sine drive at `frequency` whose peak acceleration is `accel_g`.
    pub fn sine_at_acceleration(accel_g: f64, frequency: f64) -> Result<Self, ExcitationError> {
        let amplitude = amplitude_for_acceleration(accel_g, frequency)?;
        ExcitationSpec::new(frequency, amplitude, Waveform::Sine, 1.0)
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn waveform(&self) -> Waveform {
        self.waveform
    }

    /// Duty cycle as programmed. Only the square waveform uses it.
    pub fn duty_cycle(&self) -> f64 {
        self.duty_cycle
    }

    pub fn effective_duty_cycle(&self) -> f64 {
        match self.waveform {
            Waveform::Square => self.duty_cycle,
            Waveform::Sine | Waveform::Triangle => 1.0,
        }
    }

    pub fn angular_velocity(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn peak_acceleration_g(&self) -> f64 {
        let omega = self.angular_velocity();
        self.amplitude * omega * omega / STANDARD_GRAVITY
    }
}

/// Base displacement (m) commanded by `spec` at time `t` (s).
pub fn waveform_sample(spec: &ExcitationSpec, t: f64) -> Result<f64, ExcitationError> {
    if !(t >= 0.0) {
        return Err(ExcitationError::NegativeTime(t));
    }
    let phase = (t * spec.frequency).rem_euclid(1.0);
    let a = spec.amplitude;
    let value = match spec.waveform {
        Waveform::Sine => a * (2.0 * PI * phase).sin(),
        Waveform::Square => {
            if phase < spec.duty_cycle {
                a
            } else {
                -a
            }
        }
        // Rises from 0 like the sine: peak at 1/4, trough at 3/4.
        Waveform::Triangle => {
            if phase < 0.25 {
                a * 4.0 * phase
            } else if phase < 0.75 {
                a * (2.0 - 4.0 * phase)
            } else {
                a * (4.0 * phase - 4.0)
            }
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_amplitude_gives_zero_acceleration() {
        assert_eq!(peak_acceleration_g(0.0, 80.0).unwrap(), 0.0);
    }

    #[test]
    fn one_millimetre_at_80_hz() {
        let n = peak_acceleration_g(0.001, 80.0).unwrap();
        assert!((n - 25.756).abs() < 1e-3, "{n}");
    }

    #[test]
    fn twenty_g_round_trip() {
        let n = peak_acceleration_g(7.766e-4, 80.0).unwrap();
        assert!((n - 20.0).abs() < 0.01, "{n}");
    }

    #[test]
    fn rounded_coefficient_agrees() {
        let c = PhysicalConstants::STANDARD.kinematic_coefficient();
        assert!(rel(4.0243, c) < 5e-4);
        let n = peak_acceleration_g(0.001, 80.0).unwrap();
        assert!(rel(4.0243 * 0.001 * 6400.0, n) < 5e-4);
    }

    #[test]
    fn inverse_examples() {
        assert!((amplitude_for_acceleration(20.0, 80.0).unwrap() - 7.766e-4).abs() < 1e-7);
        assert_eq!(amplitude_for_acceleration(0.0, 13.0).unwrap(), 0.0);
        assert!((amplitude_for_acceleration(25.756, 80.0).unwrap() - 0.001).abs() < 1e-6);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            peak_acceleration_g(-1e-3, 80.0),
            Err(ExcitationError::NegativeAmplitude(_))
        ));
        assert!(matches!(
            peak_acceleration_g(1e-3, 0.0),
            Err(ExcitationError::NonPositiveFrequency(_))
        ));
        assert!(matches!(
            amplitude_for_acceleration(-2.0, 80.0),
            Err(ExcitationError::NegativeAcceleration(_))
        ));
        assert!(amplitude_for_acceleration(2.0, -80.0).is_err());
        assert!(amplitude_for_acceleration(2.0, f64::NAN).is_err());
        assert!(ExcitationSpec::new(80.0, 1e-3, Waveform::Square, 0.0).is_err());
        assert!(ExcitationSpec::new(80.0, 1e-3, Waveform::Square, 1.5).is_err());
    }

    #[test]
    fn waveform_examples() {
        let sine = ExcitationSpec::new(80.0, 0.001, Waveform::Sine, 1.0).unwrap();
        assert_eq!(waveform_sample(&sine, 0.0).unwrap(), 0.0);
        assert!((waveform_sample(&sine, 1.0 / 320.0).unwrap() - 0.001).abs() < 1e-15);

        let square = ExcitationSpec::new(80.0, 0.001, Waveform::Square, 0.5).unwrap();
        assert_eq!(waveform_sample(&square, 0.9 / 80.0).unwrap(), -0.001);
        assert_eq!(waveform_sample(&square, 0.1 / 80.0).unwrap(), 0.001);

        let tri = ExcitationSpec::new(80.0, 0.001, Waveform::Triangle, 1.0).unwrap();
        assert!((waveform_sample(&tri, 0.25 / 80.0).unwrap() - 0.001).abs() < 1e-15);
        assert!((waveform_sample(&tri, 0.75 / 80.0).unwrap() + 0.001).abs() < 1e-15);
        assert!(waveform_sample(&tri, -1.0).is_err());
    }

    #[test]
    fn duty_cycle_ignored_off_square() {
        let sine = ExcitationSpec::new(80.0, 0.001, Waveform::Sine, 0.3).unwrap();
        assert_eq!(sine.effective_duty_cycle(), 1.0);
        let sq = ExcitationSpec::new(80.0, 0.001, Waveform::Square, 0.3).unwrap();
        assert_eq!(sq.effective_duty_cycle(), 0.3);
    }

    #[test]
    fn spec_serializes_with_validation() {
        let spec = ExcitationSpec::sine_at_acceleration(20.0, 80.0).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ExcitationSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let bad = r#"{"frequency_hz":-1.0,"amplitude_m":0.001}"#;
        assert!(serde_json::from_str::<ExcitationSpec>(bad).is_err());
    }

    fn waveform_strategy() -> impl Strategy<Value = Waveform> {
        prop_oneof![
            Just(Waveform::Sine),
            Just(Waveform::Square),
            Just(Waveform::Triangle)
        ]
    }

    proptest! {
        #[test]
        fn inverse_round_trip(n in 0.0f64..200.0, f in 1e-2f64..4e4) {
            let a = amplitude_for_acceleration(n, f).unwrap();
            let back = peak_acceleration_g(a, f).unwrap();
            if n == 0.0 {
                prop_assert_eq!(back, 0.0);
            } else {
                prop_assert!(rel(back, n) < 1e-9);
            }
        }

        #[test]
        fn doubling_frequency_quadruples(a in 0.0f64..0.01, f in 1e-2f64..2e4) {
            let n1 = peak_acceleration_g(a, f).unwrap();
            let n2 = peak_acceleration_g(a, 2.0 * f).unwrap();
            prop_assert_eq!(n2, 4.0 * n1);
        }

        #[test]
        fn waveform_periodic_and_bounded(
            wf in waveform_strategy(),
            a in 0.0f64..0.01,
            f in 1.0f64..1000.0,
            duty in 0.05f64..1.0,
            t in 0.0f64..10.0,
            k in 0u32..1000,
        ) {
            let spec = ExcitationSpec::new(f, a, wf, duty).unwrap();
            let v0 = waveform_sample(&spec, t).unwrap();
            let v1 = waveform_sample(&spec, t + k as f64 / f).unwrap();
            prop_assert!(v0.abs() <= a);
            // Square jumps by 2A at its edges; skip samples within rounding of one.
            if wf == Waveform::Square {
                let phase = (t * f).rem_euclid(1.0);
                let near_edge = (phase - spec.duty_cycle()).abs() < 1e-9 || !(1e-9..=1.0 - 1e-9).contains(&phase);
                prop_assume!(!near_edge);
            }
            prop_assert!((v0 - v1).abs() <= 1e-12, "{} vs {}", v0, v1);
        }
    }
}
