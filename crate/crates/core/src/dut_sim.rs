//! Simulated 3-axis capacitive MEMS accelerometer.
//!
//! Each sensing axis is an independent base-excited second-order resonator
//! read out through a half-bridge with a DC sensitivity and zero-g offset.
//! Populations carry per-axis manufacturing spread; degradation is a step
//! change at a programmed fatigue cycle count.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of nominal supply current drawn by a specimen with an open output.
pub const OPEN_OUTPUT_CURRENT_FRACTION: f64 = 0.02;

/// Manufacturing draws are truncated at this many standard deviations.
const TRUNCATION_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DutError {
    #[error("unknown axis label {0:?}")]
    UnknownAxis(String),
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> DutError {
    DutError::InvalidParameter {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = DutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            "Z" | "z" => Ok(Axis::Z),
            other => Err(DutError::UnknownAxis(other.to_string())),
        }
    }
}

/// One value per sensing axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerAxis<T> {
    #[serde(rename = "X")]
    pub x: T,
    #[serde(rename = "Y")]
    pub y: T,
    #[serde(rename = "Z")]
    pub z: T,
}

impl<T: Clone> PerAxis<T> {
    pub fn splat(value: T) -> Self {
        PerAxis {
            x: value.clone(),
            y: value.clone(),
            z: value,
        }
    }
}

impl<T> PerAxis<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        PerAxis { x, y, z }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Axis, &T)> {
        [(Axis::X, &self.x), (Axis::Y, &self.y), (Axis::Z, &self.z)].into_iter()
    }

    pub fn map<U>(&self, mut f: impl FnMut(Axis, &T) -> U) -> PerAxis<U> {
        PerAxis {
            x: f(Axis::X, &self.x),
            y: f(Axis::Y, &self.y),
            z: f(Axis::Z, &self.z),
        }
    }
}

impl<T> Index<Axis> for PerAxis<T> {
    type Output = T;

    fn index(&self, axis: Axis) -> &T {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
            Axis::Z => &self.z,
        }
    }
}

impl<T> IndexMut<Axis> for PerAxis<T> {
    fn index_mut(&mut self, axis: Axis) -> &mut T {
        match axis {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
            Axis::Z => &mut self.z,
        }
    }
}

/// Mechanical and readout parameters of one sensing axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisParams {
    /// Undamped natural frequency, Hz.
    #[serde(rename = "natural_frequency_hz")]
    pub natural_frequency: f64,
    pub damping_ratio: f64,
    /// Volts per g at DC.
    #[serde(rename = "sensitivity_v_per_g")]
    pub sensitivity: f64,
    #[serde(rename = "zero_g_offset_v")]
    pub zero_g_offset: f64,
}

impl Default for AxisParams {
    fn default() -> Self {
        AxisParams {
            natural_frequency: 2000.0,
            damping_ratio: 0.05,
            sensitivity: 0.66,
            zero_g_offset: 1.65,
        }
    }
}

impl AxisParams {
    pub fn validate(&self) -> Result<(), DutError> {
        if !(self.natural_frequency > 0.0 && self.natural_frequency.is_finite()) {
            return Err(invalid("natural_frequency", "must be positive"));
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < std::f64::consts::FRAC_1_SQRT_2) {
            return Err(invalid("damping_ratio", "must lie in (0, 1/sqrt(2))"));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(invalid("sensitivity", "must be positive"));
        }
        if !self.zero_g_offset.is_finite() {
            return Err(invalid("zero_g_offset", "must be finite"));
        }
        Ok(())
    }

    /// Frequency of maximum [`axis_gain`], `f_n·√(1−2ζ²)`.
    pub fn peak_frequency(&self) -> f64 {
        let z = self.damping_ratio;
        self.natural_frequency * (1.0 - 2.0 * z * z).sqrt()
    }

    pub fn peak_gain(&self) -> f64 {
        let z = self.damping_ratio;
        1.0 / (2.0 * z * (1.0 - z * z).sqrt())
    }
}

/// Magnitude of the second-order base-excitation response relative to DC.
pub fn axis_gain(params: &AxisParams, frequency: f64) -> f64 {
    let r = frequency / params.natural_frequency;
    let stiffness = 1.0 - r * r;
    let damping = 2.0 * params.damping_ratio * r;
    1.0 / (stiffness * stiffness + damping * damping).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FailureMode {
    #[default]
    None,
    /// Output latched at a fixed voltage (e.g. stiction of the proof mass).
    StuckOutput { volts: f64 },
    /// Output disconnected: reads 0 V.
    OpenOutput,
}

/// Degradation of a specimen. Fields are relative changes; zero is pristine.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DegradationState {
    #[serde(default)]
    pub resonance_shift_fraction: PerAxis<f64>,
    #[serde(default)]
    pub sensitivity_drift_fraction: PerAxis<f64>,
    #[serde(default)]
    pub failure_mode: FailureMode,
    /// Fatigue cycle count at which the damage appears.
    #[serde(default)]
    pub onset_cycle: u64,
}

impl DegradationState {
    pub fn is_pristine(&self) -> bool {
        self.failure_mode == FailureMode::None
            && self.resonance_shift_fraction == PerAxis::splat(0.0)
            && self.sensitivity_drift_fraction == PerAxis::splat(0.0)
    }

    pub fn validate(&self) -> Result<(), DutError> {
        for (axis, s) in self.resonance_shift_fraction.iter() {
            if !(*s > -1.0 && s.is_finite()) {
                return Err(invalid(
                    format!("resonance_shift_fraction.{axis}"),
                    "must be > -1",
                ));
            }
        }
        for (axis, s) in self.sensitivity_drift_fraction.iter() {
            if !(*s > -1.0 && s.is_finite()) {
                return Err(invalid(
                    format!("sensitivity_drift_fraction.{axis}"),
                    "must be > -1",
                ));
            }
        }
        Ok(())
    }
}

/// One simulated specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutModel {
    pub specimen_id: String,
    pub axes: PerAxis<AxisParams>,
    #[serde(rename = "supply_current_a")]
    pub supply_current: f64,
    /// Damage currently in effect.
    #[serde(default)]
    pub degradation: DegradationState,
    /// Damage that takes effect once `fatigue_cycles` reaches its onset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_damage: Option<DegradationState>,
    #[serde(default)]
    pub fatigue_cycles: u64,
}

impl Default for DutModel {
    fn default() -> Self {
        DutModel {
            specimen_id: "nominal".to_string(),
            axes: PerAxis::splat(AxisParams::default()),
            supply_current: 1.5e-3,
            degradation: DegradationState::default(),
            latent_damage: None,
            fatigue_cycles: 0,
        }
    }
}

impl DutModel {
    pub fn validate(&self) -> Result<(), DutError> {
        for (axis, params) in self.axes.iter() {
            params.validate().map_err(|e| match e {
                DutError::InvalidParameter { field, reason } => {
                    invalid(format!("axes.{axis}.{field}"), reason)
                }
                other => other,
            })?;
        }
        if !(self.supply_current > 0.0 && self.supply_current.is_finite()) {
            return Err(invalid("supply_current", "must be positive"));
        }
        self.degradation.validate()?;
        if let Some(d) = &self.latent_damage {
            d.validate()?;
        }
        Ok(())
    }

    /// Axis parameters with the active degradation folded in.
    pub fn effective_axis(&self, axis: Axis) -> AxisParams {
        let nominal = self.axes[axis];
        AxisParams {
            natural_frequency: nominal.natural_frequency
                * (1.0 + self.degradation.resonance_shift_fraction[axis]),
            sensitivity: nominal.sensitivity
                * (1.0 + self.degradation.sensitivity_drift_fraction[axis]),
            ..nominal
        }
    }

    /// Returns a copy whose `latent_damage` fires at its onset during fatigue.
    pub fn with_latent_damage(mut self, damage: DegradationState) -> Self {
        self.latent_damage = Some(damage);
        self
    }

    /// Runs `cycles` of fatigue using this specimen's latent damage, if any.
    pub fn fatigue(&self, cycles: u64) -> DutModel {
        apply_fatigue(self, cycles, self.latent_damage.as_ref())
    }

    /// Operating supply current, A.
    pub fn current_draw(&self) -> f64 {
        match self.degradation.failure_mode {
            FailureMode::OpenOutput => self.supply_current * OPEN_OUTPUT_CURRENT_FRACTION,
            _ => self.supply_current,
        }
    }
}

/// Output voltage of one axis under a harmonic acceleration of peak
/// `applied_acceleration` g at `frequency` Hz. For AC drive this is the
/// voltage at the acceleration peak.
pub fn output_voltage(
    dut: &DutModel,
    axis: Axis,
    applied_acceleration: f64,
    frequency: f64,
) -> f64 {
    match dut.degradation.failure_mode {
        FailureMode::StuckOutput { volts } => volts,
        FailureMode::OpenOutput => 0.0,
        FailureMode::None => {
            let params = dut.effective_axis(axis);
            params.zero_g_offset
                + params.sensitivity * axis_gain(&params, frequency) * applied_acceleration
        }
    }
}

/// Like [`output_voltage`] but with the axis given as a label.
pub fn output_voltage_by_label(
    dut: &DutModel,
    axis: &str,
    applied_acceleration: f64,
    frequency: f64,
) -> Result<f64, DutError> {
    Ok(output_voltage(
        dut,
        axis.parse()?,
        applied_acceleration,
        frequency,
    ))
}

/// Analytic resonance (peak-gain) frequency of one axis, Hz.
pub fn resonance_frequency_true(dut: &DutModel, axis: Axis) -> f64 {
    dut.effective_axis(axis).peak_frequency()
}

/// Advances `dut` by `cycles` of fatigue. With `damage` present, it replaces
/// the active degradation once the cumulative count reaches its onset.
pub fn apply_fatigue(dut: &DutModel, cycles: u64, damage: Option<&DegradationState>) -> DutModel {
    let mut next = dut.clone();
    next.fatigue_cycles = dut.fatigue_cycles.saturating_add(cycles);
    if let Some(damage) = damage {
        if next.fatigue_cycles >= damage.onset_cycle {
            next.degradation = *damage;
        }
    }
    next
}

/// Recipe for a population with manufacturing spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub count: usize,
    /// Coefficient of variation of the natural frequency, as a fraction.
    pub natural_frequency_cov: PerAxis<f64>,
    #[serde(default)]
    pub sensitivity_cov: PerAxis<f64>,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), DutError> {
        if self.count == 0 {
            return Err(invalid("count", "must be at least 1"));
        }
        for (axis, c) in self
            .natural_frequency_cov
            .iter()
            .chain(self.sensitivity_cov.iter())
        {
            if !(*c >= 0.0 && c.is_finite()) {
                return Err(invalid(format!("cov.{axis}"), "must be non-negative"));
            }
        }
        Ok(())
    }
}

fn truncated_draw(rng: &mut ChaCha8Rng, mean: f64, cov: f64) -> f64 {
    if cov == 0.0 {
        return mean;
    }
    let sigma = mean * cov;
    let normal = Normal::new(mean, sigma).expect("finite positive sigma");
    loop {
        let v = normal.sample(rng);
        if (v - mean).abs() <= TRUNCATION_SIGMAS * sigma && v > 0.0 {
            return v;
        }
    }
}

/// Draws `spec.count` pristine specimens around `nominal`. Ids are `S01`, `S02`, ...
pub fn generate_population(
    spec: &PopulationSpec,
    nominal: &DutModel,
) -> Result<Vec<DutModel>, DutError> {
    spec.validate()?;
    nominal.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.count.to_string().len().max(2);
    let specimens = (0..spec.count)
        .map(|i| {
            let mut axes = nominal.axes;
            for axis in Axis::ALL {
                let p = &mut axes[axis];
                p.natural_frequency = truncated_draw(
                    &mut rng,
                    p.natural_frequency,
                    spec.natural_frequency_cov[axis],
                );
                p.sensitivity = truncated_draw(&mut rng, p.sensitivity, spec.sensitivity_cov[axis]);
            }
            DutModel {
                specimen_id: format!("S{:0width$}", i + 1),
                axes,
                supply_current: nominal.supply_current,
                degradation: DegradationState::default(),
                latent_damage: None,
                fatigue_cycles: 0,
            }
        })
        .collect();
    Ok(specimens)
}
