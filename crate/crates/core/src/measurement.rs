//! In-situ characterization against any [`Rig`]: output signal at a small
//! excitation, supply current, swept-sine resonance, and the before/current
//! failure detector.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut_sim::Axis;
use crate::excitation::{ExcitationError, ExcitationSpec};
use crate::rig::{Rig, RigError};

/// A sweep whose response max/min ratio is below this is treated as dead.
pub const FLAT_RESPONSE_RATIO: f64 = 1.5;

/// Output-signal excitation above this fraction of the plan target is
/// no longer "small".
pub const SMALL_EXCITATION_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Excitation(#[from] ExcitationError),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("response peak at sweep edge ({frequency} Hz); widen the sweep")]
    EdgePeak { frequency: f64 },
    #[error("flat response (max/min ratio {ratio:.3}); suspected dead axis")]
    FlatResponse { ratio: f64 },
    #[error("record {0} has no counterpart")]
    UnmatchedRecord(RecordKey),
    #[error("record {0} appears more than once in one set")]
    DuplicateRecord(RecordKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    #[default]
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(rename = "f_start_hz")]
    pub f_start: f64,
    #[serde(rename = "f_end_hz")]
    pub f_end: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
    #[serde(rename = "excitation_g")]
    pub excitation: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            f_start: 1000.0,
            f_end: 4000.0,
            points: 256,
            spacing: Spacing::Logarithmic,
            excitation: 0.156,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        if !(self.f_start > 0.0 && self.f_start < self.f_end && self.f_end.is_finite()) {
            return Err(MeasurementError::InvalidSweep(format!(
                "need 0 < f_start < f_end, got {} .. {}",
                self.f_start, self.f_end
            )));
        }
        if self.points < 8 {
            return Err(MeasurementError::InvalidSweep(format!(
                "need at least 8 points, got {}",
                self.points
            )));
        }
        if !(self.excitation > 0.0 && self.excitation.is_finite()) {
            return Err(MeasurementError::InvalidSweep(format!(
                "excitation must be positive, got {} g",
                self.excitation
            )));
        }
        Ok(())
    }

    /// Sweep frequencies, ascending, endpoints exact.
    pub fn grid(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        let mut grid: Vec<f64> = match self.spacing {
            Spacing::Linear => {
                let step = (self.f_end - self.f_start) / last;
                (0..self.points)
                    .map(|i| self.f_start + i as f64 * step)
                    .collect()
            }
            Spacing::Logarithmic => {
                let (a, b) = (self.f_start.ln(), self.f_end.ln());
                let step = (b - a) / last;
                (0..self.points)
                    .map(|i| (a + i as f64 * step).exp())
                    .collect()
            }
        };
        grid[0] = self.f_start;
        grid[self.points - 1] = self.f_end;
        grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    OutputSignal,
    Current,
    Resonance,
}

impl MeasurementKind {
    pub fn unit(&self) -> Unit {
        match self {
            MeasurementKind::OutputSignal => Unit::V,
            MeasurementKind::Current => Unit::A,
            MeasurementKind::Resonance => Unit::Hz,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MeasurementKind::OutputSignal => "output_signal",
            MeasurementKind::Current => "current",
            MeasurementKind::Resonance => "resonance",
        }
    }

    fn has_axis(&self) -> bool {
        !matches!(self, MeasurementKind::Current)
    }
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    V,
    A,
    Hz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTag {
    Before,
    After,
    /// Mid-fatigue checkpoint; carries the specimen's cumulative cycle count.
    Mid(u64),
}

impl fmt::Display for PhaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseTag::Before => f.write_str("before"),
            PhaseTag::After => f.write_str("after"),
            PhaseTag::Mid(c) => write!(f, "mid@{c}"),
        }
    }
}

/// Identity used to pair records across checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub specimen_id: String,
    pub axis: Option<Axis>,
    pub kind: MeasurementKind,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.axis {
            Some(axis) => write!(f, "{}/{}/{}", self.specimen_id, axis, self.kind),
            None => write!(f, "{}/{}", self.specimen_id, self.kind),
        }
    }
}

/// One measurement, as written to the record log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct MeasurementRecord {
    #[serde(rename = "specimen")]
    pub specimen_id: String,
    pub axis: Option<Axis>,
    pub kind: MeasurementKind,
    pub phase: PhaseTag,
    pub value: f64,
    pub unit: Unit,
    pub excitation_g: Option<f64>,
    #[serde(rename = "time_s")]
    pub timestamp: f64,
}

#[derive(Deserialize)]
struct RawRecord {
    specimen: String,
    axis: Option<Axis>,
    kind: MeasurementKind,
    phase: PhaseTag,
    value: f64,
    unit: Unit,
    excitation_g: Option<f64>,
    time_s: f64,
}

impl TryFrom<RawRecord> for MeasurementRecord {
    type Error = String;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let record = MeasurementRecord {
            specimen_id: raw.specimen,
            axis: raw.axis,
            kind: raw.kind,
            phase: raw.phase,
            value: raw.value,
            unit: raw.unit,
            excitation_g: raw.excitation_g,
            timestamp: raw.time_s,
        };
        record.validate()?;
        Ok(record)
    }
}

impl MeasurementRecord {
    pub fn new(
        specimen_id: impl Into<String>,
        axis: Option<Axis>,
        kind: MeasurementKind,
        phase: PhaseTag,
        value: f64,
        excitation_g: Option<f64>,
        timestamp: f64,
    ) -> Self {
        MeasurementRecord {
            specimen_id: specimen_id.into(),
            axis,
            kind,
            phase,
            value,
            unit: kind.unit(),
            excitation_g,
            timestamp,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            specimen_id: self.specimen_id.clone(),
            axis: self.axis,
            kind: self.kind,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.unit != self.kind.unit() {
            return Err(format!("{} record carries unit {:?}", self.kind, self.unit));
        }
        if self.kind.has_axis() != self.axis.is_some() {
            return Err(format!(
                "{} record has wrong axis field {:?}",
                self.kind, self.axis
            ));
        }
        if !self.value.is_finite() || !self.timestamp.is_finite() {
            return Err("non-finite value or timestamp".to_string());
        }
        Ok(())
    }
}

/// True when `excitation_g` is too large to count as a small-signal probe
/// of a plan whose target is `plan_target_g`.
pub fn excessive_excitation(excitation_g: f64, plan_target_g: f64) -> bool {
    excitation_g > SMALL_EXCITATION_FRACTION * plan_target_g
}

/// Output signal magnitude above the zero-g offset at a small excitation.
///
/// The offset is read with the drive at zero amplitude, then the drive is
/// raised to `excitation_g`. The drive is switched off afterwards.
pub fn measure_output_signal<R: Rig + ?Sized>(
    rig: &mut R,
    specimen: &str,
    axis: Axis,
    excitation_g: f64,
    frequency: f64,
    phase: PhaseTag,
) -> Result<MeasurementRecord, MeasurementError> {
    let quiet = ExcitationSpec::sine_at_acceleration(0.0, frequency)?;
    let drive = ExcitationSpec::sine_at_acceleration(excitation_g, frequency)?;
    rig.set_excitation(axis, quiet)?;
    let offset = rig.read_output(specimen, axis)?;
    rig.set_excitation(axis, drive)?;
    let loaded = rig.read_output(specimen, axis)?;
    let timestamp = rig.clock_seconds();
    rig.stop();
    Ok(MeasurementRecord::new(
        specimen,
        Some(axis),
        MeasurementKind::OutputSignal,
        phase,
        (loaded - offset).abs(),
        Some(excitation_g),
        timestamp,
    ))
}

pub fn measure_current<R: Rig + ?Sized>(
    rig: &mut R,
    specimen: &str,
    phase: PhaseTag,
) -> Result<MeasurementRecord, MeasurementError> {
    let amps = rig.read_current(specimen)?;
    Ok(MeasurementRecord::new(
        specimen,
        None,
        MeasurementKind::Current,
        phase,
        amps,
        None,
        rig.clock_seconds(),
    ))
}

/// Vertex abscissa of the parabola through three points; `None` if the
/// points are not strictly concave.
fn parabola_vertex(xs: [f64; 3], ys: [f64; 3]) -> Option<f64> {
    // Centre on the middle point to keep the arithmetic well conditioned.
    let (h0, h2) = (xs[0] - xs[1], xs[2] - xs[1]);
    let (d0, d2) = (ys[0] - ys[1], ys[2] - ys[1]);
    // y - y1 = a·h² + b·h through (h0, d0) and (h2, d2).
    let det = h0 * h2 * (h2 - h0);
    let a = (d2 * h0 - d0 * h2) / det;
    let b = (d0 * h2 * h2 - d2 * h0 * h0) / det;
    if !(a < 0.0) {
        return None;
    }
    let h = (-b / (2.0 * a)).clamp(h0, h2);
    Some(xs[1] + h)
}

/// Sub-grid peak location of `response` sampled on `grid`, refined by a
/// parabola through the maximum and its neighbours (in ln f for log sweeps).
pub fn refine_peak(
    grid: &[f64],
    response: &[f64],
    spacing: Spacing,
) -> Result<f64, MeasurementError> {
    let (max, min) = response
        .iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &v| {
            (hi.max(v), lo.min(v))
        });
    if !(max > 0.0) || max == min {
        return Err(MeasurementError::FlatResponse {
            ratio: if max > 0.0 { 1.0 } else { 0.0 },
        });
    }
    let peak = response
        .iter()
        .position(|&v| v == max)
        .expect("max taken from the slice");
    // A monotone in-band response is an edge peak even when it is shallow.
    if peak == 0 || peak == response.len() - 1 {
        return Err(MeasurementError::EdgePeak {
            frequency: grid[peak],
        });
    }
    if min > 0.0 && max / min < FLAT_RESPONSE_RATIO {
        return Err(MeasurementError::FlatResponse { ratio: max / min });
    }
    let to_x = |f: f64| match spacing {
        Spacing::Linear => f,
        Spacing::Logarithmic => f.ln(),
    };
    let xs = [to_x(grid[peak - 1]), to_x(grid[peak]), to_x(grid[peak + 1])];
    let ys = [response[peak - 1], response[peak], response[peak + 1]];
    let x = parabola_vertex(xs, ys).unwrap_or(xs[1]);
    Ok(match spacing {
        Spacing::Linear => x,
        Spacing::Logarithmic => x.exp(),
    })
}

/// Swept-sine resonance measurement of one axis at constant acceleration.
pub fn measure_resonance<R: Rig + ?Sized>(
    rig: &mut R,
    specimen: &str,
    axis: Axis,
    sweep: &SweepSpec,
    phase: PhaseTag,
) -> Result<MeasurementRecord, MeasurementError> {
    sweep.validate()?;
    let grid = sweep.grid();
    rig.set_excitation(axis, ExcitationSpec::sine_at_acceleration(0.0, grid[0])?)?;
    let offset = rig.read_output(specimen, axis)?;
    let mut response = Vec::with_capacity(grid.len());
    for &f in &grid {
        rig.set_excitation(
            axis,
            ExcitationSpec::sine_at_acceleration(sweep.excitation, f)?,
        )?;
        response.push((rig.read_output(specimen, axis)? - offset).abs());
    }
    let timestamp = rig.clock_seconds();
    rig.stop();
    let peak = refine_peak(&grid, &response, sweep.spacing)?;
    Ok(MeasurementRecord::new(
        specimen,
        Some(axis),
        MeasurementKind::Resonance,
        phase,
        peak,
        Some(sweep.excitation),
        timestamp,
    ))
}

/// Change limits between a reference checkpoint and a later one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Absolute limit on output-signal change, V.
    #[serde(rename = "output_delta_max_v")]
    pub output_delta_max: f64,
    /// Relative limit on resonance-frequency change.
    pub resonance_shift_max: f64,
    /// Relative limit on supply-current change.
    pub current_shift_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            output_delta_max: 0.007,
            resonance_shift_max: 0.01,
            current_shift_max: 0.20,
        }
    }
}

impl Thresholds {
    /// Allowed change for `kind` given a reference value, in the record's unit.
    pub fn allowed_delta(&self, kind: MeasurementKind, reference: f64) -> f64 {
        match kind {
            MeasurementKind::OutputSignal => self.output_delta_max,
            MeasurementKind::Resonance => self.resonance_shift_max * reference.abs(),
            MeasurementKind::Current => self.current_shift_max * reference.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub key: RecordKey,
    pub reference: f64,
    pub current: f64,
    /// `current - reference`, in the record's unit.
    pub delta: f64,
    /// Largest allowed |delta|, in the record's unit.
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureVerdict {
    /// Sorted by key.
    pub violations: Vec<Violation>,
}

impl FailureVerdict {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn index_by_key(
    records: &[MeasurementRecord],
) -> Result<BTreeMap<RecordKey, &MeasurementRecord>, MeasurementError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.key(), r).is_some() {
            return Err(MeasurementError::DuplicateRecord(r.key()));
        }
    }
    Ok(map)
}

/// Compares `current` against `reference` record by record.
pub fn detect_failure(
    reference: &[MeasurementRecord],
    current: &[MeasurementRecord],
    thresholds: &Thresholds,
) -> Result<FailureVerdict, MeasurementError> {
    let reference = index_by_key(reference)?;
    let current = index_by_key(current)?;
    if let Some(k) = current.keys().find(|k| !reference.contains_key(*k)) {
        return Err(MeasurementError::UnmatchedRecord(k.clone()));
    }
    if let Some(k) = reference.keys().find(|k| !current.contains_key(*k)) {
        return Err(MeasurementError::UnmatchedRecord(k.clone()));
    }
    let violations = reference
        .iter()
        .filter_map(|(key, before)| {
            let now = current[key];
            let delta = now.value - before.value;
            let allowed = thresholds.allowed_delta(key.kind, before.value);
            (delta.abs() > allowed).then(|| Violation {
                key: key.clone(),
                reference: before.value,
                current: now.value,
                delta,
                allowed,
            })
        })
        .collect();
    Ok(FailureVerdict { violations })
}
