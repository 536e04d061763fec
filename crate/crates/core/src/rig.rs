//! Rig abstraction: the function generator, amplifier, shaker and readout
//! collapsed into one backend contract, plus a simulated backend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut_sim::{output_voltage, Axis, DutModel};
use crate::excitation::ExcitationSpec;

/// Number of specimens the simulated shaker platform holds.
pub const DEFAULT_CAPACITY: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigError {
    #[error("cannot mount {requested} specimens, rig capacity is {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("specimen {0} is not mounted")]
    NotMounted(String),
    #[error("specimen {0} mounted twice")]
    DuplicateSpecimen(String),
    #[error("no excitation programmed")]
    NoExcitation,
    #[error("invalid run length: {0}")]
    InvalidRunLength(String),
    #[error("rig fault: {0}")]
    Fault(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunLength {
    Cycles(u64),
    Seconds(f64),
}

/// Backend contract for a vibration rig.
///
/// `run_for` must be resumable: two runs of N cycles leave the rig and the
/// mounted specimens in the same state as one run of 2N cycles.
pub trait Rig {
    fn capacity(&self) -> usize;

    /// Replaces the mounted set.
    fn mount(&mut self, specimens: Vec<DutModel>) -> Result<(), RigError>;

    /// Removes and returns the mounted specimens in mount order.
    fn unmount(&mut self) -> Vec<DutModel>;

    /// Programs the drive. `orientation` is the specimen axis aligned with
    /// the vibration direction.
    fn set_excitation(&mut self, orientation: Axis, spec: ExcitationSpec) -> Result<(), RigError>;

    /// Drives the mounted specimens; returns the number of cycles applied.
    fn run_for(&mut self, length: RunLength) -> Result<u64, RigError>;

    /// Output voltage of one specimen channel under the current drive.
    fn read_output(&mut self, specimen: &str, axis: Axis) -> Result<f64, RigError>;

    fn read_current(&mut self, specimen: &str) -> Result<f64, RigError>;

    /// Switches the drive off.
    fn stop(&mut self);

    /// Rig clock, seconds of drive time since power-on.
    fn clock_seconds(&self) -> f64;
}

/// Deterministic rig backed by [`DutModel`] physics.
///
/// Readouts are steady-state: a read returns the response to the
/// programmed drive instantly and costs no clock time. Non-sine drives are
/// reduced to their fundamental.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRig {
    capacity: usize,
    mounted: Vec<DutModel>,
    drive: Option<(Axis, ExcitationSpec)>,
    // Clock is base + cycles/f so that chunked runs sum exactly.
    clock_base: f64,
    cycles_since_base: u64,
    fault: Option<String>,
}

impl Default for SimulatedRig {
    fn default() -> Self {
        SimulatedRig::new(DEFAULT_CAPACITY)
    }
}

impl SimulatedRig {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "rig capacity must be at least 1");
        SimulatedRig {
            capacity,
            mounted: Vec::new(),
            drive: None,
            clock_base: 0.0,
            cycles_since_base: 0,
            fault: None,
        }
    }

    /// Makes every subsequent operation fail with [`RigError::Fault`].
    pub fn inject_fault(&mut self, message: impl Into<String>) {
        self.fault = Some(message.into());
    }

    pub fn clear_fault(&mut self) {
        self.fault = None;
    }

    pub fn mounted(&self) -> &[DutModel] {
        &self.mounted
    }

    pub fn drive(&self) -> Option<(Axis, ExcitationSpec)> {
        self.drive
    }

    fn check_fault(&self) -> Result<(), RigError> {
        match &self.fault {
            Some(msg) => Err(RigError::Fault(msg.clone())),
            None => Ok(()),
        }
    }

    fn fold_clock(&mut self) {
        self.clock_base = self.clock_seconds();
        self.cycles_since_base = 0;
    }

    fn specimen(&self, id: &str) -> Result<&DutModel, RigError> {
        self.mounted
            .iter()
            .find(|d| d.specimen_id == id)
            .ok_or_else(|| RigError::NotMounted(id.to_string()))
    }
}

impl Rig for SimulatedRig {
    fn capacity(&self) -> usize {
        self.capacity
    }

    fn mount(&mut self, specimens: Vec<DutModel>) -> Result<(), RigError> {
        self.check_fault()?;
        if specimens.len() > self.capacity {
            return Err(RigError::CapacityExceeded {
                requested: specimens.len(),
                capacity: self.capacity,
            });
        }
        for (i, d) in specimens.iter().enumerate() {
            if specimens[..i]
                .iter()
                .any(|o| o.specimen_id == d.specimen_id)
            {
                return Err(RigError::DuplicateSpecimen(d.specimen_id.clone()));
            }
        }
        self.mounted = specimens;
        Ok(())
    }

    fn unmount(&mut self) -> Vec<DutModel> {
        std::mem::take(&mut self.mounted)
    }

    fn set_excitation(&mut self, orientation: Axis, spec: ExcitationSpec) -> Result<(), RigError> {
        self.check_fault()?;
        self.fold_clock();
        self.drive = Some((orientation, spec));
        Ok(())
    }

    fn run_for(&mut self, length: RunLength) -> Result<u64, RigError> {
        self.check_fault()?;
        let (_, spec) = self.drive.ok_or(RigError::NoExcitation)?;
        let cycles = match length {
            RunLength::Cycles(n) => n,
            RunLength::Seconds(s) => {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(RigError::InvalidRunLength(format!("{s} s")));
                }
                (s * spec.frequency()).round() as u64
            }
        };
        for dut in &mut self.mounted {
            *dut = dut.fatigue(cycles);
        }
        self.cycles_since_base += cycles;
        Ok(cycles)
    }

    fn read_output(&mut self, specimen: &str, axis: Axis) -> Result<f64, RigError> {
        self.check_fault()?;
        let dut = self.specimen(specimen)?;
        let v = match self.drive {
            Some((orientation, spec)) if orientation == axis => {
                output_voltage(dut, axis, spec.peak_acceleration_g(), spec.frequency())
            }
            Some((_, spec)) => output_voltage(dut, axis, 0.0, spec.frequency()),
            None => output_voltage(dut, axis, 0.0, 0.0),
        };
        Ok(v)
    }

    fn read_current(&mut self, specimen: &str) -> Result<f64, RigError> {
        self.check_fault()?;
        Ok(self.specimen(specimen)?.current_draw())
    }

    fn stop(&mut self) {
        self.fold_clock();
        self.drive = None;
    }

    fn clock_seconds(&self) -> f64 {
        match self.drive {
            Some((_, spec)) if self.cycles_since_base > 0 => {
                self.clock_base + self.cycles_since_base as f64 / spec.frequency()
            }
            _ => self.clock_base,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dut_sim::{DegradationState, FailureMode};

    fn specimen(id: &str) -> DutModel {
        DutModel {
            specimen_id: id.to_string(),
            ..DutModel::default()
        }
    }

    #[test]
    fn capacity_enforced() {
        let mut rig = SimulatedRig::default();
        let five = (1..=5).map(|i| specimen(&format!("S{i}"))).collect();
        assert!(matches!(
            rig.mount(five),
            Err(RigError::CapacityExceeded {
                requested: 5,
                capacity: 4
            })
        ));
        assert!(matches!(
            rig.mount(vec![specimen("A"), specimen("A")]),
            Err(RigError::DuplicateSpecimen(_))
        ));
    }

    #[test]
    fn run_requires_drive() {
        let mut rig = SimulatedRig::default();
        rig.mount(vec![specimen("A")]).unwrap();
        assert_eq!(
            rig.run_for(RunLength::Cycles(10)),
            Err(RigError::NoExcitation)
        );
    }

    #[test]
    fn run_for_is_resumable() {
        let damage = DegradationState {
            failure_mode: FailureMode::OpenOutput,
            onset_cycle: 1500,
            ..Default::default()
        };
        let spec = ExcitationSpec::sine_at_acceleration(20.0, 80.0).unwrap();
        let mut a = SimulatedRig::default();
        let mut b = SimulatedRig::default();
        for rig in [&mut a, &mut b] {
            rig.mount(vec![specimen("A").with_latent_damage(damage)])
                .unwrap();
            rig.set_excitation(Axis::X, spec).unwrap();
        }
        a.run_for(RunLength::Cycles(1000)).unwrap();
        a.run_for(RunLength::Cycles(1000)).unwrap();
        b.run_for(RunLength::Cycles(2000)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clock_seconds(), 25.0);
        assert_eq!(
            a.mounted()[0].degradation.failure_mode,
            FailureMode::OpenOutput
        );
    }

    #[test]
    fn seconds_convert_to_cycles() {
        let mut rig = SimulatedRig::default();
        rig.mount(vec![specimen("A")]).unwrap();
        rig.set_excitation(
            Axis::Z,
            ExcitationSpec::sine_at_acceleration(20.0, 80.0).unwrap(),
        )
        .unwrap();
        assert_eq!(rig.run_for(RunLength::Seconds(60.0)).unwrap(), 4800);
        assert!(rig.run_for(RunLength::Seconds(-1.0)).is_err());
        rig.stop();
        assert_eq!(rig.clock_seconds(), 60.0);
    }

    #[test]
    fn only_driven_axis_responds() {
        let mut rig = SimulatedRig::default();
        rig.mount(vec![specimen("A")]).unwrap();
        rig.set_excitation(
            Axis::Y,
            ExcitationSpec::sine_at_acceleration(1.0, 80.0).unwrap(),
        )
        .unwrap();
        assert_eq!(rig.read_output("A", Axis::X).unwrap(), 1.65);
        assert!(rig.read_output("A", Axis::Y).unwrap() > 2.0);
        assert!(matches!(
            rig.read_output("B", Axis::Y),
            Err(RigError::NotMounted(_))
        ));
        assert_eq!(rig.read_current("A").unwrap(), 1.5e-3);
    }

    #[test]
    fn injected_fault_surfaces() {
        let mut rig = SimulatedRig::default();
        rig.inject_fault("amplifier overtemperature");
        assert!(matches!(rig.mount(vec![]), Err(RigError::Fault(_))));
        rig.clear_fault();
        assert!(rig.mount(vec![]).is_ok());
    }
}
