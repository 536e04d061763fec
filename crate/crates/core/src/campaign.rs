//! Campaign engine: runs a compiled schedule on a rig over a simulated
//! clock, batching specimens to rig capacity, taking checkpoint
//! measurements, and honoring pause/cancel requests at chunk boundaries.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut_sim::{Axis, DutModel};
use crate::measurement::{
    detect_failure, excessive_excitation, measure_current, measure_output_signal,
    measure_resonance, FailureVerdict, MeasurementError, MeasurementRecord, PhaseTag, RecordKey,
    SweepSpec, Thresholds,
};
use crate::rig::{Rig, RigError, RunLength};
use crate::test_plan::CampaignSchedule;

/// Longest fatigue step between control checks, simulated seconds.
pub const MAX_CHUNK_SECONDS: f64 = 60.0;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign: {0}")]
    Invalid(String),
    #[error("rig fault: {error}")]
    Rig {
        error: RigError,
        /// State at the time of the fault, status `Aborted(RigFault)`.
        state: Box<CampaignState>,
    },
    #[error("measurement setup error: {0}")]
    Measurement(MeasurementError),
    #[error("writing campaign logs: {0}")]
    Io(#[from] io::Error),
}

/// How specimens map onto orientation phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Every specimen runs every phase, re-mounted per orientation.
    #[default]
    Remount,
    /// Specimens are dealt round-robin to phases; each runs one orientation.
    Dedicated,
}

/// Checkpoint measurement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementPlan {
    pub output_excitation_g: f64,
    pub output_frequency_hz: f64,
    pub sweep: SweepSpec,
}

impl Default for MeasurementPlan {
    fn default() -> Self {
        MeasurementPlan {
            output_excitation_g: 1.08,
            output_frequency_hz: 80.0,
            sweep: SweepSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOptions {
    /// Simulated seconds per fatigue step, in (0, 60].
    pub chunk_seconds: f64,
    /// Wall seconds slept per simulated second; 0 runs unthrottled.
    pub time_scale: f64,
    pub abort_on_failure: bool,
    pub thresholds: Thresholds,
    pub measurements: MeasurementPlan,
    pub allocation: Allocation,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            chunk_seconds: MAX_CHUNK_SECONDS,
            time_scale: 0.0,
            abort_on_failure: false,
            thresholds: Thresholds::default(),
            measurements: MeasurementPlan::default(),
            allocation: Allocation::Remount,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub key: RecordKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub batch: usize,
    pub checkpoint: PhaseTag,
    pub verdict: FailureVerdict,
    /// Measurements that could not be taken (dead axis, lost peak).
    pub anomalies: Vec<Anomaly>,
}

impl FailureReport {
    pub fn passed(&self) -> bool {
        self.verdict.passed() && self.anomalies.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut parts: Vec<String> = self
            .verdict
            .violations
            .iter()
            .map(|v| {
                format!(
                    "{} changed by {:.4e} (limit {:.4e})",
                    v.key, v.delta, v.allowed
                )
            })
            .collect();
        parts.extend(
            self.anomalies
                .iter()
                .map(|a| format!("{}: {}", a.key, a.error)),
        );
        format!(
            "batch {} at {}: {}",
            self.batch,
            self.checkpoint,
            parts.join("; ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum AbortReason {
    Cancelled,
    Failure(FailureReport),
    RigFault { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CampaignStatus {
    Pending,
    Running,
    Paused,
    Completed,
    Aborted(AbortReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProgress {
    pub phase_index: usize,
    pub orientation: Axis,
    pub planned_cycles: u64,
    pub elapsed_cycles: u64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProgress {
    pub specimens: Vec<String>,
    pub phases: Vec<PhaseProgress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub batch: usize,
    /// Index into the batch's phase list.
    pub slot: usize,
}

/// The part of the state progress queries read; cheap to snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignProgress {
    pub status: CampaignStatus,
    pub batches: Vec<BatchProgress>,
    pub current: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum EventKind {
    CampaignStarted {
        batches: usize,
        phases: usize,
    },
    Warning {
        message: String,
    },
    BatchMounted {
        batch: usize,
        specimens: Vec<String>,
    },
    PhaseStarted {
        batch: usize,
        phase: usize,
        orientation: Axis,
        planned_cycles: u64,
        amplitude_m: f64,
        frequency_hz: f64,
    },
    Checkpoint {
        batch: usize,
        tag: PhaseTag,
        records: usize,
        anomalies: usize,
    },
    Verdict {
        batch: usize,
        tag: PhaseTag,
        passed: bool,
        detail: String,
    },
    PhaseCompleted {
        batch: usize,
        phase: usize,
        elapsed_cycles: u64,
    },
    BatchUnmounted {
        batch: usize,
    },
    CampaignCompleted,
    CampaignAborted {
        reason: String,
    },
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignEvent {
    pub time_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub schedule: CampaignSchedule,
    pub progress: CampaignProgress,
    pub records: Vec<MeasurementRecord>,
    pub events: Vec<CampaignEvent>,
    /// Specimen models as last seen, in input order.
    pub specimens: Vec<DutModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub status: CampaignStatus,
    pub fraction: f64,
    pub elapsed_cycles: u64,
    pub elapsed_hours: f64,
    pub current_batch: Option<usize>,
    pub current_orientation: Option<Axis>,
}

/// Progress of the whole campaign: cycle fraction, drive time summed over
/// batches, and the phase currently running.
pub fn progress(progress: &CampaignProgress) -> ProgressReport {
    let phases = progress.batches.iter().flat_map(|b| b.phases.iter());
    let (planned, elapsed, seconds) = phases.fold((0u64, 0u64, 0.0f64), |(p, e, s), ph| {
        (
            p + ph.planned_cycles,
            e + ph.elapsed_cycles,
            s + ph.elapsed_seconds,
        )
    });
    let fraction = if planned == 0 {
        if progress.status == CampaignStatus::Completed {
            1.0
        } else {
            0.0
        }
    } else {
        elapsed as f64 / planned as f64
    };
    let current_orientation = progress
        .current
        .and_then(|p| progress.batches.get(p.batch)?.phases.get(p.slot))
        .map(|ph| ph.orientation);
    ProgressReport {
        status: progress.status.clone(),
        fraction,
        elapsed_cycles: elapsed,
        elapsed_hours: seconds / 3600.0,
        current_batch: progress.current.map(|p| p.batch),
        current_orientation,
    }
}

impl CampaignState {
    pub fn progress_report(&self) -> ProgressReport {
        progress(&self.progress)
    }

    pub fn status(&self) -> &CampaignStatus {
        &self.progress.status
    }
}

/// Shared handle for cancelling, pausing and watching a running campaign.
#[derive(Debug, Clone, Default)]
pub struct CampaignControl {
    inner: Arc<ControlInner>,
}

#[derive(Debug, Default)]
struct ControlInner {
    cancel: AtomicBool,
    pause: AtomicBool,
    snapshot: Mutex<Option<CampaignProgress>>,
}

impl CampaignControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.inner.cancel.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.inner.cancel.load(Ordering::SeqCst)
    }

    pub fn pause(&self) {
        self.inner.pause.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.inner.pause.store(false, Ordering::SeqCst);
    }

    fn pause_requested(&self) -> bool {
        self.inner.pause.load(Ordering::SeqCst)
    }

    /// Latest published progress, or `None` before the campaign starts.
    pub fn snapshot(&self) -> Option<CampaignProgress> {
        self.inner.snapshot.lock().expect("snapshot lock").clone()
    }

    pub fn progress(&self) -> Option<ProgressReport> {
        self.snapshot().map(|p| progress(&p))
    }

    fn publish(&self, p: &CampaignProgress) {
        *self.inner.snapshot.lock().expect("snapshot lock") = Some(p.clone());
    }
}

/// Receives records and events as they happen, e.g. to append them to logs.
pub trait CampaignObserver {
    fn on_record(&mut self, _record: &MeasurementRecord) -> io::Result<()> {
        Ok(())
    }

    fn on_event(&mut self, _event: &CampaignEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NullObserver;

impl CampaignObserver for NullObserver {}

#[derive(Debug, Clone, PartialEq)]
struct Batch {
    specimens: Vec<usize>,
    phases: Vec<usize>,
}

fn plan_batches(
    n_specimens: usize,
    n_phases: usize,
    capacity: usize,
    allocation: Allocation,
) -> Vec<Batch> {
    let all_phases: Vec<usize> = (0..n_phases).collect();
    match allocation {
        Allocation::Remount => (0..n_specimens)
            .collect::<Vec<_>>()
            .chunks(capacity)
            .map(|c| Batch {
                specimens: c.to_vec(),
                phases: all_phases.clone(),
            })
            .collect(),
        Allocation::Dedicated => all_phases
            .iter()
            .flat_map(|&p| {
                let assigned: Vec<usize> = (p..n_specimens).step_by(n_phases).collect();
                assigned
                    .chunks(capacity)
                    .map(|c| Batch {
                        specimens: c.to_vec(),
                        phases: vec![p],
                    })
                    .collect::<Vec<_>>()
            })
            .collect(),
    }
}

/// Prepared campaign: validated inputs plus the batch plan.
pub struct Campaign {
    state: CampaignState,
    batches: Vec<Batch>,
    options: CampaignOptions,
}

enum Flow {
    Continue,
    Stop,
}

impl Campaign {
    pub fn new(
        schedule: &CampaignSchedule,
        specimens: Vec<DutModel>,
        capacity: usize,
        options: CampaignOptions,
    ) -> Result<Self, CampaignError> {
        if schedule.phases.is_empty() {
            return Err(CampaignError::Invalid("schedule has no phases".into()));
        }
        if specimens.is_empty() {
            return Err(CampaignError::Invalid("no specimens".into()));
        }
        if capacity == 0 {
            return Err(CampaignError::Invalid("rig capacity is zero".into()));
        }
        if !(options.chunk_seconds > 0.0 && options.chunk_seconds <= MAX_CHUNK_SECONDS) {
            return Err(CampaignError::Invalid(format!(
                "chunk_seconds must lie in (0, {MAX_CHUNK_SECONDS}], got {}",
                options.chunk_seconds
            )));
        }
        if !(options.time_scale >= 0.0 && options.time_scale.is_finite()) {
            return Err(CampaignError::Invalid(
                "time_scale must be non-negative".into(),
            ));
        }
        options
            .measurements
            .sweep
            .validate()
            .map_err(CampaignError::Measurement)?;
        let mut seen = BTreeSet::new();
        for d in &specimens {
            if !seen.insert(d.specimen_id.as_str()) {
                return Err(CampaignError::Invalid(format!(
                    "duplicate specimen id {}",
                    d.specimen_id
                )));
            }
            d.validate()
                .map_err(|e| CampaignError::Invalid(format!("specimen {}: {e}", d.specimen_id)))?;
        }

        let batches = plan_batches(
            specimens.len(),
            schedule.phases.len(),
            capacity,
            options.allocation,
        );
        let progress = CampaignProgress {
            status: CampaignStatus::Pending,
            batches: batches
                .iter()
                .map(|b| BatchProgress {
                    specimens: b
                        .specimens
                        .iter()
                        .map(|&i| specimens[i].specimen_id.clone())
                        .collect(),
                    phases: b
                        .phases
                        .iter()
                        .map(|&p| PhaseProgress {
                            phase_index: p,
                            orientation: schedule.phases[p].orientation,
                            planned_cycles: schedule.phases[p].planned_cycles,
                            elapsed_cycles: 0,
                            elapsed_seconds: 0.0,
                        })
                        .collect(),
                })
                .collect(),
            current: None,
        };
        Ok(Campaign {
            state: CampaignState {
                schedule: schedule.clone(),
                progress,
                records: Vec::new(),
                events: Vec::new(),
                specimens,
            },
            batches,
            options,
        })
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    /// Runs to completion, cancellation, or failure abort.
    pub fn run<R: Rig + ?Sized>(
        mut self,
        rig: &mut R,
        control: &CampaignControl,
        observer: &mut dyn CampaignObserver,
    ) -> Result<CampaignState, CampaignError> {
        let mut runner = Runner {
            state: &mut self.state,
            options: &self.options,
            control,
            observer,
        };
        match runner.execute(rig, &self.batches) {
            Ok(()) => Ok(self.state),
            Err(Interrupt::Rig(error)) => {
                rig.stop();
                let _ = rig.unmount();
                let reason = AbortReason::RigFault {
                    message: error.to_string(),
                };
                let mut runner = Runner {
                    state: &mut self.state,
                    options: &self.options,
                    control,
                    observer,
                };
                runner.finish_aborted(rig.clock_seconds(), reason)?;
                Err(CampaignError::Rig {
                    error,
                    state: Box::new(self.state),
                })
            }
            Err(Interrupt::Io(e)) => Err(CampaignError::Io(e)),
            Err(Interrupt::Setup(e)) => Err(CampaignError::Measurement(e)),
        }
    }
}

/// Runs `schedule` on `rig` with default control and no observer.
pub fn run_campaign<R: Rig + ?Sized>(
    schedule: &CampaignSchedule,
    rig: &mut R,
    specimens: Vec<DutModel>,
    options: CampaignOptions,
) -> Result<CampaignState, CampaignError> {
    let capacity = rig.capacity();
    Campaign::new(schedule, specimens, capacity, options)?.run(
        rig,
        &CampaignControl::new(),
        &mut NullObserver,
    )
}

enum Interrupt {
    Rig(RigError),
    Io(io::Error),
    Setup(MeasurementError),
}

impl From<RigError> for Interrupt {
    fn from(e: RigError) -> Self {
        Interrupt::Rig(e)
    }
}

impl From<io::Error> for Interrupt {
    fn from(e: io::Error) -> Self {
        Interrupt::Io(e)
    }
}

impl From<MeasurementError> for Interrupt {
    fn from(e: MeasurementError) -> Self {
        match e {
            MeasurementError::Rig(r) => Interrupt::Rig(r),
            other => Interrupt::Setup(other),
        }
    }
}

struct Runner<'a> {
    state: &'a mut CampaignState,
    options: &'a CampaignOptions,
    control: &'a CampaignControl,
    observer: &'a mut dyn CampaignObserver,
}

impl Runner<'_> {
    fn emit(&mut self, time_s: f64, kind: EventKind) -> io::Result<()> {
        let event = CampaignEvent { time_s, kind };
        self.observer.on_event(&event)?;
        self.state.events.push(event);
        Ok(())
    }

    fn record(&mut self, record: MeasurementRecord) -> io::Result<()> {
        self.observer.on_record(&record)?;
        self.state.records.push(record);
        Ok(())
    }

    fn set_status(&mut self, status: CampaignStatus) {
        self.state.progress.status = status;
        self.control.publish(&self.state.progress);
    }

    fn finish_aborted(&mut self, time_s: f64, reason: AbortReason) -> io::Result<()> {
        let text = match &reason {
            AbortReason::Cancelled => "cancelled".to_string(),
            AbortReason::Failure(f) => format!("failure: {}", f.summary()),
            AbortReason::RigFault { message } => format!("rig fault: {message}"),
        };
        self.emit(time_s, EventKind::CampaignAborted { reason: text })?;
        self.set_status(CampaignStatus::Aborted(reason));
        Ok(())
    }

    /// Blocks while paused. Returns `Stop` once cancellation is requested.
    fn checkpoint_control(&mut self) -> Flow {
        if self.control.is_cancelled() {
            return Flow::Stop;
        }
        if self.control.pause_requested() {
            self.set_status(CampaignStatus::Paused);
            while self.control.pause_requested() && !self.control.is_cancelled() {
                std::thread::sleep(Duration::from_millis(1));
            }
            if self.control.is_cancelled() {
                return Flow::Stop;
            }
            self.set_status(CampaignStatus::Running);
        }
        Flow::Continue
    }

    fn execute<R: Rig + ?Sized>(
        &mut self,
        rig: &mut R,
        batches: &[Batch],
    ) -> Result<(), Interrupt> {
        self.set_status(CampaignStatus::Running);
        self.emit(
            rig.clock_seconds(),
            EventKind::CampaignStarted {
                batches: batches.len(),
                phases: self.state.schedule.phases.len(),
            },
        )?;
        let plan = self.options.measurements;
        if excessive_excitation(
            plan.output_excitation_g,
            self.state.schedule.target_peak_acceleration_g,
        ) {
            self.emit(
                rig.clock_seconds(),
                EventKind::Warning {
                    message: format!(
                        "output-signal excitation {} g exceeds 10% of the {} g target",
                        plan.output_excitation_g, self.state.schedule.target_peak_acceleration_g
                    ),
                },
            )?;
        }

        for (bi, batch) in batches.iter().enumerate() {
            if let Flow::Stop = self.run_batch(rig, bi, batch)? {
                return Ok(());
            }
        }
        self.state.progress.current = None;
        self.emit(rig.clock_seconds(), EventKind::CampaignCompleted)?;
        self.set_status(CampaignStatus::Completed);
        Ok(())
    }

    fn stop_cancelled<R: Rig + ?Sized>(
        &mut self,
        rig: &mut R,
        batch: &Batch,
    ) -> Result<Flow, Interrupt> {
        rig.stop();
        self.store_specimens(rig, batch);
        self.finish_aborted(rig.clock_seconds(), AbortReason::Cancelled)?;
        Ok(Flow::Stop)
    }

    fn store_specimens<R: Rig + ?Sized>(&mut self, rig: &mut R, batch: &Batch) {
        for (slot, dut) in batch.specimens.iter().zip(rig.unmount()) {
            self.state.specimens[*slot] = dut;
        }
    }

    fn run_batch<R: Rig + ?Sized>(
        &mut self,
        rig: &mut R,
        bi: usize,
        batch: &Batch,
    ) -> Result<Flow, Interrupt> {
        if let Flow::Stop = self.checkpoint_control() {
            self.finish_aborted(rig.clock_seconds(), AbortReason::Cancelled)?;
            return Ok(Flow::Stop);
        }
        let mounted: Vec<DutModel> = batch
            .specimens
            .iter()
            .map(|&i| self.state.specimens[i].clone())
            .collect();
        let ids: Vec<String> = mounted.iter().map(|d| d.specimen_id.clone()).collect();
        rig.mount(mounted)?;
        self.state.progress.current = Some(Position { batch: bi, slot: 0 });
        self.control.publish(&self.state.progress);
        self.emit(
            rig.clock_seconds(),
            EventKind::BatchMounted {
                batch: bi,
                specimens: ids.clone(),
            },
        )?;

        let policy = self.state.schedule.checkpoints;
        let mut reference: Vec<MeasurementRecord> = Vec::new();
        if policy.before {
            let (records, anomalies) = self.take_checkpoint(rig, bi, &ids, PhaseTag::Before)?;
            for a in &anomalies {
                self.emit(
                    rig.clock_seconds(),
                    EventKind::Warning {
                        message: format!("baseline measurement {} failed: {}", a.key, a.error),
                    },
                )?;
            }
            reference = records;
        }

        let mut batch_cycles = 0u64;
        for (slot, &pi) in batch.phases.iter().enumerate() {
            let phase = self.state.schedule.phases[pi].clone();
            self.state.progress.current = Some(Position { batch: bi, slot });
            rig.set_excitation(phase.orientation, phase.excitation)?;
            self.emit(
                rig.clock_seconds(),
                EventKind::PhaseStarted {
                    batch: bi,
                    phase: pi,
                    orientation: phase.orientation,
                    planned_cycles: phase.planned_cycles,
                    amplitude_m: phase.excitation.amplitude(),
                    frequency_hz: phase.excitation.frequency(),
                },
            )?;

            let chunk =
                ((self.options.chunk_seconds * phase.excitation.frequency()).floor() as u64).max(1);
            let interval = policy.mid_interval_cycles.filter(|&n| n > 0);
            let mut elapsed = 0u64;
            while elapsed < phase.planned_cycles {
                if let Flow::Stop = self.checkpoint_control() {
                    return self.stop_cancelled(rig, batch);
                }
                let mut next = (elapsed + chunk).min(phase.planned_cycles);
                if let Some(n) = interval {
                    next = next.min((elapsed / n + 1) * n);
                }
                let step = next - elapsed;
                rig.run_for(RunLength::Cycles(step))?;
                elapsed = next;
                let progress = &mut self.state.progress.batches[bi].phases[slot];
                progress.elapsed_cycles = elapsed;
                progress.elapsed_seconds = elapsed as f64 / phase.excitation.frequency();
                self.control.publish(&self.state.progress);
                if self.options.time_scale > 0.0 {
                    let step_s = step as f64 / phase.excitation.frequency();
                    std::thread::sleep(Duration::from_secs_f64(step_s * self.options.time_scale));
                }

                let at_mid = interval.is_some_and(|n| elapsed.is_multiple_of(n))
                    && elapsed < phase.planned_cycles;
                if at_mid {
                    let tag = PhaseTag::Mid(batch_cycles + elapsed);
                    let (records, anomalies) = self.take_checkpoint(rig, bi, &ids, tag)?;
                    let report = self.evaluate(bi, tag, &reference, &records, anomalies)?;
                    self.emit(
                        rig.clock_seconds(),
                        EventKind::Verdict {
                            batch: bi,
                            tag,
                            passed: report.passed(),
                            detail: report.summary(),
                        },
                    )?;
                    if !report.passed() && self.options.abort_on_failure {
                        rig.stop();
                        self.store_specimens(rig, batch);
                        self.finish_aborted(rig.clock_seconds(), AbortReason::Failure(report))?;
                        return Ok(Flow::Stop);
                    }
                    rig.set_excitation(phase.orientation, phase.excitation)?;
                }
            }
            rig.stop();
            batch_cycles += phase.planned_cycles;
            self.emit(
                rig.clock_seconds(),
                EventKind::PhaseCompleted {
                    batch: bi,
                    phase: pi,
                    elapsed_cycles: elapsed,
                },
            )?;
        }

        if policy.after {
            let (records, anomalies) = self.take_checkpoint(rig, bi, &ids, PhaseTag::After)?;
            if policy.before {
                let report = self.evaluate(bi, PhaseTag::After, &reference, &records, anomalies)?;
                self.emit(
                    rig.clock_seconds(),
                    EventKind::Verdict {
                        batch: bi,
                        tag: PhaseTag::After,
                        passed: report.passed(),
                        detail: report.summary(),
                    },
                )?;
                if !report.passed() && self.options.abort_on_failure {
                    self.store_specimens(rig, batch);
                    self.finish_aborted(rig.clock_seconds(), AbortReason::Failure(report))?;
                    return Ok(Flow::Stop);
                }
            }
        }
        self.store_specimens(rig, batch);
        self.emit(rig.clock_seconds(), EventKind::BatchUnmounted { batch: bi })?;
        Ok(Flow::Continue)
    }

    /// Measures every mounted specimen: output signal and resonance on each
    /// axis, then supply current.
    fn take_checkpoint<R: Rig + ?Sized>(
        &mut self,
        rig: &mut R,
        bi: usize,
        ids: &[String],
        tag: PhaseTag,
    ) -> Result<(Vec<MeasurementRecord>, Vec<Anomaly>), Interrupt> {
        let plan = self.options.measurements;
        let mut records = Vec::new();
        let mut anomalies = Vec::new();
        for id in ids {
            for axis in Axis::ALL {
                let r = measure_output_signal(
                    rig,
                    id,
                    axis,
                    plan.output_excitation_g,
                    plan.output_frequency_hz,
                    tag,
                )?;
                records.push(r);
            }
            for axis in Axis::ALL {
                match measure_resonance(rig, id, axis, &plan.sweep, tag) {
                    Ok(r) => records.push(r),
                    Err(
                        e @ (MeasurementError::EdgePeak { .. }
                        | MeasurementError::FlatResponse { .. }),
                    ) => anomalies.push(Anomaly {
                        key: RecordKey {
                            specimen_id: id.clone(),
                            axis: Some(axis),
                            kind: crate::measurement::MeasurementKind::Resonance,
                        },
                        error: e.to_string(),
                    }),
                    Err(e) => return Err(e.into()),
                }
            }
            records.push(measure_current(rig, id, tag)?);
        }
        for r in &records {
            self.record(r.clone())?;
        }
        self.emit(
            rig.clock_seconds(),
            EventKind::Checkpoint {
                batch: bi,
                tag,
                records: records.len(),
                anomalies: anomalies.len(),
            },
        )?;
        Ok((records, anomalies))
    }

    fn evaluate(
        &self,
        bi: usize,
        tag: PhaseTag,
        reference: &[MeasurementRecord],
        current: &[MeasurementRecord],
        anomalies: Vec<Anomaly>,
    ) -> Result<FailureReport, Interrupt> {
        // Compare only keys measured successfully at both checkpoints.
        let now: BTreeMap<RecordKey, &MeasurementRecord> =
            current.iter().map(|r| (r.key(), r)).collect();
        let base: BTreeMap<RecordKey, &MeasurementRecord> =
            reference.iter().map(|r| (r.key(), r)).collect();
        let paired_ref: Vec<MeasurementRecord> = reference
            .iter()
            .filter(|r| now.contains_key(&r.key()))
            .cloned()
            .collect();
        let paired_now: Vec<MeasurementRecord> = current
            .iter()
            .filter(|r| base.contains_key(&r.key()))
            .cloned()
            .collect();
        let verdict = detect_failure(&paired_ref, &paired_now, &self.options.thresholds)?;
        Ok(FailureReport {
            batch: bi,
            checkpoint: tag,
            verdict,
            anomalies,
        })
    }
}
