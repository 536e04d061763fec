//! Before/after population statistics and report rendering.
//!
//! Dispersion is the coefficient of variation in percent, using the n−1
//! sample standard deviation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut_sim::Axis;
use crate::measurement::{
    MeasurementKind, MeasurementRecord, PhaseTag, RecordKey, Thresholds, Unit,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Means smaller than this (in the value's unit) leave dispersion undefined.
const MEAN_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("cannot summarize an empty population")]
    Empty,
    #[error("no {0} records; a before/after population is required")]
    MissingPopulation(&'static str),
    #[error("before/after populations differ: {0}")]
    PopulationMismatch(String),
    #[error("record log line {line}: {source}")]
    CorruptLog {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed structured report: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    /// Absent for n = 1.
    pub sample_std: Option<f64>,
    /// Absent for n = 1 or a vanishing mean.
    pub dispersion_percent: Option<f64>,
    pub min: f64,
    pub max: f64,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn summarize(values: &[f64]) -> Result<StatsSummary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    // Sorting first makes the result independent of input order.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = compensated_sum(sorted.iter().copied()) / n as f64;
    let sample_std = (n >= 2).then(|| {
        let ss = compensated_sum(sorted.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (n - 1) as f64).sqrt()
    });
    let dispersion_percent = sample_std
        .filter(|_| mean.abs() >= MEAN_EPSILON)
        .map(|s| 100.0 * s / mean.abs());
    Ok(StatsSummary {
        n,
        mean,
        sample_std,
        dispersion_percent,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Unchanged,
    Changed,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Unchanged => "unchanged",
            Verdict::Changed => "changed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenValues {
    pub specimen_id: String,
    pub before: f64,
    pub after: f64,
}

/// Before/after comparison for one (axis, kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub axis: Option<Axis>,
    pub kind: MeasurementKind,
    pub unit: Unit,
    pub before: StatsSummary,
    pub after: StatsSummary,
    /// after.mean − before.mean.
    pub mean_delta: f64,
    /// Largest allowed |mean_delta|, in `unit`.
    pub threshold: f64,
    pub verdict: Verdict,
    /// Sorted by specimen id.
    pub values: Vec<SpecimenValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityEntry {
    pub axis: Axis,
    pub dispersion_percent: Option<f64>,
    /// Dispersion relative to the most homogeneous axis.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub title: String,
    pub specimens: Vec<String>,
    pub output_excitation_g: Option<f64>,
    pub sweep_excitation_g: Option<f64>,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub metadata: ReportMetadata,
    pub blocks: Vec<ComparisonBlock>,
    /// Resonance-frequency homogeneity across axes, before fatigue.
    pub homogeneity_before: Vec<HomogeneityEntry>,
    pub homogeneity_after: Vec<HomogeneityEntry>,
}

impl ComparisonReport {
    pub fn block(&self, axis: Option<Axis>, kind: MeasurementKind) -> Option<&ComparisonBlock> {
        self.blocks
            .iter()
            .find(|b| b.axis == axis && b.kind == kind)
    }

    pub fn all_unchanged(&self) -> bool {
        self.blocks.iter().all(|b| b.verdict == Verdict::Unchanged)
    }

    pub fn homogeneity_ratio(&self, axis: Axis) -> Option<f64> {
        self.homogeneity_before
            .iter()
            .find(|e| e.axis == axis)
            .and_then(|e| e.ratio)
    }
}

fn index(
    records: &[MeasurementRecord],
) -> Result<BTreeMap<RecordKey, &MeasurementRecord>, StatsError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.key(), r).is_some() {
            return Err(StatsError::PopulationMismatch(format!(
                "{} recorded twice",
                r.key()
            )));
        }
    }
    Ok(map)
}

/// Dispersion of each axis relative to the smallest one.
pub fn homogeneity(dispersions: &[(Axis, Option<f64>)]) -> Vec<HomogeneityEntry> {
    let floor = dispersions
        .iter()
        .map(|(_, d)| *d)
        .try_fold(f64::INFINITY, |acc, d| d.map(|d| acc.min(d)))
        .filter(|m| *m > 0.0 && m.is_finite());
    dispersions
        .iter()
        .map(|&(axis, d)| HomogeneityEntry {
            axis,
            dispersion_percent: d,
            ratio: floor.and_then(|m| d.map(|d| d / m)),
        })
        .collect()
}

fn first_excitation(records: &[MeasurementRecord], kind: MeasurementKind) -> Option<f64> {
    records
        .iter()
        .find(|r| r.kind == kind)
        .and_then(|r| r.excitation_g)
}

/// Pairs before and after populations per (axis, kind) and applies the
/// mean-shift thresholds.
pub fn compare(
    before: &[MeasurementRecord],
    after: &[MeasurementRecord],
    thresholds: &Thresholds,
) -> Result<ComparisonReport, StatsError> {
    if before.is_empty() {
        return Err(StatsError::MissingPopulation("before"));
    }
    if after.is_empty() {
        return Err(StatsError::MissingPopulation("after"));
    }
    let b = index(before)?;
    let a = index(after)?;
    if let Some(k) = b.keys().find(|k| !a.contains_key(*k)) {
        return Err(StatsError::PopulationMismatch(format!(
            "{k} has no after record"
        )));
    }
    if let Some(k) = a.keys().find(|k| !b.contains_key(*k)) {
        return Err(StatsError::PopulationMismatch(format!(
            "{k} has no before record"
        )));
    }

    let mut groups: BTreeMap<(MeasurementKind, Option<Axis>), Vec<SpecimenValues>> =
        BTreeMap::new();
    for (key, rb) in &b {
        groups
            .entry((key.kind, key.axis))
            .or_default()
            .push(SpecimenValues {
                specimen_id: key.specimen_id.clone(),
                before: rb.value,
                after: a[key].value,
            });
    }

    let mut blocks = Vec::with_capacity(groups.len());
    for ((kind, axis), mut values) in groups {
        values.sort_by(|x, y| x.specimen_id.cmp(&y.specimen_id));
        let bs = summarize(&values.iter().map(|v| v.before).collect::<Vec<_>>())?;
        let as_ = summarize(&values.iter().map(|v| v.after).collect::<Vec<_>>())?;
        let mean_delta = as_.mean - bs.mean;
        let threshold = thresholds.allowed_delta(kind, bs.mean);
        let verdict = if mean_delta.abs() <= threshold {
            Verdict::Unchanged
        } else {
            Verdict::Changed
        };
        blocks.push(ComparisonBlock {
            axis,
            kind,
            unit: kind.unit(),
            before: bs,
            after: as_,
            mean_delta,
            threshold,
            verdict,
            values,
        });
    }

    let resonance_dispersions = |pick: fn(&ComparisonBlock) -> &StatsSummary| {
        let d: Vec<(Axis, Option<f64>)> = blocks
            .iter()
            .filter(|blk| blk.kind == MeasurementKind::Resonance)
            .filter_map(|blk| blk.axis.map(|axis| (axis, pick(blk).dispersion_percent)))
            .collect();
        homogeneity(&d)
    };
    let homogeneity_before = resonance_dispersions(|blk| &blk.before);
    let homogeneity_after = resonance_dispersions(|blk| &blk.after);

    let specimens: BTreeSet<String> = b.keys().map(|k| k.specimen_id.clone()).collect();
    Ok(ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: ReportMetadata {
            title: "Vibration fatigue before/after comparison".to_string(),
            specimens: specimens.into_iter().collect(),
            output_excitation_g: first_excitation(before, MeasurementKind::OutputSignal),
            sweep_excitation_g: first_excitation(before, MeasurementKind::Resonance),
            thresholds: *thresholds,
        },
        blocks,
        homogeneity_before,
        homogeneity_after,
    })
}

/// Splits a record log into its before and after populations (mid
/// checkpoints are ignored) and compares them.
pub fn compare_log(
    records: &[MeasurementRecord],
    thresholds: &Thresholds,
) -> Result<ComparisonReport, StatsError> {
    let pick = |tag: PhaseTag| -> Vec<MeasurementRecord> {
        records.iter().filter(|r| r.phase == tag).cloned().collect()
    };
    compare(&pick(PhaseTag::Before), &pick(PhaseTag::After), thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    HumanText,
    Structured,
    TableData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportDocument {
    pub file_name: String,
    pub contents: String,
}

fn fmt_opt_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |d| format!("{d:.2}%"))
}

fn unit_str(u: Unit) -> &'static str {
    match u {
        Unit::V => "V",
        Unit::A => "A",
        Unit::Hz => "Hz",
    }
}

fn render_text(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let m = &report.metadata;
    let _ = writeln!(out, "{}", m.title);
    let _ = writeln!(
        out,
        "specimens: {} ({})",
        m.specimens.len(),
        m.specimens.join(", ")
    );
    if let Some(g) = m.output_excitation_g {
        let _ = writeln!(out, "output-signal excitation: {g} g");
    }
    if let Some(g) = m.sweep_excitation_g {
        let _ = writeln!(out, "resonance sweep excitation: {g} g");
    }
    let _ = writeln!(out);
    for b in &report.blocks {
        let label = match b.axis {
            Some(axis) => format!("{axis} {}", b.kind),
            None => b.kind.to_string(),
        };
        let u = unit_str(b.unit);
        let _ = writeln!(
            out,
            "{label}: before mean {:.6} {u} (dispersion {}), after mean {:.6} {u} (dispersion {}), \
             delta {:.3e} {u}, limit {:.3e} {u} -> {}",
            b.before.mean,
            fmt_opt_percent(b.before.dispersion_percent),
            b.after.mean,
            fmt_opt_percent(b.after.dispersion_percent),
            b.mean_delta,
            b.threshold,
            b.verdict.as_str(),
        );
    }
    if !report.homogeneity_before.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "resonance homogeneity (before, relative to most homogeneous axis):"
        );
        for e in &report.homogeneity_before {
            let ratio = e
                .ratio
                .map_or_else(|| "n/a".to_string(), |r| format!("{r:.2}x"));
            let _ = writeln!(
                out,
                "  {}: dispersion {}, ratio {ratio}",
                e.axis,
                fmt_opt_percent(e.dispersion_percent)
            );
        }
    }
    let _ = writeln!(out);
    let overall = if report.all_unchanged() {
        "unchanged"
    } else {
        "changed"
    };
    let _ = writeln!(out, "overall: {overall}");
    out
}

fn render_series(block: &ComparisonBlock, axis: Axis) -> String {
    let mut out = String::new();
    for (phase, pick) in [("before", true), ("after", false)] {
        if phase == "after" {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "# axis={axis} kind={} phase={phase} unit={}",
            block.kind,
            unit_str(block.unit)
        );
        for (i, v) in block.values.iter().enumerate() {
            let value = if pick { v.before } else { v.after };
            let _ = writeln!(out, "{} {value}", i + 1);
        }
    }
    out
}

/// Renders `report`. Table data yields one file per per-axis output-signal
/// and resonance series, each with a before and an after section.
pub fn emit_report(report: &ComparisonReport, format: ReportFormat) -> Vec<ReportDocument> {
    match format {
        ReportFormat::HumanText => vec![ReportDocument {
            file_name: "report.txt".to_string(),
            contents: render_text(report),
        }],
        ReportFormat::Structured => vec![ReportDocument {
            file_name: "report.json".to_string(),
            contents: serde_json::to_string_pretty(report).expect("report is serializable") + "\n",
        }],
        ReportFormat::TableData => report
            .blocks
            .iter()
            .filter(|b| {
                matches!(
                    b.kind,
                    MeasurementKind::OutputSignal | MeasurementKind::Resonance
                )
            })
            .filter_map(|b| b.axis.map(|axis| (b, axis)))
            .map(|(b, axis)| ReportDocument {
                file_name: format!("{}_{axis}.dat", b.kind),
                contents: render_series(b, axis),
            })
            .collect(),
    }
}

/// Reads a JSON Lines record log. Blank lines are skipped; the first
/// malformed line is reported by its 1-based number.
pub fn read_record_log<R: io::BufRead>(reader: R) -> Result<Vec<MeasurementRecord>, StatsError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| StatsError::CorruptLog {
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn parse_structured(text: &str) -> Result<ComparisonReport, StatsError> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_documents(dir: &Path, docs: &[ReportDocument]) -> Result<Vec<PathBuf>, StatsError> {
    std::fs::create_dir_all(dir)?;
    docs.iter()
        .map(|d| {
            let path = dir.join(&d.file_name);
            std::fs::write(&path, &d.contents)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        a == b || ((a - b) / b.abs().max(a.abs())).abs() <= tol
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            (s.mean, s.sample_std, s.dispersion_percent),
            (1.0, Some(0.0), Some(0.0))
        );
        let s = summarize(&[2.0, 4.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.sample_std.unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((s.dispersion_percent.unwrap() - 47.140_452_079).abs() < 1e-8);
        assert_eq!((s.min, s.max), (2.0, 4.0));
    }

    #[test]
    fn summarize_edge_cases() {
        assert!(matches!(summarize(&[]), Err(StatsError::Empty)));
        let one = summarize(&[5.0]).unwrap();
        assert_eq!(
            (one.n, one.sample_std, one.dispersion_percent),
            (1, None, None)
        );
        let zero_mean = summarize(&[-1.0, 1.0]).unwrap();
        assert!(zero_mean.sample_std.is_some());
        assert_eq!(zero_mean.dispersion_percent, None);
    }

    #[test]
    fn summarize_seeded_normal_draws() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(2000.0, 102.8).unwrap();
        let xs: Vec<f64> = (0..10).map(|_| normal.sample(&mut rng)).collect();
        let d = summarize(&xs).unwrap().dispersion_percent.unwrap();
        assert!((2.5..=8.0).contains(&d), "{d}");
    }

    fn record(
        id: &str,
        axis: Option<Axis>,
        kind: MeasurementKind,
        phase: PhaseTag,
        v: f64,
    ) -> MeasurementRecord {
        MeasurementRecord::new(id, axis, kind, phase, v, None, 0.0)
    }

    fn population(phase: PhaseTag, shift_v: f64) -> Vec<MeasurementRecord> {
        let mut out = Vec::new();
        for i in 0..10 {
            let id = format!("S{:02}", i + 1);
            for axis in Axis::ALL {
                let wobble = (i as f64 - 4.5) * 0.001;
                out.push(record(
                    &id,
                    Some(axis),
                    MeasurementKind::OutputSignal,
                    phase,
                    0.71 + wobble + shift_v,
                ));
                let spread = match axis {
                    Axis::Z => 10.0,
                    _ => 30.0,
                };
                out.push(record(
                    &id,
                    Some(axis),
                    MeasurementKind::Resonance,
                    phase,
                    2000.0 + (i as f64 - 4.5) * spread,
                ));
            }
            out.push(record(&id, None, MeasurementKind::Current, phase, 1.5e-3));
        }
        out
    }

    #[test]
    fn identical_populations_unchanged() {
        let before = population(PhaseTag::Before, 0.0);
        let after = population(PhaseTag::After, 0.0);
        let r = compare(&before, &after, &Thresholds::default()).unwrap();
        assert_eq!(r.blocks.len(), 7);
        assert!(r.all_unchanged());
        assert!(r.blocks.iter().all(|b| b.mean_delta == 0.0));
        assert!((r.homogeneity_ratio(Axis::X).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(r.homogeneity_ratio(Axis::Z), Some(1.0));
    }

    #[test]
    fn shifted_outputs_change() {
        let before = population(PhaseTag::Before, 0.0);
        let after = population(PhaseTag::After, 0.01);
        let r = compare(&before, &after, &Thresholds::default()).unwrap();
        for axis in Axis::ALL {
            let b = r.block(Some(axis), MeasurementKind::OutputSignal).unwrap();
            assert_eq!(b.verdict, Verdict::Changed);
            let b = r.block(Some(axis), MeasurementKind::Resonance).unwrap();
            assert_eq!(b.verdict, Verdict::Unchanged);
        }
    }

    #[test]
    fn population_mismatch_and_missing() {
        let before = population(PhaseTag::Before, 0.0);
        let mut after = population(PhaseTag::After, 0.0);
        after.pop();
        assert!(matches!(
            compare(&before, &after, &Thresholds::default()),
            Err(StatsError::PopulationMismatch(_))
        ));
        assert!(matches!(
            compare(&before, &[], &Thresholds::default()),
            Err(StatsError::MissingPopulation("after"))
        ));
        assert!(matches!(
            compare_log(&[], &Thresholds::default()),
            Err(StatsError::MissingPopulation("before"))
        ));
    }

    #[test]
    fn compare_log_splits_phases() {
        let mut log = population(PhaseTag::Before, 0.0);
        log.extend(population(PhaseTag::Mid(500), 0.5));
        log.extend(population(PhaseTag::After, 0.0));
        assert!(compare_log(&log, &Thresholds::default())
            .unwrap()
            .all_unchanged());
    }

    #[test]
    fn table_data_has_six_series() {
        let r = compare(
            &population(PhaseTag::Before, 0.0),
            &population(PhaseTag::After, 0.0),
            &Thresholds::default(),
        )
        .unwrap();
        let docs = emit_report(&r, ReportFormat::TableData);
        assert_eq!(docs.len(), 6);
        let x = docs
            .iter()
            .find(|d| d.file_name == "resonance_X.dat")
            .unwrap();
        let mut lines = x.contents.lines();
        assert_eq!(
            lines.next(),
            Some("# axis=X kind=resonance phase=before unit=Hz")
        );
        assert_eq!(lines.next(), Some("1 1865"));
        assert!(x
            .contents
            .contains("# axis=X kind=resonance phase=after unit=Hz"));
    }

    #[test]
    fn text_lists_every_verdict() {
        let r = compare(
            &population(PhaseTag::Before, 0.0),
            &population(PhaseTag::After, 0.0),
            &Thresholds::default(),
        )
        .unwrap();
        let text = &emit_report(&r, ReportFormat::HumanText)[0].contents;
        for axis in Axis::ALL {
            for kind in ["output_signal", "resonance"] {
                let line = text
                    .lines()
                    .find(|l| l.starts_with(&format!("{axis} {kind}:")))
                    .unwrap();
                assert!(line.ends_with("-> unchanged"), "{line}");
            }
        }
        assert!(text.contains("overall: unchanged"));
    }

    #[test]
    fn structured_round_trip() {
        let r = compare(
            &population(PhaseTag::Before, 0.0),
            &population(PhaseTag::After, 0.003),
            &Thresholds::default(),
        )
        .unwrap();
        let doc = &emit_report(&r, ReportFormat::Structured)[0];
        assert_eq!(parse_structured(&doc.contents).unwrap(), r);
        assert!(doc.contents.contains("\"schema_version\": 1"));
    }

    #[test]
    fn record_log_reports_line_number() {
        let good = serde_json::to_string(&record(
            "S01",
            Some(Axis::X),
            MeasurementKind::Resonance,
            PhaseTag::Before,
            2000.0,
        ))
        .unwrap();
        let text = format!("{good}\n\n{good}\n{{\"specimen\":\n");
        match read_record_log(text.as_bytes()) {
            Err(StatsError::CorruptLog { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            read_record_log(format!("{good}\n{good}\n").as_bytes())
                .unwrap()
                .len(),
            2
        );
        assert!(read_record_log(&b""[..]).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn matches_two_pass_oracle(xs in prop::collection::vec(-1e6f64..1e6, 2..60)) {
            let s = summarize(&xs).unwrap();
            let (mean, std) = naive(&xs);
            let scale = xs.iter().map(|x| x.abs()).fold(0.0, f64::max);
            prop_assert!((s.mean - mean).abs() <= 1e-12 * scale.max(1e-300));
            prop_assert!(rel_close(s.sample_std.unwrap(), std, 1e-12) || (s.sample_std.unwrap() - std).abs() <= 1e-12 * scale);
        }

        #[test]
        fn permutation_and_scale(
            xs in prop::collection::vec(1.0f64..1e4, 2..40),
            c in 1e-3f64..1e3,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let s = summarize(&xs).unwrap();
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&summarize(&shuffled).unwrap(), &s);
            let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
            let d1 = s.dispersion_percent.unwrap();
            let d2 = summarize(&scaled).unwrap().dispersion_percent.unwrap();
            prop_assert!(rel_close(d1, d2, 1e-12) || (d1 - d2).abs() < 1e-12);
        }

        #[test]
        fn tightening_threshold_never_unflags(shift in -0.05f64..0.05, t1 in 0.0f64..0.05, t2 in 0.0f64..0.05) {
            let (loose, tight) = if t1 >= t2 { (t1, t2) } else { (t2, t1) };
            let before = population(PhaseTag::Before, 0.0);
            let after = population(PhaseTag::After, shift);
            let with = |t: f64| Thresholds { output_delta_max: t, ..Thresholds::default() };
            let rl = compare(&before, &after, &with(loose)).unwrap();
            let rt = compare(&before, &after, &with(tight)).unwrap();
            for (bl, bt) in rl.blocks.iter().zip(&rt.blocks) {
                if bl.verdict == Verdict::Changed {
                    prop_assert_eq!(bt.verdict, Verdict::Changed);
                }
                prop_assert_eq!(bl.verdict == Verdict::Unchanged, bl.mean_delta.abs() <= bl.threshold);
            }
        }
    }
}
