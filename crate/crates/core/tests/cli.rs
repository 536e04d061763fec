use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use fatigue_bench::campaign::CampaignEvent;
use fatigue_bench::measurement::{MeasurementKind, MeasurementRecord, PhaseTag};
use fatigue_bench::stats_report::read_record_log;

const BIN: &str = env!("CARGO_BIN_EXE_fatigue-bench");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn baseline() -> PathBuf {
    configs().join("baseline.toml")
}

fn bench(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn records(dir: &Path) -> Vec<MeasurementRecord> {
    read_record_log(fs::read(dir.join("records.jsonl")).unwrap().as_slice()).unwrap()
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    bench(&args)
}

#[test]
fn validate_baseline() {
    let out = bench(&["validate", "--config", baseline().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("valid"));
}

#[test]
fn validate_out_of_envelope_frequency() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(baseline())
        .unwrap()
        .replace("frequency_hz = 80.0", "frequency_hz = 100.0");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = bench(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let lines: Vec<_> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].contains("frequency"));
}

#[test]
fn validate_parse_errors_and_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[condition\nfrequency_hz = ");
    assert_eq!(
        code(&bench(&["validate", "--config", cfg.to_str().unwrap()])),
        2
    );
    let missing = tmp.path().join("nope.toml");
    assert_eq!(
        code(&bench(&["validate", "--config", missing.to_str().unwrap()])),
        1
    );
    assert_eq!(code(&bench(&["validate"])), 64);
    assert_eq!(code(&bench(&["--help"])), 0);
}

#[test]
fn run_baseline_record_counts_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&baseline(), tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let recs = records(tmp.path());
    let count = |kind| recs.iter().filter(|r| r.kind == kind).count();
    assert_eq!(count(MeasurementKind::OutputSignal), 10 * 3 * 2);
    assert_eq!(count(MeasurementKind::Resonance), 10 * 3 * 2);
    assert_eq!(count(MeasurementKind::Current), 10 * 2);
    assert_eq!(recs.len(), 140);

    let rep = bench(&["report", tmp.path().join("records.jsonl").to_str().unwrap()]);
    assert_eq!(code(&rep), 0, "{}", stderr(&rep));
    let text = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    for axis in ["X", "Y", "Z"] {
        for kind in ["output_signal", "resonance"] {
            let line = text
                .lines()
                .find(|l| l.starts_with(&format!("{axis} {kind}:")))
                .unwrap_or_else(|| panic!("no {axis} {kind} line"));
            assert!(line.ends_with("-> unchanged"), "{line}");
        }
    }
    for name in ["report.json", "output_signal_X.dat", "resonance_Z.dat"] {
        assert!(tmp.path().join(name).exists(), "{name}");
    }
}

#[test]
fn run_is_byte_identical_for_same_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&baseline(), a.path(), &["--seed", "7"])), 0);
    assert_eq!(code(&run(&baseline(), b.path(), &["--seed", "7"])), 0);
    assert_eq!(code(&run(&baseline(), c.path(), &["--seed", "8"])), 0);
    let bytes = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(
        bytes(a.path(), "records.jsonl"),
        bytes(b.path(), "records.jsonl")
    );
    assert_eq!(
        bytes(a.path(), "events.jsonl"),
        bytes(b.path(), "events.jsonl")
    );
    assert_ne!(
        bytes(a.path(), "records.jsonl"),
        bytes(c.path(), "records.jsonl")
    );
}

#[test]
fn failure_demo_exits_with_failure_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&configs().join("failure-demo.toml"), tmp.path(), &[]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stdout(&out).contains("S03"));
    let recs = records(tmp.path());
    assert!(recs.iter().any(|r| r.phase == PhaseTag::Mid(1_000_000)));
    assert!(!recs.iter().any(|r| r.phase == PhaseTag::After));
}

#[test]
fn abort_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("failure-demo.toml"))
        .unwrap()
        .replace("abort_on_failure = true", "abort_on_failure = false");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out_dir = tmp.path().join("o");
    assert_eq!(code(&run(&cfg, &out_dir, &[])), 0);
    assert_eq!(code(&run(&cfg, &out_dir, &["--abort-on-failure"])), 4);
}

#[test]
fn sigint_cancels_with_well_formed_logs() {
    let tmp = tempfile::tempdir().unwrap();
    // 1e-4 wall seconds per simulated second stretches the run to minutes.
    let child = Command::new(BIN)
        .args(["run", "--config", baseline().to_str().unwrap(), "--out-dir"])
        .arg(tmp.path())
        .args(["--time-scale", "1e-4"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let events = tmp.path().join("events.jsonl");
    let start = Instant::now();
    while !fs::read_to_string(&events)
        .unwrap_or_default()
        .contains("phase_started")
    {
        assert!(
            start.elapsed() < Duration::from_secs(30),
            "campaign never started"
        );
        thread::sleep(Duration::from_millis(10));
    }
    thread::sleep(Duration::from_millis(200));
    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 5);
    assert!(stdout(&out).starts_with("cancelled"));

    let recs = records(tmp.path());
    assert_eq!(recs.len(), 4 * 7);
    let text = fs::read_to_string(&events).unwrap();
    let parsed: Vec<CampaignEvent> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(text.ends_with('\n'));
    assert!(text.lines().last().unwrap().contains("campaign_aborted"));
    assert!(parsed.len() >= 4);
}

#[test]
fn report_on_empty_and_corrupt_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write_config(tmp.path(), "empty.jsonl", "");
    let out = bench(&["report", empty.to_str().unwrap()]);
    assert_eq!(code(&out), 7);
    assert!(
        stderr(&out).contains("no before records"),
        "{}",
        stderr(&out)
    );

    let good = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&baseline(), good.path(), &[])), 0);
    let mut text = fs::read_to_string(good.path().join("records.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let truncated = &lines[4][..lines[4].len() / 2];
    text = format!(
        "{}\n{}\n{}\n{}\n{}\n",
        lines[0], lines[1], lines[2], lines[3], truncated
    );
    let corrupt = write_config(tmp.path(), "corrupt.jsonl", &text);
    let out = bench(&["report", corrupt.to_str().unwrap()]);
    assert_eq!(code(&out), 7);
    assert!(stderr(&out).contains("line 5"), "{}", stderr(&out));
}

#[test]
fn report_flags_shifted_population() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "shift.toml",
        r#"
seed = 3

[condition]
target_peak_acceleration_g = 20.0
frequency_hz = 80.0
duration_per_orientation_h = 24.0
orientations = ["X"]

[population]
count = 2
natural_frequency_cov = { X = 0.0514, Y = 0.0514, Z = 0.018 }

[[damage]]
specimen = "S01"
[damage.degradation]
onset_cycle = 1000
resonance_shift_fraction = { X = -0.03, Y = -0.03, Z = -0.03 }

[[damage]]
specimen = "S02"
[damage.degradation]
onset_cycle = 1000
resonance_shift_fraction = { X = -0.03, Y = -0.03, Z = -0.03 }
"#,
    );
    let out_dir = tmp.path().join("o");
    assert_eq!(code(&run(&cfg, &out_dir, &[])), 0);
    let rep = bench(&["report", out_dir.join("records.jsonl").to_str().unwrap()]);
    assert_eq!(code(&rep), 0);
    let text = stdout(&rep);
    assert!(
        text.lines()
            .any(|l| l.starts_with("X resonance:") && l.ends_with("-> changed")),
        "{text}"
    );
    assert!(text.contains("overall: changed"));
}

#[test]
fn generated_population_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let pop_dir = tmp.path().join("pop");
    let out = bench(&[
        "generate-population",
        "--config",
        baseline().to_str().unwrap(),
        "--out-dir",
        pop_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let population = fs::read_to_string(pop_dir.join("population.toml")).unwrap();
    let head = fs::read_to_string(baseline()).unwrap();
    let head = head.split("[population]").next().unwrap();
    let tail = fs::read_to_string(baseline()).unwrap();
    let tail = &tail[tail.find("[measurement]").unwrap()..];
    let cfg = write_config(
        tmp.path(),
        "explicit.toml",
        &format!("{head}{tail}\n{population}"),
    );

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&baseline(), &a, &[])), 0);
    let out = run(&cfg, &b, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(a.join("records.jsonl")).unwrap(),
        fs::read(b.join("records.jsonl")).unwrap()
    );
}
