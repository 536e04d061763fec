use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{info, warn};

use fatigue_bench::campaign::{
    AbortReason, Campaign, CampaignControl, CampaignError, CampaignEvent, CampaignObserver,
    CampaignStatus,
};
use fatigue_bench::config::{CampaignConfig, ConfigError, PopulationFile};
use fatigue_bench::measurement::MeasurementRecord;
use fatigue_bench::rig::SimulatedRig;
use fatigue_bench::stats_report::{
    compare_log, emit_report, read_record_log, write_documents, ReportFormat, StatsError,
};
use fatigue_bench::test_plan::validate_condition;

/// Process exit codes.
mod exit {
    pub const OK: u8 = 0;
    /// Filesystem or other I/O failure.
    pub const IO: u8 = 1;
    /// Config file could not be parsed or is inconsistent.
    pub const CONFIG: u8 = 2;
    /// Test condition is outside the allowed envelope.
    pub const VIOLATIONS: u8 = 3;
    /// Campaign aborted because a specimen failed a checkpoint.
    pub const FAILURE: u8 = 4;
    /// Campaign cancelled (SIGINT).
    pub const CANCELLED: u8 = 5;
    /// Rig reported a hardware fault.
    pub const RIG_FAULT: u8 = 6;
    /// Record log is corrupt or lacks a before/after population.
    pub const BAD_LOG: u8 = 7;
    /// Bad command-line usage.
    pub const USAGE: u8 = 64;
}

const RECORD_LOG: &str = "records.jsonl";
const EVENT_LOG: &str = "events.jsonl";
const POPULATION_FILE: &str = "population.toml";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Parser)]
#[command(
    name = "fatigue-bench",
    version,
    about = "Simulated vibration fatigue test bench for 3-axis MEMS accelerometers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a campaign config against the test envelope.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a campaign and write records.jsonl and events.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Wall seconds per simulated second (0 = as fast as possible).
        #[arg(long)]
        time_scale: Option<f64>,
        #[arg(long)]
        abort_on_failure: bool,
    },
    /// Compare before/after populations from a record log.
    Report {
        /// Record log written by `run`.
        log: PathBuf,
        /// Config supplying thresholds; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the log's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the configured population as an explicit specimen list.
    GeneratePopulation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(exit::IO, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::new(exit::IO, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::new(exit::IO, e),
            ConfigError::Violations(ref v) => {
                for violation in v {
                    println!("{violation}");
                }
                Failure::new(exit::VIOLATIONS, e)
            }
            _ => Failure::new(exit::CONFIG, e),
        }
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Io(_) => Failure::new(exit::IO, e),
            _ => Failure::new(exit::BAD_LOG, e),
        }
    }
}

/// Appends records and events to JSON Lines files, flushing each line.
struct JsonlObserver {
    records: BufWriter<File>,
    events: BufWriter<File>,
}

impl JsonlObserver {
    fn create(dir: &Path) -> io::Result<Self> {
        Ok(JsonlObserver {
            records: BufWriter::new(File::create(dir.join(RECORD_LOG))?),
            events: BufWriter::new(File::create(dir.join(EVENT_LOG))?),
        })
    }
}

fn write_line<T: serde::Serialize>(w: &mut BufWriter<File>, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

impl CampaignObserver for JsonlObserver {
    fn on_record(&mut self, record: &MeasurementRecord) -> io::Result<()> {
        write_line(&mut self.records, record)
    }

    fn on_event(&mut self, event: &CampaignEvent) -> io::Result<()> {
        info!("t={:.1}s {:?}", event.time_s, event.kind);
        write_line(&mut self.events, event)
    }
}

fn out_dir_for(flag: Option<PathBuf>, cfg: &CampaignConfig) -> PathBuf {
    flag.or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn cmd_validate(config: &Path) -> Result<u8, Failure> {
    let cfg = CampaignConfig::load(config)?;
    if let Err(violations) = validate_condition(&cfg.condition) {
        for v in &violations {
            println!("{v}");
        }
        return Ok(exit::VIOLATIONS);
    }
    let resolved = cfg.resolve()?;
    println!(
        "valid: {} phase(s), {} cycles planned per specimen, {} specimen(s)",
        resolved.schedule.phases.len(),
        resolved.schedule.total_planned_cycles(),
        resolved.specimens.len()
    );
    Ok(exit::OK)
}

fn cmd_run(
    config: &Path,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    time_scale: Option<f64>,
    abort_on_failure: bool,
) -> Result<u8, Failure> {
    let mut cfg = CampaignConfig::load(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(s) = time_scale {
        cfg.campaign.time_scale = s;
    }
    cfg.campaign.abort_on_failure |= abort_on_failure;
    let resolved = cfg.resolve()?;
    let dir = out_dir_for(out_dir, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut observer = JsonlObserver::create(&dir)
        .with_context(|| format!("opening logs in {}", dir.display()))?;

    let control = CampaignControl::new();
    {
        let control = control.clone();
        if let Err(e) = ctrlc::set_handler(move || control.cancel()) {
            warn!("cannot install interrupt handler: {e}");
        }
    }

    let campaign = Campaign::new(
        &resolved.schedule,
        resolved.specimens,
        resolved.capacity,
        resolved.options,
    )
    .map_err(|e| Failure::new(exit::CONFIG, e))?;
    let mut rig = SimulatedRig::new(resolved.capacity);

    let (done_tx, done_rx) = mpsc::channel::<()>();
    let ticker = {
        let control = control.clone();
        thread::spawn(move || {
            while let Err(mpsc::RecvTimeoutError::Timeout) =
                done_rx.recv_timeout(Duration::from_secs(5))
            {
                if let Some(p) = control.progress() {
                    info!(
                        "progress {:.1}% ({} cycles, {:.2} h simulated)",
                        100.0 * p.fraction,
                        p.elapsed_cycles,
                        p.elapsed_hours
                    );
                }
            }
        })
    };
    let result = campaign.run(&mut rig, &control, &mut observer);
    drop(done_tx);
    let _ = ticker.join();

    let state = match result {
        Ok(state) => state,
        Err(CampaignError::Rig { error, state }) => {
            println!(
                "rig fault after {} cycles: {error}",
                state.progress_report().elapsed_cycles
            );
            return Ok(exit::RIG_FAULT);
        }
        Err(CampaignError::Io(e)) => return Err(Failure::new(exit::IO, e)),
        Err(e) => return Err(Failure::new(exit::CONFIG, e)),
    };

    let p = state.progress_report();
    let code = match state.status() {
        CampaignStatus::Completed => {
            println!("completed");
            exit::OK
        }
        CampaignStatus::Aborted(AbortReason::Failure(report)) => {
            println!("aborted: specimen failure, {}", report.summary());
            exit::FAILURE
        }
        CampaignStatus::Aborted(AbortReason::Cancelled) => {
            println!("cancelled");
            exit::CANCELLED
        }
        CampaignStatus::Aborted(AbortReason::RigFault { message }) => {
            println!("rig fault: {message}");
            exit::RIG_FAULT
        }
        other => {
            return Err(Failure::new(
                exit::IO,
                anyhow::anyhow!("campaign ended in state {other:?}"),
            ))
        }
    };
    println!(
        "{} cycles, {:.2} h simulated, {} records in {}",
        p.elapsed_cycles,
        p.elapsed_hours,
        state.records.len(),
        dir.join(RECORD_LOG).display()
    );
    Ok(code)
}

fn cmd_report(log: &Path, config: Option<&Path>, out_dir: Option<PathBuf>) -> Result<u8, Failure> {
    let thresholds = match config {
        Some(path) => CampaignConfig::load(path)?.thresholds,
        None => Default::default(),
    };
    let file = File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let records = read_record_log(BufReader::new(file)).map_err(|e| {
        let code = if matches!(e, StatsError::Io(_)) {
            exit::IO
        } else {
            exit::BAD_LOG
        };
        Failure::new(
            code,
            anyhow::Error::new(e).context(log.display().to_string()),
        )
    })?;
    let report = compare_log(&records, &thresholds)?;
    let dir = out_dir.unwrap_or_else(|| log.parent().map(Path::to_path_buf).unwrap_or_default());

    let mut docs = Vec::new();
    for format in [
        ReportFormat::HumanText,
        ReportFormat::Structured,
        ReportFormat::TableData,
    ] {
        docs.extend(emit_report(&report, format));
    }
    let written = write_documents(&dir, &docs)?;
    if let Some(text) = docs.first() {
        print!("{}", text.contents);
    }
    info!("wrote {} report files to {}", written.len(), dir.display());
    Ok(exit::OK)
}

fn cmd_generate_population(
    config: &Path,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<u8, Failure> {
    let mut cfg = CampaignConfig::load(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if cfg.population.is_none() {
        return Err(Failure::new(
            exit::CONFIG,
            anyhow::anyhow!("{} has no [population] stanza", config.display()),
        ));
    }
    let file = PopulationFile {
        specimens: cfg.specimens()?,
    };
    let dir = out_dir_for(out_dir, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(POPULATION_FILE);
    std::fs::write(&path, file.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} specimens written to {}",
        file.specimens.len(),
        path.display()
    );
    Ok(exit::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run {
            config,
            out_dir,
            seed,
            time_scale,
            abort_on_failure,
        } => cmd_run(&config, out_dir, seed, time_scale, abort_on_failure),
        Command::Report {
            log,
            config,
            out_dir,
        } => cmd_report(&log, config.as_deref(), out_dir),
        Command::GeneratePopulation {
            config,
            out_dir,
            seed,
        } => cmd_generate_population(&config, out_dir, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
