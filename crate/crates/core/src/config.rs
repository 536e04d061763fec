//! Campaign configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{Allocation, CampaignOptions, MeasurementPlan, MAX_CHUNK_SECONDS};
use crate::dut_sim::{
    generate_population, AxisParams, DegradationState, DutError, DutModel, PerAxis, PopulationSpec,
};
use crate::measurement::Thresholds;
use crate::rig::DEFAULT_CAPACITY;
use crate::test_plan::{
    compile_schedule, validate_condition, CampaignSchedule, FatigueTestCondition, ScheduleError,
    Violation,
};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("test condition outside the envelope ({} violation(s))", .0.len())]
    Violations(Vec<Violation>),
}

impl From<DutError> for ConfigError {
    fn from(e: DutError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Per-axis parameter overrides. Unset fields keep the built-in default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisOverride {
    pub natural_frequency_hz: Option<f64>,
    pub damping_ratio: Option<f64>,
    pub sensitivity_v_per_g: Option<f64>,
    pub zero_g_offset_v: Option<f64>,
}

impl AxisOverride {
    fn apply(&self, p: &mut AxisParams) {
        if let Some(v) = self.natural_frequency_hz {
            p.natural_frequency = v;
        }
        if let Some(v) = self.damping_ratio {
            p.damping_ratio = v;
        }
        if let Some(v) = self.sensitivity_v_per_g {
            p.sensitivity = v;
        }
        if let Some(v) = self.zero_g_offset_v {
            p.zero_g_offset = v;
        }
    }
}

/// Nominal specimen overrides: top-level keys apply to every axis, the
/// `X`/`Y`/`Z` sub-tables to one axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalConfig {
    pub natural_frequency_hz: Option<f64>,
    pub damping_ratio: Option<f64>,
    pub sensitivity_v_per_g: Option<f64>,
    pub zero_g_offset_v: Option<f64>,
    pub supply_current_a: Option<f64>,
    #[serde(rename = "X")]
    pub x: Option<AxisOverride>,
    #[serde(rename = "Y")]
    pub y: Option<AxisOverride>,
    #[serde(rename = "Z")]
    pub z: Option<AxisOverride>,
}

impl NominalConfig {
    pub fn model(&self) -> DutModel {
        let mut dut = DutModel::default();
        let all = AxisOverride {
            natural_frequency_hz: self.natural_frequency_hz,
            damping_ratio: self.damping_ratio,
            sensitivity_v_per_g: self.sensitivity_v_per_g,
            zero_g_offset_v: self.zero_g_offset_v,
        };
        for (params, specific) in [
            (&mut dut.axes.x, self.x),
            (&mut dut.axes.y, self.y),
            (&mut dut.axes.z, self.z),
        ] {
            all.apply(params);
            if let Some(o) = specific {
                o.apply(params);
            }
        }
        if let Some(i) = self.supply_current_a {
            dut.supply_current = i;
        }
        dut
    }
}

/// Population recipe; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub count: usize,
    pub natural_frequency_cov: PerAxis<f64>,
    #[serde(default)]
    pub sensitivity_cov: PerAxis<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSettings {
    pub mid_checkpoint_interval_cycles: Option<u64>,
    pub abort_on_failure: bool,
    pub allocation: Allocation,
    pub chunk_seconds: f64,
    pub rig_capacity: usize,
    pub time_scale: f64,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            mid_checkpoint_interval_cycles: None,
            abort_on_failure: false,
            allocation: Allocation::Remount,
            chunk_seconds: MAX_CHUNK_SECONDS,
            rig_capacity: DEFAULT_CAPACITY,
            time_scale: 0.0,
        }
    }
}

/// Latent damage planted in one specimen before the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageInjection {
    pub specimen: String,
    pub degradation: DegradationState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub condition: FatigueTestCondition,
    #[serde(default)]
    pub population: Option<PopulationConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub specimens: Vec<DutModel>,
    #[serde(default)]
    pub nominal: NominalConfig,
    #[serde(default)]
    pub measurement: MeasurementPlan,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub campaign: CampaignSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub damage: Vec<DamageInjection>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Everything needed to start a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedCampaign {
    pub schedule: CampaignSchedule,
    pub specimens: Vec<DutModel>,
    pub capacity: usize,
    pub options: CampaignOptions,
}

impl CampaignConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn population_spec(&self) -> Option<PopulationSpec> {
        self.population.as_ref().map(|p| PopulationSpec {
            count: p.count,
            natural_frequency_cov: p.natural_frequency_cov,
            sensitivity_cov: p.sensitivity_cov,
            seed: self.seed(),
        })
    }

    /// Explicit specimens if listed, otherwise the generated population,
    /// with damage injections applied.
    pub fn specimens(&self) -> Result<Vec<DutModel>, ConfigError> {
        let mut specimens = match (&self.population, self.specimens.is_empty()) {
            (Some(_), false) => {
                return Err(ConfigError::Invalid(
                    "give either [population] or [[specimens]], not both".into(),
                ))
            }
            (None, true) => {
                return Err(ConfigError::Invalid(
                    "no [population] or [[specimens]] given".into(),
                ))
            }
            (None, false) => self.specimens.clone(),
            (Some(_), true) => {
                let spec = self.population_spec().expect("population present");
                generate_population(&spec, &self.nominal.model())?
            }
        };
        for d in &specimens {
            d.validate()?;
        }
        for inj in &self.damage {
            inj.degradation.validate()?;
            let dut = specimens
                .iter_mut()
                .find(|d| d.specimen_id == inj.specimen)
                .ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "damage names unknown specimen {:?}",
                        inj.specimen
                    ))
                })?;
            dut.latent_damage = Some(inj.degradation);
        }
        Ok(specimens)
    }

    pub fn options(&self) -> CampaignOptions {
        CampaignOptions {
            chunk_seconds: self.campaign.chunk_seconds,
            time_scale: self.campaign.time_scale,
            abort_on_failure: self.campaign.abort_on_failure,
            thresholds: self.thresholds,
            measurements: self.measurement,
            allocation: self.campaign.allocation,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedCampaign, ConfigError> {
        validate_condition(&self.condition).map_err(ConfigError::Violations)?;
        let schedule = compile_schedule(&self.condition)
            .map_err(|ScheduleError::Invalid(v)| ConfigError::Violations(v))?
            .with_mid_checkpoints(self.campaign.mid_checkpoint_interval_cycles);
        if !(self.campaign.time_scale >= 0.0 && self.campaign.time_scale.is_finite()) {
            return Err(ConfigError::Invalid(
                "time_scale must be finite and non-negative".into(),
            ));
        }
        if self.campaign.rig_capacity == 0 {
            return Err(ConfigError::Invalid(
                "rig_capacity must be at least 1".into(),
            ));
        }
        if self.campaign.mid_checkpoint_interval_cycles == Some(0) {
            return Err(ConfigError::Invalid(
                "mid_checkpoint_interval_cycles must be positive".into(),
            ));
        }
        self.measurement
            .sweep
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ResolvedCampaign {
            schedule,
            specimens: self.specimens()?,
            capacity: self.campaign.rig_capacity,
            options: self.options(),
        })
    }
}

/// A population file: the explicit specimen list written by
/// `generate-population`, loadable as `[[specimens]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationFile {
    pub specimens: Vec<DutModel>,
}

impl PopulationFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("population serializes to TOML")
    }
}
