//! TOML run configuration.
//!
//! Every key is optional. Missing keys take the reference-experiment values;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hbt_core::correlator::{AnalysisParams, RateSet};
use hbt_core::experiment::ExperimentConfig;
use hbt_core::sequence::TimingConfig;
use hbt_core::simcore::EmitterModel;
use hbt_core::tagstream::{calibrate_detector, DetectorModel, RateTargets, DEFAULT_DARK_RATE, DEFAULT_DEAD_TIME_PS, DEFAULT_JITTER_PS};
use hbt_core::sampler::{Method, DEFAULT_SHARD_CYCLES};

use crate::error::{CliError, Result};
use crate::format::Format;
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    pub analysis: AnalysisSection,
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_ions: u32,
    pub emitter: EmitterModel,
    pub timing: TimingConfig,
    pub detector: DetectorSection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { n_ions: 1, emitter: EmitterModel::default(), timing: TimingConfig::default(), detector: DetectorSection::default() }
    }
}

/// Detector settings. Efficiencies and scatter levels are calibrated against
/// `targets` unless given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub split: f64,
    pub dark_rate_1: f64,
    pub dark_rate_2: f64,
    pub dead_time_ps: u64,
    pub jitter_sigma_ps: u64,
    pub targets: RateTargets,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scatter_per_cycle_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scatter_per_cycle_2: Option<f64>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            split: 0.5,
            dark_rate_1: DEFAULT_DARK_RATE,
            dark_rate_2: DEFAULT_DARK_RATE,
            dead_time_ps: DEFAULT_DEAD_TIME_PS,
            jitter_sigma_ps: DEFAULT_JITTER_PS,
            targets: RateTargets::default(),
            eta_1: None,
            eta_2: None,
            scatter_per_cycle_1: None,
            scatter_per_cycle_2: None,
        }
    }
}

/// Where the accidental-coincidence background comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    /// A second, simulated or recorded stream with no ion present.
    #[default]
    NoIon,
    /// Explicit rates from `analysis.rates`.
    Rates,
    /// No correction: `C_B = 0`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub bin_width_ps: u64,
    pub peak_half_width_ps: u64,
    pub side_peaks: usize,
    pub background: BackgroundMode,
    /// Length of the simulated no-ion run.
    pub background_duration_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<RateSet>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let p = AnalysisParams::default();
        Self {
            bin_width_ps: p.bin_width_ps,
            peak_half_width_ps: p.peak_half_width_ps,
            side_peaks: p.side_peaks,
            background: BackgroundMode::NoIon,
            background_duration_s: 1_800.0,
            rates: None,
        }
    }
}

impl AnalysisSection {
    pub fn params(&self) -> AnalysisParams {
        AnalysisParams {
            bin_width_ps: self.bin_width_ps,
            peak_half_width_ps: self.peak_half_width_ps,
            side_peaks: self.side_peaks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub seed: u64,
    pub duration_s: f64,
    pub format: Format,
    pub method: Method,
    pub shard_cycles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 10_800.0,
            format: Format::Binary,
            method: Method::SkipAhead,
            shard_cycles: DEFAULT_SHARD_CYCLES,
            out: None,
        }
    }
}

/// Seconds to whole picoseconds.
pub fn seconds_to_ps(s: f64) -> Result<u64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(CliError::config(format!("duration {s} s must be finite and nonnegative")));
    }
    let ps = (s * 1e12).round();
    if ps >= u64::MAX as f64 {
        return Err(CliError::config(format!("duration {s} s does not fit in 64-bit picoseconds")));
    }
    Ok(ps as u64)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Field-level checks beyond what the types enforce.
    pub fn validate(&self) -> Result<()> {
        let a = &self.analysis;
        if a.bin_width_ps == 0 {
            return Err(CliError::config("analysis.bin_width_ps must be positive"));
        }
        if a.side_peaks < 2 || a.side_peaks % 2 != 0 {
            return Err(CliError::config("analysis.side_peaks must be even and at least 2"));
        }
        if !(a.background_duration_s > 0.0 && a.background_duration_s.is_finite()) {
            return Err(CliError::config("analysis.background_duration_s must be positive"));
        }
        if self.io.shard_cycles == 0 {
            return Err(CliError::config("io.shard_cycles must be positive"));
        }
        seconds_to_ps(self.io.duration_s).map_err(|e| CliError::config(format!("io.duration_s: {e}")))?;
        self.experiment().map_err(|e| match e {
            CliError::Core(err) => CliError::config(format!("experiment: {err}")),
            other => other,
        })?;
        Ok(())
    }

    /// The fully resolved physical model.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let d = &e.detector;
        let base = DetectorModel {
            eta_1: 1.0,
            eta_2: 1.0,
            split: d.split,
            dark_rate_1: d.dark_rate_1,
            dark_rate_2: d.dark_rate_2,
            scatter_per_cycle_1: 0.0,
            scatter_per_cycle_2: 0.0,
            dead_time_ps: d.dead_time_ps,
            jitter_sigma_ps: d.jitter_sigma_ps,
        };
        let explicit = [d.eta_1, d.eta_2, d.scatter_per_cycle_1, d.scatter_per_cycle_2];
        let calibrated = if explicit.iter().all(Option::is_some) {
            base
        } else {
            let timeline = hbt_core::sequence::build_cycle(&e.timing)?;
            calibrate_detector(&d.targets, &e.emitter, &timeline, &base)?
        };
        let detector = DetectorModel {
            eta_1: d.eta_1.unwrap_or(calibrated.eta_1),
            eta_2: d.eta_2.unwrap_or(calibrated.eta_2),
            scatter_per_cycle_1: d.scatter_per_cycle_1.unwrap_or(calibrated.scatter_per_cycle_1),
            scatter_per_cycle_2: d.scatter_per_cycle_2.unwrap_or(calibrated.scatter_per_cycle_2),
            ..calibrated
        };
        let config = ExperimentConfig { n_ions: e.n_ions, emitter: e.emitter, detector, timing: e.timing };
        config.validate()?;
        Ok(config)
    }
}
