//! The full physical model of one simulated experiment.

use crate::error::Result;
use crate::sequence::{build_cycle, CycleTimeline, TimingConfig};
use crate::simcore::EmitterModel;
use crate::tagstream::{
    calibrate_detector, DetectorModel, RateTargets, DEFAULT_DARK_RATE, DEFAULT_DEAD_TIME_PS, DEFAULT_JITTER_PS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_ions: u32,
    pub emitter: EmitterModel,
    pub detector: DetectorModel,
    pub timing: TimingConfig,
}

impl ExperimentConfig {
    /// Reference single-ion experiment: default emitter and timing, detector
    /// calibrated to the reference gated singles rates.
    pub fn reference() -> Self {
        let emitter = EmitterModel::default();
        let timing = TimingConfig::default();
        let timeline = build_cycle(&timing).expect("default timing is valid");
        let detector = calibrate_detector(&RateTargets::default(), &emitter, &timeline, &default_detector_base())
            .expect("reference rates are consistent");
        Self { n_ions: 1, emitter, detector, timing }
    }

    /// A perfect single-photon source seen through noiseless detectors.
    pub fn perfect_source() -> Self {
        let reference = Self::reference();
        Self {
            emitter: EmitterModel { p_double: 0.0, p_leakage_excite: 0.0, ..reference.emitter },
            detector: reference.detector.without_background(),
            ..reference
        }
    }

    pub fn with_ions(self, n_ions: u32) -> Self {
        Self { n_ions, ..self }
    }

    pub fn timeline(&self) -> Result<CycleTimeline> {
        build_cycle(&self.timing)
    }

    pub fn validate(&self) -> Result<CycleTimeline> {
        if self.n_ions < 1 {
            return Err(crate::Error::domain("n_ions must be at least 1"));
        }
        self.emitter.validate()?;
        self.detector.validate()?;
        self.timeline()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Split, dark rates, dead time, and jitter used before calibration.
pub fn default_detector_base() -> DetectorModel {
    DetectorModel {
        dark_rate_1: DEFAULT_DARK_RATE,
        dark_rate_2: DEFAULT_DARK_RATE,
        dead_time_ps: DEFAULT_DEAD_TIME_PS,
        jitter_sigma_ps: DEFAULT_JITTER_PS,
        ..DetectorModel::ideal()
    }
}
