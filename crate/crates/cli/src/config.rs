//! Pipeline configuration: a flat TOML file whose values flags may override.

use std::path::{Path, PathBuf};

use hapgait_core::calibration::DEFAULT_MIN_DUTY;
use hapgait_core::pipeline::CompileSettings;
use hapgait_core::plant::SimConfig;
use hapgait_core::profile::KNOT_SPEEDS_KMH;
use hapgait_core::renderer::TICK_RATE_HZ;
use hapgait_core::segment::{PhaseConfig, SegmentationConfig};
use hapgait_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub onset_threshold: f64,
    pub release_threshold: f64,
    pub min_step_s: f64,
    pub release_hold_s: f64,
    pub step4_factor: f64,
    pub sign_floor: f64,
    pub step2_min_s: f64,
    pub first_step: usize,
    pub last_step: usize,
    pub device_max_force: f64,
    pub min_duty: f64,
    pub tau_s: f64,
    pub max_force: f64,
    pub sensor_resolution: f64,
    pub settle_s: f64,
    pub tick_rate_hz: u32,
    pub speeds: Vec<f64>,
    pub table: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub events: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let seg = SegmentationConfig::default();
        let ph = PhaseConfig::default();
        let compile = CompileSettings::default();
        let sim = SimConfig::default();
        PipelineConfig {
            onset_threshold: seg.onset_threshold,
            release_threshold: seg.release_threshold,
            min_step_s: seg.min_step_s,
            release_hold_s: seg.release_hold_s,
            step4_factor: ph.step4_factor,
            sign_floor: ph.sign_floor,
            step2_min_s: ph.step2_min_s,
            first_step: compile.first_step,
            last_step: compile.last_step,
            device_max_force: compile.device_max_force,
            min_duty: DEFAULT_MIN_DUTY,
            tau_s: sim.tau_s,
            max_force: sim.max_force,
            sensor_resolution: sim.sensor_resolution,
            settle_s: sim.settle_s,
            tick_rate_hz: TICK_RATE_HZ,
            speeds: KNOT_SPEEDS_KMH.to_vec(),
            table: None,
            calib: None,
            events: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation().validate()?;
        self.phases().validate()?;
        if self.tick_rate_hz != TICK_RATE_HZ {
            return Err(Error::Config(format!(
                "tick_rate_hz is fixed at {TICK_RATE_HZ}, got {}",
                self.tick_rate_hz
            )));
        }
        if self.speeds.is_empty()
            || self
                .speeds
                .windows(2)
                .any(|w| w[0] >= w[1] || w[0].is_nan() || w[1].is_nan())
        {
            return Err(Error::Config(format!(
                "speeds must be non-empty and strictly increasing, got {:?}",
                self.speeds
            )));
        }
        if !(1 <= self.first_step && self.first_step <= self.last_step) {
            return Err(Error::Config(format!(
                "need 1 <= first_step <= last_step, got {}..{}",
                self.first_step, self.last_step
            )));
        }
        if !(0.0..1.0).contains(&self.min_duty) {
            return Err(Error::Config(format!(
                "min_duty must lie in [0, 1), got {}",
                self.min_duty
            )));
        }
        Ok(())
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            onset_threshold: self.onset_threshold,
            release_threshold: self.release_threshold,
            min_step_s: self.min_step_s,
            release_hold_s: self.release_hold_s,
        }
    }

    pub fn phases(&self) -> PhaseConfig {
        PhaseConfig {
            step4_factor: self.step4_factor,
            sign_floor: self.sign_floor,
            step2_min_s: self.step2_min_s,
        }
    }

    pub fn compile_settings(&self) -> CompileSettings {
        CompileSettings {
            segmentation: self.segmentation(),
            phases: self.phases(),
            first_step: self.first_step,
            last_step: self.last_step,
            device_max_force: self.device_max_force,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            tau_s: self.tau_s,
            max_force: self.max_force,
            sensor_resolution: self.sensor_resolution,
            settle_s: self.settle_s,
        }
    }
}
