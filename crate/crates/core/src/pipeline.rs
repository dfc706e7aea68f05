//! Walk traces to a device-ready speed profile table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{
    align_durations, average_profiles, compile_triangular, fit_device_scale, treadmill_correct,
    FrictionProfile, ImpulsePair, SpeedProfileTable,
};
use crate::segment::{
    combine_channels, detect_phases, segment_steps, select_middle, PhaseConfig, PhaseRecord,
    SegmentationConfig, StepSegment,
};
use crate::trace::ForceTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompileSettings {
    pub segmentation: SegmentationConfig,
    pub phases: PhaseConfig,
    pub first_step: usize,
    pub last_step: usize,
    pub device_max_force: f64,
}

impl Default for CompileSettings {
    fn default() -> Self {
        CompileSettings {
            segmentation: SegmentationConfig::default(),
            phases: PhaseConfig::default(),
            first_step: 4,
            last_step: 13,
            device_max_force: 3.0,
        }
    }
}

/// A step that failed phase detection and was left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedStep {
    pub participant: String,
    pub speed_kmh: f64,
    pub step_index: usize,
    pub reason: String,
}

/// Phases of every analysed step of one walk plus its averaged profile.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkProfile {
    pub participant: String,
    pub records: Vec<PhaseRecord>,
    pub rejected: Vec<RejectedStep>,
    pub profile: FrictionProfile,
}

/// Per-speed diagnostics of a table compilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedSummary {
    pub speed_kmh: f64,
    pub participants: usize,
    pub steps_used: usize,
    pub measured: ImpulsePair,
    pub corrected: ImpulsePair,
    pub treadmill_impulse: f64,
    pub step2_present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileReport {
    pub table: SpeedProfileTable,
    pub speeds: Vec<SpeedSummary>,
    pub rejected: Vec<RejectedStep>,
}

/// Phase annotations for the analysed steps of a walk; failures are
/// returned separately.
pub fn annotate_steps(
    steps: &[StepSegment],
    cfg: &PhaseConfig,
    trace: &ForceTrace,
) -> (Vec<(StepSegment, PhaseRecord)>, Vec<RejectedStep>) {
    let mut ok = Vec::new();
    let mut rejected = Vec::new();
    for s in steps {
        match detect_phases(s, cfg) {
            Ok(phases) => ok.push((
                s.clone(),
                PhaseRecord {
                    step_index: s.index_in_walk,
                    phases,
                },
            )),
            Err(e) => rejected.push(RejectedStep {
                participant: trace.meta().participant_id.clone(),
                speed_kmh: trace.meta().walking_speed_kmh,
                step_index: s.index_in_walk,
                reason: e.to_string(),
            }),
        }
    }
    (ok, rejected)
}

/// Segment a walk, keep its middle steps and average them into one profile.
pub fn walk_profile(trace: &ForceTrace, settings: &CompileSettings) -> Result<WalkProfile> {
    let segments = segment_steps(trace, &settings.segmentation)?;
    let middle = select_middle(&segments, settings.first_step, settings.last_step)?;
    let (ok, rejected) = annotate_steps(&middle, &settings.phases, trace);
    let participant = trace.meta().participant_id.clone();
    if ok.is_empty() {
        return Err(Error::PhaseDetection(format!(
            "no step of {participant} at {} km/h passed phase detection",
            trace.meta().walking_speed_kmh
        )));
    }
    let profiles = ok
        .iter()
        .map(|(s, r)| combine_channels(s, &r.phases))
        .collect::<Result<Vec<_>>>()?;
    let profile = average_profiles(&align_durations(&profiles)?)?;
    Ok(WalkProfile {
        participant,
        records: ok.into_iter().map(|(_, r)| r).collect(),
        rejected,
        profile,
    })
}

/// Build the table for `speeds` from walks whose metadata carry those speeds.
pub fn compile_table(
    traces: &[ForceTrace],
    speeds: &[f64],
    settings: &CompileSettings,
) -> Result<CompileReport> {
    if speeds.is_empty() {
        return Err(Error::Config("no walking speeds requested".into()));
    }
    if speeds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(format!(
            "speeds must be strictly increasing, got {speeds:?}"
        )));
    }
    let mut raw = Vec::new();
    let mut summaries = Vec::new();
    let mut rejected = Vec::new();
    for &speed in speeds {
        let walks: Vec<&ForceTrace> = traces
            .iter()
            .filter(|t| t.meta().walking_speed_kmh == speed)
            .collect();
        if walks.is_empty() {
            return Err(Error::Config(format!("no trace recorded at {speed} km/h")));
        }
        let mut per_participant = Vec::new();
        let mut steps_used = 0;
        for w in walks {
            let wp = walk_profile(w, settings)?;
            steps_used += wp.records.len();
            rejected.extend(wp.rejected);
            per_participant.push(wp.profile);
        }
        let averaged = average_profiles(&align_durations(&per_participant)?)?;
        let correction = treadmill_correct(&averaged)?;
        raw.push(compile_triangular(
            &correction.profile,
            &correction.corrected,
        )?);
        summaries.push(SpeedSummary {
            speed_kmh: speed,
            participants: per_participant.len(),
            steps_used,
            measured: correction.measured,
            corrected: correction.corrected,
            treadmill_impulse: correction.treadmill_impulse(),
            step2_present: averaged.phases().t_step2_present,
        });
    }
    Ok(CompileReport {
        table: fit_device_scale(&raw, settings.device_max_force)?,
        speeds: summaries,
        rejected,
    })
}
