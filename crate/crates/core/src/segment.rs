//! Step segmentation and four-phase annotation of walking traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::FrictionProfile;
use crate::trace::ForceTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Combined |thenar_y| + |heel_y| level that opens a step (N).
    pub onset_threshold: f64,
    /// Level the activity must stay below for `release_hold_s` to close a step (N).
    pub release_threshold: f64,
    pub min_step_s: f64,
    pub release_hold_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            onset_threshold: 0.3,
            release_threshold: 0.1,
            min_step_s: 0.2,
            release_hold_s: 0.05,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("onset_threshold", self.onset_threshold)?;
        positive("release_threshold", self.release_threshold)?;
        positive("min_step_s", self.min_step_s)?;
        positive("release_hold_s", self.release_hold_s)?;
        if self.release_threshold >= self.onset_threshold {
            return Err(Error::Config(format!(
                "release_threshold ({}) must be below onset_threshold ({})",
                self.release_threshold, self.onset_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// Terminal thenar excursion must exceed this multiple of the brake peak.
    pub step4_factor: f64,
    /// Forces within this band around zero do not start a sign region (N).
    pub sign_floor: f64,
    /// Minimum simultaneous heel and thenar drive for the double-support phase.
    pub step2_min_s: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            step4_factor: 2.0,
            sign_floor: 0.05,
            step2_min_s: 0.010,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step4_factor.is_finite() && self.step4_factor > 0.0) {
            return Err(Error::Config("step4_factor must be positive".into()));
        }
        if !(self.sign_floor.is_finite() && self.sign_floor >= 0.0) {
            return Err(Error::Config("sign_floor must be non-negative".into()));
        }
        if !(self.step2_min_s.is_finite() && self.step2_min_s > 0.0) {
            return Err(Error::Config("step2_min_s must be positive".into()));
        }
        Ok(())
    }
}

/// One foot contact cut out of a walk.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSegment {
    /// 1-based position among the kept steps of the walk.
    pub index_in_walk: usize,
    /// First sample of the window in the source trace.
    pub start_sample: usize,
    pub trace: ForceTrace,
}

impl StepSegment {
    pub fn end_sample(&self) -> usize {
        self.start_sample + self.trace.len()
    }

    pub fn start_s(&self) -> f64 {
        self.start_sample as f64 / self.trace.sample_rate_hz()
    }
}

/// Phase timing of one step. `t_start` is the step start within the walk;
/// every other time is relative to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub t_start: f64,
    pub t_step1_peak: f64,
    pub t_step2_present: bool,
    pub t_step3_peak: f64,
    pub t_step4_start: f64,
    pub t_end: f64,
}

impl PhaseTimings {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.t_step1_peak
            && self.t_step1_peak < self.t_step3_peak
            && self.t_step3_peak <= self.t_step4_start
            && self.t_step4_start <= self.t_end;
        if ok {
            Ok(())
        } else {
            Err(Error::PhaseInconsistency(format!(
                "phase times out of order: {self:?}"
            )))
        }
    }

    /// Rescale every relative time by `factor`; `t_start` is an absolute
    /// position and stays put.
    pub fn scaled(&self, factor: f64) -> PhaseTimings {
        PhaseTimings {
            t_start: self.t_start,
            t_step1_peak: self.t_step1_peak * factor,
            t_step2_present: self.t_step2_present,
            t_step3_peak: self.t_step3_peak * factor,
            t_step4_start: self.t_step4_start * factor,
            t_end: self.t_end * factor,
        }
    }
}

/// JSON sidecar row for a detected step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub step_index: usize,
    #[serde(flatten)]
    pub phases: PhaseTimings,
}

/// Split a walk into steps.
///
/// A step opens where the activity reaches `onset_threshold`; its window is
/// extended back to where the activity first rose above `release_threshold`
/// and runs until the activity has stayed below `release_threshold` for
/// `release_hold_s`. A step still open at the end of the trace is closed there.
pub fn segment_steps(trace: &ForceTrace, cfg: &SegmentationConfig) -> Result<Vec<StepSegment>> {
    cfg.validate()?;
    let activity: Vec<f64> = trace.samples().iter().map(|s| s.activity()).collect();
    let n = activity.len();
    let rate = trace.sample_rate_hz();
    let hold = ((cfg.release_hold_s * rate).ceil() as usize).max(1);

    let mut windows = Vec::new();
    let mut prev_end = 0;
    let mut i = 0;
    while i < n {
        if activity[i] < cfg.onset_threshold {
            i += 1;
            continue;
        }
        let mut start = i;
        while start > prev_end && activity[start - 1] >= cfg.release_threshold {
            start -= 1;
        }
        let mut end = n;
        let mut quiet_from = None;
        for (j, &a) in activity.iter().enumerate().skip(i + 1) {
            if a < cfg.release_threshold {
                let from = *quiet_from.get_or_insert(j);
                if j + 1 - from >= hold {
                    end = from;
                    break;
                }
            } else {
                quiet_from = None;
            }
        }
        if (end - start) as f64 / rate >= cfg.min_step_s {
            windows.push(start..end);
        }
        prev_end = end;
        i = end;
    }

    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(k, w)| StepSegment {
            index_in_walk: k + 1,
            start_sample: w.start,
            trace: trace.window(w),
        })
        .collect())
}

/// Keep steps `first..=last` (1-based), e.g. the middle ten of a 30-step walk.
pub fn select_middle(
    segments: &[StepSegment],
    first: usize,
    last: usize,
) -> Result<Vec<StepSegment>> {
    if first < 1 || first > last {
        return Err(Error::Config(format!(
            "step window must satisfy 1 <= first <= last, got {first}..={last}"
        )));
    }
    if segments.len() < last {
        return Err(Error::InsufficientSteps {
            needed: last,
            available: segments.len(),
        });
    }
    Ok(segments
        .iter()
        .filter(|s| (first..=last).contains(&s.index_in_walk))
        .cloned()
        .collect())
}

/// Maximal run of indices around `seed` whose values satisfy `pred`.
fn run_around(
    values: &[f64],
    seed: usize,
    lower: usize,
    pred: impl Fn(f64) -> bool,
) -> (usize, usize) {
    let mut a = seed;
    while a > lower && pred(values[a - 1]) {
        a -= 1;
    }
    let mut b = seed;
    while b + 1 < values.len() && pred(values[b + 1]) {
        b += 1;
    }
    (a, b)
}

fn argmin(values: &[f64], range: std::ops::RangeInclusive<usize>) -> usize {
    range
        .min_by(|&x, &y| values[x].total_cmp(&values[y]))
        .expect("non-empty range")
}

fn argmax(values: &[f64], range: std::ops::RangeInclusive<usize>) -> usize {
    // First maximum wins on ties.
    range
        .rev()
        .max_by(|&x, &y| values[x].total_cmp(&values[y]))
        .expect("non-empty range")
}

/// Locate brake peak, drive peak, double support and the terminal thenar
/// excursion of one step.
pub fn detect_phases(segment: &StepSegment, cfg: &PhaseConfig) -> Result<PhaseTimings> {
    cfg.validate()?;
    let trace = &segment.trace;
    if trace.is_empty() {
        return Err(Error::PhaseDetection("empty step".into()));
    }
    let rate = trace.sample_rate_hz();
    let combined: Vec<f64> = trace.samples().iter().map(|s| s.combined_y()).collect();
    let thenar: Vec<f64> = trace.samples().iter().map(|s| s.thenar_y).collect();
    let heel: Vec<f64> = trace.samples().iter().map(|s| s.heel_y).collect();
    let n = combined.len();

    let brake_seed = combined
        .iter()
        .position(|&c| c < -cfg.sign_floor)
        .ok_or_else(|| {
            Error::PhaseDetection(format!("step {}: no brake region", segment.index_in_walk))
        })?;
    let (brake_a, brake_b) = run_around(&combined, brake_seed, 0, |c| c < 0.0);
    let step1 = argmin(&combined, brake_a..=brake_b);

    let drive_seed = (brake_b + 1..n)
        .find(|&i| combined[i] > cfg.sign_floor)
        .ok_or_else(|| {
            Error::PhaseDetection(format!(
                "step {}: no drive region after the brake",
                segment.index_in_walk
            ))
        })?;
    let (drive_a, drive_b) = run_around(&combined, drive_seed, brake_b + 1, |c| c > 0.0);
    let step3 = argmax(&combined, drive_a..=drive_b);

    let spike_level = -cfg.step4_factor * combined[step1].abs();
    let step4 = match (step3 + 1..n).find(|&i| thenar[i] < spike_level) {
        Some(mut k) => {
            while k > step3 + 1 && thenar[k - 1] < 0.0 {
                k -= 1;
            }
            k
        }
        None => n,
    };

    let min_overlap = (cfg.step2_min_s * rate - 1e-9).ceil().max(1.0) as usize;
    let mut run = 0usize;
    let mut longest = 0usize;
    for i in brake_b + 1..step4 {
        if heel[i] > cfg.sign_floor && thenar[i] > cfg.sign_floor {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }

    let phases = PhaseTimings {
        t_start: segment.start_s(),
        t_step1_peak: step1 as f64 / rate,
        t_step2_present: longest >= min_overlap,
        t_step3_peak: step3 as f64 / rate,
        t_step4_start: step4 as f64 / rate,
        t_end: n as f64 / rate,
    };
    phases.validate()?;
    Ok(phases)
}

/// Sum both sites into one channel and drop everything from the terminal
/// thenar excursion onwards.
pub fn combine_channels(segment: &StepSegment, phases: &PhaseTimings) -> Result<FrictionProfile> {
    phases.validate()?;
    let trace = &segment.trace;
    let rate = trace.sample_rate_hz();
    let keep = ((phases.t_step4_start * rate).round() as usize).min(trace.len());
    let values = trace.samples()[..keep]
        .iter()
        .map(|s| s.combined_y())
        .collect();
    FrictionProfile::new(rate, values, *phases, trace.meta().walking_speed_kmh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Sample, TraceMeta};

    fn trace_from(thenar: &[f64], heel: &[f64]) -> ForceTrace {
        let samples = thenar
            .iter()
            .zip(heel)
            .map(|(&t, &h)| Sample::new(t, h))
            .collect();
        ForceTrace::new(1000.0, samples, TraceMeta::default()).unwrap()
    }

    fn segment_of(trace: ForceTrace) -> StepSegment {
        StepSegment {
            index_in_walk: 1,
            start_sample: 0,
            trace,
        }
    }

    fn tri(t: f64, onset: f64, apex: f64, offset: f64, peak: f64) -> f64 {
        if t <= onset || t >= offset {
            0.0
        } else if t <= apex {
            peak * (t - onset) / (apex - onset)
        } else {
            peak * (offset - t) / (offset - apex)
        }
    }

    #[test]
    fn all_zero_trace_has_no_steps() {
        let trace = trace_from(&[0.0; 2000], &[0.0; 2000]);
        assert!(segment_steps(&trace, &SegmentationConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bump_below_onset_is_ignored() {
        let heel: Vec<f64> = (0..1000)
            .map(|i| tri(i as f64 / 1000.0, 0.2, 0.4, 0.6, -0.25))
            .collect();
        let trace = trace_from(&vec![0.0; 1000], &heel);
        assert!(segment_steps(&trace, &SegmentationConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bad_thresholds_are_config_errors() {
        let trace = trace_from(&[0.0; 10], &[0.0; 10]);
        let cfg = SegmentationConfig {
            onset_threshold: 0.0,
            ..Default::default()
        };
        assert!(matches!(segment_steps(&trace, &cfg), Err(Error::Config(_))));
        let cfg = SegmentationConfig {
            release_threshold: 0.5,
            ..Default::default()
        };
        assert!(matches!(segment_steps(&trace, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn short_bursts_are_discarded() {
        let heel: Vec<f64> = (0..1000)
            .map(|i| tri(i as f64 / 1000.0, 0.1, 0.15, 0.2, -1.0))
            .collect();
        let trace = trace_from(&vec![0.0; 1000], &heel);
        assert!(segment_steps(&trace, &SegmentationConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn brief_dip_does_not_split_a_step() {
        // 20 ms of silence inside a step is shorter than the 50 ms hold.
        let heel: Vec<f64> = (0..1500)
            .map(|i| {
                let t = i as f64 / 1000.0;
                if (0.3..0.6).contains(&t) || (0.62..0.9).contains(&t) {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        let trace = trace_from(&vec![0.0; 1500], &heel);
        let steps = segment_steps(&trace, &SegmentationConfig::default()).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].start_sample, 300);
        assert_eq!(steps[0].end_sample(), 900);
    }

    fn fake_segments(n: usize) -> Vec<StepSegment> {
        (1..=n)
            .map(|k| StepSegment {
                index_in_walk: k,
                start_sample: k * 10,
                trace: trace_from(&[0.0], &[0.0]),
            })
            .collect()
    }

    #[test]
    fn middle_ten_of_thirty() {
        let picked = select_middle(&fake_segments(30), 4, 13).unwrap();
        let idx: Vec<usize> = picked.iter().map(|s| s.index_in_walk).collect();
        assert_eq!(idx, (4..=13).collect::<Vec<_>>());
    }

    #[test]
    fn middle_of_exactly_thirteen() {
        assert_eq!(select_middle(&fake_segments(13), 4, 13).unwrap().len(), 10);
    }

    #[test]
    fn nine_steps_are_insufficient() {
        match select_middle(&fake_segments(9), 4, 13) {
            Err(Error::InsufficientSteps { needed, available }) => {
                assert_eq!((needed, available), (13, 9))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(select_middle(&fake_segments(9), 0, 3).is_err());
        assert!(select_middle(&fake_segments(9), 5, 3).is_err());
    }

    /// Heel brake triangle, thenar drive triangle, thenar spike. Returns the
    /// segment plus the constructed brake apex, drive apex and spike onset (s).
    fn constructed_step(overlap_s: f64) -> (StepSegment, f64, f64, f64) {
        let n = 900;
        let (b_on, b_apex, b_off) = (0.0, 0.1, 0.3);
        let (d_on, d_apex, d_off) = (0.3, 0.5, 0.75);
        let (s_on, s_apex, s_off) = (0.78, 0.8, 0.85);
        let mut heel = Vec::with_capacity(n);
        let mut thenar = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / 1000.0;
            let plateau = if t > d_on && t < d_on + overlap_s {
                0.3
            } else {
                0.0
            };
            heel.push(tri(t, b_on, b_apex, b_off, -1.0) + plateau);
            thenar.push(tri(t, d_on, d_apex, d_off, 1.0) + tri(t, s_on, s_apex, s_off, -5.0));
        }
        (segment_of(trace_from(&thenar, &heel)), b_apex, d_apex, s_on)
    }

    #[test]
    fn phases_at_constructed_times() {
        let (seg, b_apex, d_apex, s_on) = constructed_step(0.0);
        let p = detect_phases(&seg, &PhaseConfig::default()).unwrap();
        assert!((p.t_step1_peak - b_apex).abs() <= 0.001, "{p:?}");
        assert!((p.t_step3_peak - d_apex).abs() <= 0.001, "{p:?}");
        // First sample strictly inside the spike.
        assert!((p.t_step4_start - (s_on + 0.001)).abs() <= 0.001, "{p:?}");
        assert!(!p.t_step2_present);
        assert_eq!(p.t_end, 0.9);
    }

    #[test]
    fn overlapping_plateau_marks_double_support() {
        let (seg, ..) = constructed_step(0.05);
        let p = detect_phases(&seg, &PhaseConfig::default()).unwrap();
        assert!(p.t_step2_present);
    }

    #[test]
    fn pure_drive_step_is_rejected() {
        let thenar: Vec<f64> = (0..500)
            .map(|i| tri(i as f64 / 1000.0, 0.0, 0.2, 0.4, 1.0))
            .collect();
        let seg = segment_of(trace_from(&thenar, &vec![0.0; 500]));
        assert!(matches!(
            detect_phases(&seg, &PhaseConfig::default()),
            Err(Error::PhaseDetection(_))
        ));
    }

    #[test]
    fn brake_only_step_is_rejected() {
        let heel: Vec<f64> = (0..500)
            .map(|i| tri(i as f64 / 1000.0, 0.0, 0.2, 0.4, -1.0))
            .collect();
        let seg = segment_of(trace_from(&vec![0.0; 500], &heel));
        assert!(matches!(
            detect_phases(&seg, &PhaseConfig::default()),
            Err(Error::PhaseDetection(_))
        ));
    }

    #[test]
    fn combine_sums_channels() {
        let mut thenar = vec![1.0; 400];
        let mut heel = vec![0.5; 400];
        thenar[..100].iter_mut().for_each(|v| *v = 0.0);
        heel[..100].iter_mut().for_each(|v| *v = -1.0);
        let seg = segment_of(trace_from(&thenar, &heel));
        let phases = PhaseTimings {
            t_start: 0.0,
            t_step1_peak: 0.05,
            t_step2_present: true,
            t_step3_peak: 0.2,
            t_step4_start: 0.4,
            t_end: 0.4,
        };
        let profile = combine_channels(&seg, &phases).unwrap();
        assert_eq!(profile.values().len(), 400);
        assert!(profile.values()[100..].iter().all(|&v| v == 1.5));
    }

    #[test]
    fn combine_drops_the_terminal_spike() {
        let (seg, ..) = constructed_step(0.0);
        let phases = detect_phases(&seg, &PhaseConfig::default()).unwrap();
        let profile = combine_channels(&seg, &phases).unwrap();
        let keep = profile.values().len();
        assert_eq!(keep as f64 / 1000.0, phases.t_step4_start);
        assert!((profile.duration_s() - phases.t_step4_start).abs() < 1e-12);
        assert!(profile.values().iter().all(|&v| v > -2.0));
        assert!(seg.trace.samples()[keep..]
            .iter()
            .any(|s| s.thenar_y < -2.0));
    }
}
