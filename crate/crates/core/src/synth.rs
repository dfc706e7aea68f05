//! Synthetic walking traces with known step boundaries and phase times.
//!
//! Each step is a heel brake triangle, a thenar drive triangle (with an
//! optional heel push overlapping its start) and a terminal backward spike on
//! the thenar. Shapes vary per step by a bounded random factor; the
//! generator is seeded so walks are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::profile::{Triangle, KNOT_SPEEDS_KMH};
use crate::trace::{ForceTrace, Sample, TraceMeta};

/// Geometry of one step, in seconds and newtons (magnitudes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepShape {
    pub brake_span: f64,
    pub brake_peak: f64,
    pub drive_span: f64,
    pub drive_peak: f64,
    /// Heel push alongside the start of the drive; zero span disables it.
    pub overlap_span: f64,
    pub overlap_peak: f64,
    pub spike_span: f64,
    pub spike_peak: f64,
    /// Drive onset relative to the end of the brake (negative overlaps).
    pub drive_lead: f64,
}

const NOMINAL: [StepShape; 3] = [
    StepShape {
        brake_span: 0.45,
        brake_peak: 1.2,
        drive_span: 0.7,
        drive_peak: 0.9,
        overlap_span: 0.2,
        overlap_peak: 0.3,
        spike_span: 0.08,
        spike_peak: 3.6,
        drive_lead: -0.03,
    },
    StepShape {
        brake_span: 0.36,
        brake_peak: 1.5,
        drive_span: 0.52,
        drive_peak: 1.2,
        overlap_span: 0.1,
        overlap_peak: 0.2,
        spike_span: 0.06,
        spike_peak: 4.5,
        drive_lead: -0.02,
    },
    StepShape {
        brake_span: 0.3,
        brake_peak: 1.8,
        drive_span: 0.42,
        drive_peak: 1.5,
        overlap_span: 0.0,
        overlap_peak: 0.0,
        spike_span: 0.05,
        spike_peak: 5.4,
        drive_lead: -0.015,
    },
];

/// Fraction of the brake span at which the brake peaks.
const BRAKE_APEX: f64 = 0.3;
const DRIVE_APEX: f64 = 0.55;
const SPIKE_APEX: f64 = 0.4;

impl StepShape {
    fn lerp(a: &StepShape, b: &StepShape, w: f64) -> StepShape {
        let l = |x: f64, y: f64| (1.0 - w) * x + w * y;
        StepShape {
            brake_span: l(a.brake_span, b.brake_span),
            brake_peak: l(a.brake_peak, b.brake_peak),
            drive_span: l(a.drive_span, b.drive_span),
            drive_peak: l(a.drive_peak, b.drive_peak),
            overlap_span: l(a.overlap_span, b.overlap_span),
            overlap_peak: l(a.overlap_peak, b.overlap_peak),
            spike_span: l(a.spike_span, b.spike_span),
            spike_peak: l(a.spike_peak, b.spike_peak),
            drive_lead: l(a.drive_lead, b.drive_lead),
        }
    }

    fn varied(&self, f: &mut impl FnMut() -> f64) -> StepShape {
        StepShape {
            brake_span: self.brake_span * f(),
            brake_peak: self.brake_peak * f(),
            drive_span: self.drive_span * f(),
            drive_peak: self.drive_peak * f(),
            overlap_span: self.overlap_span * f(),
            overlap_peak: self.overlap_peak * f(),
            spike_span: self.spike_span * f(),
            spike_peak: self.spike_peak * f(),
            drive_lead: self.drive_lead,
        }
    }

    pub fn heel_brake(&self) -> Triangle {
        Triangle {
            t_onset: 0.0,
            t_peak: BRAKE_APEX * self.brake_span,
            t_offset: self.brake_span,
            f_peak: -self.brake_peak,
        }
    }

    pub fn thenar_drive(&self) -> Triangle {
        let on = self.brake_span + self.drive_lead;
        Triangle {
            t_onset: on,
            t_peak: on + DRIVE_APEX * self.drive_span,
            t_offset: on + self.drive_span,
            f_peak: self.drive_peak,
        }
    }

    pub fn heel_push(&self) -> Option<Triangle> {
        (self.overlap_span > 0.0 && self.overlap_peak > 0.0).then(|| {
            let on = self.brake_span;
            Triangle {
                t_onset: on,
                t_peak: on + 0.5 * self.overlap_span,
                t_offset: on + self.overlap_span,
                f_peak: self.overlap_peak,
            }
        })
    }

    pub fn thenar_spike(&self) -> Triangle {
        let on = self.thenar_drive().t_offset;
        Triangle {
            t_onset: on,
            t_peak: on + SPIKE_APEX * self.spike_span,
            t_offset: on + self.spike_span,
            f_peak: -self.spike_peak,
        }
    }

    /// Time the step lasts from first to last nonzero force.
    pub fn duration(&self) -> f64 {
        self.thenar_spike().t_offset
    }

    /// (thenar, heel) force at `u` seconds after the step origin.
    pub fn forces_at(&self, u: f64) -> (f64, f64) {
        let thenar = self.thenar_drive().force_at(u) + self.thenar_spike().force_at(u);
        let heel = self.heel_brake().force_at(u) + self.heel_push().map_or(0.0, |p| p.force_at(u));
        (thenar, heel)
    }
}

/// Nominal step geometry for a walking speed, linear between the knot
/// speeds and clamped outside them.
pub fn nominal_shape(speed_kmh: f64) -> StepShape {
    let k = &KNOT_SPEEDS_KMH;
    if speed_kmh <= k[0] {
        return NOMINAL[0];
    }
    if speed_kmh >= k[2] {
        return NOMINAL[2];
    }
    let i = if speed_kmh < k[1] { 0 } else { 1 };
    StepShape::lerp(
        &NOMINAL[i],
        &NOMINAL[i + 1],
        (speed_kmh - k[i]) / (k[i + 1] - k[i]),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSpec {
    pub speed_kmh: f64,
    pub participant_id: String,
    pub steps: usize,
    pub sample_rate_hz: f64,
    /// Quiet time between steps, drawn uniformly from this range.
    pub swing_s: (f64, f64),
    pub lead_s: f64,
    pub tail_s: f64,
    pub noise_sd: f64,
    /// Per-parameter multiplicative variation, uniform in 1 ± this.
    pub variation: f64,
    /// Multiplier on every peak force (participant strength).
    pub force_scale: f64,
    /// Activity level whose crossings define the recorded step boundaries.
    pub boundary_level: f64,
    pub seed: u64,
}

impl WalkSpec {
    pub fn new(speed_kmh: f64, seed: u64) -> Self {
        WalkSpec {
            speed_kmh,
            participant_id: format!("s{seed}"),
            steps: 30,
            sample_rate_hz: 1000.0,
            swing_s: (0.4, 0.6),
            lead_s: 0.5,
            tail_s: 0.5,
            noise_sd: 0.005,
            variation: 0.05,
            force_scale: 1.0,
            boundary_level: 0.1,
            seed,
        }
    }
}

/// Ground truth for one generated step; times are absolute in the walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTruth {
    pub origin_s: f64,
    pub shape: StepShape,
    /// First sample at or above the boundary level.
    pub start_sample: usize,
    /// One past the last sample at or above the boundary level.
    pub end_sample: usize,
}

impl StepTruth {
    pub fn brake_peak_s(&self) -> f64 {
        self.origin_s + self.shape.heel_brake().t_peak
    }

    pub fn drive_peak_s(&self) -> f64 {
        self.origin_s + self.shape.thenar_drive().t_peak
    }

    pub fn spike_onset_s(&self) -> f64 {
        self.origin_s + self.shape.thenar_spike().t_onset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWalk {
    pub trace: ForceTrace,
    pub truth: Vec<StepTruth>,
}

pub fn generate_walk(spec: &WalkSpec) -> Result<SyntheticWalk> {
    if !(spec.sample_rate_hz > 0.0 && spec.noise_sd >= 0.0 && (0.0..0.5).contains(&spec.variation))
    {
        return Err(Error::Config(format!("invalid walk spec {spec:?}")));
    }
    if !(spec.swing_s.0 > 0.0 && spec.swing_s.0 <= spec.swing_s.1) {
        return Err(Error::Config(
            "swing range must be positive and ordered".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let base = nominal_shape(spec.speed_kmh);
    let base = StepShape {
        brake_peak: base.brake_peak * spec.force_scale,
        drive_peak: base.drive_peak * spec.force_scale,
        overlap_peak: base.overlap_peak * spec.force_scale,
        spike_peak: base.spike_peak * spec.force_scale,
        ..base
    };
    let rate = spec.sample_rate_hz;

    let mut shapes = Vec::with_capacity(spec.steps);
    let mut origins = Vec::with_capacity(spec.steps);
    let mut t = spec.lead_s;
    for _ in 0..spec.steps {
        let v = spec.variation;
        let shape = base.varied(&mut || {
            1.0 + if v > 0.0 {
                rng.random_range(-v..v)
            } else {
                0.0
            }
        });
        origins.push(t);
        t += shape.duration() + rng.random_range(spec.swing_s.0..=spec.swing_s.1);
        shapes.push(shape);
    }
    let n = ((t + spec.tail_s) * rate).ceil() as usize;

    let mut clean = vec![(0.0, 0.0); n];
    for (shape, &origin) in shapes.iter().zip(&origins) {
        let first = (origin * rate).floor() as usize;
        let last = (((origin + shape.duration()) * rate).ceil() as usize).min(n - 1);
        for (k, slot) in clean.iter_mut().enumerate().take(last + 1).skip(first) {
            let (th, he) = shape.forces_at(k as f64 / rate - origin);
            slot.0 += th;
            slot.1 += he;
        }
    }
    let samples: Vec<Sample> = clean
        .iter()
        .map(|&(th, he)| Sample::new(th + noise.sample(&mut rng), he + noise.sample(&mut rng)))
        .collect();

    let level = spec.boundary_level;
    let truth = shapes
        .iter()
        .zip(&origins)
        .map(|(shape, &origin)| {
            let first = (origin * rate).floor() as usize;
            let last = (((origin + shape.duration()) * rate).ceil() as usize).min(n - 1);
            let active = |k: &usize| clean[*k].0.abs() + clean[*k].1.abs() >= level;
            let start = (first..=last).find(active).unwrap_or(first);
            let end = (first..=last).rev().find(active).map_or(start, |k| k + 1);
            StepTruth {
                origin_s: origin,
                shape: *shape,
                start_sample: start,
                end_sample: end,
            }
        })
        .collect();

    let meta = TraceMeta {
        walking_speed_kmh: spec.speed_kmh,
        participant_id: spec.participant_id.clone(),
    };
    Ok(SyntheticWalk {
        trace: ForceTrace::new(rate, samples, meta)?,
        truth,
    })
}

/// One walk per participant at each knot speed. Participants differ in
/// strength by up to ±10%.
pub fn study_walks(participants: usize, seed: u64) -> Result<Vec<SyntheticWalk>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in 0..participants {
        let strength = rng.random_range(0.9..1.1);
        for (i, &speed) in KNOT_SPEEDS_KMH.iter().enumerate() {
            let mut spec = WalkSpec::new(speed, seed.wrapping_mul(1000) + (p * 10 + i) as u64);
            spec.participant_id = format!("p{:02}", p + 1);
            spec.force_scale = strength;
            out.push(generate_walk(&spec)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_has_requested_steps_and_metadata() {
        let w = generate_walk(&WalkSpec::new(2.5, 7)).unwrap();
        assert_eq!(w.truth.len(), 30);
        assert_eq!(w.trace.meta().walking_speed_kmh, 2.5);
        assert_eq!(w.trace.sample_rate_hz(), 1000.0);
        for pair in w.truth.windows(2) {
            assert!(pair[0].end_sample < pair[1].start_sample);
        }
    }

    #[test]
    fn generator_is_seeded() {
        let a = generate_walk(&WalkSpec::new(1.0, 3)).unwrap();
        let b = generate_walk(&WalkSpec::new(1.0, 3)).unwrap();
        let c = generate_walk(&WalkSpec::new(1.0, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn shape_signs() {
        let s = nominal_shape(1.0);
        let (th, he) = s.forces_at(s.heel_brake().t_peak);
        assert!(he < -1.0 && th == 0.0);
        let (th, _) = s.forces_at(s.thenar_drive().t_peak);
        assert!(th > 0.8);
        let (th, _) = s.forces_at(s.thenar_spike().t_peak);
        assert!(th < -3.0);
        assert_eq!(nominal_shape(0.5), nominal_shape(1.0));
        assert_eq!(nominal_shape(9.0), nominal_shape(4.0));
        assert!(nominal_shape(4.0).heel_push().is_none());
    }

    #[test]
    fn study_walks_cover_every_speed() {
        let walks = study_walks(2, 11).unwrap();
        assert_eq!(walks.len(), 6);
        assert_eq!(walks[4].trace.meta().participant_id, "p02");
        assert_eq!(walks[4].trace.meta().walking_speed_kmh, 2.5);
    }
}
