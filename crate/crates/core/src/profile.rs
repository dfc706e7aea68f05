//! From per-step friction profiles to the device-ready triangular table.
//!
//! The pipeline per walking speed is: align step durations, average, balance
//! the brake and drive impulses, replace each sign region by a triangle of the
//! same area, then scale every speed by one shared factor so the largest peak
//! fits the device. Intermediate speeds are served by linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::PhaseTimings;

/// Walking speeds the measurements were taken at (km/h).
pub const KNOT_SPEEDS_KMH: [f64; 3] = [1.0, 2.5, 4.0];

/// Single-channel longitudinal friction of one step, forward-positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionProfile {
    sample_rate_hz: f64,
    values: Vec<f64>,
    phases: PhaseTimings,
    speed_kmh: f64,
}

impl FrictionProfile {
    pub fn new(
        sample_rate_hz: f64,
        values: Vec<f64>,
        phases: PhaseTimings,
        speed_kmh: f64,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Input(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyInput("friction profile has no samples"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("profile sample {i} is not finite")));
        }
        Ok(FrictionProfile {
            sample_rate_hz,
            values,
            phases,
            speed_kmh,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn phases(&self) -> &PhaseTimings {
        &self.phases
    }

    pub fn speed_kmh(&self) -> f64 {
        self.speed_kmh
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    fn with_values(&self, values: Vec<f64>) -> FrictionProfile {
        FrictionProfile {
            values,
            ..self.clone()
        }
    }
}

/// Brake (backward) and drive (forward) impulse magnitudes in N·s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulsePair {
    pub backward: f64,
    pub forward: f64,
}

impl ImpulsePair {
    pub fn total(&self) -> f64 {
        self.backward + self.forward
    }
}

/// Trapezoidal rule over uniformly spaced samples.
pub(crate) fn trapezoid(values: impl IntoIterator<Item = f64>, dt: f64) -> f64 {
    let mut it = values.into_iter();
    let Some(mut prev) = it.next() else {
        return 0.0;
    };
    let mut acc = 0.0;
    for v in it {
        acc += 0.5 * (prev + v);
        prev = v;
    }
    acc * dt
}

/// Trapezoidal integral of the profile with the force taken as zero one
/// sample before and after it, i.e. the step starts and ends at rest.
fn rest_padded_integral(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    trapezoid(
        std::iter::once(0.0)
            .chain(values)
            .chain(std::iter::once(0.0)),
        dt,
    )
}

pub fn compute_impulses(profile: &FrictionProfile) -> ImpulsePair {
    let dt = profile.dt();
    let v = profile.values();
    ImpulsePair {
        backward: rest_padded_integral(v.iter().map(|&f| (-f).max(0.0)), dt),
        forward: rest_padded_integral(v.iter().map(|&f| f.max(0.0)), dt),
    }
}

fn sample_linear(values: &[f64], x: f64) -> f64 {
    let last = values.len() - 1;
    if x >= last as f64 {
        return values[last];
    }
    let i = x.floor() as usize;
    let frac = x - i as f64;
    if frac == 0.0 {
        values[i]
    } else {
        values[i] + frac * (values[i + 1] - values[i])
    }
}

/// Stretch every profile to the mean duration, on a common sample rate.
pub fn align_durations(profiles: &[FrictionProfile]) -> Result<Vec<FrictionProfile>> {
    let first = profiles
        .first()
        .ok_or(Error::EmptyInput("no profiles to align"))?;
    if let Some(p) = profiles.iter().find(|p| p.speed_kmh != first.speed_kmh) {
        return Err(Error::Alignment(format!(
            "profiles mix walking speeds {} and {} km/h",
            first.speed_kmh, p.speed_kmh
        )));
    }
    let rate = profiles
        .iter()
        .map(|p| p.sample_rate_hz)
        .fold(f64::MIN, f64::max);
    let mean = profiles.iter().map(|p| p.duration_s()).sum::<f64>() / profiles.len() as f64;
    let out_len = ((mean * rate).round() as usize).max(1);
    let out_duration = out_len as f64 / rate;

    Ok(profiles
        .iter()
        .map(|p| {
            let n = p.values.len();
            let values = if n == out_len {
                p.values.clone()
            } else {
                let step = n as f64 / out_len as f64;
                (0..out_len)
                    .map(|j| sample_linear(&p.values, j as f64 * step))
                    .collect()
            };
            let factor = out_duration / p.duration_s();
            FrictionProfile {
                sample_rate_hz: rate,
                values,
                phases: p.phases.scaled(factor),
                speed_kmh: p.speed_kmh,
            }
        })
        .collect())
}

/// Pointwise mean of aligned profiles; phase times are averaged too.
pub fn average_profiles(aligned: &[FrictionProfile]) -> Result<FrictionProfile> {
    let first = aligned
        .first()
        .ok_or(Error::EmptyInput("no profiles to average"))?;
    for p in aligned {
        if p.values.len() != first.values.len() || p.sample_rate_hz != first.sample_rate_hz {
            return Err(Error::Alignment(format!(
                "expected {} samples at {} Hz, found {} at {} Hz",
                first.values.len(),
                first.sample_rate_hz,
                p.values.len(),
                p.sample_rate_hz
            )));
        }
    }
    let k = aligned.len() as f64;
    let values = (0..first.values.len())
        .map(|i| aligned.iter().map(|p| p.values[i]).sum::<f64>() / k)
        .collect();
    let mean = |f: fn(&PhaseTimings) -> f64| aligned.iter().map(|p| f(&p.phases)).sum::<f64>() / k;
    let with_step2 = aligned.iter().filter(|p| p.phases.t_step2_present).count();
    let phases = PhaseTimings {
        t_start: mean(|p| p.t_start),
        t_step1_peak: mean(|p| p.t_step1_peak),
        t_step2_present: 2 * with_step2 > aligned.len(),
        t_step3_peak: mean(|p| p.t_step3_peak),
        t_step4_start: mean(|p| p.t_step4_start),
        t_end: mean(|p| p.t_end),
    };
    Ok(FrictionProfile {
        sample_rate_hz: first.sample_rate_hz,
        values,
        phases,
        speed_kmh: first.speed_kmh,
    })
}

/// Outcome of balancing brake and drive impulses.
#[derive(Debug, Clone, PartialEq)]
pub struct TreadmillCorrection {
    pub profile: FrictionProfile,
    /// Impulses as measured on the treadmill (B, F).
    pub measured: ImpulsePair,
    /// Target impulses (B', F'), both equal to (B + F) / 2.
    pub corrected: ImpulsePair,
}

impl TreadmillCorrection {
    /// Impulse attributed to belt motion, T = B - B'.
    pub fn treadmill_impulse(&self) -> f64 {
        self.measured.backward - self.corrected.backward
    }
}

/// Scale the brake region and the drive region separately so that both
/// enclose (B + F) / 2.
pub fn treadmill_correct(profile: &FrictionProfile) -> Result<TreadmillCorrection> {
    let measured = compute_impulses(profile);
    if !(measured.backward > 0.0 && measured.forward > 0.0) {
        return Err(Error::DegenerateProfile(format!(
            "impulse balance needs both B and F positive, got B = {}, F = {}",
            measured.backward, measured.forward
        )));
    }
    let target = 0.5 * measured.total();
    let brake_gain = target / measured.backward;
    let drive_gain = target / measured.forward;
    let values = profile
        .values
        .iter()
        .map(|&v| {
            if v < 0.0 {
                v * brake_gain
            } else {
                v * drive_gain
            }
        })
        .collect();
    Ok(TreadmillCorrection {
        profile: profile.with_values(values),
        measured,
        corrected: ImpulsePair {
            backward: target,
            forward: target,
        },
    })
}

/// One triangle of the compiled envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub t_onset: f64,
    pub t_peak: f64,
    pub t_offset: f64,
    pub f_peak: f64,
}

impl Triangle {
    pub fn span(&self) -> f64 {
        self.t_offset - self.t_onset
    }

    /// Enclosed area, |f_peak| · span / 2.
    pub fn area(&self) -> f64 {
        0.5 * self.f_peak.abs() * self.span()
    }

    pub fn force_at(&self, t: f64) -> f64 {
        if t < self.t_onset || t > self.t_offset {
            0.0
        } else if t < self.t_peak {
            self.f_peak * (t - self.t_onset) / (self.t_peak - self.t_onset)
        } else if t > self.t_peak {
            self.f_peak * (self.t_offset - t) / (self.t_offset - self.t_peak)
        } else {
            self.f_peak
        }
    }

    fn scaled(&self, gain: f64) -> Triangle {
        Triangle {
            f_peak: self.f_peak * gain,
            ..*self
        }
    }

    fn lerp(a: &Triangle, b: &Triangle, w: f64) -> Triangle {
        let mix = |x: f64, y: f64| (1.0 - w) * x + w * y;
        Triangle {
            t_onset: mix(a.t_onset, b.t_onset),
            t_peak: mix(a.t_peak, b.t_peak),
            t_offset: mix(a.t_offset, b.t_offset),
            f_peak: mix(a.f_peak, b.f_peak),
        }
    }
}

/// Per-step command envelope: a brake triangle followed by a drive triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularProfile {
    pub speed_kmh: f64,
    pub duration_s: f64,
    pub brake: Triangle,
    pub drive: Triangle,
}

impl TriangularProfile {
    pub fn validate(&self) -> Result<()> {
        let (b, d) = (&self.brake, &self.drive);
        let times = [
            0.0,
            b.t_onset,
            b.t_peak,
            b.t_offset,
            d.t_onset,
            d.t_peak,
            d.t_offset,
            self.duration_s,
        ];
        let finite = times
            .iter()
            .chain([&b.f_peak, &d.f_peak, &self.speed_kmh])
            .all(|v| v.is_finite());
        if !finite || times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::PhaseInconsistency(format!(
                "triangle times must be ordered brake then drive within the duration: {self:?}"
            )));
        }
        if !(b.f_peak < 0.0 && d.f_peak > 0.0) {
            return Err(Error::PhaseInconsistency(format!(
                "brake peak must be negative and drive peak positive, got {} and {}",
                b.f_peak, d.f_peak
            )));
        }
        Ok(())
    }

    /// Commanded force at `t` seconds after step start.
    pub fn force_at(&self, t: f64) -> f64 {
        if t <= self.brake.t_offset {
            self.brake.force_at(t)
        } else {
            self.drive.force_at(t)
        }
    }

    pub fn impulses(&self) -> ImpulsePair {
        ImpulsePair {
            backward: self.brake.area(),
            forward: self.drive.area(),
        }
    }

    pub fn peak_magnitude(&self) -> f64 {
        self.brake.f_peak.abs().max(self.drive.f_peak)
    }

    fn scaled(&self, gain: f64) -> TriangularProfile {
        TriangularProfile {
            brake: self.brake.scaled(gain),
            drive: self.drive.scaled(gain),
            ..*self
        }
    }
}

/// Zero crossing between samples `i` and `i + 1`, in seconds.
fn crossing(values: &[f64], i: usize, dt: f64) -> f64 {
    let (a, b) = (values[i], values[i + 1]);
    (i as f64 + a / (a - b)) * dt
}

/// Region of one sign around the sample nearest `t_apex`, as (onset, offset)
/// times at the interpolated zero crossings.
fn sign_region(profile: &FrictionProfile, t_apex: f64, negative: bool) -> Result<(f64, f64)> {
    let v = profile.values();
    let dt = profile.dt();
    let in_region = |x: f64| if negative { x < 0.0 } else { x > 0.0 };
    let name = if negative { "brake" } else { "drive" };
    let seed = ((t_apex * profile.sample_rate_hz).round().max(0.0) as usize).min(v.len() - 1);
    if !in_region(v[seed]) {
        return Err(Error::PhaseInconsistency(format!(
            "{name} apex at {t_apex} s falls outside any {name} region"
        )));
    }
    let mut a = seed;
    while a > 0 && in_region(v[a - 1]) {
        a -= 1;
    }
    let mut b = seed;
    while b + 1 < v.len() && in_region(v[b + 1]) {
        b += 1;
    }
    let onset = if a == 0 { 0.0 } else { crossing(v, a - 1, dt) };
    let offset = if b + 1 == v.len() {
        b as f64 * dt
    } else {
        crossing(v, b, dt)
    };
    Ok((onset, offset))
}

fn triangle_over(region: (f64, f64), t_apex: f64, area: f64, sign: f64) -> Result<Triangle> {
    let (onset, offset) = region;
    let span = offset - onset;
    if !(span > 0.0) {
        return Err(Error::DegenerateProfile(format!(
            "region [{onset}, {offset}] has no width"
        )));
    }
    if !(onset..=offset).contains(&t_apex) {
        return Err(Error::PhaseInconsistency(format!(
            "apex {t_apex} s lies outside its region [{onset}, {offset}] s"
        )));
    }
    Ok(Triangle {
        t_onset: onset,
        t_peak: t_apex,
        t_offset: offset,
        f_peak: sign * 2.0 * area / span,
    })
}

/// Replace the brake and drive regions by triangles that peak at the step's
/// brake and drive peak times and enclose the given impulses.
pub fn compile_triangular(
    profile: &FrictionProfile,
    impulses: &ImpulsePair,
) -> Result<TriangularProfile> {
    if !(impulses.backward > 0.0 && impulses.forward > 0.0) {
        return Err(Error::DegenerateProfile(format!(
            "target impulses must be positive, got {impulses:?}"
        )));
    }
    let phases = profile.phases();
    let brake_region = sign_region(profile, phases.t_step1_peak, true)?;
    let drive_region = sign_region(profile, phases.t_step3_peak, false)?;
    let compiled = TriangularProfile {
        speed_kmh: profile.speed_kmh,
        duration_s: profile.duration_s(),
        brake: triangle_over(brake_region, phases.t_step1_peak, impulses.backward, -1.0)?,
        drive: triangle_over(drive_region, phases.t_step3_peak, impulses.forward, 1.0)?,
    };
    compiled.validate()?;
    Ok(compiled)
}

/// Triangular profiles for each knot speed plus the shared device scale
/// already folded into every peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfileTable {
    pub device_scale: f64,
    pub entries: Vec<TriangularProfile>,
}

impl SpeedProfileTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.device_scale > 0.0 && self.device_scale <= 1.0) {
            return Err(Error::Format(format!(
                "device_scale must lie in (0, 1], got {}",
                self.device_scale
            )));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyInput("profile table has no entries"));
        }
        for e in &self.entries {
            e.validate()?;
        }
        if self
            .entries
            .windows(2)
            .any(|w| !(w[0].speed_kmh < w[1].speed_kmh))
        {
            return Err(Error::Format(
                "table speeds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: SpeedProfileTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Shrink all speeds by one factor so the largest peak fits `device_max_force`.
/// Profiles that already fit are left alone.
pub fn fit_device_scale(
    raw: &[TriangularProfile],
    device_max_force: f64,
) -> Result<SpeedProfileTable> {
    if !(device_max_force.is_finite() && device_max_force > 0.0) {
        return Err(Error::Config(format!(
            "device_max_force must be positive, got {device_max_force}"
        )));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("no profiles to scale"));
    }
    let mut entries = raw.to_vec();
    entries.sort_by(|a, b| a.speed_kmh.total_cmp(&b.speed_kmh));
    let peak = entries
        .iter()
        .map(TriangularProfile::peak_magnitude)
        .fold(0.0, f64::max);
    let device_scale = if peak > device_max_force {
        device_max_force / peak
    } else {
        1.0
    };
    if device_scale < 1.0 {
        entries = entries.iter().map(|e| e.scaled(device_scale)).collect();
    }
    let table = SpeedProfileTable {
        device_scale,
        entries,
    };
    table.validate()?;
    Ok(table)
}

/// Profile for an arbitrary walking speed, linear between the bracketing
/// knots and clamped outside them.
pub fn interpolate(table: &SpeedProfileTable, speed_kmh: f64) -> Result<TriangularProfile> {
    if !speed_kmh.is_finite() {
        return Err(Error::Input(format!(
            "walking speed must be finite, got {speed_kmh}"
        )));
    }
    let entries = &table.entries;
    if entries.len() < 2 {
        return Err(Error::Input(format!(
            "interpolation needs at least 2 table entries, found {}",
            entries.len()
        )));
    }
    let first = &entries[0];
    let last = &entries[entries.len() - 1];
    if speed_kmh <= first.speed_kmh {
        return Ok(*first);
    }
    if speed_kmh >= last.speed_kmh {
        return Ok(*last);
    }
    // Index of the first knot strictly above the speed; 1..len.
    let hi = entries.partition_point(|e| e.speed_kmh <= speed_kmh);
    let (a, b) = (&entries[hi - 1], &entries[hi]);
    if a.speed_kmh == speed_kmh {
        return Ok(*a);
    }
    let w = (speed_kmh - a.speed_kmh) / (b.speed_kmh - a.speed_kmh);
    Ok(TriangularProfile {
        speed_kmh,
        duration_s: (1.0 - w) * a.duration_s + w * b.duration_s,
        brake: Triangle::lerp(&a.brake, &b.brake, w),
        drive: Triangle::lerp(&a.drive, &b.drive, w),
    })
}
