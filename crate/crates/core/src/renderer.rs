//! Event-driven 1 kHz envelope scheduler.
//!
//! Gait events select a triangular profile by walking speed; the profile is
//! turned into a per-tick signed duty envelope through the calibration curves
//! and played back from the first tick at or after the event time. A newer
//! event replaces whatever envelope is playing.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationPair;
use crate::error::{Error, Result};
use crate::profile::{interpolate, SpeedProfileTable, TriangularProfile};

pub const TICK_RATE_HZ: u32 = 1000;
pub const TICK_S: f64 = 1.0 / TICK_RATE_HZ as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Foot {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Grounded,
}

/// A foot touching the ground at `t` seconds on the host clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitEvent {
    pub t: f64,
    pub foot: Foot,
    pub kind: EventKind,
    pub speed_kmh: f64,
}

impl GaitEvent {
    pub fn grounded(t: f64, foot: Foot, speed_kmh: f64) -> Self {
        GaitEvent {
            t,
            foot,
            kind: EventKind::Grounded,
            speed_kmh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::Input(format!(
                "event time must be finite and >= 0, got {}",
                self.t
            )));
        }
        if !(self.speed_kmh.is_finite() && self.speed_kmh >= 0.0) {
            return Err(Error::Input(format!(
                "event speed must be finite and >= 0, got {}",
                self.speed_kmh
            )));
        }
        Ok(())
    }
}

/// Signed duty for one tick; positive drives the forward-towing motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub t: f64,
    pub signed_duty: f64,
}

/// Vibrator duties for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibstepCommand {
    pub t: f64,
    pub heel_duty: f64,
    pub thenar_duty: f64,
}

/// Time of tick `k`, exact for every tick index.
pub fn tick_time(k: u64) -> f64 {
    k as f64 / TICK_RATE_HZ as f64
}

/// First tick whose time is at or after `t`.
pub fn tick_at_or_after(t: f64) -> u64 {
    let x = t * TICK_RATE_HZ as f64;
    // Absorb representation error so that e.g. 0.003 s maps to tick 3.
    (x - 1e-6).ceil().max(0.0) as u64
}

/// One step's duty envelope sampled on the tick grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyEnvelope {
    pub profile: TriangularProfile,
    /// Signed duty at ticks 0, 1, ... after the envelope start.
    pub duties: Vec<f64>,
    /// Covering rectangles as (heel, thenar) duty per tick.
    pub vibstep: Vec<(f64, f64)>,
}

impl DutyEnvelope {
    pub fn new(profile: TriangularProfile, curves: &CalibrationPair) -> Self {
        let ticks = (profile.duration_s * TICK_RATE_HZ as f64 + 1e-9).floor() as u64 + 1;
        let duties: Vec<f64> = (0..ticks)
            .map(|k| curves.signed_duty(profile.force_at(tick_time(k))))
            .collect();
        let vibstep = cover_regions(&duties);
        DutyEnvelope {
            profile,
            duties,
            vibstep,
        }
    }

    pub fn len(&self) -> usize {
        self.duties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duties.is_empty()
    }
}

/// Replace each same-sign run of duties by its covering rectangle. Brake
/// (negative) runs go to the heel vibrator, drive (positive) runs to the thenar.
fn cover_regions(duties: &[f64]) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); duties.len()];
    let mut i = 0;
    while i < duties.len() {
        if duties[i] == 0.0 {
            i += 1;
            continue;
        }
        let negative = duties[i] < 0.0;
        let start = i;
        let mut height: f64 = 0.0;
        while i < duties.len() && duties[i] != 0.0 && (duties[i] < 0.0) == negative {
            height = height.max(duties[i].abs());
            i += 1;
        }
        for slot in &mut out[start..i] {
            *slot = if negative {
                (height, 0.0)
            } else {
                (0.0, height)
            };
        }
    }
    out
}

/// Rectangular vibrator envelope covering a sampled signed-duty envelope.
pub fn to_vibstep(envelope: &[ActuatorCommand]) -> Vec<VibstepCommand> {
    let duties: Vec<f64> = envelope.iter().map(|c| c.signed_duty).collect();
    cover_regions(&duties)
        .into_iter()
        .zip(envelope)
        .map(|((heel, thenar), c)| VibstepCommand {
            t: c.t,
            heel_duty: heel,
            thenar_duty: thenar,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VibSite {
    Heel,
    Thenar,
}

/// One covering rectangle; `t_start`/`t_end` are the bounding zero samples of
/// the covered region (clamped to the envelope ends). Where the duty flips
/// sign without a zero sample, both rectangles meet halfway between ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibRect {
    pub site: VibSite,
    pub height: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Covering rectangles of a sampled signed-duty envelope in time order.
pub fn vibstep_rectangles(envelope: &[ActuatorCommand]) -> Vec<VibRect> {
    let mut out = Vec::new();
    let n = envelope.len();
    let mut i = 0;
    while i < n {
        let d = envelope[i].signed_duty;
        if d == 0.0 {
            i += 1;
            continue;
        }
        let negative = d < 0.0;
        let start = i;
        let mut height: f64 = 0.0;
        while i < n && envelope[i].signed_duty != 0.0 && (envelope[i].signed_duty < 0.0) == negative
        {
            height = height.max(envelope[i].signed_duty.abs());
            i += 1;
        }
        let edge = |inside: usize, outside: usize| {
            let (a, b) = (envelope[inside], envelope[outside]);
            if b.signed_duty == 0.0 || inside == outside {
                b.t
            } else {
                0.5 * (a.t + b.t)
            }
        };
        out.push(VibRect {
            site: if negative {
                VibSite::Heel
            } else {
                VibSite::Thenar
            },
            height,
            t_start: edge(start, start.saturating_sub(1)),
            t_end: edge(i - 1, i.min(n - 1)),
        });
    }
    out
}

#[derive(Debug, Clone)]
struct Active {
    envelope: DutyEnvelope,
    start_tick: u64,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    event: GaitEvent,
    start_tick: u64,
}

/// Output of one tick in both backends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    pub command: ActuatorCommand,
    pub vibstep: VibstepCommand,
}

/// Owns the playback state; driven by exactly one ticking context.
#[derive(Debug, Clone)]
pub struct Renderer {
    table: SpeedProfileTable,
    curves: CalibrationPair,
    next_tick: u64,
    active: Option<Active>,
    pending: VecDeque<Pending>,
    applied: Vec<(u64, GaitEvent)>,
}

impl Renderer {
    pub fn new(table: SpeedProfileTable, curves: CalibrationPair) -> Result<Self> {
        table.validate()?;
        if table.entries.len() < 2 {
            return Err(Error::Config(
                "renderer needs a table with at least 2 speeds".into(),
            ));
        }
        curves.forward.validate()?;
        curves.backward.validate()?;
        Ok(Renderer {
            table,
            curves,
            next_tick: 0,
            active: None,
            pending: VecDeque::new(),
            applied: Vec::new(),
        })
    }

    pub fn tick_rate_hz(&self) -> u32 {
        TICK_RATE_HZ
    }

    pub fn curves(&self) -> &CalibrationPair {
        &self.curves
    }

    pub fn table(&self) -> &SpeedProfileTable {
        &self.table
    }

    /// Time of the tick that the next call to [`Renderer::tick`] emits.
    pub fn next_tick_time(&self) -> f64 {
        tick_time(self.next_tick)
    }

    pub fn next_tick_index(&self) -> u64 {
        self.next_tick
    }

    /// Nothing playing and nothing scheduled.
    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.pending.is_empty()
    }

    /// Events applied so far with the tick they started on.
    pub fn applied_events(&self) -> &[(u64, GaitEvent)] {
        &self.applied
    }

    /// Schedule an event for the first tick at or after its time. Events
    /// whose time has already passed start on the next tick.
    pub fn on_event(&mut self, event: GaitEvent) -> Result<()> {
        event.validate()?;
        let start_tick = tick_at_or_after(event.t).max(self.next_tick);
        self.pending.push_back(Pending { event, start_tick });
        Ok(())
    }

    fn apply_due(&mut self) {
        while let Some(p) = self.pending.front() {
            if p.start_tick > self.next_tick {
                break;
            }
            let p = self.pending.pop_front().expect("front exists");
            // Speeds are validated on intake and the table has >= 2 entries,
            // so interpolation cannot fail here.
            let profile = interpolate(&self.table, p.event.speed_kmh).expect("valid speed");
            self.active = Some(Active {
                envelope: DutyEnvelope::new(profile, &self.curves),
                start_tick: self.next_tick,
            });
            self.applied.push((self.next_tick, p.event));
        }
    }

    /// Emit the next tick in both backends.
    pub fn advance(&mut self) -> TickOutput {
        self.apply_due();
        let k = self.next_tick;
        let t = tick_time(k);
        let (duty, (heel, thenar)) = match &self.active {
            Some(a) => {
                let i = (k - a.start_tick) as usize;
                (a.envelope.duties[i], a.envelope.vibstep[i])
            }
            None => (0.0, (0.0, 0.0)),
        };
        if let Some(a) = &self.active {
            if (k - a.start_tick) as usize + 1 >= a.envelope.len() {
                self.active = None;
            }
        }
        self.next_tick += 1;
        TickOutput {
            command: ActuatorCommand {
                t,
                signed_duty: duty,
            },
            vibstep: VibstepCommand {
                t,
                heel_duty: heel,
                thenar_duty: thenar,
            },
        }
    }

    pub fn tick(&mut self) -> ActuatorCommand {
        self.advance().command
    }

    /// Like [`Renderer::tick`] but checks the caller's clock against the
    /// tick grid.
    pub fn tick_at(&mut self, t: f64) -> Result<ActuatorCommand> {
        let expected = self.next_tick_time();
        if !((t - expected).abs() <= 1e-9) {
            return Err(Error::Clock { expected, got: t });
        }
        Ok(self.tick())
    }
}

fn check_order(events: &[GaitEvent]) -> Result<()> {
    for (i, w) in events.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(Error::Format(format!(
                "event {} at t = {} precedes event {} at t = {}",
                i + 2,
                w[1].t,
                i + 1,
                w[0].t
            )));
        }
    }
    Ok(())
}

/// Render a complete event log. Ticks run from t = 0 until every event has
/// been played out; `min_ticks` extends the log with idle ticks if longer.
pub fn render_offline(
    renderer: &mut Renderer,
    events: &[GaitEvent],
    min_ticks: u64,
) -> Result<Vec<TickOutput>> {
    check_order(events)?;
    for e in events {
        renderer.on_event(*e)?;
    }
    let mut out = Vec::new();
    while !renderer.is_idle() || renderer.next_tick_index() < min_ticks {
        out.push(renderer.advance());
    }
    Ok(out)
}

pub fn write_command_log<W: Write>(ticks: &[TickOutput], mut out: W) -> Result<()> {
    writeln!(out, "t,signed_duty")?;
    for k in ticks {
        writeln!(out, "{:.3},{}", k.command.t, k.command.signed_duty)?;
    }
    Ok(())
}

pub fn write_vibstep_log<W: Write>(ticks: &[TickOutput], mut out: W) -> Result<()> {
    writeln!(out, "t,heel_duty,thenar_duty")?;
    for k in ticks {
        writeln!(
            out,
            "{:.3},{},{}",
            k.vibstep.t, k.vibstep.heel_duty, k.vibstep.thenar_duty
        )?;
    }
    Ok(())
}
