//! First-order plate model and the closed-loop harness that plays rendered
//! envelopes through it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::{
    analyze_step_response, CalibrationCurve, CalibrationPair, Direction, StepResponseMetrics,
    DEFAULT_MIN_DUTY,
};
use crate::error::{Error, Result};
use crate::profile::{interpolate, SpeedProfileTable};
use crate::renderer::{tick_time, ActuatorCommand, GaitEvent, Renderer, TICK_S};

pub const DEFAULT_TAU_S: f64 = 0.05;
pub const DEFAULT_MAX_FORCE: f64 = 5.0;
pub const DEFAULT_SENSOR_RESOLUTION: f64 = 0.01;
pub const DEFAULT_SETTLE_S: f64 = 0.5;

/// Curves the simulated plate follows when none are supplied.
pub fn default_curves() -> CalibrationPair {
    let curve = CalibrationCurve::new(Direction::Forward, 4.0, 0.2, DEFAULT_MIN_DUTY)
        .expect("valid constants");
    CalibrationPair::symmetric(curve)
}

/// Plate towed by two motors, responding to duty with a first-order lag.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateModel {
    pub tau_s: f64,
    pub curves: CalibrationPair,
    pub max_force: f64,
    pub state_force: f64,
}

impl PlateModel {
    pub fn new(tau_s: f64, curves: CalibrationPair, max_force: f64) -> Result<Self> {
        if !(tau_s.is_finite() && tau_s > 0.0) {
            return Err(Error::Config(format!(
                "tau_s must be positive, got {tau_s}"
            )));
        }
        if !(max_force.is_finite() && max_force > 0.0) {
            return Err(Error::Config(format!(
                "max_force must be positive, got {max_force}"
            )));
        }
        curves.forward.validate()?;
        curves.backward.validate()?;
        Ok(PlateModel {
            tau_s,
            curves,
            max_force,
            state_force: 0.0,
        })
    }

    /// Steady-state force for a signed duty. Duties below the curve's minimum
    /// do not move the plate.
    pub fn target_force(&self, signed_duty: f64) -> f64 {
        let curve = if signed_duty < 0.0 {
            &self.curves.backward
        } else {
            &self.curves.forward
        };
        let m = signed_duty.abs();
        if m == 0.0 || m < curve.min_duty {
            0.0
        } else {
            signed_duty.signum() * curve.duty_to_force(m)
        }
    }

    /// Advance by `dt` seconds under `signed_duty` and return the new force.
    pub fn step(&mut self, signed_duty: f64, dt: f64) -> f64 {
        let target = self.target_force(signed_duty);
        let alpha = 1.0 - (-dt / self.tau_s).exp();
        self.state_force += (target - self.state_force) * alpha;
        self.state_force = self.state_force.clamp(-self.max_force, self.max_force);
        self.state_force
    }

    pub fn reset(&mut self) {
        self.state_force = 0.0;
    }
}

/// Force sensor with a fixed reading resolution; `resolution = 0` reads exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSensor {
    pub resolution: f64,
}

impl Default for ForceSensor {
    fn default() -> Self {
        ForceSensor {
            resolution: DEFAULT_SENSOR_RESOLUTION,
        }
    }
}

impl ForceSensor {
    pub fn read(&self, force: f64) -> f64 {
        if self.resolution > 0.0 {
            let q = (force / self.resolution).round() * self.resolution;
            // Keep a clean zero for sign-sensitive consumers.
            if q == 0.0 {
                0.0
            } else {
                q
            }
        } else {
            force
        }
    }
}

/// Settings shared by the closed-loop and step-test harnesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub tau_s: f64,
    pub max_force: f64,
    pub sensor_resolution: f64,
    /// Idle time simulated after the last envelope ends.
    pub settle_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tau_s: DEFAULT_TAU_S,
            max_force: DEFAULT_MAX_FORCE,
            sensor_resolution: DEFAULT_SENSOR_RESOLUTION,
            settle_s: DEFAULT_SETTLE_S,
        }
    }
}

impl SimConfig {
    pub fn plate(&self, curves: CalibrationPair) -> Result<PlateModel> {
        PlateModel::new(self.tau_s, curves, self.max_force)
    }

    pub fn sensor(&self) -> ForceSensor {
        ForceSensor {
            resolution: self.sensor_resolution,
        }
    }
}

/// Achieved against compiled impulse for one rendered step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepImpulse {
    pub event_index: usize,
    pub start_t: f64,
    pub speed_kmh: f64,
    pub brake_target: f64,
    pub brake_achieved: f64,
    pub drive_target: f64,
    pub drive_achieved: f64,
    /// Signed integral of the force over the step window.
    pub net_impulse: f64,
}

impl StepImpulse {
    pub fn brake_error(&self) -> f64 {
        (self.brake_achieved - self.brake_target).abs() / self.brake_target
    }

    pub fn drive_error(&self) -> f64 {
        (self.drive_achieved - self.drive_target).abs() / self.drive_target
    }

    /// Net impulse relative to the larger single-region target.
    pub fn net_fraction(&self) -> f64 {
        self.net_impulse.abs() / self.brake_target.max(self.drive_target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Rise time of the first complete step, by the first-stop-rising rule.
    pub rise_s: Option<f64>,
    pub rise_10_90_s: Option<f64>,
    /// Largest relative region impulse error over complete steps.
    pub per_region_impulse_error: f64,
    /// Largest absolute net impulse over complete steps, N·s.
    pub net_impulse: f64,
    pub net_fraction: f64,
    /// Steps cut short by a newer event; excluded from the figures above.
    pub preempted_steps: usize,
    pub steps: Vec<StepImpulse>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub commands: Vec<ActuatorCommand>,
    /// Plate force on each tick, after the tick's command was applied.
    pub forces: Vec<f64>,
    pub metrics: SimMetrics,
}

impl SimRun {
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,signed_duty,force")?;
        for (c, f) in self.commands.iter().zip(&self.forces) {
            writeln!(out, "{:.3},{},{}", c.t, c.signed_duty, f)?;
        }
        Ok(())
    }
}

fn region_sums(forces: &[f64]) -> (f64, f64, f64) {
    let mut neg = 0.0;
    let mut pos = 0.0;
    let mut net = 0.0;
    for &f in forces {
        neg += (-f).max(0.0);
        pos += f.max(0.0);
        net += f;
    }
    (neg * TICK_S, pos * TICK_S, net * TICK_S)
}

/// Render `events` and feed every tick to a fresh plate built from `config`.
/// The run ends `settle_s` after the last envelope finishes.
pub fn run_closed_loop(
    table: &SpeedProfileTable,
    curves: &CalibrationPair,
    events: &[GaitEvent],
    config: &SimConfig,
) -> Result<SimRun> {
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::Format("events must be time-ordered".into()));
    }
    if !(config.settle_s.is_finite() && config.settle_s >= 0.0) {
        return Err(Error::Config(format!(
            "settle_s must be >= 0, got {}",
            config.settle_s
        )));
    }
    let mut renderer = Renderer::new(table.clone(), *curves)?;
    let mut plate = config.plate(*curves)?;
    let sensor = config.sensor();
    for e in events {
        renderer.on_event(*e)?;
    }
    let settle_ticks = (config.settle_s / TICK_S).round() as u64;
    let mut commands = Vec::new();
    let mut forces = Vec::new();
    let mut idle_for = 0;
    while idle_for < settle_ticks {
        let cmd = renderer.tick();
        forces.push(plate.step(cmd.signed_duty, TICK_S));
        commands.push(cmd);
        if renderer.is_idle() {
            idle_for += 1;
        }
    }

    let applied = renderer.applied_events().to_vec();
    let mut steps = Vec::new();
    let mut preempted = 0;
    let mut rise = None;
    for (i, &(start, event)) in applied.iter().enumerate() {
        let profile = interpolate(table, event.speed_kmh)?;
        let envelope_ticks = (profile.duration_s / TICK_S + 1e-9).floor() as u64 + 1;
        let window_end = applied.get(i + 1).map_or(commands.len() as u64, |n| n.0);
        if window_end < start + envelope_ticks {
            preempted += 1;
            continue;
        }
        let (s, e) = (start as usize, window_end as usize);
        let (brake, drive, net) = region_sums(&forces[s..e]);
        let target = profile.impulses();
        steps.push(StepImpulse {
            event_index: i,
            start_t: tick_time(start),
            speed_kmh: event.speed_kmh,
            brake_target: target.backward,
            brake_achieved: brake,
            drive_target: target.forward,
            drive_achieved: drive,
            net_impulse: net,
        });
        if rise.is_none() {
            let cmd: Vec<(f64, f64)> = commands[s..e]
                .iter()
                .map(|c| (c.t, c.signed_duty))
                .collect();
            let measured: Vec<f64> = forces[s..e].iter().map(|&f| sensor.read(f)).collect();
            rise = analyze_step_response(&cmd, &measured).ok();
        }
    }
    let fold = |f: &dyn Fn(&StepImpulse) -> f64| steps.iter().map(f).fold(0.0, f64::max);
    let metrics = SimMetrics {
        rise_s: rise.map(|r| r.rise_s),
        rise_10_90_s: rise.map(|r| r.rise_10_90_s),
        per_region_impulse_error: fold(&|s| s.brake_error().max(s.drive_error())),
        net_impulse: fold(&|s| s.net_impulse.abs()),
        net_fraction: fold(&|s| s.net_fraction()),
        preempted_steps: preempted,
        steps,
    };
    Ok(SimRun {
        commands,
        forces,
        metrics,
    })
}

/// Square-pulse performance test: a backward pulse, then a forward pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTest {
    pub lead_s: f64,
    pub duty: f64,
    pub hold_s: f64,
    pub tail_s: f64,
}

impl Default for StepTest {
    fn default() -> Self {
        StepTest {
            lead_s: 0.1,
            duty: 1.0,
            hold_s: 0.5,
            tail_s: 0.5,
        }
    }
}

impl StepTest {
    /// Signed duty per tick.
    pub fn commands(&self) -> Result<Vec<(f64, f64)>> {
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(Error::Config(format!(
                "step duty must lie in (0, 1], got {}",
                self.duty
            )));
        }
        let ticks = |s: f64| {
            if s.is_finite() && s >= 0.0 {
                Ok((s / TICK_S).round() as u64)
            } else {
                Err(Error::Config(format!(
                    "step test durations must be >= 0, got {s}"
                )))
            }
        };
        let (lead, hold, tail) = (
            ticks(self.lead_s)?,
            ticks(self.hold_s)?,
            ticks(self.tail_s)?,
        );
        if hold == 0 {
            return Err(Error::Config("hold_s must cover at least one tick".into()));
        }
        Ok((0..lead + 2 * hold + tail)
            .map(|k| {
                let d = if k < lead {
                    0.0
                } else if k < lead + hold {
                    -self.duty
                } else if k < lead + 2 * hold {
                    self.duty
                } else {
                    0.0
                };
                (tick_time(k), d)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTestRun {
    pub commands: Vec<(f64, f64)>,
    /// Sensor readings aligned with `commands`.
    pub measured: Vec<f64>,
    pub metrics: StepResponseMetrics,
}

pub fn run_step_test(
    curves: &CalibrationPair,
    config: &SimConfig,
    test: &StepTest,
) -> Result<StepTestRun> {
    let commands = test.commands()?;
    let mut plate = config.plate(*curves)?;
    let sensor = config.sensor();
    let measured: Vec<f64> = commands
        .iter()
        .map(|&(_, d)| sensor.read(plate.step(d, TICK_S)))
        .collect();
    let metrics = analyze_step_response(&commands, &measured)?;
    Ok(StepTestRun {
        commands,
        measured,
        metrics,
    })
}
