//! Duty-rate to force calibration and step-response analysis of the plate.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest PWM value (out of 255) that still moves the skin of the sole.
pub const MIN_PWM: f64 = 95.0;
pub const PWM_FULL_SCALE: f64 = 255.0;
pub const DEFAULT_MIN_DUTY: f64 = MIN_PWM / PWM_FULL_SCALE;

/// Towing direction of the plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Input(format!(
                "direction must be forward or backward, got {other:?}"
            ))),
        }
    }
}

/// Linear peak force model `force = slope * duty + intercept` for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub direction: Direction,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub min_duty: f64,
}

impl CalibrationCurve {
    pub fn new(direction: Direction, slope: f64, intercept: f64, min_duty: f64) -> Result<Self> {
        let curve = CalibrationCurve {
            direction,
            slope,
            intercept,
            r_squared: 1.0,
            min_duty,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(Error::Format(format!(
                "calibration slope must be positive, got {}",
                self.slope
            )));
        }
        if !self.intercept.is_finite() {
            return Err(Error::Format("calibration intercept must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.r_squared) {
            return Err(Error::Format(format!(
                "r_squared must lie in [0, 1], got {}",
                self.r_squared
            )));
        }
        if !(0.0..1.0).contains(&self.min_duty) {
            return Err(Error::Format(format!(
                "min_duty must lie in [0, 1), got {}",
                self.min_duty
            )));
        }
        Ok(())
    }

    pub fn duty_to_force(&self, duty: f64) -> f64 {
        self.slope * duty + self.intercept
    }

    /// Duty that produces `force_magnitude`. Zero force is off; any other
    /// force is clamped into `[min_duty, 1]` so it stays perceivable.
    pub fn force_to_duty(&self, force_magnitude: f64) -> f64 {
        if !(force_magnitude > 0.0) {
            return 0.0;
        }
        ((force_magnitude - self.intercept) / self.slope).clamp(self.min_duty, 1.0)
    }
}

/// Ordinary least squares fit of `(duty, peak_force)` points.
pub fn fit_calibration(points: &[(f64, f64)], direction: Direction) -> Result<CalibrationCurve> {
    fit_calibration_with_min_duty(points, direction, DEFAULT_MIN_DUTY)
}

pub fn fit_calibration_with_min_duty(
    points: &[(f64, f64)],
    direction: Direction,
    min_duty: f64,
) -> Result<CalibrationCurve> {
    if let Some(p) = points
        .iter()
        .find(|(d, f)| !(d.is_finite() && f.is_finite()))
    {
        return Err(Error::Input(format!(
            "calibration point {p:?} is not finite"
        )));
    }
    let n = points.len() as f64;
    let mean_d = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_f = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_d).powi(2)).sum();
    let distinct = points.iter().any(|p| p.0 != points[0].0);
    if points.len() < 2 || !distinct || !(sxx > 0.0) {
        return Err(Error::UnderdeterminedFit(format!(
            "need at least 2 distinct duty values, got {} points",
            points.len()
        )));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_d) * (p.1 - mean_f)).sum();
    let slope = sxy / sxx;
    let intercept = mean_f - slope * mean_d;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_f).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    };
    if !(slope > 0.0) {
        return Err(Error::UnderdeterminedFit(format!(
            "fitted slope {slope} is not positive; force must grow with duty"
        )));
    }
    let curve = CalibrationCurve {
        direction,
        slope,
        intercept,
        r_squared,
        min_duty,
    };
    curve.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(curve)
}

/// Read `duty,peak_force` rows.
pub fn load_points<R: Read>(source: R) -> Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        duty: f64,
        peak_force: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut points = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        if !(0.0..=1.0).contains(&row.duty) {
            return Err(Error::Format(format!("duty {} outside [0, 1]", row.duty)));
        }
        points.push((row.duty, row.peak_force));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("no calibration points"));
    }
    Ok(points)
}

/// Commanded `(t, signed_duty)` per tick and the force measured on each.
pub type StepLog = (Vec<(f64, f64)>, Vec<f64>);

/// Read a step-test log with columns `t,duty,force`: the signed duty
/// commanded on each tick and the force measured on it.
pub fn load_step_log<R: Read>(source: R) -> Result<StepLog> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        duty: f64,
        force: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut commanded = Vec::new();
    let mut measured = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        if !(-1.0..=1.0).contains(&row.duty) {
            return Err(Error::Format(format!("duty {} outside [-1, 1]", row.duty)));
        }
        commanded.push((row.t, row.duty));
        measured.push(row.force);
    }
    if commanded.is_empty() {
        return Err(Error::EmptyInput("no step-test rows"));
    }
    Ok((commanded, measured))
}

/// Write a step-test log readable by [`load_step_log`].
pub fn write_step_log<W: std::io::Write>(
    commanded: &[(f64, f64)],
    measured: &[f64],
    mut out: W,
) -> Result<()> {
    writeln!(out, "t,duty,force")?;
    for (&(t, d), f) in commanded.iter().zip(measured) {
        writeln!(out, "{t},{d},{f}")?;
    }
    Ok(())
}

/// Forward and backward curves used together when rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub forward: CalibrationCurve,
    pub backward: CalibrationCurve,
}

impl CalibrationPair {
    pub fn new(forward: CalibrationCurve, backward: CalibrationCurve) -> Result<Self> {
        if forward.direction != Direction::Forward || backward.direction != Direction::Backward {
            return Err(Error::Format(
                "calibration pair needs one forward and one backward curve".into(),
            ));
        }
        Ok(CalibrationPair { forward, backward })
    }

    /// Same curve in both directions.
    pub fn symmetric(curve: CalibrationCurve) -> Self {
        CalibrationPair {
            forward: CalibrationCurve {
                direction: Direction::Forward,
                ..curve
            },
            backward: CalibrationCurve {
                direction: Direction::Backward,
                ..curve
            },
        }
    }

    pub fn curve(&self, direction: Direction) -> &CalibrationCurve {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Signed duty for a signed force; negative forces use the backward motor.
    pub fn signed_duty(&self, force: f64) -> f64 {
        if force < 0.0 {
            -self.backward.force_to_duty(-force)
        } else if force > 0.0 {
            self.forward.force_to_duty(force)
        } else {
            0.0
        }
    }

    pub fn min_duty(&self) -> f64 {
        self.forward.min_duty.max(self.backward.min_duty)
    }

    /// Accepts a single curve object (used for both directions) or an array
    /// holding one forward and one backward curve.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let pair = if value.is_array() {
            let curves: Vec<CalibrationCurve> = serde_json::from_value(value)?;
            let find = |d: Direction| {
                curves
                    .iter()
                    .find(|c| c.direction == d)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("calibration file lacks a {d:?} curve")))
            };
            CalibrationPair::new(find(Direction::Forward)?, find(Direction::Backward)?)?
        } else {
            CalibrationPair::symmetric(serde_json::from_value(value)?)
        };
        pair.forward.validate()?;
        pair.backward.validate()?;
        Ok(pair)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&[
            self.forward,
            self.backward,
        ])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResponseMetrics {
    /// Command onset until the measured force first stops rising.
    pub rise_s: f64,
    /// Command release until the measured force first stops falling or
    /// reaches zero.
    pub fall_s: f64,
    /// End of the backward command until the forward force peaks, when a
    /// forward pulse follows the backward one.
    pub transition_s: Option<f64>,
    pub rise_10_90_s: f64,
    pub fall_90_10_s: f64,
}

/// Maximal run of same-sign nonzero commands: (first index, one past last, sign).
fn pulses(duties: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < duties.len() {
        if duties[i] == 0.0 {
            i += 1;
            continue;
        }
        let sign = duties[i].signum();
        let start = i;
        while i < duties.len() && duties[i] != 0.0 && duties[i].signum() == sign {
            i += 1;
        }
        out.push((start, i, sign));
    }
    out
}

/// First index after `from` where the directional force stops rising,
/// counting only once it has risen above its level before `from`.
fn first_non_increase(m: &[f64], from: usize) -> Option<usize> {
    let baseline = if from == 0 { 0.0 } else { m[from - 1] };
    (from + 1..m.len()).find(|&k| m[k] <= m[k - 1] && m[k - 1] > baseline)
}

fn first_non_decrease(m: &[f64], from: usize) -> Option<usize> {
    let baseline = if from == 0 { 0.0 } else { m[from - 1] };
    (from..m.len()).find(|&k| {
        let prev = if k == 0 { baseline } else { m[k - 1] };
        m[k] <= 0.0 || (k > from && m[k] >= prev && prev < baseline)
    })
}

/// Time at which `m` first crosses `level` going in direction `up`, searching
/// from `from`, linearly interpolated between samples.
fn crossing_time(t: &[f64], m: &[f64], from: usize, level: f64, up: bool) -> Option<f64> {
    (from.max(1)..m.len()).find_map(|k| {
        let (a, b) = (m[k - 1], m[k]);
        let crossed = if up {
            a < level && b >= level
        } else {
            a > level && b <= level
        };
        crossed.then(|| t[k - 1] + (level - a) / (b - a) * (t[k] - t[k - 1]))
    })
}

/// Step-response timing of a measured force against the signed duty
/// commands that produced it. `measured[k]` is the force recorded on the
/// tick that applied `commanded[k]`.
pub fn analyze_step_response(
    commanded: &[(f64, f64)],
    measured: &[f64],
) -> Result<StepResponseMetrics> {
    if commanded.len() != measured.len() {
        return Err(Error::Analysis(format!(
            "{} commands but {} measurements",
            commanded.len(),
            measured.len()
        )));
    }
    let t: Vec<f64> = commanded.iter().map(|c| c.0).collect();
    let duties: Vec<f64> = commanded.iter().map(|c| c.1).collect();
    let found = pulses(&duties);
    let &(on, off, sign) = found
        .first()
        .ok_or_else(|| Error::Analysis("no command edge found".into()))?;
    if off >= duties.len() {
        return Err(Error::Analysis(
            "command never returns from its first edge".into(),
        ));
    }
    let m: Vec<f64> = measured.iter().map(|f| sign * f).collect();

    let peak_at = first_non_increase(&m, on)
        .ok_or_else(|| Error::Analysis("measured force never stops rising".into()))?;
    let fall_at = first_non_decrease(&m, off)
        .ok_or_else(|| Error::Analysis("measured force never settles after release".into()))?;
    let plateau = m[on..=off].iter().copied().fold(f64::MIN, f64::max);
    if !(plateau > 0.0) {
        return Err(Error::Analysis(
            "measured force does not follow the command".into(),
        ));
    }
    let r10 = crossing_time(&t, &m, on, 0.1 * plateau, true);
    let r90 = crossing_time(&t, &m, on, 0.9 * plateau, true);
    // Fall levels are searched from the peak so pulses that decay before
    // their release (e.g. triangles) are handled too.
    let top = on
        + m[on..=off]
            .iter()
            .position(|&v| v == plateau)
            .expect("plateau is attained");
    let f90 = crossing_time(&t, &m, top + 1, 0.9 * plateau, false);
    let f10 = crossing_time(&t, &m, top + 1, 0.1 * plateau, false);
    let (Some(r10), Some(r90), Some(f90), Some(f10)) = (r10, r90, f90, f10) else {
        return Err(Error::Analysis("10%/90% levels are not crossed".into()));
    };

    let transition_s = match found.get(1) {
        Some(&(next_on, _, next_sign)) if sign < 0.0 && next_sign > 0.0 => {
            let fwd: Vec<f64> = measured.to_vec();
            first_non_increase(&fwd, next_on).map(|k| t[k] - t[off])
        }
        _ => None,
    };

    Ok(StepResponseMetrics {
        rise_s: t[peak_at] - t[on],
        fall_s: t[fall_at] - t[off],
        transition_s,
        rise_10_90_s: r90 - r10,
        fall_90_10_s: f10 - f90,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(slope: f64, intercept: f64) -> CalibrationCurve {
        CalibrationCurve::new(Direction::Forward, slope, intercept, DEFAULT_MIN_DUTY).unwrap()
    }

    #[test]
    fn step_log_round_trip() {
        let cmd = vec![(0.0, 0.0), (0.001, -1.0), (0.002, 0.5)];
        let meas = vec![0.0, -0.25, 0.125];
        let mut buf = Vec::new();
        write_step_log(&cmd, &meas, &mut buf).unwrap();
        assert_eq!(load_step_log(buf.as_slice()).unwrap(), (cmd, meas));
        assert!(load_step_log("t,duty,force\n0,2,0\n".as_bytes()).is_err());
        assert!(load_step_log("t,duty,force\n".as_bytes()).is_err());
    }

    #[test]
    fn collinear_points_fit_perfectly() {
        let pts: Vec<(f64, f64)> = [0.37, 0.69, 1.0]
            .iter()
            .map(|&d| (d, 4.0 * d + 0.3))
            .collect();
        let c = fit_calibration(&pts, Direction::Forward).unwrap();
        assert!((c.r_squared - 1.0).abs() < 1e-12);
        assert!((c.slope - 4.0).abs() < 1e-12);
        assert!((c.intercept - 0.3).abs() < 1e-12);
        for (d, f) in pts {
            assert!((c.duty_to_force(d) - f).abs() < 1e-12);
        }
        assert_eq!(c.min_duty, 95.0 / 255.0);
    }

    #[test]
    fn two_point_line() {
        let c = fit_calibration(&[(0.0, 0.0), (1.0, 3.5)], Direction::Backward).unwrap();
        assert_eq!(c.slope, 3.5);
        assert_eq!(c.intercept, 0.0);
        assert_eq!(c.direction, Direction::Backward);
    }

    #[test]
    fn single_duty_is_underdetermined() {
        let err = fit_calibration(&[(0.5, 1.0), (0.5, 1.2)], Direction::Forward).unwrap_err();
        assert!(matches!(err, Error::UnderdeterminedFit(_)));
        assert!(fit_calibration(&[(0.5, 1.0)], Direction::Forward).is_err());
        assert!(fit_calibration(&[], Direction::Forward).is_err());
    }

    #[test]
    fn zero_force_is_off() {
        assert_eq!(curve(4.0, 0.3).force_to_duty(0.0), 0.0);
    }

    #[test]
    fn force_on_line_inverts() {
        let c = curve(4.0, 0.3);
        assert!((c.force_to_duty(c.duty_to_force(0.69)) - 0.69).abs() < 1e-12);
    }

    #[test]
    fn tiny_force_clamps_up_to_min_duty() {
        let c = curve(4.0, 0.3);
        assert_eq!(c.force_to_duty(1e-3), 95.0 / 255.0);
        assert!((c.force_to_duty(1e-3) - 0.373).abs() < 1e-3);
        assert_eq!(c.force_to_duty(100.0), 1.0);
    }

    #[test]
    fn points_csv() {
        let pts = load_points("duty,peak_force\n0.37,1.5\n0.69,2.9\n1.0,4.2\n".as_bytes()).unwrap();
        assert_eq!(pts, vec![(0.37, 1.5), (0.69, 2.9), (1.0, 4.2)]);
        assert!(load_points("duty,peak_force\n".as_bytes()).is_err());
        assert!(load_points("duty,peak_force\n1.5,2\n".as_bytes()).is_err());
        assert!(matches!(
            load_points("duty,peak_force\n0.5,x\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn pair_json_accepts_single_or_both() {
        let c = curve(4.0, 0.3);
        let single = serde_json::to_string(&c).unwrap();
        let pair = CalibrationPair::from_json(&single).unwrap();
        assert_eq!(pair.backward.direction, Direction::Backward);
        assert_eq!(pair.backward.slope, 4.0);
        let both = CalibrationPair::symmetric(c).to_json().unwrap();
        assert_eq!(CalibrationPair::from_json(&both).unwrap(), pair);
        let v: serde_json::Value = serde_json::from_str(&single).unwrap();
        for key in ["direction", "slope", "intercept", "r_squared", "min_duty"] {
            assert!(!v[key].is_null(), "{key}");
        }
        assert_eq!(v["direction"], "forward");
    }

    #[test]
    fn signed_duty_uses_direction_curves() {
        let pair = CalibrationPair::new(
            curve(4.0, 0.0),
            CalibrationCurve::new(Direction::Backward, 2.0, 0.0, 0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(pair.signed_duty(2.0), 0.5);
        assert_eq!(pair.signed_duty(-1.0), -0.5);
        assert_eq!(pair.signed_duty(0.0), 0.0);
    }

    /// Backward pulse then forward pulse through an arbitrary plant response.
    fn commands(n_lead: usize, n_hold: usize, n_tail: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let total = n_lead + 2 * n_hold + n_tail;
        for k in 0..total {
            let d = if k < n_lead {
                0.0
            } else if k < n_lead + n_hold {
                -1.0
            } else if k < n_lead + 2 * n_hold {
                1.0
            } else {
                0.0
            };
            out.push((k as f64 / 1000.0, d));
        }
        out
    }

    #[test]
    fn ideal_plant_rises_in_one_sample() {
        let cmd = commands(100, 300, 300);
        let measured: Vec<f64> = cmd.iter().map(|c| 3.0 * c.1).collect();
        let m = analyze_step_response(&cmd, &measured).unwrap();
        assert!((m.rise_s - 0.001).abs() < 1e-12, "{m:?}");
        assert!((m.fall_s - 0.0).abs() < 1e-12, "{m:?}");
        assert!(m.rise_10_90_s < 0.001 + 1e-12);
        assert!((m.transition_s.unwrap() - 0.001).abs() < 1e-12);
    }

    #[test]
    fn first_order_ten_to_ninety() {
        // Analytic response sampled one tick after each command.
        let tau: f64 = 0.05;
        let cmd = commands(100, 500, 500);
        let mut measured = Vec::with_capacity(cmd.len());
        let mut y: f64 = 0.0;
        let a = (-0.001 / tau).exp();
        for c in &cmd {
            y = 4.0 * c.1 + (y - 4.0 * c.1) * a;
            measured.push(y);
        }
        // Unquantized, the force keeps rising until release, so only the
        // 10-90% time is meaningful here.
        let m = analyze_step_response(&cmd, &measured).unwrap();
        let expected = tau * (9.0f64).ln();
        assert!(
            (m.rise_10_90_s - expected).abs() < 0.002,
            "{m:?} vs {expected}"
        );
        assert!((m.rise_10_90_s - 0.11).abs() < 0.002);
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let cmd = commands(50, 200, 200);
        let measured: Vec<f64> = cmd
            .iter()
            .scan(0.0, |y, c| {
                *y = 2.0 * c.1 + (*y - 2.0 * c.1) * 0.95;
                Some((*y * 100.0).round() / 100.0)
            })
            .collect();
        let base = analyze_step_response(&cmd, &measured).unwrap();
        let shifted: Vec<(f64, f64)> = cmd.iter().map(|c| (c.0 + 12.345, c.1)).collect();
        let moved = analyze_step_response(&shifted, &measured).unwrap();
        assert!((base.rise_s - moved.rise_s).abs() < 1e-9);
        assert!((base.fall_s - moved.fall_s).abs() < 1e-9);
        assert!((base.rise_10_90_s - moved.rise_10_90_s).abs() < 1e-9);
        assert!((base.transition_s.unwrap() - moved.transition_s.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn no_edge_is_an_error() {
        let cmd: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.0)).collect();
        assert!(matches!(
            analyze_step_response(&cmd, &[0.0; 10]),
            Err(Error::Analysis(_))
        ));
        assert!(analyze_step_response(&cmd, &[0.0; 9]).is_err());
    }
}
