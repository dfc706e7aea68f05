//! Python bindings: trace loading, step analysis, table compilation,
//! calibration, 1 kHz rendering, plant simulation and score normalization.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use hapgait_core::calibration::{self, DEFAULT_MIN_DUTY};
use hapgait_core::pipeline::{self, CompileSettings};
use hapgait_core::plant::{self, SimConfig, SimMetrics, StepTest};
use hapgait_core::profile::{self, Triangle, TriangularProfile};
use hapgait_core::renderer::{self, Foot, GaitEvent, TickOutput};
use hapgait_core::scores::{self, ScoreRecord, Stimulus};
use hapgait_core::segment::{self, PhaseConfig, PhaseTimings, SegmentationConfig};
use hapgait_core::{
    synth, trace, CalibrationCurve as CoreCurve, CalibrationPair as CorePair, Direction,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

create_exception!(
    hapgait,
    HapgaitError,
    PyValueError,
    "Raised for invalid input or failed analysis."
);

fn err(e: hapgait_core::Error) -> PyErr {
    HapgaitError::new_err(format!("{:?}: {e}", e.kind()))
}

fn open(path: &PathBuf) -> PyResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| HapgaitError::new_err(format!("cannot open {}: {e}", path.display())))
}

fn direction(name: &str) -> PyResult<Direction> {
    match name {
        "forward" => Ok(Direction::Forward),
        "backward" => Ok(Direction::Backward),
        other => Err(PyValueError::new_err(format!(
            "direction must be 'forward' or 'backward', got {other:?}"
        ))),
    }
}

fn foot(name: &str) -> PyResult<Foot> {
    match name {
        "L" => Ok(Foot::Left),
        "R" => Ok(Foot::Right),
        other => Err(PyValueError::new_err(format!(
            "foot must be 'L' or 'R', got {other:?}"
        ))),
    }
}

fn stimulus(name: &str) -> PyResult<Stimulus> {
    match name {
        "none" => Ok(Stimulus::None),
        "vibration" => Ok(Stimulus::Vibration),
        "friction" => Ok(Stimulus::Friction),
        other => Err(PyValueError::new_err(format!("unknown stimulus {other:?}"))),
    }
}

fn stimulus_name(s: Stimulus) -> &'static str {
    match s {
        Stimulus::None => "none",
        Stimulus::Vibration => "vibration",
        Stimulus::Friction => "friction",
    }
}

fn triangle_dict<'py>(py: Python<'py>, t: &Triangle) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t_onset", t.t_onset)?;
    d.set_item("t_peak", t.t_peak)?;
    d.set_item("t_offset", t.t_offset)?;
    d.set_item("f_peak", t.f_peak)?;
    Ok(d)
}

fn profile_dict<'py>(py: Python<'py>, p: &TriangularProfile) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("speed_kmh", p.speed_kmh)?;
    d.set_item("duration_s", p.duration_s)?;
    d.set_item("brake", triangle_dict(py, &p.brake)?)?;
    d.set_item("drive", triangle_dict(py, &p.drive)?)?;
    let imp = p.impulses();
    d.set_item("impulses", (imp.backward, imp.forward))?;
    Ok(d)
}

fn phases_dict<'py>(py: Python<'py>, p: &PhaseTimings) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t_start", p.t_start)?;
    d.set_item("t_step1_peak", p.t_step1_peak)?;
    d.set_item("t_step2_present", p.t_step2_present)?;
    d.set_item("t_step3_peak", p.t_step3_peak)?;
    d.set_item("t_step4_start", p.t_step4_start)?;
    d.set_item("t_end", p.t_end)?;
    Ok(d)
}

fn metrics_dict<'py>(py: Python<'py>, m: &SimMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("rise_s", m.rise_s)?;
    d.set_item("rise_10_90_s", m.rise_10_90_s)?;
    d.set_item("per_region_impulse_error", m.per_region_impulse_error)?;
    d.set_item("net_impulse", m.net_impulse)?;
    d.set_item("net_fraction", m.net_fraction)?;
    d.set_item("preempted_steps", m.preempted_steps)?;
    let steps = PyList::empty(py);
    for s in &m.steps {
        let row = PyDict::new(py);
        row.set_item("start_t", s.start_t)?;
        row.set_item("speed_kmh", s.speed_kmh)?;
        row.set_item("brake_target", s.brake_target)?;
        row.set_item("brake_achieved", s.brake_achieved)?;
        row.set_item("drive_target", s.drive_target)?;
        row.set_item("drive_achieved", s.drive_achieved)?;
        row.set_item("net_impulse", s.net_impulse)?;
        steps.append(row)?;
    }
    d.set_item("steps", steps)?;
    Ok(d)
}

fn tick_tuple(t: &TickOutput) -> (f64, f64, f64, f64) {
    (
        t.command.t,
        t.command.signed_duty,
        t.vibstep.heel_duty,
        t.vibstep.thenar_duty,
    )
}

fn events_from(events: Vec<(f64, String, f64)>) -> PyResult<Vec<GaitEvent>> {
    events
        .into_iter()
        .map(|(t, f, speed)| Ok(GaitEvent::grounded(t, foot(&f)?, speed)))
        .collect()
}

/// Two-site friction recording of one walk.
#[pyclass(module = "hapgait", frozen)]
struct Trace {
    inner: trace::ForceTrace,
}

#[pymethods]
impl Trace {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = trace::load_trace(open(&path)?).map_err(err)?;
        Ok(Trace { inner })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let inner = trace::load_trace(text.as_bytes()).map_err(err)?;
        Ok(Trace { inner })
    }

    /// Synthetic walk with known step boundaries.
    #[staticmethod]
    #[pyo3(signature = (speed_kmh, seed, steps = 30))]
    fn synthetic(speed_kmh: f64, seed: u64, steps: usize) -> PyResult<Self> {
        let mut spec = synth::WalkSpec::new(speed_kmh, seed);
        spec.steps = steps;
        let walk = synth::generate_walk(&spec).map_err(err)?;
        Ok(Trace { inner: walk.trace })
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        trace::write_trace(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let file = File::create(&path).map_err(|e| HapgaitError::new_err(e.to_string()))?;
        trace::write_trace(&self.inner, std::io::BufWriter::new(file)).map_err(err)
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz()
    }

    #[getter]
    fn speed_kmh(&self) -> f64 {
        self.inner.meta().walking_speed_kmh
    }

    #[getter]
    fn participant(&self) -> String {
        self.inner.meta().participant_id.clone()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s()
    }

    #[getter]
    fn thenar_y(&self) -> Vec<f64> {
        self.inner.samples().iter().map(|s| s.thenar_y).collect()
    }

    #[getter]
    fn heel_y(&self) -> Vec<f64> {
        self.inner.samples().iter().map(|s| s.heel_y).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Cut the walk into steps.
    #[pyo3(signature = (onset_threshold = None, release_threshold = None, min_step_s = None))]
    fn segment(
        &self,
        onset_threshold: Option<f64>,
        release_threshold: Option<f64>,
        min_step_s: Option<f64>,
    ) -> PyResult<Vec<Step>> {
        let mut cfg = SegmentationConfig::default();
        if let Some(v) = onset_threshold {
            cfg.onset_threshold = v;
        }
        if let Some(v) = release_threshold {
            cfg.release_threshold = v;
        }
        if let Some(v) = min_step_s {
            cfg.min_step_s = v;
        }
        let steps = segment::segment_steps(&self.inner, &cfg).map_err(err)?;
        Ok(steps.into_iter().map(|inner| Step { inner }).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(participant={:?}, speed_kmh={}, samples={}, sample_rate_hz={})",
            self.participant(),
            self.speed_kmh(),
            self.inner.len(),
            self.inner.sample_rate_hz()
        )
    }
}

/// One foot contact cut out of a walk.
#[pyclass(module = "hapgait", frozen)]
struct Step {
    inner: segment::StepSegment,
}

#[pymethods]
impl Step {
    #[getter]
    fn index(&self) -> usize {
        self.inner.index_in_walk
    }

    #[getter]
    fn start_sample(&self) -> usize {
        self.inner.start_sample
    }

    #[getter]
    fn end_sample(&self) -> usize {
        self.inner.end_sample()
    }

    fn phases<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = segment::detect_phases(&self.inner, &PhaseConfig::default()).map_err(err)?;
        phases_dict(py, &p)
    }

    fn __repr__(&self) -> String {
        format!(
            "Step(index={}, start_sample={}, end_sample={})",
            self.index(),
            self.start_sample(),
            self.end_sample()
        )
    }
}

/// Steps `first..=last` (1-based) of a segmented walk.
#[pyfunction]
#[pyo3(signature = (steps, first = 4, last = 13))]
fn select_middle(steps: Vec<PyRef<'_, Step>>, first: usize, last: usize) -> PyResult<Vec<Step>> {
    let segs: Vec<_> = steps.iter().map(|s| s.inner.clone()).collect();
    let middle = segment::select_middle(&segs, first, last).map_err(err)?;
    Ok(middle.into_iter().map(|inner| Step { inner }).collect())
}

/// Device-ready triangular profiles per knot speed.
#[pyclass(module = "hapgait", frozen)]
struct ProfileTable {
    inner: profile::SpeedProfileTable,
}

#[pymethods]
impl ProfileTable {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(ProfileTable {
            inner: profile::SpeedProfileTable::from_json(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text =
            std::fs::read_to_string(&path).map_err(|e| HapgaitError::new_err(e.to_string()))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn device_scale(&self) -> f64 {
        self.inner.device_scale
    }

    #[getter]
    fn speeds(&self) -> Vec<f64> {
        self.inner.entries.iter().map(|e| e.speed_kmh).collect()
    }

    fn entries<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .entries
            .iter()
            .map(|e| profile_dict(py, e))
            .collect()
    }

    /// Profile for any walking speed, clamped to the table range.
    fn interpolate<'py>(&self, py: Python<'py>, speed_kmh: f64) -> PyResult<Bound<'py, PyDict>> {
        let p = profile::interpolate(&self.inner, speed_kmh).map_err(err)?;
        profile_dict(py, &p)
    }
}

/// Compile walks into a profile table; every speed needs at least one walk.
#[pyfunction]
#[pyo3(signature = (traces, speeds = None, device_max_force = 3.0))]
fn compile_table(
    traces: Vec<PyRef<'_, Trace>>,
    speeds: Option<Vec<f64>>,
    device_max_force: f64,
) -> PyResult<ProfileTable> {
    let owned: Vec<_> = traces.iter().map(|t| t.inner.clone()).collect();
    let speeds = speeds.unwrap_or_else(|| profile::KNOT_SPEEDS_KMH.to_vec());
    let settings = CompileSettings {
        device_max_force,
        ..CompileSettings::default()
    };
    let report = pipeline::compile_table(&owned, &speeds, &settings).map_err(err)?;
    Ok(ProfileTable {
        inner: report.table,
    })
}

/// Synthetic study: one walk per participant at each knot speed.
#[pyfunction]
fn study_walks(participants: usize, seed: u64) -> PyResult<Vec<Trace>> {
    let walks = synth::study_walks(participants, seed).map_err(err)?;
    Ok(walks
        .into_iter()
        .map(|w| Trace { inner: w.trace })
        .collect())
}

/// Linear duty to peak-force map for one pulling direction.
#[pyclass(module = "hapgait", frozen)]
struct CalibrationCurve {
    inner: CoreCurve,
}

#[pymethods]
impl CalibrationCurve {
    #[new]
    #[pyo3(signature = (direction, slope, intercept, min_duty = DEFAULT_MIN_DUTY))]
    fn new(direction: &str, slope: f64, intercept: f64, min_duty: f64) -> PyResult<Self> {
        let inner =
            CoreCurve::new(self::direction(direction)?, slope, intercept, min_duty).map_err(err)?;
        Ok(CalibrationCurve { inner })
    }

    /// Least-squares fit of `(duty, peak_force)` points.
    #[staticmethod]
    #[pyo3(signature = (points, direction, min_duty = DEFAULT_MIN_DUTY))]
    fn fit(points: Vec<(f64, f64)>, direction: &str, min_duty: f64) -> PyResult<Self> {
        let inner = calibration::fit_calibration_with_min_duty(
            &points,
            self::direction(direction)?,
            min_duty,
        )
        .map_err(err)?;
        Ok(CalibrationCurve { inner })
    }

    #[getter]
    fn slope(&self) -> f64 {
        self.inner.slope
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn r_squared(&self) -> f64 {
        self.inner.r_squared
    }

    #[getter]
    fn min_duty(&self) -> f64 {
        self.inner.min_duty
    }

    fn duty_to_force(&self, duty: f64) -> f64 {
        self.inner.duty_to_force(duty)
    }

    fn force_to_duty(&self, force: f64) -> f64 {
        self.inner.force_to_duty(force)
    }

    fn __repr__(&self) -> String {
        format!(
            "CalibrationCurve(slope={}, intercept={}, r_squared={}, min_duty={})",
            self.inner.slope, self.inner.intercept, self.inner.r_squared, self.inner.min_duty
        )
    }
}

/// Forward and backward calibration of one device.
#[pyclass(module = "hapgait", frozen)]
struct Calibration {
    inner: CorePair,
}

#[pymethods]
impl Calibration {
    #[new]
    fn new(
        forward: PyRef<'_, CalibrationCurve>,
        backward: PyRef<'_, CalibrationCurve>,
    ) -> PyResult<Self> {
        Ok(Calibration {
            inner: CorePair::new(forward.inner, backward.inner).map_err(err)?,
        })
    }

    /// Curves matching the simulated plate.
    #[staticmethod]
    fn default() -> Self {
        Calibration {
            inner: plant::default_curves(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Calibration {
            inner: CorePair::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Signed duty for a signed force; negative pulls backward.
    fn signed_duty(&self, force: f64) -> f64 {
        self.inner.signed_duty(force)
    }
}

/// 1 kHz envelope scheduler driven by gait events.
#[pyclass(module = "hapgait")]
struct Renderer {
    inner: renderer::Renderer,
}

#[pymethods]
impl Renderer {
    #[new]
    #[pyo3(signature = (table, calibration = None))]
    fn new(
        table: PyRef<'_, ProfileTable>,
        calibration: Option<PyRef<'_, Calibration>>,
    ) -> PyResult<Self> {
        let curves = calibration.map_or_else(plant::default_curves, |c| c.inner);
        Ok(Renderer {
            inner: renderer::Renderer::new(table.inner.clone(), curves).map_err(err)?,
        })
    }

    #[pyo3(signature = (t, foot, speed_kmh))]
    fn on_event(&mut self, t: f64, foot: &str, speed_kmh: f64) -> PyResult<()> {
        let e = GaitEvent::grounded(t, self::foot(foot)?, speed_kmh);
        self.inner.on_event(e).map_err(err)
    }

    /// Advance one tick; returns `(t, signed_duty, heel_duty, thenar_duty)`.
    fn tick(&mut self) -> (f64, f64, f64, f64) {
        tick_tuple(&self.inner.advance())
    }

    #[getter]
    fn is_idle(&self) -> bool {
        self.inner.is_idle()
    }

    #[getter]
    fn next_tick_time(&self) -> f64 {
        self.inner.next_tick_time()
    }
}

/// Render `(t, foot, speed_kmh)` events to per-tick
/// `(t, signed_duty, heel_duty, thenar_duty)` rows.
#[pyfunction]
#[pyo3(signature = (table, events, calibration = None, min_duration_s = 0.0))]
fn render(
    table: PyRef<'_, ProfileTable>,
    events: Vec<(f64, String, f64)>,
    calibration: Option<PyRef<'_, Calibration>>,
    min_duration_s: f64,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let curves = calibration.map_or_else(plant::default_curves, |c| c.inner);
    let mut r = renderer::Renderer::new(table.inner.clone(), curves).map_err(err)?;
    let events = events_from(events)?;
    let min_ticks = (min_duration_s.max(0.0) * renderer::TICK_RATE_HZ as f64).round() as u64;
    let ticks = renderer::render_offline(&mut r, &events, min_ticks).map_err(err)?;
    Ok(ticks.iter().map(tick_tuple).collect())
}

fn sim_config(tau_s: f64, max_force: f64) -> SimConfig {
    SimConfig {
        tau_s,
        max_force,
        ..SimConfig::default()
    }
}

/// Square-pulse test of the simulated plate.
#[pyfunction]
#[pyo3(signature = (tau_s = plant::DEFAULT_TAU_S, duty = 1.0, calibration = None))]
fn step_test<'py>(
    py: Python<'py>,
    tau_s: f64,
    duty: f64,
    calibration: Option<PyRef<'_, Calibration>>,
) -> PyResult<Bound<'py, PyDict>> {
    let curves = calibration.map_or_else(plant::default_curves, |c| c.inner);
    let test = StepTest {
        duty,
        ..StepTest::default()
    };
    let run = plant::run_step_test(&curves, &sim_config(tau_s, plant::DEFAULT_MAX_FORCE), &test)
        .map_err(err)?;
    let m = run.metrics;
    let d = PyDict::new(py);
    d.set_item("rise_s", m.rise_s)?;
    d.set_item("fall_s", m.fall_s)?;
    d.set_item("transition_s", m.transition_s)?;
    d.set_item("rise_10_90_s", m.rise_10_90_s)?;
    d.set_item("fall_90_10_s", m.fall_90_10_s)?;
    d.set_item("measured", run.measured)?;
    Ok(d)
}

/// Render events into the simulated plate and compare achieved impulses.
#[pyfunction]
#[pyo3(signature = (table, events, calibration = None, tau_s = plant::DEFAULT_TAU_S, max_force = plant::DEFAULT_MAX_FORCE))]
fn closed_loop<'py>(
    py: Python<'py>,
    table: PyRef<'_, ProfileTable>,
    events: Vec<(f64, String, f64)>,
    calibration: Option<PyRef<'_, Calibration>>,
    tau_s: f64,
    max_force: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let curves = calibration.map_or_else(plant::default_curves, |c| c.inner);
    let events = events_from(events)?;
    let run = plant::run_closed_loop(
        &table.inner,
        &curves,
        &events,
        &sim_config(tau_s, max_force),
    )
    .map_err(err)?;
    let d = metrics_dict(py, &run.metrics)?;
    d.set_item("forces", run.forces)?;
    Ok(d)
}

type ScoreRow = (String, String, String, f64, f64);
type NormalizedRow = (String, String, String, f64, f64, f64);

/// Min-max normalize `(participant, item, stimulus, speed_kmh, score)` rows
/// per participant and item; returns the rows with the normalized score added.
#[pyfunction]
fn normalize_scores(rows: Vec<ScoreRow>) -> PyResult<Vec<NormalizedRow>> {
    let records = rows
        .into_iter()
        .map(|(participant, item, s, speed_kmh, score)| {
            Ok(ScoreRecord {
                participant,
                item,
                stimulus: stimulus(&s)?,
                speed_kmh,
                score,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = scores::normalize_scores(&records).map_err(err)?;
    Ok(out
        .into_iter()
        .map(|r| {
            (
                r.participant,
                r.item,
                stimulus_name(r.stimulus).to_string(),
                r.speed_kmh,
                r.score,
                r.normalized,
            )
        })
        .collect())
}

#[pymodule]
fn hapgait(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HapgaitError", m.py().get_type::<HapgaitError>())?;
    m.add("KNOT_SPEEDS_KMH", profile::KNOT_SPEEDS_KMH.to_vec())?;
    m.add("TICK_RATE_HZ", renderer::TICK_RATE_HZ)?;
    m.add_class::<Trace>()?;
    m.add_class::<Step>()?;
    m.add_class::<ProfileTable>()?;
    m.add_class::<CalibrationCurve>()?;
    m.add_class::<Calibration>()?;
    m.add_class::<Renderer>()?;
    m.add_function(wrap_pyfunction!(select_middle, m)?)?;
    m.add_function(wrap_pyfunction!(compile_table, m)?)?;
    m.add_function(wrap_pyfunction!(study_walks, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(step_test, m)?)?;
    m.add_function(wrap_pyfunction!(closed_loop, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_scores, m)?)?;
    Ok(())
}
