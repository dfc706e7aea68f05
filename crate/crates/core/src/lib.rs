//! Sole-friction gait traces to haptic actuator commands.
//!
//! The crate covers the whole path from measured two-site friction traces to
//! a 1 kHz signed-duty command stream:
//!
//! - [`trace`]: trace CSV input and output in the sole frame (forward positive).
//! - [`segment`]: step segmentation and four-phase annotation.
//! - [`profile`]: duration alignment, averaging, impulse balancing, triangle
//!   compilation, device scaling and speed interpolation.
//! - [`pipeline`]: the above chained from walks to a profile table.
//! - [`calibration`]: duty to force curves and step-response timing.
//! - [`renderer`] and [`live`]: the event-driven envelope scheduler and its
//!   NDJSON intake.
//! - [`plant`]: a first-order plate model and closed-loop harness.
//! - [`scores`]: questionnaire score normalization.
//! - [`synth`]: seeded synthetic walks with ground truth.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod live;
pub mod pipeline;
pub mod plant;
pub mod profile;
pub mod renderer;
pub mod scores;
pub mod segment;
pub mod synth;
pub mod trace;

pub use calibration::{
    analyze_step_response, fit_calibration, CalibrationCurve, CalibrationPair, Direction,
    StepResponseMetrics,
};
pub use error::{Error, ErrorKind, Result};
pub use profile::{
    align_durations, average_profiles, compile_triangular, compute_impulses, fit_device_scale,
    interpolate, treadmill_correct, FrictionProfile, ImpulsePair, SpeedProfileTable, Triangle,
    TriangularProfile,
};
pub use renderer::{ActuatorCommand, Foot, GaitEvent, Renderer, VibstepCommand};
pub use segment::{detect_phases, segment_steps, select_middle, PhaseTimings, StepSegment};
pub use trace::{load_trace, write_trace, ForceTrace, Sample, TraceMeta};
