//! Two-site sole friction traces and the trace-CSV format.
//!
//! A trace file looks like
//!
//! ```text
//! # rate_hz=1000 speed_kmh=2.5 participant=p01
//! t,thenar_y,heel_y,thenar_z,heel_z
//! 0,0.01,-0.02,-3.1,-8.4
//! ```
//!
//! Y columns are stored in the sensor frame on disk, where positive values are
//! backward friction on the sole. They are negated once on load so that every
//! in-memory [`ForceTrace`] is forward-positive. The writer applies the same
//! negation on the way out, which makes write followed by read the identity.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGN_CONVENTION: &str = "sole-frame, forward-positive";

/// Allowed relative deviation of any time step from the median step.
pub const MAX_TIME_JITTER: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub thenar_y: f64,
    pub heel_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thenar_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heel_z: Option<f64>,
}

impl Sample {
    pub fn new(thenar_y: f64, heel_y: f64) -> Self {
        Sample {
            thenar_y,
            heel_y,
            thenar_z: None,
            heel_z: None,
        }
    }

    pub fn with_vertical(mut self, thenar_z: f64, heel_z: f64) -> Self {
        self.thenar_z = Some(thenar_z);
        self.heel_z = Some(heel_z);
        self
    }

    pub fn has_vertical(&self) -> bool {
        self.thenar_z.is_some() && self.heel_z.is_some()
    }

    /// Sum of both longitudinal channels.
    pub fn combined_y(&self) -> f64 {
        self.thenar_y + self.heel_y
    }

    /// Total longitudinal activity, used for step detection.
    pub fn activity(&self) -> f64 {
        self.thenar_y.abs() + self.heel_y.abs()
    }

    fn values(&self) -> impl Iterator<Item = f64> {
        [
            Some(self.thenar_y),
            Some(self.heel_y),
            self.thenar_z,
            self.heel_z,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub walking_speed_kmh: f64,
    pub participant_id: String,
}

impl Default for TraceMeta {
    fn default() -> Self {
        TraceMeta {
            walking_speed_kmh: 0.0,
            participant_id: "unknown".to_string(),
        }
    }
}

/// Uniformly sampled two-site longitudinal friction, forward-positive, in newtons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrace {
    sample_rate_hz: f64,
    samples: Vec<Sample>,
    meta: TraceMeta,
}

impl ForceTrace {
    pub fn new(sample_rate_hz: f64, samples: Vec<Sample>, meta: TraceMeta) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidTrace(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !(meta.walking_speed_kmh.is_finite() && meta.walking_speed_kmh >= 0.0) {
            return Err(Error::InvalidTrace(format!(
                "walking speed must be finite and non-negative, got {}",
                meta.walking_speed_kmh
            )));
        }
        if meta.participant_id.is_empty() || meta.participant_id.contains(char::is_whitespace) {
            return Err(Error::InvalidTrace(format!(
                "participant id must be non-empty without whitespace, got {:?}",
                meta.participant_id
            )));
        }
        if let Some(first) = samples.first() {
            let arity = (first.thenar_z.is_some(), first.heel_z.is_some());
            if arity.0 != arity.1 {
                return Err(Error::InvalidTrace(
                    "thenar_z and heel_z must be present together".into(),
                ));
            }
            for (i, s) in samples.iter().enumerate() {
                if (s.thenar_z.is_some(), s.heel_z.is_some()) != arity {
                    return Err(Error::InvalidTrace(format!(
                        "sample {i} has a different channel arity"
                    )));
                }
                if s.values().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidTrace(format!("sample {i} is not finite")));
                }
            }
        }
        Ok(ForceTrace {
            sample_rate_hz,
            samples,
            meta,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn sign_convention(&self) -> &'static str {
        SIGN_CONVENTION
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_vertical(&self) -> bool {
        self.samples.first().is_some_and(Sample::has_vertical)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Copy of the samples in `range`, keeping rate and metadata.
    pub fn window(&self, range: Range<usize>) -> ForceTrace {
        ForceTrace {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples[range].to_vec(),
            meta: self.meta.clone(),
        }
    }
}

struct Header {
    rate_hz: Option<f64>,
    meta: TraceMeta,
}

fn parse_meta_line(line: &str, line_no: u64) -> Result<Header> {
    let body = line.trim_start_matches('#');
    let mut header = Header {
        rate_hz: None,
        meta: TraceMeta::default(),
    };
    for token in body.split_whitespace() {
        let Some((key, value)) = token.split_once('=') else {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected key=value in header, got {token:?}"),
            });
        };
        let number = || {
            value.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("{key} is not a number: {value:?}"),
            })
        };
        match key {
            "rate_hz" => header.rate_hz = Some(number()?),
            "speed_kmh" => header.meta.walking_speed_kmh = number()?,
            "participant" => header.meta.participant_id = value.to_string(),
            // Unknown metadata is tolerated so files can carry extra annotations.
            _ => {}
        }
    }
    Ok(header)
}

#[derive(Default)]
struct Columns {
    t: Option<usize>,
    thenar_y: usize,
    heel_y: usize,
    vertical: Option<(usize, usize)>,
    width: usize,
}

fn parse_columns(line: &str, line_no: u64) -> Result<Columns> {
    let names: Vec<&str> = line.split(',').map(str::trim).collect();
    let find = |name: &str| names.iter().position(|n| *n == name);
    let missing = |name: &str| Error::Parse {
        line: line_no,
        msg: format!("missing column {name:?}"),
    };
    for (i, n) in names.iter().enumerate() {
        if !matches!(*n, "t" | "thenar_y" | "heel_y" | "thenar_z" | "heel_z") {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("unknown column {n:?} at position {}", i + 1),
            });
        }
        if names[..i].contains(n) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate column {n:?}"),
            });
        }
    }
    let vertical = match (find("thenar_z"), find("heel_z")) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(Error::Parse {
                line: line_no,
                msg: "thenar_z and heel_z must be given together".into(),
            })
        }
    };
    Ok(Columns {
        t: find("t"),
        thenar_y: find("thenar_y").ok_or_else(|| missing("thenar_y"))?,
        heel_y: find("heel_y").ok_or_else(|| missing("heel_y"))?,
        vertical,
        width: names.len(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rate implied by a time column, after checking it is uniformly spaced.
fn rate_from_times(times: &[f64]) -> Result<f64> {
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let dt = median(&mut steps.clone());
    if !(dt > 0.0) {
        return Err(Error::Format(format!(
            "time column must be increasing, median step is {dt}"
        )));
    }
    steps.iter_mut().for_each(|s| *s = (*s - dt).abs() / dt);
    if let Some((i, jitter)) = steps
        .iter()
        .enumerate()
        .find(|(_, j)| **j > MAX_TIME_JITTER)
    {
        return Err(Error::Format(format!(
            "non-uniform time spacing between rows {} and {}: {:.2}% off the median step",
            i + 1,
            i + 2,
            jitter * 100.0
        )));
    }
    Ok(1.0 / dt)
}

/// Parse a trace-CSV stream into a validated, forward-positive trace.
pub fn load_trace<R: Read>(source: R) -> Result<ForceTrace> {
    let mut reader = BufReader::new(source);
    let mut line = String::new();
    let mut line_no = 0u64;
    let mut header = Header {
        rate_hz: None,
        meta: TraceMeta::default(),
    };

    let columns = loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::EmptyInput("trace has no column header"));
        }
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            header = parse_meta_line(trimmed, line_no)?;
            continue;
        }
        break parse_columns(trimmed, line_no)?;
    };

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let mut samples = Vec::new();
    let mut times = Vec::new();
    for record in csv.records() {
        let record = record?;
        let row_line = line_no + record.position().map_or(0, |p| p.line());
        if record.len() != columns.width {
            return Err(Error::Parse {
                line: row_line,
                msg: format!("expected {} fields, found {}", columns.width, record.len()),
            });
        }
        let field = |idx: usize| -> Result<f64> {
            let raw = &record[idx];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: row_line,
                    msg: format!("field {} is not a finite number: {raw:?}", idx + 1),
                })
        };
        // Sensor frame is backward-positive on Y; flip once here.
        let mut sample = Sample::new(-field(columns.thenar_y)?, -field(columns.heel_y)?);
        if let Some((tz, hz)) = columns.vertical {
            sample = sample.with_vertical(field(tz)?, field(hz)?);
        }
        if let Some(t) = columns.t {
            times.push(field(t)?);
        }
        samples.push(sample);
    }

    if samples.is_empty() {
        return Err(Error::EmptyInput("trace has no data rows"));
    }

    let rate =
        match (header.rate_hz, times.len() >= 2) {
            (Some(rate), true) => {
                let implied = rate_from_times(&times)?;
                if ((implied - rate) / rate).abs() > MAX_TIME_JITTER {
                    return Err(Error::Format(format!(
                        "declared rate {rate} Hz disagrees with time column ({implied:.3} Hz)"
                    )));
                }
                rate
            }
            (Some(rate), false) => rate,
            (None, true) => rate_from_times(&times)?,
            (None, false) => return Err(Error::Format(
                "sample rate is neither declared in the header nor derivable from a time column"
                    .into(),
            )),
        };

    ForceTrace::new(rate, samples, header.meta)
}

/// Write `trace` as trace-CSV. Reading the output back yields an identical trace.
pub fn write_trace<W: Write>(trace: &ForceTrace, mut out: W) -> Result<()> {
    let meta = trace.meta();
    writeln!(
        out,
        "# rate_hz={} speed_kmh={} participant={}",
        trace.sample_rate_hz(),
        meta.walking_speed_kmh,
        meta.participant_id
    )?;
    let vertical = trace.has_vertical();
    if vertical {
        writeln!(out, "t,thenar_y,heel_y,thenar_z,heel_z")?;
    } else {
        writeln!(out, "t,thenar_y,heel_y")?;
    }
    let rate = trace.sample_rate_hz();
    for (i, s) in trace.samples().iter().enumerate() {
        let t = i as f64 / rate;
        write!(out, "{t},{},{}", -s.thenar_y, -s.heel_y)?;
        if let (Some(tz), Some(hz)) = (s.thenar_z, s.heel_z) {
            write!(out, ",{tz},{hz}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<ForceTrace> {
        load_trace(text.as_bytes())
    }

    #[test]
    fn three_rows_at_declared_rate() {
        let trace = load(
            "# rate_hz=1000 speed_kmh=2.5 participant=p1\nt,thenar_y,heel_y\n0,0,0\n0.001,0.5,0.1\n0.002,1,0.2\n",
        )
        .unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.sample_rate_hz(), 1000.0);
        assert_eq!(trace.meta().walking_speed_kmh, 2.5);
        assert_eq!(trace.meta().participant_id, "p1");
        assert_eq!(trace.sign_convention(), SIGN_CONVENTION);
    }

    #[test]
    fn sensor_sign_is_negated_on_ingest() {
        let trace = load("# rate_hz=1000\nthenar_y,heel_y\n0.0,1.0\n").unwrap();
        assert_eq!(trace.samples()[0].heel_y, -1.0);
    }

    #[test]
    fn vertical_channels_keep_their_sign() {
        let trace = load("# rate_hz=500\nthenar_y,heel_y,thenar_z,heel_z\n1,2,-3,-4\n").unwrap();
        let s = trace.samples()[0];
        assert_eq!((s.thenar_y, s.heel_y), (-1.0, -2.0));
        assert_eq!((s.thenar_z, s.heel_z), (Some(-3.0), Some(-4.0)));
    }

    #[test]
    fn rate_inferred_from_time_column() {
        let trace = load("t,thenar_y,heel_y\n0,0,0\n0.002,0,0\n0.004,0,0\n0.006,0,0\n").unwrap();
        assert!((trace.sample_rate_hz() - 500.0).abs() < 1e-9);
    }

    #[test]
    fn jittery_time_column_is_rejected() {
        let err = load("t,thenar_y,heel_y\n0,0,0\n0.001,0,0\n0.002,0,0\n0.0032,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn declared_rate_must_match_time_column() {
        let err = load("# rate_hz=1000\nt,thenar_y,heel_y\n0,0,0\n0.002,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let err = load("# rate_hz=1000\nt,thenar_y,heel_y\n0,0,0\n0.001,abc,0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn short_row_reports_its_line() {
        let err = load("# rate_hz=1000\nthenar_y,heel_y\n0,0\n0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn empty_body_is_an_error() {
        assert!(matches!(
            load("# rate_hz=1000\nt,thenar_y,heel_y\n"),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(load(""), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn missing_rate_is_an_error() {
        assert!(matches!(
            load("thenar_y,heel_y\n0,0\n"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_column_is_an_error() {
        assert!(matches!(
            load("# rate_hz=1\nt,thenar_y\n0,0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn mixed_arity_is_rejected() {
        let samples = vec![
            Sample::new(0.0, 0.0),
            Sample::new(0.0, 0.0).with_vertical(1.0, 1.0),
        ];
        assert!(ForceTrace::new(1000.0, samples, TraceMeta::default()).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let samples = vec![Sample::new(f64::NAN, 0.0)];
        assert!(ForceTrace::new(1000.0, samples, TraceMeta::default()).is_err());
        assert!(load("# rate_hz=1000\nthenar_y,heel_y\ninf,0\n").is_err());
    }

    #[test]
    fn zero_rate_is_rejected() {
        assert!(ForceTrace::new(0.0, vec![], TraceMeta::default()).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let samples = (0..257)
            .map(|i| {
                let x = i as f64 * 0.37;
                Sample::new(x.sin() * 1.3, -(x * 0.7).cos() / 3.0).with_vertical(-x, 0.1 * x)
            })
            .chain(std::iter::once(
                Sample::new(0.0, -0.0).with_vertical(0.0, 0.0),
            ))
            .collect();
        let meta = TraceMeta {
            walking_speed_kmh: 2.5,
            participant_id: "p07".into(),
        };
        let trace = ForceTrace::new(1000.0, samples, meta).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = load_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), trace.len());
        assert_eq!(back.sample_rate_hz(), trace.sample_rate_hz());
        assert_eq!(back.meta(), trace.meta());
        for (a, b) in back.samples().iter().zip(trace.samples()) {
            assert_eq!(a.thenar_y.to_bits(), b.thenar_y.to_bits());
            assert_eq!(a.heel_y.to_bits(), b.heel_y.to_bits());
            assert_eq!(a.thenar_z.map(f64::to_bits), b.thenar_z.map(f64::to_bits));
            assert_eq!(a.heel_z.map(f64::to_bits), b.heel_z.map(f64::to_bits));
        }
    }
}
