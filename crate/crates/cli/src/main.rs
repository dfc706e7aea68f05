//! `hapgait`: friction traces in, device tables and 1 kHz command logs out.

mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hapgait_core::calibration::{
    analyze_step_response, fit_calibration_with_min_duty, load_points, load_step_log,
    CalibrationPair, Direction,
};
use hapgait_core::live::{accept_tcp, read_events, run_live, spawn_intake, Pacing};
use hapgait_core::pipeline::{annotate_steps, compile_table};
use hapgait_core::plant::{default_curves, run_closed_loop, run_step_test, StepTest};
use hapgait_core::profile::SpeedProfileTable;
use hapgait_core::renderer::{
    render_offline, write_command_log, write_vibstep_log, Renderer, TickOutput,
};
use hapgait_core::scores::{
    mean_across_participants, normalize_scores, read_scores, write_normalized,
};
use hapgait_core::segment::{segment_steps, select_middle};
use hapgait_core::trace::{load_trace, write_trace, ForceTrace};
use hapgait_core::{Error, ErrorKind, Result};
use serde_json::json;

use config::PipelineConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "hapgait",
    version,
    about = "Gait friction traces to haptic actuator commands"
)]
struct Cli {
    /// TOML configuration file; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Per-run overrides of configuration keys.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Activity level that opens a step (N).
    #[arg(long, global = true)]
    onset_threshold: Option<f64>,
    /// Activity level that closes a step once held below (N).
    #[arg(long, global = true)]
    release_threshold: Option<f64>,
    /// Shortest kept step (s).
    #[arg(long, global = true)]
    min_step_s: Option<f64>,
    /// Quiet time that closes a step (s).
    #[arg(long, global = true)]
    release_hold_s: Option<f64>,
    /// Terminal spike threshold as a multiple of the brake peak.
    #[arg(long, global = true)]
    step4_factor: Option<f64>,
    /// Force magnitude treated as zero when finding sign regions (N).
    #[arg(long, global = true)]
    sign_floor: Option<f64>,
    /// Shortest overlap of positive heel and thenar force counted as a push (s).
    #[arg(long, global = true)]
    step2_min_s: Option<f64>,
    /// First step kept for averaging (1-based).
    #[arg(long, global = true)]
    first_step: Option<usize>,
    /// Last step kept for averaging (1-based).
    #[arg(long, global = true)]
    last_step: Option<usize>,
    /// Largest force the device may be asked for (N).
    #[arg(long, global = true)]
    device_max_force: Option<f64>,
    /// Smallest nonzero duty for fitted curves.
    #[arg(long, global = true)]
    min_duty: Option<f64>,
    /// Plate time constant for simulation (s).
    #[arg(long, global = true)]
    tau_s: Option<f64>,
    /// Force limit of the simulated plate (N).
    #[arg(long, global = true)]
    max_force: Option<f64>,
    /// Reading resolution of the simulated force sensor (N); 0 reads exactly.
    #[arg(long, global = true)]
    sensor_resolution: Option<f64>,
    /// Idle time simulated after the last envelope (s).
    #[arg(long, global = true)]
    settle_s: Option<f64>,
    /// Walking speeds to compile, comma separated (km/h).
    #[arg(long, global = true, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
    /// Speed profile table (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Calibration curves (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    calib: Option<PathBuf>,
    /// Gait events (NDJSON); `-` reads standard input.
    #[arg(long, global = true, value_name = "FILE")]
    events: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a trace and print its summary; optionally rewrite it.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Rewrite the trace in canonical trace-CSV form.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cut a walk into steps and list their windows as JSON.
    Segment {
        #[arg(long)]
        input: PathBuf,
        /// Keep only the configured middle steps.
        #[arg(long)]
        middle: bool,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Annotate the middle steps of a walk with phase timings (JSON).
    Phases {
        #[arg(long)]
        input: PathBuf,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compile walks at the configured speeds into a speed profile table.
    Compile {
        /// Walk traces; repeat the flag for several files.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-speed impulse summary and rejected steps (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a duty to force curve from `duty,peak_force` points.
    Calibrate {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        direction: Direction,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rise and fall times of a `t,duty,force` step-test log.
    StepResponse {
        #[arg(long)]
        input: PathBuf,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render events to a `t,signed_duty` command log.
    Render(RenderArgs),
    /// Render events to a `t,heel_duty,thenar_duty` vibrator log.
    Vibstep(RenderArgs),
    /// Run the plate step test and, given events and a table, the closed loop.
    Simulate {
        /// Metrics JSON destination.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-tick `t,signed_duty,force` log of the closed-loop run.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Step-test duty magnitude.
        #[arg(long, default_value_t = 1.0)]
        duty: f64,
    },
    /// Min-max normalize questionnaire scores per participant and item.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        /// Destination file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Mean normalized score per item, stimulus and speed (JSON).
        #[arg(long)]
        means: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Destination file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Accept one TCP connection on 127.0.0.1:PORT and read events from it.
    #[arg(long, value_name = "PORT")]
    listen: Option<u16>,
    /// Tick on the wall clock instead of event watermarks.
    #[arg(long)]
    realtime: bool,
    /// Extend the log with idle ticks to at least this duration (s).
    #[arg(long, default_value_t = 0.0)]
    min_duration: f64,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        set!(
            onset_threshold,
            release_threshold,
            min_step_s,
            release_hold_s,
            step4_factor,
            sign_floor,
            step2_min_s,
            first_step,
            last_step,
            device_max_force,
            min_duty,
            tau_s,
            max_force,
            sensor_resolution,
            settle_s,
            speeds
        );
        if self.table.is_some() {
            cfg.table = self.table.clone();
        }
        if self.calib.is_some() {
            cfg.calib = self.calib.clone();
        }
        if self.events.is_some() {
            cfg.events = self.events.clone();
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Output sink: a file when a path is given, standard output otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--{what} is required (flag or config key)")))
}

fn load_table(cfg: &PipelineConfig) -> Result<SpeedProfileTable> {
    SpeedProfileTable::from_json(&read_text(required(&cfg.table, "table")?)?)
}

fn load_curves(cfg: &PipelineConfig) -> Result<CalibrationPair> {
    CalibrationPair::from_json(&read_text(required(&cfg.calib, "calib")?)?)
}

fn events_reader(cfg: &PipelineConfig) -> Result<Box<dyn BufRead + Send>> {
    let path = required(&cfg.events, "events")?;
    if path == Path::new("-") {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        Ok(Box::new(open(path)?))
    }
}

fn load_walk(path: &Path) -> Result<ForceTrace> {
    load_trace(open(path)?).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

fn render(cfg: &PipelineConfig, args: &RenderArgs, vibstep: bool) -> Result<()> {
    let mut renderer = Renderer::new(load_table(cfg)?, load_curves(cfg)?)?;
    if !(args.min_duration.is_finite() && args.min_duration >= 0.0) {
        return Err(Error::Config("--min-duration must be >= 0".into()));
    }
    let min_ticks = (args.min_duration * renderer.tick_rate_hz() as f64).round() as u64;
    let ticks: Vec<TickOutput> =
        if args.listen.is_none() && !args.realtime && cfg.events.as_deref() != Some(Path::new("-"))
        {
            let events = read_events(events_reader(cfg)?)?;
            render_offline(&mut renderer, &events, min_ticks)?
        } else {
            let source: Box<dyn BufRead + Send> = match args.listen {
                Some(port) => Box::new(accept_tcp(port)?),
                None => events_reader(cfg)?,
            };
            let pacing = if args.realtime {
                Pacing::Realtime
            } else {
                Pacing::Watermark
            };
            let (rx, _intake) = spawn_intake(source);
            let mut out = Vec::new();
            run_live(&mut renderer, rx, pacing, min_ticks, |t| out.push(t))?;
            out
        };
    let mut out = sink(args.output.as_deref())?;
    if vibstep {
        write_vibstep_log(&ticks, &mut out)?;
    } else {
        write_command_log(&ticks, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;

    match &cli.command {
        Command::Ingest { input, output } => {
            let trace = load_walk(input)?;
            if let Some(path) = output {
                let mut out = sink(Some(path))?;
                write_trace(&trace, &mut out)?;
                out.flush()?;
            }
            emit_json(
                &json!({
                    "samples": trace.len(),
                    "sample_rate_hz": trace.sample_rate_hz(),
                    "duration_s": trace.duration_s(),
                    "speed_kmh": trace.meta().walking_speed_kmh,
                    "participant": trace.meta().participant_id,
                    "vertical_channels": trace.has_vertical(),
                    "sign_convention": trace.sign_convention(),
                }),
                None,
            )
        }
        Command::Segment {
            input,
            middle,
            output,
        } => {
            let trace = load_walk(input)?;
            let mut steps = segment_steps(&trace, &cfg.segmentation())?;
            if *middle {
                steps = select_middle(&steps, cfg.first_step, cfg.last_step)?;
            }
            let rows: Vec<_> = steps
                .iter()
                .map(|s| {
                    json!({
                        "index_in_walk": s.index_in_walk,
                        "start_sample": s.start_sample,
                        "end_sample": s.end_sample(),
                        "start_s": s.start_s(),
                        "duration_s": s.trace.duration_s(),
                    })
                })
                .collect();
            emit_json(&json!(rows), output.as_deref())
        }
        Command::Phases { input, output } => {
            let trace = load_walk(input)?;
            let steps = select_middle(
                &segment_steps(&trace, &cfg.segmentation())?,
                cfg.first_step,
                cfg.last_step,
            )?;
            let (ok, rejected) = annotate_steps(&steps, &cfg.phases(), &trace);
            for r in &rejected {
                eprintln!("rejected step {}: {}", r.step_index, r.reason);
            }
            let records: Vec<_> = ok.into_iter().map(|(_, r)| r).collect();
            emit_json(&serde_json::to_value(records)?, output.as_deref())
        }
        Command::Compile {
            traces,
            output,
            report,
        } => {
            let walks = traces
                .iter()
                .map(|p| load_walk(p))
                .collect::<Result<Vec<_>>>()?;
            let compiled = compile_table(&walks, &cfg.speeds, &cfg.compile_settings())?;
            for r in &compiled.rejected {
                eprintln!(
                    "rejected {} at {} km/h step {}: {}",
                    r.participant, r.speed_kmh, r.step_index, r.reason
                );
            }
            let mut out = sink(output.as_deref())?;
            out.write_all(compiled.table.to_json()?.as_bytes())?;
            out.write_all(b"\n")?;
            out.flush()?;
            if let Some(path) = report {
                emit_json(
                    &json!({
                        "device_scale": compiled.table.device_scale,
                        "speeds": compiled.speeds,
                        "rejected": compiled.rejected,
                    }),
                    Some(path),
                )?;
            }
            Ok(())
        }
        Command::Calibrate {
            points,
            direction,
            output,
        } => {
            let pts = load_points(open(points)?)?;
            let curve = fit_calibration_with_min_duty(&pts, *direction, cfg.min_duty)?;
            emit_json(&serde_json::to_value(curve)?, output.as_deref())
        }
        Command::StepResponse { input, output } => {
            let (commanded, measured) = load_step_log(open(input)?)?;
            let metrics = analyze_step_response(&commanded, &measured)?;
            emit_json(&serde_json::to_value(metrics)?, output.as_deref())
        }
        Command::Render(args) => render(&cfg, args, false),
        Command::Vibstep(args) => render(&cfg, args, true),
        Command::Simulate { output, log, duty } => {
            let curves = match cfg.calib {
                Some(_) => load_curves(&cfg)?,
                None => default_curves(),
            };
            let sim = cfg.sim();
            let test = StepTest {
                duty: *duty,
                ..StepTest::default()
            };
            let step = run_step_test(&curves, &sim, &test)?;
            let closed = match (&cfg.table, &cfg.events) {
                (Some(_), Some(_)) => {
                    let events = read_events(events_reader(&cfg)?)?;
                    let run = run_closed_loop(&load_table(&cfg)?, &curves, &events, &sim)?;
                    if let Some(path) = log {
                        let mut out = sink(Some(path))?;
                        run.write_log(&mut out)?;
                        out.flush()?;
                    }
                    Some(run.metrics)
                }
                (None, None) if log.is_none() => None,
                _ => {
                    return Err(Error::Config(
                        "the closed-loop run needs both --table and --events".into(),
                    ))
                }
            };
            emit_json(
                &json!({
                    "tau_s": sim.tau_s,
                    "step_response": step.metrics,
                    "closed_loop": closed,
                }),
                output.as_deref(),
            )
        }
        Command::Normalize {
            input,
            output,
            means,
        } => {
            let normalized = normalize_scores(&read_scores(open(input)?)?)?;
            let mut out = sink(output.as_deref())?;
            write_normalized(&normalized, &mut out)?;
            out.flush()?;
            if let Some(path) = means {
                emit_json(
                    &serde_json::to_value(mean_across_participants(&normalized))?,
                    Some(path),
                )?;
            }
            Ok(())
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => EXIT_USAGE,
        ErrorKind::Format => EXIT_FORMAT,
        ErrorKind::Degenerate => EXIT_DEGENERATE,
        ErrorKind::Io => EXIT_IO,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hapgait: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
