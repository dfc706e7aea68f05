//! Newline-delimited JSON event intake for the renderer.
//!
//! Events are parsed on an intake thread and handed to the ticking context
//! over a channel. Two pacing modes are offered: `Watermark` ticks only once
//! no earlier event can still arrive, so its output equals an offline render
//! of the same log; `Realtime` ticks on the wall clock and applies whatever
//! has arrived by then.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::renderer::{tick_at_or_after, GaitEvent, Renderer, TickOutput, TICK_S};

/// Parse one NDJSON line; `line` is 1-based and used in diagnostics.
pub fn parse_event_line(text: &str, line: u64) -> Result<GaitEvent> {
    let event: GaitEvent = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })?;
    event.validate().map_err(|e| Error::Parse {
        line,
        msg: e.to_string(),
    })?;
    Ok(event)
}

/// Incremental parser enforcing per-stream time order. Blank lines are skipped.
#[derive(Debug, Default)]
pub struct EventParser {
    line: u64,
    last_t: Option<f64>,
}

impl EventParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, text: &str) -> Result<Option<GaitEvent>> {
        self.line += 1;
        let text = text.trim();
        if text.is_empty() {
            return Ok(None);
        }
        let event = parse_event_line(text, self.line)?;
        if let Some(prev) = self.last_t {
            if event.t < prev {
                return Err(Error::Parse {
                    line: self.line,
                    msg: format!(
                        "event at t = {} precedes the previous event at t = {prev}",
                        event.t
                    ),
                });
            }
        }
        self.last_t = Some(event.t);
        Ok(Some(event))
    }
}

pub fn read_events<R: BufRead>(source: R) -> Result<Vec<GaitEvent>> {
    let mut parser = EventParser::new();
    let mut out = Vec::new();
    for line in source.lines() {
        if let Some(e) = parser.feed(&line?)? {
            out.push(e);
        }
    }
    Ok(out)
}

pub fn write_events<W: Write>(events: &[GaitEvent], mut out: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Message from the intake thread.
#[derive(Debug)]
pub enum Intake {
    Event(GaitEvent),
    Failed(Error),
}

/// Parse `source` on a background thread. The channel closes at end of input
/// or after the first error.
pub fn spawn_intake<R: BufRead + Send + 'static>(source: R) -> (Receiver<Intake>, JoinHandle<()>) {
    let (tx, rx) = mpsc::channel();
    let handle = thread::spawn(move || {
        let mut parser = EventParser::new();
        for line in source.lines() {
            let msg = match line.map_err(Error::from).and_then(|l| parser.feed(&l)) {
                Ok(Some(e)) => Intake::Event(e),
                Ok(None) => continue,
                Err(e) => Intake::Failed(e),
            };
            let failed = matches!(msg, Intake::Failed(_));
            if tx.send(msg).is_err() || failed {
                return;
            }
        }
    });
    (rx, handle)
}

/// Accept a single connection on `127.0.0.1:port` and return its reader.
pub fn accept_tcp(port: u16) -> Result<BufReader<TcpStream>> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let (stream, _) = listener.accept()?;
    Ok(BufReader::new(stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    Watermark,
    Realtime,
}

fn accept(renderer: &mut Renderer, msg: Intake) -> Result<f64> {
    match msg {
        Intake::Event(e) => {
            renderer.on_event(e)?;
            Ok(e.t)
        }
        Intake::Failed(e) => Err(e),
    }
}

/// Drive `renderer` from an intake channel, passing every tick to `sink`.
/// Returns once the channel is closed and playback has finished, after at
/// least `min_ticks` ticks.
pub fn run_live<F: FnMut(TickOutput)>(
    renderer: &mut Renderer,
    intake: Receiver<Intake>,
    pacing: Pacing,
    min_ticks: u64,
    mut sink: F,
) -> Result<()> {
    let mut open = true;
    let started = Instant::now();
    let mut watermark = f64::NEG_INFINITY;
    loop {
        let k = renderer.next_tick_index();
        match pacing {
            Pacing::Watermark => {
                // Events are time-ordered, so once one lands past this tick
                // nothing else can be due on it.
                while open && !(watermark.is_finite() && tick_at_or_after(watermark) > k) {
                    match intake.recv() {
                        Ok(msg) => watermark = accept(renderer, msg)?,
                        Err(_) => open = false,
                    }
                }
            }
            Pacing::Realtime => {
                let due = started + Duration::from_secs_f64(k as f64 * TICK_S);
                loop {
                    let wait = due.saturating_duration_since(Instant::now());
                    if !open {
                        thread::sleep(wait);
                        break;
                    }
                    if wait.is_zero() {
                        match intake.try_recv() {
                            Ok(msg) => {
                                accept(renderer, msg)?;
                                continue;
                            }
                            Err(TryRecvError::Empty) => break,
                            Err(TryRecvError::Disconnected) => open = false,
                        }
                    } else {
                        match intake.recv_timeout(wait) {
                            Ok(msg) => {
                                accept(renderer, msg)?;
                            }
                            Err(RecvTimeoutError::Timeout) => break,
                            Err(RecvTimeoutError::Disconnected) => open = false,
                        }
                    }
                }
            }
        }
        if !open && renderer.is_idle() && k >= min_ticks {
            return Ok(());
        }
        sink(renderer.advance());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{CalibrationCurve, CalibrationPair, Direction};
    use crate::profile::{SpeedProfileTable, Triangle, TriangularProfile};
    use crate::renderer::{render_offline, Foot};
    use std::io::Cursor;

    fn renderer() -> Renderer {
        let knot = |speed: f64, s: f64| TriangularProfile {
            speed_kmh: speed,
            duration_s: 0.6 * s,
            brake: Triangle {
                t_onset: 0.0,
                t_peak: 0.05 * s,
                t_offset: 0.2 * s,
                f_peak: -1.0,
            },
            drive: Triangle {
                t_onset: 0.2 * s,
                t_peak: 0.4 * s,
                t_offset: 0.55 * s,
                f_peak: 0.8,
            },
        };
        let table = SpeedProfileTable {
            device_scale: 1.0,
            entries: vec![knot(1.0, 1.2), knot(4.0, 0.8)],
        };
        let curve = CalibrationCurve::new(Direction::Forward, 3.0, 0.1, 0.3).unwrap();
        Renderer::new(table, CalibrationPair::symmetric(curve)).unwrap()
    }

    #[test]
    fn parses_documented_line() {
        let e = parse_event_line(
            r#"{"t":1.25,"foot":"R","kind":"grounded","speed_kmh":2.5}"#,
            1,
        )
        .unwrap();
        assert_eq!(e, GaitEvent::grounded(1.25, Foot::Right, 2.5));
    }

    #[test]
    fn bad_lines_report_their_number() {
        let text = "{\"t\":0,\"foot\":\"L\",\"kind\":\"grounded\",\"speed_kmh\":1}\n\n{\"t\":1,\"foot\":\"X\"}\n";
        match read_events(Cursor::new(text)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "{\"t\":2,\"foot\":\"L\",\"kind\":\"grounded\",\"speed_kmh\":1}\n{\"t\":1,\"foot\":\"L\",\"kind\":\"grounded\",\"speed_kmh\":1}\n";
        assert!(matches!(
            read_events(Cursor::new(text)),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(
            parse_event_line(r#"{"t":0,"foot":"L","kind":"lifted","speed_kmh":1}"#, 1).is_err()
        );
        assert!(
            parse_event_line(r#"{"t":-1,"foot":"L","kind":"grounded","speed_kmh":1}"#, 1).is_err()
        );
    }

    #[test]
    fn events_round_trip() {
        let events = vec![
            GaitEvent::grounded(0.0, Foot::Left, 1.0),
            GaitEvent::grounded(0.4375, Foot::Right, 3.1),
        ];
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        assert_eq!(read_events(Cursor::new(buf)).unwrap(), events);
    }

    #[test]
    fn watermark_pacing_matches_offline() {
        let events: Vec<GaitEvent> = (0..12)
            .map(|i| {
                GaitEvent::grounded(0.0123 + 0.41 * i as f64, Foot::Left, 1.0 + 0.25 * i as f64)
            })
            .collect();
        let offline = render_offline(&mut renderer(), &events, 0).unwrap();
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        let (rx, handle) = spawn_intake(Cursor::new(buf));
        let mut live = Vec::new();
        run_live(&mut renderer(), rx, Pacing::Watermark, 0, |t| live.push(t)).unwrap();
        handle.join().unwrap();
        assert_eq!(live, offline);
    }

    #[test]
    fn intake_error_stops_the_run() {
        let (rx, handle) = spawn_intake(Cursor::new("not json\n"));
        let err = run_live(&mut renderer(), rx, Pacing::Watermark, 0, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        handle.join().unwrap();
    }

    #[test]
    fn empty_stream_honours_min_ticks() {
        let (rx, _) = spawn_intake(Cursor::new(""));
        let mut n = 0;
        run_live(&mut renderer(), rx, Pacing::Watermark, 25, |_| n += 1).unwrap();
        assert_eq!(n, 25);
    }

    #[test]
    fn realtime_pacing_plays_events() {
        let text = "{\"t\":0.0,\"foot\":\"L\",\"kind\":\"grounded\",\"speed_kmh\":4.0}\n";
        let (rx, _) = spawn_intake(Cursor::new(text));
        let mut out = Vec::new();
        run_live(&mut renderer(), rx, Pacing::Realtime, 0, |t| out.push(t)).unwrap();
        assert!(out.iter().any(|o| o.command.signed_duty < 0.0));
        assert!(out.iter().any(|o| o.command.signed_duty > 0.0));
    }
}
