use hapgait_core::calibration::{CalibrationCurve, CalibrationPair, Direction};
use hapgait_core::live::{read_events, write_events};
use hapgait_core::profile::{
    compute_impulses, fit_device_scale, interpolate, treadmill_correct, FrictionProfile, Triangle,
    TriangularProfile, KNOT_SPEEDS_KMH,
};
use hapgait_core::renderer::{render_offline, Foot, GaitEvent, Renderer};
use hapgait_core::scores::{normalize_scores, ScoreRecord, STIMULI};
use hapgait_core::segment::PhaseTimings;
use hapgait_core::trace::{load_trace, write_trace, ForceTrace, Sample, TraceMeta};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -1e6..1e6f64
}

fn triangle_profile(speed: f64, scale: f64, stretch: f64) -> TriangularProfile {
    TriangularProfile {
        speed_kmh: speed,
        duration_s: 0.8 * stretch,
        brake: Triangle {
            t_onset: 0.0,
            t_peak: 0.1 * stretch,
            t_offset: 0.3 * stretch,
            f_peak: -1.5 * scale,
        },
        drive: Triangle {
            t_onset: 0.3 * stretch,
            t_peak: 0.55 * stretch,
            t_offset: 0.75 * stretch,
            f_peak: 1.2 * scale,
        },
    }
}

fn table_strategy() -> impl Strategy<Value = Vec<TriangularProfile>> {
    prop::collection::vec((0.2..3.0f64, 0.5..1.5f64), 3).prop_map(|v| {
        KNOT_SPEEDS_KMH
            .iter()
            .zip(v)
            .map(|(&s, (scale, stretch))| triangle_profile(s, scale, stretch))
            .collect()
    })
}

fn params(p: &TriangularProfile) -> [f64; 9] {
    let (b, d) = (&p.brake, &p.drive);
    [
        p.duration_s,
        b.t_onset,
        b.t_peak,
        b.t_offset,
        b.f_peak,
        d.t_onset,
        d.t_peak,
        d.t_offset,
        d.f_peak,
    ]
}

proptest! {
    #[test]
    fn trace_csv_round_trip_is_bit_exact(
        rows in prop::collection::vec((finite(), finite()), 1..200),
        rate in prop::sample::select(vec![100.0, 500.0, 1000.0, 2000.0]),
    ) {
        let samples: Vec<Sample> = rows.iter().map(|&(t, h)| Sample::new(t, h)).collect();
        let meta = TraceMeta { walking_speed_kmh: 2.5, participant_id: "p01".into() };
        let trace = ForceTrace::new(rate, samples, meta).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = load_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(back.sample_rate_hz(), rate);
        for (a, b) in back.samples().iter().zip(trace.samples()) {
            prop_assert_eq!(a.thenar_y.to_bits(), b.thenar_y.to_bits());
            prop_assert_eq!(a.heel_y.to_bits(), b.heel_y.to_bits());
        }
    }

    #[test]
    fn treadmill_correction_balances_and_keeps_signs(
        values in prop::collection::vec(-5.0..5.0f64, 2..400),
    ) {
        let end = (values.len() - 1) as f64 / 1000.0;
        let phases = PhaseTimings {
            t_start: 0.0,
            t_step1_peak: 0.0,
            t_step2_present: false,
            t_step3_peak: end,
            t_step4_start: end,
            t_end: end,
        };
        let p = FrictionProfile::new(1000.0, values.clone(), phases, 1.0).unwrap();
        let m = compute_impulses(&p);
        prop_assume!(m.backward > 1e-6 && m.forward > 1e-6);
        let c = treadmill_correct(&p).unwrap();
        let after = compute_impulses(&c.profile);
        prop_assert!((after.backward - after.forward).abs() <= 1e-9 * m.total());
        prop_assert!((after.total() - m.total()).abs() <= 1e-9 * m.total());
        for (a, b) in values.iter().zip(c.profile.values()) {
            prop_assert_eq!(a.signum() == b.signum() || *a == 0.0, true);
        }
    }

    #[test]
    fn interpolation_stays_between_bracketing_knots(
        raw in table_strategy(),
        speed in 0.0..5.0f64,
    ) {
        let table = fit_device_scale(&raw, 3.0).unwrap();
        let p = interpolate(&table, speed).unwrap();
        let e = &table.entries;
        let (a, b) = if speed < 2.5 { (&e[0], &e[1]) } else { (&e[1], &e[2]) };
        for ((x, lo), hi) in params(&p).iter().zip(params(a)).zip(params(b)) {
            prop_assert!(*x >= lo.min(hi) - 1e-12 && *x <= lo.max(hi) + 1e-12);
        }
        prop_assert!(p.validate().is_ok());
    }

    #[test]
    fn interpolation_is_continuous(raw in table_strategy(), speed in 0.5..4.5f64) {
        let table = fit_device_scale(&raw, 3.0).unwrap();
        let a = params(&interpolate(&table, speed).unwrap());
        let b = params(&interpolate(&table, speed + 1e-9).unwrap());
        for (x, y) in a.iter().zip(b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn device_scale_is_shared_and_fits(raw in table_strategy(), max_force in 0.5..5.0f64) {
        let table = fit_device_scale(&raw, max_force).unwrap();
        let peak = raw.iter().map(TriangularProfile::peak_magnitude).fold(0.0, f64::max);
        prop_assert!((table.device_scale - (max_force / peak).min(1.0)).abs() < 1e-15);
        for (scaled, orig) in table.entries.iter().zip(&raw) {
            prop_assert!(scaled.peak_magnitude() <= max_force * (1.0 + 1e-12));
            let ratio = scaled.impulses().backward / orig.impulses().backward;
            prop_assert!((ratio - table.device_scale).abs() < 1e-12);
        }
    }

    #[test]
    fn duty_inverts_force_inside_the_usable_range(
        slope in 1.0..8.0f64,
        intercept in 0.0..0.5f64,
        min_duty in 0.0..0.5f64,
        duty in 0.0..1.0f64,
    ) {
        let c = CalibrationCurve::new(Direction::Forward, slope, intercept, min_duty).unwrap();
        let d = duty.max(min_duty);
        prop_assert!((c.force_to_duty(c.duty_to_force(d)) - d).abs() < 1e-12);
        prop_assert!(c.force_to_duty(1e9) == 1.0);
    }

    #[test]
    fn normalization_preserves_order_and_ignores_affine_rescaling(
        scores in prop::collection::vec(0.0..50.0f64, 9),
        gain in 0.5..1.6f64,
        offset in 0.0..20.0f64,
    ) {
        let grid = |f: &dyn Fn(f64) -> f64| -> Vec<ScoreRecord> {
            let mut out = Vec::new();
            for (i, stimulus) in STIMULI.iter().enumerate() {
                for (j, speed) in KNOT_SPEEDS_KMH.iter().enumerate() {
                    out.push(ScoreRecord {
                        participant: "p".into(),
                        item: "q".into(),
                        stimulus: *stimulus,
                        speed_kmh: *speed,
                        score: f(scores[i * 3 + j]),
                    });
                }
            }
            out
        };
        let base = normalize_scores(&grid(&|s| s)).unwrap();
        let moved = normalize_scores(&grid(&|s| gain * s + offset)).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a.normalized - b.normalized).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.normalized));
        }
        for a in &base {
            for b in &base {
                if a.score < b.score {
                    prop_assert!(a.normalized < b.normalized);
                }
            }
        }
    }

    #[test]
    fn rendered_duty_is_bounded_and_ends_idle(
        raw in table_strategy(),
        gaps in prop::collection::vec((0.2..1.5f64, 0.0..5.0f64), 1..12),
    ) {
        let table = fit_device_scale(&raw, 3.0).unwrap();
        let curve = |d| CalibrationCurve::new(d, 4.0, 0.2, 95.0 / 255.0).unwrap();
        let curves = CalibrationPair::new(curve(Direction::Forward), curve(Direction::Backward)).unwrap();
        let mut t = 0.0;
        let events: Vec<GaitEvent> = gaps
            .iter()
            .map(|&(gap, speed)| {
                t += gap;
                GaitEvent::grounded(t, Foot::Left, speed)
            })
            .collect();
        let mut r = Renderer::new(table, curves).unwrap();
        let ticks = render_offline(&mut r, &events, 0).unwrap();
        for tick in &ticks {
            let d = tick.command.signed_duty;
            prop_assert!(d.abs() <= 1.0);
            prop_assert!(d == 0.0 || d.abs() >= 95.0 / 255.0);
            prop_assert!(tick.vibstep.heel_duty * tick.vibstep.thenar_duty == 0.0);
        }
        prop_assert!(r.is_idle());
    }

    #[test]
    fn event_log_round_trips(times in prop::collection::vec(0.0..100.0f64, 0..50)) {
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let events: Vec<GaitEvent> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| GaitEvent::grounded(t, if i % 2 == 0 { Foot::Left } else { Foot::Right }, 2.5))
            .collect();
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        prop_assert_eq!(read_events(buf.as_slice()).unwrap(), events);
    }
}
