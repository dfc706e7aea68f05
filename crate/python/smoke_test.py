"""Smoke test for the hapgait Python bindings.

Build and install the extension first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import math

import hapgait


def check(cond, message):
    if not cond:
        raise SystemExit(f"FAIL: {message}")
    print(f"ok: {message}")


def main():
    # Trace I/O and segmentation.
    walk = hapgait.Trace.synthetic(2.5, seed=7)
    again = hapgait.Trace.from_csv(walk.to_csv())
    check(again.thenar_y == walk.thenar_y and again.heel_y == walk.heel_y, "trace CSV round trip is exact")
    steps = walk.segment()
    check(len(steps) == 30, f"synthetic walk has 30 steps (got {len(steps)})")
    middle = hapgait.select_middle(steps)
    check([s.index for s in middle] == list(range(4, 14)), "middle steps 4..13 selected")
    phases = middle[0].phases()
    check(phases["t_step1_peak"] < phases["t_step3_peak"] <= phases["t_end"], "phase times ordered")

    # Table compilation and interpolation.
    table = hapgait.compile_table(hapgait.study_walks(2, seed=11))
    check(table.speeds == hapgait.KNOT_SPEEDS_KMH, "table has the three knot speeds")
    for entry in table.entries():
        brake, drive = entry["impulses"]
        check(math.isclose(brake, drive, rel_tol=1e-9), f"balanced impulses at {entry['speed_kmh']} km/h")
    lo, hi = table.entries()[0], table.entries()[1]
    mid = table.interpolate(1.75)
    check(
        math.isclose(mid["duration_s"], 0.5 * (lo["duration_s"] + hi["duration_s"]), abs_tol=1e-12),
        "1.75 km/h is the knot midpoint",
    )
    check(table.interpolate(5.0)["duration_s"] == table.entries()[2]["duration_s"], "5 km/h clamps")
    check(hapgait.ProfileTable.from_json(table.to_json()).to_json() == table.to_json(), "table JSON round trip")

    # Calibration.
    points = [(d, 4.0 * d + 0.2) for d in (0.37, 0.69, 1.0)]
    curve = hapgait.CalibrationCurve.fit(points, "forward")
    check(abs(curve.slope - 4.0) < 1e-9 and curve.r_squared > 0.999, "calibration fit recovers slope 4")
    check(curve.force_to_duty(0.0) == 0.0, "zero force is off")

    # Rendering.
    events = [(0.1, "L", 2.5), (1.0, "R", 4.0), (1.6, "L", 1.0)]
    rows = hapgait.render(table, events, min_duration_s=3.0)
    check(rows == hapgait.render(table, events, min_duration_s=3.0), "rendering is deterministic")
    check(all(abs(d) <= 1.0 for _, d, _, _ in rows), "duty within [-1, 1]")
    check(all(h * t == 0.0 for _, _, h, t in rows), "one vibrator at a time")
    single = hapgait.render(table, [(0.0, "L", 2.5)])
    r = hapgait.Renderer(table)
    r.on_event(0.0, "L", 2.5)
    stepped = [r.tick() for _ in range(len(single))]
    check(stepped == single and r.is_idle, "incremental ticks match offline rendering")

    # Plant simulation.
    step = hapgait.step_test()
    check(abs(step["rise_10_90_s"] - 0.110) <= 0.005, f"10-90% rise {step['rise_10_90_s']:.4f} s")
    run = hapgait.closed_loop(table, [(0.1, "L", 2.5)])
    check(run["preempted_steps"] == 0 and len(run["steps"]) == 1, "closed loop runs one step")

    # Score normalization.
    rows = [("p1", "realism", s, v, 40.0) for s in ("none", "vibration", "friction") for v in (1.0, 2.5, 4.0)]
    rows[0] = ("p1", "realism", "none", 1.0, 20.0)
    rows[4] = ("p1", "realism", "vibration", 2.5, 80.0)
    rows[8] = ("p1", "realism", "friction", 4.0, 50.0)
    out = {(s, v): n for _, _, s, v, _, n in hapgait.normalize_scores(rows)}
    check(math.isclose(out[("friction", 4.0)], 0.5), "20/80/50 normalizes to 0.5")

    try:
        hapgait.Trace.from_csv("not,a,trace\n")
    except hapgait.HapgaitError as e:
        check(True, f"bad input raises HapgaitError ({e})")
    else:
        raise SystemExit("FAIL: bad input was accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
