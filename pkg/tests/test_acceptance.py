"""Acceptance gate. Each test prints one PASS/FAIL line; run directly or via pytest.

    python tests/test_acceptance.py
"""

import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from apc_echo.bloch_core import AtomParams, Channel, Pulse, evolve, ground_state, hermiticity_error  # noqa: E402
from apc_echo.cli import main  # noqa: E402
from apc_echo.config import parse_config, parse_document  # noqa: E402
from apc_echo.ensemble import (  # noqa: E402
    IntegratorConfig,
    build_grid,
    default_windows,
    detect_echoes,
    population_trace,
    run_ensemble,
    scan_rephase_delay,
)
from apc_echo.errors import ConfigError  # noqa: E402
from apc_echo.protocol import (  # noqa: E402
    make_two_pulse_sequence,
    phase_match_e1,
    phase_match_e2,
    predict_e2_time,
    predict_timing,
    wave_vector,
)
from oracles import gaussian_weights, hard_pulse_ensemble, pulse_tuples  # noqa: E402

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # pragma: no cover
    ACCEPTANCE_LINES = []


def report(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def preset(name, **overrides):
    return parse_document({"version": 1, "preset": name, **overrides})


def run_job(job, workers=None):
    return run_ensemble(job.atom, job.sequence(), job.grid.build(), job.integrator, workers)


def events_of(job, result):
    windows = default_windows(job.sequence(), job.halfwidth, (result.times[0], result.times[-1]))
    return {e.label: e for e in detect_echoes(result.times, result.polarization, windows, job.threshold)}


@pytest.fixture(scope="module")
def fig2():
    job = preset("fig2")
    started = time.perf_counter()
    result = run_job(job)
    return job, result, time.perf_counter() - started


def test_physical_sanity(fig2):
    job, result, wall = fig2
    d = result.diagnostics
    trace, herm, eig = d["trace_error"].max(), d["hermiticity_error"].max(), d["min_eigenvalue"].min()
    ok = trace < 1e-9 and herm < 1e-10 and eig > -1e-6 and wall < 60 and result.grid.n == 201
    report("physical-sanity", ok, f"{result.grid.n} atoms, max|Tr-1|={trace:.2e}, herm={herm:.2e}, "
           f"min eig={eig:.2e}, runtime {wall:.2f} s")


def test_rabi_and_decay():
    worst = 0.0
    for area, dur in [(math.pi / 10, 1.0), (math.pi / 2, 0.1), (math.pi, 0.1), (2 * math.pi, 0.1)]:
        traj = evolve(ground_state(), [Pulse(Channel.A, 1.0, dur, area)], AtomParams(), 0.0, 3.0)
        worst = max(worst, abs(traj.states[-1, 2, 2].real - math.sin(area / 2) ** 2))
    atom = AtomParams(Gamma31=1.0, Gamma32=1.0, gamma31=1.0, gamma32=1.0)
    p = Pulse(Channel.A, 0.0, 0.1, math.pi)
    traj = evolve(ground_state(), [p], atom, 0.0, 80.0)
    after = traj.times >= p.t_end
    t, p33 = traj.times[after], traj.states[after, 2, 2].real
    decay_err = np.abs(p33 - p33[0] * np.exp(-(1e3 + 1e3) * (t - t[0]) * 1e-6)).max()
    report("rabi-decay", worst < 1e-6 and decay_err < 1e-6,
           f"max |rho33 - sin^2(theta/2)|={worst:.1e}, max decay error={decay_err:.1e}")


def test_e1_timing():
    grid = build_grid()
    parts, ok = [], True
    for t_d, t_r1 in [(5.5, 20.0), (3.0, 15.0), (10.0, 22.5)]:
        seq = make_two_pulse_sequence(t_d, t_r1, anchor="center")
        expected = 2 * t_r1 - t_d
        res = run_ensemble(AtomParams(), seq, grid, IntegratorConfig(t_end=expected + 10))
        (ev,) = detect_echoes(res.times, res.polarization, [("E1", expected - 3, expected + 3)])
        err = abs(ev.t_peak - expected)
        ok &= err <= res.sample_step + 1e-9
        parts.append(f"({t_d:g},{t_r1:g})->{ev.t_peak:g} vs {expected:g}")
    report("e1-timing", ok, "; ".join(parts) + " (tolerance one 0.1 us sample)")


def test_e2_timing(fig2):
    job, result, _ = fig2
    e2 = events_of(job, result)["E2"]
    (pred,) = predict_timing(job.sequence())
    formula = predict_e2_time(pred.t_c2, pred.t_r2, pred.t_e1, pred.delta_t)
    ok = abs(e2.t_peak - 70.0) <= 0.5 and formula == 70.0
    report("e2-timing", ok, f"simulated E2 at {e2.t_peak:g} us; predict_e2_time(T_C2={pred.t_c2:g}, "
           f"T_R2={pred.t_r2:g}, T_E1={pred.t_e1:g}, dT={pred.delta_t:g}) = {formula:g} us")


def test_no_inversion(fig2):
    job, result, _ = fig2
    seq = job.sequence()
    rho33 = population_trace(result)[2]
    t = result.times
    after_d = rho33[np.argmin(abs(t - seq.one("D").t_end))]
    late = rho33[t > seq.one("R2").t_end].max()
    between = rho33[(t > seq.one("R1").t_end) & (t < seq.one("R2").t_start)].min()
    ok = late <= 1.05 * after_d and between > 0.9
    report("no-inversion", ok, f"rho33 after D={after_d:.5f}, max after R2={late:.5f} "
           f"({late / after_d:.3f}x), min between R1 and R2={between:.4f}")


def test_control_phase_algebra(fig2):
    job, result, _ = fig2
    seq = job.sequence()
    before = np.flatnonzero(np.isclose(result.times, seq.one("C1").t_start, atol=1e-9))[0]
    after = np.flatnonzero(np.isclose(result.times, seq.one("C2").t_end, atol=1e-9))[0]
    sel = np.abs(result.grid.points) <= 60.0
    ratio = result.rho13[sel, after] / -result.rho13[sel, before]
    mag, ang = np.abs(np.abs(ratio) - 1).max(), np.abs(np.angle(ratio)).max()
    report("control-phase", mag < 0.01 and ang < 0.05,
           f"{sel.sum()} atoms with |delta|<=60 kHz: max |ratio|-1={mag:.2e}, max phase={ang:.3f} rad")


def test_train_ordering():
    job = preset("fig3-train")
    result = run_job(job)
    ev = events_of(job, result)
    step = result.sample_step + 1e-9
    preds = predict_timing(job.sequence())
    e1 = [ev[f"E1_{k}"].t_peak for k in (1, 2, 3)]
    e2 = [ev[f"E2_{k}"].t_peak for k in (1, 2, 3)]
    td = [p.t_d for p in preds]
    ok = all(abs(a - p.t_e1) <= step and abs(b - p.t_e2) <= step for a, b, p in zip(e1, e2, preds))
    ok &= e1[0] > e1[1] > e1[2] and e2[0] < e2[1] < e2[2]
    ok &= np.allclose(-np.diff(e1), np.diff(td), atol=step) and np.allclose(np.diff(e2), np.diff(td), atol=step)
    report("train-ordering", ok, f"D at {td}; E1 peaks {e1} (reversed); E2 peaks {e2} (original order)")


def test_flat_e2_scan():
    job = preset("fig3-blue")
    r1_times = [15.0, 17.5, 20.0, 22.5, 25.0, 27.5, 30.0]
    rows = scan_rephase_delay(job.atom, job.sequence(), job.grid.build(), r1_times, job.integrator,
                              hold="block", halfwidth=job.halfwidth, threshold=job.threshold)
    gamma = job.atom.gamma31 * 1e-3  # per us
    t_d = job.sequence().one("D").t_center
    e1 = np.array([r.e1 for r in rows])
    e2 = np.array([r.e2 for r in rows])
    tau = np.array(r1_times) - t_d
    law = e1[0] * np.exp(-2 * gamma * (tau - tau[0]))
    e1_err = np.abs(e1 / law - 1).max()
    spread = (e2.max() - e2.min()) / e2.mean()
    ok = all(r.error is None for r in rows) and e1_err <= 0.05 and spread <= 0.02
    report("flat-e2", ok, f"T_R1 {r1_times[0]:g}..{r1_times[-1]:g} us, gamma=2 kHz: |E1| vs exp(-2 gamma tau) "
           f"max rel err={e1_err:.3f}; |E2| spread={spread:.4f}")


def test_oracle_equivalence(fig2):
    job, result, _ = fig2
    g = result.grid
    p_ref, _ = hard_pulse_ensemble(pulse_tuples(job.sequence()), g.points, gaussian_weights(g.points, g.fwhm),
                                   result.times)
    windows = default_windows(job.sequence(), job.halfwidth, (0.0, job.integrator.t_end))
    sim = {e.label: e for e in detect_echoes(result.times, result.polarization, windows)}
    ref = {e.label: e for e in detect_echoes(result.times, p_ref, windows)}
    ok, parts = True, []
    for label in ("E1", "E2"):
        dt = abs(sim[label].t_peak - ref[label].t_peak)
        rel = abs(abs(sim[label].amplitude) / abs(ref[label].amplitude) - 1)
        ok &= dt <= result.sample_step + 1e-9 and rel <= 0.03
        parts.append(f"{label}: dt={dt:.2f} us, amplitude diff={100 * rel:.2f}%")
    report("oracle-equivalence", ok, "; ".join(parts))


def test_phase_matching():
    k = wave_vector((1.0, 0.0, 0.0))
    omega = float(np.linalg.norm(k)) * 299_792_458.0
    e2 = phase_match_e2(k, k, -k, omega, omega, omega)
    e1 = phase_match_e1(k, k, omega)
    ok = np.array_equal(e2.k_out, -k) and e2.backward and e1.mismatch == 0.0
    report("phase-matching", ok, f"k_E2 == -k_D exactly: {np.array_equal(e2.k_out, -k)}, backward={e2.backward}; "
           f"collinear E1 mismatch={e1.mismatch}")


def test_determinism_and_validation(tmp_path):
    doc = {"version": 1, "preset": "fig2", "outputs": [{"kind": "timeseries", "path": "ts.csv"},
                                                       {"kind": "echoes", "path": "echoes.csv"}]}
    cfg = tmp_path / "job.json"
    cfg.write_text(json.dumps(doc))
    texts = {}
    for workers in (1, 4):
        out_dir = tmp_path / f"w{workers}"
        assert main(["simulate", str(cfg), "--workers", str(workers), "--out-dir", str(out_dir)], out=io.StringIO()) == 0
        texts[workers] = [(out_dir / name).read_bytes() for name in ("ts.csv", "echoes.csv")]
    identical = texts[1] == texts[4]

    bad = {
        "unknown key": ('{"version": 1, "preset": "fig2", "grid": {"durration": 1}}', "grid.durration"),
        "negative duration": (json.dumps({"version": 1, "preset": "fig2", "sequence": {"protocol": "custom", "pulses": [
            {"label": "D", "channel": "A", "t_start": 5, "duration": 1, "area": 0.1},
            {"label": "R1", "channel": "A", "t_start": 20, "duration": -1, "area": 1}]}}),
            "sequence.pulses[1].duration"),
        "syntax": ('{"version": 1,', "$"),
        "missing field": ('{"version": 1}', "sequence"),
        "out of range": ('{"version": 1, "preset": "fig2", "grid": {"n": 0}}', "grid.n"),
    }
    rejected = 0
    for text, path in bad.values():
        try:
            parse_config(text)
        except ConfigError as exc:
            rejected += path in [p for p, _ in exc.errors]
    ok = identical and rejected == len(bad)
    report("determinism-io", ok, f"CSV byte-identical for 1 vs 4 workers: {identical}; "
           f"{rejected}/{len(bad)} invalid configs rejected with the expected path")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
