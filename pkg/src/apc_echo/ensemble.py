"""Inhomogeneously broadened ensembles, macroscopic polarization and echo detection."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bloch_core
from .bloch_core import DEFAULT_DT, DEFAULT_STRIDE, AtomParams, ground_state
from .errors import ConfigError, EchoSimError
from .protocol import PulseSequence, predict_timing, validate_sequence

THREADS_ENV = "ECHO_SIM_THREADS"
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True, eq=False)
class DetuningGrid:
    points: np.ndarray  # kHz
    weights: np.ndarray
    fwhm: float
    span: float
    n: int

    def subgrid(self, center: float, halfwidth: float = 1.0) -> np.ndarray:
        """Indices of atoms with |delta - center| <= halfwidth (kHz)."""
        return np.flatnonzero(np.abs(self.points - center) <= halfwidth + 1e-12)


def build_grid(fwhm: float = 60.0, span: float = 100.0, n: int = 201) -> DetuningGrid:
    """Uniform detuning grid on [-span, span] with normalized Gaussian weights."""
    errors = []
    if not fwhm > 0:
        errors.append(("grid.fwhm", f"must be > 0, got {fwhm}"))
    if not span > 0:
        errors.append(("grid.span", f"must be > 0, got {span}"))
    if int(n) != n or n < 1:
        errors.append(("grid.n", f"must be a positive integer, got {n}"))
    if errors:
        raise ConfigError(errors)
    n = int(n)
    if n == 1:
        return DetuningGrid(np.zeros(1), np.ones(1), float(fwhm), float(span), 1)
    pts = span * np.linspace(-1.0, 1.0, n)
    pts = 0.5 * (pts - pts[::-1])  # exact mirror symmetry
    sigma = fwhm * _FWHM_TO_SIGMA
    w = np.exp(-0.5 * (pts / sigma) ** 2)
    return DetuningGrid(pts, w / w.sum(), float(fwhm), float(span), n)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = DEFAULT_DT
    stride: int = DEFAULT_STRIDE
    t_start: float = 0.0
    t_end: float = 80.0


@dataclass(eq=False)
class EnsembleResult:
    grid: DetuningGrid
    times: np.ndarray
    rho11: np.ndarray  # (n, T), real
    rho22: np.ndarray
    rho33: np.ndarray
    rho13: np.ndarray  # (n, T), complex
    polarization: np.ndarray  # (T,), complex
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.polarization) ** 2

    @property
    def sample_step(self) -> float:
        return float(np.median(np.diff(self.times)))

    def index_at(self, t: float) -> int:
        """Index of the sample closest to time ``t``."""
        return int(np.argmin(np.abs(self.times - t)))


@dataclass(frozen=True)
class EchoEvent:
    label: str
    t_peak: float
    amplitude: complex
    intensity: float
    energy: float = 0.0  # integral of |P|^2 over the window, us


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "0") or 0)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def _run_chunk(atom, sequence, grid, idx, integ):
    try:
        times, states = bloch_core.propagate(ground_state(), sequence, grid.points[idx] + atom.delta_opt, atom,
                                             integ.t_start, integ.t_end, integ.dt, integ.stride)
    except EchoSimError as exc:
        raise type(exc)(f"atoms {idx[0]}..{idx[-1]} (detuning {grid.points[idx[0]]:g}.."
                        f"{grid.points[idx[-1]]:g} kHz): {exc}") from exc
    diag = {
        "trace_error": bloch_core.trace_error(states).max(axis=1),
        "hermiticity_error": bloch_core.hermiticity_error(states).max(axis=1),
        "min_eigenvalue": bloch_core.min_eigenvalue(states).min(axis=1),
    }
    reduced = (states[:, :, 0, 0].real, states[:, :, 1, 1].real, states[:, :, 2, 2].real, states[:, :, 0, 2])
    return times, reduced, diag


def run_ensemble(atom: AtomParams, sequence: PulseSequence, grid: DetuningGrid,
                 integrator: IntegratorConfig = IntegratorConfig(), workers: int | None = None) -> EnsembleResult:
    """Evolve every grid atom and form P(t) = sum_j w_j rho13_j(t).

    Atom j has optical detuning ``atom.delta_opt + grid.points[j]``, so
    ``delta_opt`` offsets the line center from the laser.

    Atoms are split into contiguous chunks evaluated on a thread pool; the
    polarization sum runs over grid index in a fixed order, so the result
    is bit-identical for any worker count.
    """
    workers = resolve_workers(workers)
    bloch_core.check_step_size(list(sequence), integrator.t_start, integrator.t_end, integrator.dt)
    chunks = np.array_split(np.arange(grid.n), min(workers, grid.n))
    if workers == 1:
        parts = [_run_chunk(atom, sequence, grid, idx, integrator) for idx in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, atom, sequence, grid, idx, integrator) for idx in chunks]
            parts = [f.result() for f in futures]

    times = parts[0][0]
    rho11, rho22, rho33, rho13 = (np.concatenate([p[1][k] for p in parts]) for k in range(4))
    diagnostics = {key: np.concatenate([p[2][key] for p in parts]) for key in parts[0][2]}

    polarization = np.zeros(times.size, dtype=complex)
    for j in range(grid.n):
        polarization += grid.weights[j] * rho13[j]
    return EnsembleResult(grid, times, rho11, rho22, rho33, rho13, polarization, diagnostics)


def polarization(result: EnsembleResult) -> np.ndarray:
    return result.polarization


def population_trace(result: EnsembleResult) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid-weighted averages of rho11, rho22, rho33."""
    out = []
    for pop in (result.rho11, result.rho22, result.rho33):
        acc = np.zeros(result.times.size)
        for j in range(result.grid.n):
            acc += result.grid.weights[j] * pop[j]
        out.append(acc)
    return tuple(out)


# ---------------------------------------------------------------------------
# echo detection


def _check_windows(windows, t_lo, t_hi):
    errors = []
    spans = []
    for i, win in enumerate(windows):
        try:
            label, lo, hi = win
            lo, hi = float(lo), float(hi)
        except (TypeError, ValueError):
            errors.append((f"windows[{i}]", "expected (label, t_lo, t_hi)"))
            continue
        if not lo < hi:
            errors.append((f"windows[{i}]", f"t_lo={lo:g} must be below t_hi={hi:g}"))
        elif lo < t_lo - 1e-9 or hi > t_hi + 1e-9:
            errors.append((f"windows[{i}]", f"[{lo:g}, {hi:g}] outside simulated span [{t_lo:g}, {t_hi:g}]"))
        spans.append((lo, hi, i))
    spans.sort()
    for (lo1, hi1, i1), (lo2, hi2, i2) in zip(spans, spans[1:]):
        if lo2 < hi1:
            errors.append((f"windows[{i2}]", f"overlaps windows[{i1}]"))
    if errors:
        raise ConfigError(errors)


def detect_echoes(times, P, windows, threshold: float = 0.05) -> list[EchoEvent]:
    """Peak of |P|^2 inside each (label, t_lo, t_hi) window.

    A window yields an event only if its peak exceeds ``threshold`` times
    the global maximum of |P|^2.
    """
    times = np.asarray(times, dtype=float)
    P = np.asarray(P, dtype=complex)
    if times.size == 0:
        return []
    _check_windows(windows, times[0], times[-1])
    intensity = np.abs(P) ** 2
    global_max = intensity.max()
    if global_max <= 0:
        return []
    events = []
    for label, lo, hi in windows:
        idx = np.flatnonzero((times >= lo) & (times <= hi))
        if idx.size == 0:
            continue
        k = idx[np.argmax(intensity[idx])]
        if intensity[k] > threshold * global_max:
            energy = float(np.trapezoid(intensity[idx], times[idx])) if idx.size > 1 else 0.0
            events.append(EchoEvent(str(label), float(times[k]), complex(P[k]), float(intensity[k]), energy))
    return events


def default_windows(sequence: PulseSequence, halfwidth: float = 3.0,
                    span: tuple[float, float] | None = None) -> list[tuple[str, float, float]]:
    """Windows of +-halfwidth around the predicted echo times.

    Labels are ``E1``/``E2`` for a single data pulse and ``E1_k``/``E2_k``
    (k counted from 1 in data-pulse order) for a pulse train. Windows are
    narrowed so they never overlap, and clipped to ``span``.
    """
    preds = predict_timing(sequence)
    centers = []
    many = len(preds) > 1
    for k, pred in enumerate(preds, start=1):
        suffix = f"_{k}" if many else ""
        centers.append((f"E1{suffix}", pred.t_e1))
        if pred.t_e2 is not None and not pred.no_echo:
            centers.append((f"E2{suffix}", pred.t_e2))
    centers.sort(key=lambda c: c[1])
    gaps = [b[1] - a[1] for a, b in zip(centers, centers[1:])]
    hw = min([halfwidth] + [0.5 * g * 0.999 for g in gaps])
    out = []
    for label, t in centers:
        lo, hi = t - hw, t + hw
        if span is not None:
            lo, hi = max(lo, span[0]), min(hi, span[1])
        if lo < hi:
            out.append((label, lo, hi))
    return sorted(out, key=lambda w: w[1])


# ---------------------------------------------------------------------------
# delay scan


@dataclass(frozen=True)
class ScanRow:
    t_r1: float
    e1: float  # peak |P| in the E1 window, nan when absent
    e2: float
    e1_energy: float = math.nan
    e2_energy: float = math.nan
    error: str | None = None


def shift_rephasing(sequence: PulseSequence, t_r1: float, hold: str = "block") -> PulseSequence:
    """Move R1 so its center sits at ``t_r1``.

    ``hold="block"`` moves R2, C1 and C2 by the same amount, keeping the
    rephasing block rigid (equivalently: the data pulse moves relative to
    a fixed block). ``hold="absolute"`` leaves R2, C1, C2 where they are.
    """
    if hold not in ("block", "absolute"):
        raise ConfigError([("hold", f"must be 'block' or 'absolute', got {hold!r}")])
    shift = t_r1 - sequence.one("R1").t_center
    moving = {"R1"} if hold == "absolute" else {"R1", "R2", "C1", "C2"}
    pulses = tuple(p.shifted(shift) if p.label in moving else p for p in sequence.pulses)
    return PulseSequence(pulses, sequence.protocol_tag)


def scan_rephase_delay(atom: AtomParams, base: PulseSequence, grid: DetuningGrid, r1_times,
                       integrator: IntegratorConfig = IntegratorConfig(), hold: str = "block",
                       halfwidth: float = 3.0, threshold: float = 0.05,
                       workers: int | None = None) -> list[ScanRow]:
    """One ensemble run per R1 center time; reports E1 and E2 peak |P|.

    The simulated span is extended when needed to cover the last predicted
    echo plus ``halfwidth``. A row whose shifted sequence is invalid carries the error and the scan
    continues.
    """
    rows = []
    for t_r1 in r1_times:
        t_r1 = float(t_r1)
        try:
            seq = shift_rephasing(base, t_r1, hold)
            errors = [f for f in validate_sequence(seq) if f.severity == "error"]
            if errors:
                raise ConfigError([(f.code, f.message) for f in errors])
            latest = max(t for pred in predict_timing(seq) for t in (pred.t_e1, pred.t_e2) if t is not None)
            t_end = max(integrator.t_end, seq.t_last, latest + halfwidth)
            integ = IntegratorConfig(integrator.dt, integrator.stride, integrator.t_start, t_end)
            result = run_ensemble(atom, seq, grid, integ, workers)
            windows = default_windows(seq, halfwidth, (result.times[0], result.times[-1]))
            events = {e.label: e for e in detect_echoes(result.times, result.polarization, windows, threshold)}
        except EchoSimError as exc:
            rows.append(ScanRow(t_r1, math.nan, math.nan, error=str(exc)))
            continue

        def amp(label):
            e = events.get(label)
            return (abs(e.amplitude), e.energy) if e else (math.nan, math.nan)

        (e1, e1_en), (e2, e2_en) = amp("E1"), amp("E2")
        rows.append(ScanRow(t_r1, e1, e2, e1_en, e2_en))
    return rows
