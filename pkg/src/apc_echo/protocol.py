"""Pulse sequences, echo-time prediction and phase-matching algebra.

Sequence builders take pulse times in us. With ``anchor="start"`` (default)
a time is the leading edge of the pulse, with ``anchor="center"`` it is the
pulse center. Timing predictions use pulse centers unless told otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .bloch_core import DEFAULT_CARRIER, SPEED_OF_LIGHT, Channel, Pulse
from .errors import EchoHaltWarning, NonIdealRephasingWarning, SequenceError

PROTOCOL_TAGS = ("two_pulse_echo", "apc_double_rephase", "custom")

DEFAULT_AREAS = {"D": math.pi / 10, "R1": math.pi, "R2": math.pi, "C1": math.pi, "C2": math.pi}
DEFAULT_DURATIONS = {"D": 1.0, "R1": 0.1, "R2": 0.1, "C1": 0.1, "C2": 0.1}

_AREA_TOL = 1e-9
_X = (1.0, 0.0, 0.0)
_MINUS_X = (-1.0, 0.0, 0.0)


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...]
    protocol_tag: str = "custom"

    def __post_init__(self):
        if self.protocol_tag not in PROTOCOL_TAGS:
            raise SequenceError([("protocol_tag", f"unknown protocol {self.protocol_tag!r}")])
        ordered = sorted(self.pulses, key=lambda p: p.t_start)
        object.__setattr__(self, "pulses", tuple(ordered))

    def __iter__(self):
        return iter(self.pulses)

    def __len__(self):
        return len(self.pulses)

    def labelled(self, label: str) -> list[Pulse]:
        return [p for p in self.pulses if p.label == label]

    def one(self, label: str) -> Pulse:
        found = self.labelled(label)
        if len(found) != 1:
            raise SequenceError([(label, f"expected exactly one {label} pulse, found {len(found)}")])
        return found[0]

    @property
    def t_last(self) -> float:
        return max(p.t_end for p in self.pulses)

    def replace(self, old: Pulse, new: Pulse) -> "PulseSequence":
        pulses = [new if p is old else p for p in self.pulses]
        return PulseSequence(tuple(pulses), self.protocol_tag)


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    message: str


@dataclass(frozen=True)
class TimingPrediction:
    """Predicted echo times for one data pulse; inputs echoed back."""

    t_d: float
    t_r1: float
    t_e1: float
    t_r2: float | None = None
    t_c1: float | None = None
    t_c2: float | None = None
    delta_t: float | None = None
    t_e2: float | None = None
    no_echo: bool = False


@dataclass(frozen=True)
class PhaseMatchResult:
    k_out: np.ndarray
    omega_out: float
    mismatch: float
    direction: np.ndarray
    backward: bool = False


# ---------------------------------------------------------------------------
# builders


def _start(t: float, duration: float, anchor: str) -> float:
    if anchor == "start":
        return float(t)
    if anchor == "center":
        return float(t) - 0.5 * duration
    raise SequenceError([("anchor", f"must be 'start' or 'center', got {anchor!r}")])


def _raise_or_warn(seq: PulseSequence, halt_bound: float | None = None) -> PulseSequence:
    findings = validate_sequence(seq, halt_bound=halt_bound)
    errors = [f for f in findings if f.severity == "error"]
    if errors:
        raise SequenceError([(f.code, f.message) for f in errors])
    for f in findings:
        category = EchoHaltWarning if f.code == "rephasing_halt" else NonIdealRephasingWarning
        warnings.warn(f.message, category, stacklevel=3)
    return seq


def make_two_pulse_sequence(t_d: float, t_r1: float, area_d: float = DEFAULT_AREAS["D"],
                            area_r1: float = DEFAULT_AREAS["R1"], dur_d: float = DEFAULT_DURATIONS["D"],
                            dur_r1: float = DEFAULT_DURATIONS["R1"], anchor: str = "start",
                            k_d=_X, k_r1=_X, omega: float = DEFAULT_CARRIER) -> PulseSequence:
    """Conventional two-pulse echo: data pulse D, then rephasing pulse R1, both on channel A."""
    d = Pulse(Channel.A, _start(t_d, dur_d, anchor), dur_d, area_d, "D", k_dir=k_d, omega=omega)
    r1 = Pulse(Channel.A, _start(t_r1, dur_r1, anchor), dur_r1, area_r1, "R1", k_dir=k_r1, omega=omega)
    if d.t_end > r1.t_start + 1e-12:
        raise SequenceError([("order", f"D must end (t={d.t_end:g}) before R1 starts (t={r1.t_start:g})")])
    return _raise_or_warn(PulseSequence((d, r1), "two_pulse_echo"))


def make_apc_sequence(t_d: float | Sequence[float], t_r1: float, t_r2: float, t_c1: float, t_c2: float,
                      areas: Mapping[str, float] | None = None, durations: Mapping[str, float] | None = None,
                      anchor: str = "start", k_dirs: Mapping[str, tuple] | None = None,
                      omegas: Mapping[str, float] | None = None,
                      halt_bound: float | None = None) -> PulseSequence:
    """Atom-phase-controlled double rephasing: D..., R1, R2 on channel A, C1, C2 on channel B.

    ``t_d`` may be a list for a train of data pulses. Default wave vectors put
    everything along +x except C2, which counter-propagates so that the
    second echo is emitted backward.
    """
    areas = {**DEFAULT_AREAS, **(areas or {})}
    durations = {**DEFAULT_DURATIONS, **(durations or {})}
    k = {"D": _X, "R1": _X, "R2": _X, "C1": _X, "C2": _MINUS_X, **(k_dirs or {})}
    om = {name: DEFAULT_CARRIER for name in DEFAULT_AREAS} | dict(omegas or {})
    data_times = [t_d] if np.isscalar(t_d) else list(t_d)
    if not data_times:
        raise SequenceError([("D", "at least one data pulse is required")])

    def make(label, t, channel):
        return Pulse(channel, _start(t, durations[label], anchor), durations[label], areas[label],
                     label, k_dir=k[label], omega=om[label])

    pulses = [make("D", t, Channel.A) for t in data_times]
    pulses += [make("R1", t_r1, Channel.A), make("R2", t_r2, Channel.A),
               make("C1", t_c1, Channel.B), make("C2", t_c2, Channel.B)]
    return _raise_or_warn(PulseSequence(tuple(pulses), "apc_double_rephase"), halt_bound)


# ---------------------------------------------------------------------------
# timing


def predict_e1_time(t_d_center: float, t_r1_center: float) -> float:
    """Two-pulse echo time 2 T_R1 - T_D."""
    if t_r1_center < t_d_center:
        raise SequenceError([("order", f"R1 (t={t_r1_center:g}) precedes D (t={t_d_center:g})")])
    if t_r1_center == t_d_center:
        warnings.warn("R1 coincides with D: degenerate echo at the pulse itself", NonIdealRephasingWarning,
                      stacklevel=2)
    return 2.0 * t_r1_center - t_d_center


def e2_halted(t_r2: float, t_e1: float, delta_t: float, halt_bound: float | None = None) -> bool:
    bound = t_r2 - t_e1 if halt_bound is None else halt_bound
    return delta_t > bound


def predict_e2_time(t_c2: float, t_r2: float, t_e1: float, delta_t: float,
                    halt_bound: float | None = None) -> float:
    """T_E2 = T_C2 + (T_R2 - T_E1) - dT.

    ``delta_t`` is the delay of C1 after R2. When it exceeds ``halt_bound``
    (default T_R2 - T_E1, i.e. C1 arrives after the doubly rephased
    coherence has already refocused) an :class:`EchoHaltWarning` is issued.
    """
    values = (t_c2, t_r2, t_e1, delta_t)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite timing input {values}")
    if e2_halted(t_r2, t_e1, delta_t, halt_bound):
        warnings.warn("rephasing halt - no E2 expected", EchoHaltWarning, stacklevel=2)
    return t_c2 + (t_r2 - t_e1) - delta_t


def _ref(p: Pulse, anchor: str) -> float:
    return p.t_center if anchor == "center" else p.t_start


def predict_timing(seq: PulseSequence, anchor: str = "center",
                   halt_bound: float | None = None) -> list[TimingPrediction]:
    """Echo times for every data pulse of a two-pulse or APC sequence."""
    r1 = _ref(seq.one("R1"), anchor)
    out = []
    apc = seq.protocol_tag == "apc_double_rephase" or seq.labelled("C2")
    for d in seq.labelled("D"):
        td = _ref(d, anchor)
        te1 = 2.0 * r1 - td
        if not apc:
            out.append(TimingPrediction(t_d=td, t_r1=r1, t_e1=te1))
            continue
        r2, c1, c2 = (_ref(seq.one(lbl), anchor) for lbl in ("R2", "C1", "C2"))
        dt = c1 - r2
        halted = e2_halted(r2, te1, dt, halt_bound)
        te2 = c2 + (r2 - te1) - dt
        out.append(TimingPrediction(td, r1, te1, r2, c1, c2, dt, te2, halted))
    return out


# ---------------------------------------------------------------------------
# validation


def _same_channel_overlaps(seq: PulseSequence) -> list[Finding]:
    found = []
    for ch in Channel:
        on = [p for p in seq.pulses if p.channel is ch]
        for p, q in zip(on, on[1:]):
            if q.t_start < p.t_end - 1e-12:
                found.append(Finding("error", "overlap",
                                     f"{p.label} and {q.label} overlap on channel {ch.value} "
                                     f"({p.t_start:g}-{p.t_end:g} vs {q.t_start:g}-{q.t_end:g} us)"))
    return found


def _area_warning(p: Pulse, target: float, what: str) -> list[Finding]:
    if abs(p.area - target) > _AREA_TOL:
        return [Finding("warning", "non_ideal_rephasing",
                        f"{p.label} area {p.area / math.pi:g} pi is not pi: non-ideal {what}")]
    return []


def validate_sequence(seq: PulseSequence, halt_bound: float | None = None,
                      anchor: str = "center") -> list[Finding]:
    """Check ordering and channel rules; returns an empty list for a valid sequence."""
    findings: list[Finding] = []
    if not seq.pulses:
        return [Finding("error", "empty", "sequence has no pulses")]
    findings += _same_channel_overlaps(seq)
    tag = seq.protocol_tag
    if tag == "custom":
        return findings

    required = ("D", "R1") if tag == "two_pulse_echo" else ("D", "R1", "R2", "C1", "C2")
    channel_of = {"D": Channel.A, "R1": Channel.A, "R2": Channel.A, "C1": Channel.B, "C2": Channel.B}
    for label in required:
        count = len(seq.labelled(label))
        if label == "D" and count == 0 or label != "D" and count != 1:
            findings.append(Finding("error", "missing", f"{tag} needs {'one or more' if label == 'D' else 'exactly one'} {label} pulse, found {count}"))
    extra = [p.label for p in seq.pulses if p.label not in required]
    if extra:
        findings.append(Finding("error", "unexpected", f"unexpected pulses for {tag}: {extra}"))
    if any(f.severity == "error" and f.code in ("missing", "unexpected") for f in findings):
        return findings

    for p in seq.pulses:
        if p.channel is not channel_of[p.label]:
            findings.append(Finding("error", "channel", f"{p.label} must be on channel {channel_of[p.label].value}"))
        if p.label == "D" and p.area >= math.pi / 2:
            findings.append(Finding("error", "data_area", f"D area {p.area / math.pi:g} pi must be below pi/2"))

    order = [seq.one(lbl) for lbl in required[1:]]
    last_d = max(seq.labelled("D"), key=lambda p: p.t_start)
    chain = [last_d, *order]
    for prev, nxt in zip(chain, chain[1:]):
        if nxt.t_start <= prev.t_start:
            code = "c1_before_r2" if (prev.label, nxt.label) == ("R2", "C1") else "order"
            findings.append(Finding("error", code, f"{nxt.label} (t={nxt.t_start:g}) must follow {prev.label} (t={prev.t_start:g})"))

    findings += _area_warning(seq.one("R1"), math.pi, "rephasing")
    if tag == "apc_double_rephase":
        findings += _area_warning(seq.one("R2"), math.pi, "rephasing")
        findings += _area_warning(seq.one("C1"), math.pi, "control transfer")
        findings += _area_warning(seq.one("C2"), math.pi, "control transfer")
        if not any(f.severity == "error" for f in findings):
            for pred in predict_timing(seq, anchor=anchor, halt_bound=halt_bound):
                if pred.no_echo:
                    findings.append(Finding("warning", "rephasing_halt",
                                            f"rephasing halt - no E2 expected for D at t={pred.t_d:g} us "
                                            f"(dT={pred.delta_t:g} us)"))
    return findings


# ---------------------------------------------------------------------------
# phase matching (plane waves)


def wave_vector(direction, omega: float = DEFAULT_CARRIER) -> np.ndarray:
    direction = np.asarray(direction, dtype=float)
    return direction / np.linalg.norm(direction) * (omega / SPEED_OF_LIGHT)


def _vec(k, name) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != (3,) or not np.all(np.isfinite(k)):
        raise ValueError(f"{name} must be a finite 3-vector")
    if not np.linalg.norm(k) > 0:
        raise ValueError(f"{name} has zero length")
    return k


def _result(k_out: np.ndarray, omega_out: float, reference: np.ndarray | None = None) -> PhaseMatchResult:
    norm = float(np.linalg.norm(k_out))
    direction = k_out / norm if norm > 0 else np.zeros(3)
    backward = bool(reference is not None and np.dot(direction, reference) < 0)
    return PhaseMatchResult(k_out, omega_out, abs(norm - omega_out / SPEED_OF_LIGHT), direction, backward)


def phase_match_e1(k_d, k_r1, omega_d: float | None = None) -> PhaseMatchResult:
    """Forward echo: k_E1 = 2 k_D - k_R1, emitted at the data frequency."""
    k_d, k_r1 = _vec(k_d, "k_d"), _vec(k_r1, "k_r1")
    omega = float(np.linalg.norm(k_d)) * SPEED_OF_LIGHT if omega_d is None else float(omega_d)
    return _result(2.0 * k_d - k_r1, omega, k_d / np.linalg.norm(k_d))


def phase_match_e2(k_d, k_c1, k_c2, omega_d: float, omega_c1: float, omega_c2: float) -> PhaseMatchResult:
    """Second echo: k_E2 = k_D - k_C1 + k_C2, w_E2 = w_D - w_C1 + w_C2."""
    k_d, k_c1, k_c2 = _vec(k_d, "k_d"), _vec(k_c1, "k_c1"), _vec(k_c2, "k_c2")
    omega = omega_d - omega_c1 + omega_c2
    if not omega > 0:
        raise ValueError(f"unphysical E2 frequency {omega:g} rad/s")
    return _result(k_d - k_c1 + k_c2, omega, k_d / np.linalg.norm(k_d))


def sequence_phase_matching(seq: PulseSequence) -> dict[str, PhaseMatchResult]:
    """Phase matching for the first data pulse of a sequence."""
    d = seq.labelled("D")[0]
    r1 = seq.one("R1")
    out = {"E1": phase_match_e1(wave_vector(d.k_dir, d.omega), wave_vector(r1.k_dir, r1.omega), d.omega)}
    if seq.labelled("C1") and seq.labelled("C2"):
        c1, c2 = seq.one("C1"), seq.one("C2")
        out["E2"] = phase_match_e2(wave_vector(d.k_dir, d.omega), wave_vector(c1.k_dir, c1.omega),
                                   wave_vector(c2.k_dir, c2.omega), d.omega, c1.omega, c2.omega)
    return out
