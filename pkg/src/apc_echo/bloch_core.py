"""Single-atom dynamics of the three-level Lambda system.

Basis order is |1> (ground), |2> (spin / shelving), |3> (excited); index 0, 1, 2.
Channel A drives |1>-|3>, channel B drives |2>-|3>.

Public single-atom helpers (``build_hamiltonian``, ``master_rhs``) work in SI
units (rad/s, 1/s). The propagator works internally in microseconds and
rad/us; all unit conversion goes through :class:`AtomParams`.

The rotating-frame Hamiltonian is

    H = delta_opt |3><3| + delta_spin |2><2|
        + 1/2 (Omega_A e^{i phi_A} |3><1| + Omega_B e^{i phi_B} |3><2| + h.c.)

so that a free optical coherence evolves as rho13 ~ exp(+i delta t).
"""

from __future__ import annotations

import cmath
import enum
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError, PhysicalityWarning

TWO_PI = 2.0 * math.pi
SPEED_OF_LIGHT = 299_792_458.0  # m/s
# 606 nm, the Pr:YSO 3H4-1D2 line; only used for phase-matching bookkeeping
DEFAULT_CARRIER = TWO_PI * SPEED_OF_LIGHT / 605.98e-9

DEFAULT_DT = 0.002  # us
DEFAULT_STRIDE = 50

_TIME_EPS = 1e-9  # us; boundaries closer than this are merged


class Channel(str, enum.Enum):
    A = "A"
    B = "B"


PULSE_LABELS = ("D", "R1", "R2", "C1", "C2", "custom")


@dataclass(frozen=True)
class AtomParams:
    """Detunings and decay constants of one atom, in kHz.

    Detunings are ordinary frequencies (converted with 2*pi). Decay constants
    are direct exponential rates: 1 kHz means exp(-1000 t[s]).
    """

    delta_opt: float = 0.0
    delta_spin: float = 0.0
    Gamma31: float = 0.0
    Gamma32: float = 0.0
    Gamma21: float = 0.0
    gamma31: float = 0.0
    gamma32: float = 0.0
    gamma21: float = 0.0

    def __post_init__(self):
        for name in ("delta_opt", "delta_spin", *self.rate_names()):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError([(name, "must be finite")])
        for name in self.rate_names():
            if getattr(self, name) < 0:
                raise ConfigError([(name, f"decay rate must be >= 0, got {getattr(self, name)}")])
        for msg in self.physicality_violations():
            warnings.warn(msg, PhysicalityWarning, stacklevel=3)

    @staticmethod
    def rate_names() -> tuple[str, ...]:
        return ("Gamma31", "Gamma32", "Gamma21", "gamma31", "gamma32", "gamma21")

    def physicality_violations(self) -> list[str]:
        out = []
        if self.gamma31 < (self.Gamma31 + self.Gamma32) / 2:
            out.append("gamma31 < (Gamma31 + Gamma32)/2")
        if self.gamma32 < (self.Gamma31 + self.Gamma32 + self.Gamma21) / 2:
            out.append("gamma32 < (Gamma31 + Gamma32 + Gamma21)/2")
        return out

    def with_detuning(self, delta_opt: float) -> "AtomParams":
        # bypasses __post_init__ so ensemble members don't re-warn
        clone = object.__new__(AtomParams)
        for name in ("delta_spin", *self.rate_names()):
            object.__setattr__(clone, name, getattr(self, name))
        object.__setattr__(clone, "delta_opt", float(delta_opt))
        return clone

    # unit conversion layer
    @property
    def delta_opt_rad_s(self) -> float:
        return TWO_PI * 1e3 * self.delta_opt

    @property
    def delta_spin_rad_s(self) -> float:
        return TWO_PI * 1e3 * self.delta_spin

    def rates_per_s(self) -> "Rates":
        return Rates(*(1e3 * getattr(self, n) for n in self.rate_names()))

    def rates_per_us(self) -> "Rates":
        return Rates(*(1e-3 * getattr(self, n) for n in self.rate_names()))


@dataclass(frozen=True)
class Rates:
    """Decay constants in a fixed time unit (1/s or 1/us)."""

    G31: float
    G32: float
    G21: float
    g31: float
    g32: float
    g21: float


@dataclass(frozen=True)
class Pulse:
    """A square drive segment. Times in us, area and phase in radians."""

    channel: Channel
    t_start: float
    duration: float
    area: float
    label: str = "custom"
    carrier_phase: float = 0.0
    k_dir: tuple[float, float, float] = (1.0, 0.0, 0.0)
    omega: float = DEFAULT_CARRIER

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        object.__setattr__(self, "k_dir", tuple(float(x) for x in self.k_dir))
        where = f"pulse {self.label}"
        if self.label not in PULSE_LABELS:
            raise ConfigError([(where, f"unknown label {self.label!r}")])
        if not (math.isfinite(self.t_start) and math.isfinite(self.duration) and math.isfinite(self.area)):
            raise ConfigError([(where, "timing and area must be finite")])
        if self.duration <= 0:
            raise ConfigError([(f"{where}.duration", f"must be > 0, got {self.duration}")])
        if self.area < 0:
            raise ConfigError([(f"{where}.area", f"must be >= 0, got {self.area}")])
        if len(self.k_dir) != 3 or abs(math.hypot(*self.k_dir) - 1.0) > 1e-9:
            raise ConfigError([(f"{where}.k_dir", "must be a 3D unit vector")])
        if not self.omega > 0:
            raise ConfigError([(f"{where}.omega", "carrier frequency must be > 0")])

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    @property
    def t_center(self) -> float:
        return self.t_start + 0.5 * self.duration

    @property
    def rabi(self) -> float:
        """Rabi frequency in rad/us."""
        return self.area / self.duration

    def shifted(self, dt: float) -> "Pulse":
        return Pulse(self.channel, self.t_start + dt, self.duration, self.area, self.label,
                     self.carrier_phase, self.k_dir, self.omega)


@dataclass
class Trajectory:
    """Sampled evolution of one atom. ``states`` has shape (T, 3, 3)."""

    times: np.ndarray
    states: np.ndarray
    sample_stride: int = 1

    def __len__(self):
        return len(self.times)

    def element(self, i: int, j: int) -> np.ndarray:
        """Time series of rho_{ij}, 1-based indices as in the physics notation."""
        return self.states[:, i - 1, j - 1]


# ---------------------------------------------------------------------------
# density matrix helpers


def ground_state() -> np.ndarray:
    rho = np.zeros((3, 3), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def hermiticity_error(rho: np.ndarray) -> np.ndarray:
    return np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))), axis=(-1, -2))


def trace_error(rho: np.ndarray) -> np.ndarray:
    return np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0)


def min_eigenvalue(rho: np.ndarray) -> np.ndarray:
    herm = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    return np.linalg.eigvalsh(herm)[..., 0]


def check_density_matrix(rho, tol: float = 1e-12) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (3, 3):
        raise InputError(f"density matrix must be 3x3, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InputError("density matrix has non-finite entries")
    err = float(hermiticity_error(rho))
    if err > tol:
        raise InputError(f"density matrix is not Hermitian (max deviation {err:.3g})")
    return rho


# ---------------------------------------------------------------------------
# single-atom operators (SI units)


def build_hamiltonian(rabi_a: complex, rabi_b: complex, atom: AtomParams) -> np.ndarray:
    """Rotating-frame H/hbar in rad/s.

    ``rabi_a`` and ``rabi_b`` are the complex Rabi frequencies
    Omega e^{i phi} of channels A and B in rad/s.
    """
    h = np.zeros((3, 3), dtype=complex)
    h[1, 1] = atom.delta_spin_rad_s
    h[2, 2] = atom.delta_opt_rad_s
    h[2, 0] = 0.5 * rabi_a
    h[0, 2] = np.conj(h[2, 0])
    h[2, 1] = 0.5 * rabi_b
    h[1, 2] = np.conj(h[2, 1])
    return h


def relaxation(rho: np.ndarray, rates: Rates) -> np.ndarray:
    """Trace-preserving decay terms, in the time unit of ``rates``."""
    out = np.zeros_like(rho, dtype=complex)
    p2, p3 = rho[..., 1, 1], rho[..., 2, 2]
    out[..., 2, 2] = -(rates.G31 + rates.G32) * p3
    out[..., 0, 0] = rates.G31 * p3 + rates.G21 * p2
    out[..., 1, 1] = rates.G32 * p3 - rates.G21 * p2
    for (i, j), g in (((0, 2), rates.g31), ((1, 2), rates.g32), ((0, 1), rates.g21)):
        out[..., i, j] = -g * rho[..., i, j]
        out[..., j, i] = -g * rho[..., j, i]
    return out


def master_rhs(rho: np.ndarray, hamiltonian: np.ndarray, atom: AtomParams) -> np.ndarray:
    """d rho/dt in 1/s for H in rad/s."""
    rho = np.asarray(rho, dtype=complex)
    comm = hamiltonian @ rho - rho @ hamiltonian
    return -1j * comm + relaxation(rho, atom.rates_per_s())


def hard_pulse_rotation(rho: np.ndarray, channel: Channel | str, area: float, phase: float = 0.0) -> np.ndarray:
    """Apply an instantaneous rotation exp(-i area/2 (cos phi sx + sin phi sy)).

    The Pauli matrices act on (|1>,|3>) for channel A and (|2>,|3>) for
    channel B, with the ground-like level first. Accepts stacked matrices.
    """
    lo = 0 if Channel(channel) is Channel.A else 1
    c, s = math.cos(area / 2), math.sin(area / 2)
    u = np.eye(3, dtype=complex)
    u[lo, lo] = c
    u[2, 2] = c
    u[lo, 2] = -1j * s * cmath.exp(-1j * phase)
    u[2, lo] = -1j * s * cmath.exp(1j * phase)
    return u @ np.asarray(rho, dtype=complex) @ u.conj().T


def bloch_vector(rho: np.ndarray) -> tuple:
    """(u, v, w) of the optical transition: 2 Re rho13, 2 Im rho13, rho33 - rho11."""
    rho = np.asarray(rho)
    r13 = rho[..., 0, 2]
    return 2 * r13.real, 2 * r13.imag, (rho[..., 2, 2] - rho[..., 0, 0]).real


# ---------------------------------------------------------------------------
# batched propagator (us, rad/us); one row of the batch per detuning


def _rhs(r, a, b, d, s, rates: Rates):
    # a, b: half-Rabi couplings of channels A, B; d, s: detunings (rad/us) per atom
    # X = H rho for the sparse H above; [H, rho] = X - X^dagger
    x = np.empty_like(r)
    x[:, 0, :] = a.conjugate() * r[:, 2, :]
    x[:, 1, :] = s[:, None] * r[:, 1, :] + b.conjugate() * r[:, 2, :]
    x[:, 2, :] = a * r[:, 0, :] + b * r[:, 1, :] + d[:, None] * r[:, 2, :]
    out = -1j * (x - np.conj(np.swapaxes(x, 1, 2)))
    p2, p3 = r[:, 1, 1], r[:, 2, 2]
    out[:, 2, 2] -= (rates.G31 + rates.G32) * p3
    out[:, 0, 0] += rates.G31 * p3 + rates.G21 * p2
    out[:, 1, 1] += rates.G32 * p3 - rates.G21 * p2
    for (i, j), g in (((0, 2), rates.g31), ((1, 2), rates.g32), ((0, 1), rates.g21)):
        if g:
            out[:, i, j] -= g * r[:, i, j]
            out[:, j, i] -= g * r[:, j, i]
    return out


def _rk4_step(r, h, a, b, d, s, rates):
    k1 = _rhs(r, a, b, d, s, rates)
    k2 = _rhs(r + (0.5 * h) * k1, a, b, d, s, rates)
    k3 = _rhs(r + (0.5 * h) * k2, a, b, d, s, rates)
    k4 = _rhs(r + h * k3, a, b, d, s, rates)
    return r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _transfer(tau: float, fast: float, slow: float) -> float:
    """(exp(-slow tau) - exp(-fast tau)) / (fast - slow), stable near fast == slow."""
    diff = fast - slow
    if abs(diff * tau) < 1e-12:
        return tau * math.exp(-slow * tau)
    return math.exp(-slow * tau) * -math.expm1(-diff * tau) / diff


def free_evolve(r: np.ndarray, tau: float, d: np.ndarray, s: np.ndarray, rates: Rates) -> np.ndarray:
    """Exact undriven update over ``tau`` us for a batch of states (n, 3, 3)."""
    out = np.empty_like(r)
    gam3 = rates.G31 + rates.G32
    e3 = math.exp(-gam3 * tau)
    e2 = math.exp(-rates.G21 * tau)
    p1, p2, p3 = r[:, 0, 0].real, r[:, 1, 1].real, r[:, 2, 2].real
    q3 = p3 * e3
    q2 = p2 * e2 + rates.G32 * _transfer(tau, gam3, rates.G21) * p3
    q1 = p1 + (p2 - q2) + (p3 - q3)
    out[:, 0, 0], out[:, 1, 1], out[:, 2, 2] = q1, q2, q3
    c13 = r[:, 0, 2] * np.exp((1j * d - rates.g31) * tau)
    c23 = r[:, 1, 2] * np.exp((1j * (d - s) - rates.g32) * tau)
    c12 = r[:, 0, 1] * np.exp((1j * s - rates.g21) * tau)
    out[:, 0, 2], out[:, 2, 0] = c13, np.conj(c13)
    out[:, 1, 2], out[:, 2, 1] = c23, np.conj(c23)
    out[:, 0, 1], out[:, 1, 0] = c12, np.conj(c12)
    return out


def _overlapping(pulses: Iterable[Pulse], t0: float, t1: float) -> list[Pulse]:
    return [p for p in pulses if p.t_start < t1 - _TIME_EPS and p.t_end > t0 + _TIME_EPS]


def check_step_size(pulses: Sequence[Pulse], t0: float, t1: float, dt: float) -> None:
    active = _overlapping(pulses, t0, t1)
    if not active:
        return
    shortest = min(active, key=lambda p: p.duration)
    if dt > shortest.duration / 20 * (1 + 1e-9):
        raise ConfigError([(
            f"pulse {shortest.label} at t={shortest.t_start:g} us",
            f"dt={dt:g} us exceeds duration/20 = {shortest.duration / 20:g} us",
        )])


def _segments(pulses: Sequence[Pulse], t0: float, t1: float):
    """Split [t0, t1] at every pulse edge; yields (a, b, drive_a, drive_b).

    Drives are the couplings Omega e^{i phi} / 2 in rad/us, summed per channel.
    """
    edges = {t0, t1}
    for p in pulses:
        for t in (p.t_start, p.t_end):
            if t0 < t < t1:
                edges.add(t)
    edges = sorted(edges)
    merged = [edges[0]]
    for t in edges[1:]:
        if t - merged[-1] > _TIME_EPS:
            merged.append(t)
    merged[-1] = max(merged[-1], t1)
    for a, b in zip(merged[:-1], merged[1:]):
        mid = 0.5 * (a + b)
        drive = {Channel.A: 0j, Channel.B: 0j}
        for p in pulses:
            if p.t_start <= mid < p.t_end:
                drive[p.channel] += 0.5 * p.rabi * cmath.exp(1j * p.carrier_phase)
        yield a, b, drive[Channel.A], drive[Channel.B]


def propagate(rho0: np.ndarray, pulses: Sequence[Pulse], delta_opt_khz: np.ndarray,
              atom: AtomParams, t0: float, t1: float, dt: float = DEFAULT_DT,
              stride: int = DEFAULT_STRIDE) -> tuple[np.ndarray, np.ndarray]:
    """Evolve a batch of atoms that differ only in optical detuning.

    ``rho0`` is (n, 3, 3) or a single (3, 3) state shared by the batch.
    Returns ``(times, states)`` with ``states`` of shape (n, T, 3, 3).
    Every operation is elementwise over the batch, so an atom's result does
    not depend on which other atoms share its batch.
    """
    if not t1 > t0:
        raise ConfigError([("t_end", f"must exceed t_start ({t0:g} us), got {t1:g}")])
    if not dt > 0:
        raise ConfigError([("dt", f"must be > 0, got {dt}")])
    if int(stride) < 1:
        raise ConfigError([("stride", f"must be >= 1, got {stride}")])
    pulses = list(getattr(pulses, "pulses", pulses))
    check_step_size(pulses, t0, t1, dt)

    d = TWO_PI * 1e-3 * np.asarray(delta_opt_khz, dtype=float).reshape(-1)
    n = d.size
    s = np.full(n, TWO_PI * 1e-3 * atom.delta_spin)
    rates = atom.rates_per_us()
    rho0 = np.asarray(rho0, dtype=complex)
    r = np.array(np.broadcast_to(rho0, (n, 3, 3)))

    sample_dt = stride * dt
    times = [t0]
    states = [r.copy()]

    def record(t, state):
        if t > times[-1] + _TIME_EPS:
            times.append(t)
            states.append(state)

    for a, b, drive_a, drive_b in _segments(pulses, t0, t1):
        if drive_a == 0 and drive_b == 0:
            k_lo = math.floor((a - t0) / sample_dt) + 1
            k_hi = math.ceil((b - t0) / sample_dt) - 1
            for k in range(k_lo, k_hi + 1):
                t = t0 + k * sample_dt
                if a + _TIME_EPS < t < b - _TIME_EPS:
                    record(t, free_evolve(r, t - a, d, s, rates))
            r = free_evolve(r, b - a, d, s, rates)
        else:
            nsteps = max(1, math.ceil((b - a) / dt - 1e-9))
            h = (b - a) / nsteps
            for step in range(1, nsteps + 1):
                r = _rk4_step(r, h, drive_a, drive_b, d, s, rates)
                if step % stride == 0 and step != nsteps:
                    record(a + step * h, r.copy())
        record(b, r.copy())

    return np.asarray(times), np.stack(states, axis=1)


def evolve(rho0, sequence, atom: AtomParams, t0: float, t1: float,
           dt: float = DEFAULT_DT, stride: int = DEFAULT_STRIDE) -> Trajectory:
    """Integrate one atom through ``sequence`` (a PulseSequence or list of Pulse).

    RK4 with fixed step <= dt inside pulses, exact update between pulses.
    Samples every ``stride`` steps (stride*dt in free evolution) and at
    every pulse boundary.
    """
    rho0 = check_density_matrix(rho0)
    times, states = propagate(rho0, sequence, np.array([atom.delta_opt]), atom, t0, t1, dt, stride)
    return Trajectory(times=times, states=states[0], sample_stride=int(stride))
