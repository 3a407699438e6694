"""Simulation job documents: JSON parsing, validation, presets and serialization.

Units in documents: times in us, frequencies and decay constants in kHz,
pulse areas and carrier phases in units of pi (``"area": 0.1`` is pi/10).
A document may name a ``preset``; its own sections are layered on top.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import warnings
from dataclasses import dataclass

import jsonschema

from .bloch_core import DEFAULT_CARRIER, AtomParams, Channel, Pulse, check_step_size
from .ensemble import DetuningGrid, IntegratorConfig, build_grid
from .errors import ConfigError, EchoHaltWarning, NonIdealRephasingWarning
from .protocol import DEFAULT_DURATIONS, PulseSequence, make_apc_sequence, make_two_pulse_sequence, validate_sequence

CONFIG_VERSION = 1
OUTPUT_KINDS = ("timeseries", "echoes", "scan", "bloch")
LABELS = ("D", "R1", "R2", "C1", "C2")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}


def _per_label(schema):
    return {"type": "object", "properties": {k: schema for k in LABELS}, "additionalProperties": False}


_PULSE = {
    "type": "object",
    "required": ["channel", "t_start", "duration", "area"],
    "additionalProperties": False,
    "properties": {
        "label": {"enum": ["D", "R1", "R2", "C1", "C2", "custom"]},
        "channel": {"enum": ["A", "B"]},
        "t_start": _num,
        "duration": _pos,
        "area": _nonneg,
        "phase": _num,
        "k_dir": _vec3,
        "omega": _pos,
    },
}

SCHEMA = {
    "type": "object",
    "required": ["version"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "preset": {"type": "string"},
        "atom": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_opt": _num, "delta_spin": _num,
                **{name: _nonneg for name in AtomParams.rate_names()},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"fwhm": _pos, "span": _pos, "n": {"type": "integer", "minimum": 1}},
        },
        "sequence": {
            "type": "object",
            "required": ["protocol"],
            "additionalProperties": False,
            "properties": {
                "protocol": {"enum": ["apc", "two_pulse", "custom"]},
                "anchor": {"enum": ["start", "center"]},
                "t_d": {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1}]},
                "t_r1": _num, "t_r2": _num, "t_c1": _num, "t_c2": _num,
                "areas": _per_label(_nonneg),
                "durations": _per_label(_pos),
                "halt_bound": _num,
                "pulses": {"type": "array", "items": _PULSE, "minItems": 1},
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _pos, "stride": {"type": "integer", "minimum": 1},
                "t_start": _num, "t_end": _num,
            },
        },
        "echo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "halfwidth": _pos,
                "windows": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["label", "t_lo", "t_hi"],
                        "additionalProperties": False,
                        "properties": {"label": {"type": "string"}, "t_lo": _num, "t_hi": _num},
                    },
                },
            },
        },
        "outputs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "path"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": list(OUTPUT_KINDS)},
                    "path": {"type": "string", "minLength": 1},
                    "format": {"enum": ["csv", "json"]},
                },
            },
        },
    },
}


# ---------------------------------------------------------------------------
# presets


_ZERO_DECAY = {"delta_opt": 0.0, "delta_spin": 0.0, **{name: 0.0 for name in AtomParams.rate_names()}}
_DEFAULT_AREAS_PI = {"D": 0.1, "R1": 1.0, "R2": 1.0, "C1": 1.0, "C2": 1.0}


def _decay(gamma):
    return {**_ZERO_DECAY, "Gamma31": 1.0, "Gamma32": 1.0, "gamma31": gamma, "gamma32": gamma}


def _apc(t_d, t_r1, t_r2, t_c1, t_c2):
    return {"protocol": "apc", "anchor": "center", "t_d": t_d, "t_r1": t_r1, "t_r2": t_r2,
            "t_c1": t_c1, "t_c2": t_c2, "areas": dict(_DEFAULT_AREAS_PI), "durations": dict(DEFAULT_DURATIONS)}


def _preset(atom, grid, sequence, t_end):
    return {
        "version": CONFIG_VERSION,
        "atom": atom,
        "grid": grid,
        "sequence": sequence,
        "integrator": {"dt": 0.002, "stride": 50, "t_start": 0.0, "t_end": t_end},
        "echo": {"threshold": 0.05, "halfwidth": 3.0},
        "outputs": [],
    }


_FIG2_GRID = {"fwhm": 60.0, "span": 100.0, "n": 201}
# scan base: R2 sits 40 us after R1 so E1 never runs into R2 over T_R1 in [15, 30]
_SCAN_BASE = _apc([5.5], 20.0, 60.0, 60.5, 75.0)

PRESETS = {
    "fig2": _preset(_ZERO_DECAY, _FIG2_GRID, _apc([5.5], 20.0, 45.0, 45.5, 60.0), 80.0),
    "fig3-blue": _preset(_decay(2.0), _FIG2_GRID, _SCAN_BASE, 105.0),
    "fig3-red": _preset(_decay(5.0), _FIG2_GRID, _SCAN_BASE, 105.0),
    # three data pulses; a broad line keeps the ~1 us echoes apart
    "fig3-train": _preset(_decay(2.0), {"fwhm": 500.0, "span": 1200.0, "n": 481},
                          _apc([2.5, 6.5, 12.5], 16.0, 35.0, 36.0, 50.0), 70.0),
}


def preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError([("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")])
    return copy.deepcopy(PRESETS[name])


def merge_preset(doc: dict) -> dict:
    """Layer a document over its preset (``fig2`` without a sequence when none
    is named). ``atom``, ``grid``, ``integrator`` and ``echo`` merge key by
    key; ``sequence`` and ``outputs`` replace wholesale."""
    if "preset" in doc:
        base = preset_document(doc["preset"])
    else:
        base = preset_document("fig2")
        del base["sequence"]
    for key, value in doc.items():
        if key == "preset":
            continue
        if key in ("atom", "grid", "integrator", "echo") and isinstance(value, dict):
            base[key] = {**base.get(key, {}), **value}
        else:
            base[key] = value
    return base


# ---------------------------------------------------------------------------
# job model (document units)


@dataclass(frozen=True)
class PulseSpec:
    channel: str
    t_start: float
    duration: float
    area: float  # units of pi
    label: str = "custom"
    phase: float = 0.0  # units of pi
    k_dir: tuple[float, float, float] = (1.0, 0.0, 0.0)
    omega: float = DEFAULT_CARRIER

    def to_pulse(self) -> Pulse:
        return Pulse(Channel(self.channel), self.t_start, self.duration, self.area * math.pi, self.label,
                     self.phase * math.pi, self.k_dir, self.omega)


@dataclass(frozen=True)
class GridSpec:
    fwhm: float = 60.0
    span: float = 100.0
    n: int = 201

    def build(self) -> DetuningGrid:
        return build_grid(self.fwhm, self.span, self.n)


@dataclass(frozen=True)
class OutputSpec:
    kind: str
    path: str
    format: str = "csv"


@dataclass(frozen=True)
class SimJob:
    atom: AtomParams
    grid: GridSpec
    pulses: tuple[PulseSpec, ...]
    protocol_tag: str
    integrator: IntegratorConfig
    threshold: float = 0.05
    halfwidth: float = 3.0
    windows: tuple[tuple[str, float, float], ...] | None = None
    outputs: tuple[OutputSpec, ...] = ()
    halt_bound: float | None = None
    version: int = CONFIG_VERSION

    def sequence(self) -> PulseSequence:
        return PulseSequence(tuple(p.to_pulse() for p in self.pulses), self.protocol_tag)


# ---------------------------------------------------------------------------
# parsing


def _fmt_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "$"


def _pulse_name(doc, parts) -> str | None:
    parts = list(parts)
    if len(parts) >= 3 and parts[:2] == ["sequence", "pulses"] and isinstance(parts[2], int):
        try:
            label = doc["sequence"]["pulses"][parts[2]].get("label", "custom")
        except (KeyError, IndexError, AttributeError, TypeError):
            return None
        return f"pulse {parts[2]} ({label})"
    return None


def _schema_errors(doc) -> list[tuple[str, str]]:
    errors = []
    validator = jsonschema.Draft202012Validator(SCHEMA)
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        parts = list(err.absolute_path)
        if err.validator == "additionalProperties":
            allowed = set(err.schema.get("properties", {}))
            for key in sorted(set(err.instance) - allowed):
                errors.append((_fmt_path(parts + [key]), f"unknown key {key!r}"))
            continue
        if err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            for key in missing:
                errors.append((_fmt_path(parts + [key]), "missing required field"))
            continue
        msg = err.message
        if parts == ["version"]:
            msg = f"unsupported version {err.instance!r}; expected {CONFIG_VERSION}"
        name = _pulse_name(doc, parts)
        if name:
            msg = f"{name}: {msg}"
        errors.append((_fmt_path(parts), msg))
    return errors


def _pulses_from_timings(seq: dict, errors) -> tuple[tuple[PulseSpec, ...], str]:
    proto = seq["protocol"]
    need = ("t_d", "t_r1") if proto == "two_pulse" else ("t_d", "t_r1", "t_r2", "t_c1", "t_c2")
    missing = [k for k in need if k not in seq]
    for k in missing:
        errors.append((f"sequence.{k}", "missing required field"))
    if "pulses" in seq:
        errors.append(("sequence.pulses", "explicit pulses are only allowed with protocol 'custom'"))
    if missing or "pulses" in seq:
        return (), ""
    areas = {**_DEFAULT_AREAS_PI, **seq.get("areas", {})}
    durations = {**DEFAULT_DURATIONS, **seq.get("durations", {})}
    anchor = seq.get("anchor", "start")
    t_d = seq["t_d"] if isinstance(seq["t_d"], list) else [seq["t_d"]]
    if proto == "two_pulse" and len(t_d) != 1:
        errors.append(("sequence.t_d", "two_pulse takes a single data pulse"))
        return (), ""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # re-issued once by _semantic_checks
            built = _build_timed(proto, seq, t_d, areas, durations, anchor)
    except ConfigError as exc:
        errors.extend((f"sequence ({code})", msg) for code, msg in exc.errors)
        return (), ""
    specs = tuple(PulseSpec(p.channel.value, p.t_start, p.duration, areas[p.label], p.label,
                            0.0, p.k_dir, p.omega) for p in built.pulses)
    return specs, built.protocol_tag


def _build_timed(proto, seq, t_d, areas, durations, anchor) -> PulseSequence:
    if proto == "two_pulse":
        return make_two_pulse_sequence(t_d[0], seq["t_r1"], areas["D"] * math.pi, areas["R1"] * math.pi,
                                       durations["D"], durations["R1"], anchor)
    return make_apc_sequence(t_d, seq["t_r1"], seq["t_r2"], seq["t_c1"], seq["t_c2"],
                             {k: v * math.pi for k, v in areas.items()}, durations, anchor,
                             halt_bound=seq.get("halt_bound"))


def _pulses_explicit(seq: dict) -> tuple[tuple[PulseSpec, ...], str]:
    specs = tuple(
        PulseSpec(p["channel"], float(p["t_start"]), float(p["duration"]), float(p["area"]),
                  p.get("label", "custom"), float(p.get("phase", 0.0)),
                  tuple(float(x) for x in p.get("k_dir", (1.0, 0.0, 0.0))), float(p.get("omega", DEFAULT_CARRIER)))
        for p in seq["pulses"])
    return specs, _infer_tag(specs)


def parse_document(doc) -> SimJob:
    """Validate a decoded JSON document and build the job; raises ConfigError."""
    if not isinstance(doc, dict):
        raise ConfigError([("$", "top level must be an object")])
    errors = _schema_errors(doc)
    if errors:
        raise ConfigError(errors)
    doc = merge_preset(doc)
    errors = _schema_errors(doc)
    if "sequence" not in doc:
        errors.append(("sequence", "missing required field (no preset given)"))
    if errors:
        raise ConfigError(errors)

    atom_doc = doc["atom"]
    try:
        atom = AtomParams(**{k: float(v) for k, v in atom_doc.items()})
    except ConfigError as exc:
        raise ConfigError([(f"atom.{p}", m) for p, m in exc.errors])
    g = doc["grid"]
    grid = GridSpec(float(g.get("fwhm", 60.0)), float(g.get("span", 100.0)), int(g.get("n", 201)))

    seq = doc["sequence"]
    if seq["protocol"] == "custom":
        if "pulses" not in seq:
            raise ConfigError([("sequence.pulses", "missing required field")])
        stray = [k for k in ("t_d", "t_r1", "t_r2", "t_c1", "t_c2", "areas", "durations") if k in seq]
        if stray:
            raise ConfigError([(f"sequence.{k}", "timings are only allowed with a protocol preset") for k in stray])
        pulses, tag = _pulses_explicit(seq)
    else:
        pulses, tag = _pulses_from_timings(seq, errors)
    if errors:
        raise ConfigError(errors)

    it = doc["integrator"]
    integ = IntegratorConfig(float(it.get("dt", 0.002)), int(it.get("stride", 50)),
                             float(it.get("t_start", 0.0)), float(it.get("t_end", 80.0)))
    echo = doc.get("echo", {})
    windows = None
    if "windows" in echo:
        windows = tuple((w["label"], float(w["t_lo"]), float(w["t_hi"])) for w in echo["windows"])
    outputs = tuple(OutputSpec(o["kind"], o["path"], o.get("format", "csv")) for o in doc.get("outputs", []))
    job = SimJob(atom, grid, pulses, tag, integ, float(echo.get("threshold", 0.05)),
                 float(echo.get("halfwidth", 3.0)), windows, outputs, seq.get("halt_bound"))
    _semantic_checks(job)
    return job


def _infer_tag(pulses) -> str:
    labels = [p.label for p in sorted(pulses, key=lambda p: p.t_start)]
    core = [lbl for lbl in labels if lbl != "D"]
    if labels and labels[0] == "D":
        if core == ["R1", "R2", "C1", "C2"]:
            return "apc_double_rephase"
        if core == ["R1"] and labels.count("D") == 1:
            return "two_pulse_echo"
    return "custom"


def _semantic_checks(job: SimJob) -> None:
    errors = []
    integ = job.integrator
    if not integ.t_end > integ.t_start:
        errors.append(("integrator.t_end", f"must exceed t_start ({integ.t_start:g} us)"))
    try:
        seq = job.sequence()
    except ConfigError as exc:
        raise ConfigError([(f"sequence.{p}", m) for p, m in exc.errors])
    for f in validate_sequence(seq, halt_bound=job.halt_bound):
        if f.severity == "error":
            errors.append((f"sequence ({f.code})", f.message))
        else:
            category = EchoHaltWarning if f.code == "rephasing_halt" else NonIdealRephasingWarning
            warnings.warn(f.message, category, stacklevel=4)
    if not errors:
        try:
            check_step_size(list(seq), integ.t_start, integ.t_end, integ.dt)
        except ConfigError as exc:
            errors.extend((f"integrator.dt ({p})", m) for p, m in exc.errors)
    if job.windows:
        from .ensemble import _check_windows

        try:
            _check_windows(job.windows, integ.t_start, integ.t_end)
        except ConfigError as exc:
            errors.extend((f"echo.{p}", m) for p, m in exc.errors)
    if errors:
        raise ConfigError(errors)


def parse_config(text: str) -> SimJob:
    """Parse a JSON job document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}")]) from exc
    return parse_document(doc)


def load_config(path) -> SimJob:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([("$", f"cannot read {path}: {exc.strerror}")]) from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# serialization


def job_to_document(job: SimJob) -> dict:
    """Fully explicit document (no preset) that parses back to ``job``."""
    doc = {
        "version": job.version,
        "atom": {"delta_opt": job.atom.delta_opt, "delta_spin": job.atom.delta_spin,
                 **{n: getattr(job.atom, n) for n in AtomParams.rate_names()}},
        "grid": {"fwhm": job.grid.fwhm, "span": job.grid.span, "n": job.grid.n},
        "sequence": {
            "protocol": "custom",
            "pulses": [
                {"label": p.label, "channel": p.channel, "t_start": p.t_start, "duration": p.duration,
                 "area": p.area, "phase": p.phase, "k_dir": list(p.k_dir), "omega": p.omega}
                for p in job.pulses
            ],
        },
        "integrator": {"dt": job.integrator.dt, "stride": job.integrator.stride,
                       "t_start": job.integrator.t_start, "t_end": job.integrator.t_end},
        "echo": {"threshold": job.threshold, "halfwidth": job.halfwidth},
        "outputs": [{"kind": o.kind, "path": o.path, "format": o.format} for o in job.outputs],
    }
    if job.halt_bound is not None:
        doc["sequence"]["halt_bound"] = job.halt_bound
    if job.windows is not None:
        doc["echo"]["windows"] = [{"label": lbl, "t_lo": lo, "t_hi": hi} for lbl, lo, hi in job.windows]
    return doc


def serialize_job(job: SimJob) -> str:
    return json.dumps(job_to_document(job), indent=2)


def job_hash(job: SimJob) -> str:
    canonical = json.dumps(job_to_document(job), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
