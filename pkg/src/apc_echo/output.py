"""Result bundles and file emission (CSV / JSON, written atomically)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import EchoEvent, EnsembleResult, ScanRow, population_trace
from .errors import ConfigError

TIMESERIES_COLUMNS = ("t_us", "re_P", "im_P", "intensity", "rho11", "rho22", "rho33")
ECHO_COLUMNS = ("label", "t_peak_us", "re_amp", "im_amp", "intensity")
SCAN_COLUMNS = ("t_r1_us", "e1_abs", "e2_abs", "e1_energy", "e2_energy", "error")
BLOCH_COLUMNS = ("t_us", "u", "v", "w", "rho11", "rho22", "rho33")


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return "%.9g" % (x + 0.0)  # + 0.0 folds -0 into 0


@dataclass
class ResultBundle:
    """Everything a run produces. ``metadata`` carries job_hash, version and
    wall_time; wall_time is kept out of written files so reruns are
    byte-identical."""

    metadata: dict
    timeseries: dict[str, np.ndarray] | None = None
    echoes: list[EchoEvent] = field(default_factory=list)
    scan: list[ScanRow] | None = None
    bloch: dict[str, np.ndarray] | None = None

    def file_metadata(self) -> dict:
        return {k: v for k, v in self.metadata.items() if k != "wall_time"}


def timeseries_table(result: EnsembleResult) -> dict[str, np.ndarray]:
    p = result.polarization
    r11, r22, r33 = population_trace(result)
    return {"t_us": result.times, "re_P": p.real, "im_P": p.imag, "intensity": np.abs(p) ** 2,
            "rho11": r11, "rho22": r22, "rho33": r33}


def echo_rows(events) -> list[dict]:
    return [{"label": e.label, "t_peak_us": e.t_peak, "re_amp": e.amplitude.real,
             "im_amp": e.amplitude.imag, "intensity": e.intensity} for e in events]


def scan_rows(rows) -> list[dict]:
    return [{"t_r1_us": r.t_r1, "e1_abs": r.e1, "e2_abs": r.e2, "e1_energy": r.e1_energy,
             "e2_energy": r.e2_energy, "error": r.error or ""} for r in rows]


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def _table_rows(table: dict[str, np.ndarray], columns) -> list[dict]:
    n = len(table[columns[0]])
    return [{c: float(table[c][i]) for c in columns} for i in range(n)]


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    return x


def render(bundle: ResultBundle, kind: str, fmt_name: str = "csv") -> str:
    if kind == "timeseries":
        if bundle.timeseries is None:
            raise ConfigError([("outputs", "no time series in this run")])
        columns, rows = TIMESERIES_COLUMNS, _table_rows(bundle.timeseries, TIMESERIES_COLUMNS)
    elif kind == "bloch":
        if bundle.bloch is None:
            raise ConfigError([("outputs", "no Bloch trajectory in this run")])
        columns, rows = BLOCH_COLUMNS, _table_rows(bundle.bloch, BLOCH_COLUMNS)
    elif kind == "echoes":
        columns, rows = ECHO_COLUMNS, echo_rows(bundle.echoes)
    elif kind == "scan":
        if bundle.scan is None:
            raise ConfigError([("outputs", "no scan in this run")])
        columns, rows = SCAN_COLUMNS, scan_rows(bundle.scan)
    else:
        raise ConfigError([("outputs", f"unknown output kind {kind!r}")])
    if fmt_name == "csv":
        return _csv(columns, rows)
    if fmt_name == "json":
        # same %.9g rounding as CSV so both formats carry identical numbers
        rounded = [{c: (float(fmt(r[c])) if not isinstance(r[c], str) else r[c]) for c in columns} for r in rows]
        doc = {"metadata": bundle.file_metadata(), "columns": list(columns), "rows": rounded}
        return json.dumps(_json_safe(doc), indent=1, sort_keys=True) + "\n"
    raise ConfigError([("outputs", f"unknown format {fmt_name!r}")])


def atomic_write(path, text: str) -> None:
    """Write through a temp file in the target directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_results(bundle: ResultBundle, outputs, base_dir=None) -> list[Path]:
    """Write every requested output; relative paths resolve against ``base_dir``.

    All documents are rendered before anything touches the disk, so a bad
    output request leaves no partial set of files behind.
    """
    rendered = []
    for spec in outputs:
        path = Path(spec.path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        rendered.append((path, render(bundle, spec.kind, spec.format)))
    for path, text in rendered:
        atomic_write(path, text)
    return [p for p, _ in rendered]
