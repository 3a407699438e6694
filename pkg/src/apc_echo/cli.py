"""Command-line entry point: ``apc-echo {simulate,scan,predict,bloch} <config>``.

Exit status: 0 success, 1 invalid input (config, flags, unknown subcommand),
2 failure during the run (integration or I/O).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .bloch_core import bloch_vector, evolve, ground_state
from .config import SimJob, job_hash, load_config
from .ensemble import default_windows, detect_echoes, run_ensemble, scan_rephase_delay
from .errors import ConfigError, EchoSimError
from .output import ResultBundle, atomic_write, emit_results, render, timeseries_table
from .protocol import predict_timing, sequence_phase_matching

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="apc-echo", description="Atom-phase-controlled photon echo simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,scan,predict,bloch}", parser_class=_Parser)

    p = sub.add_parser("simulate", help="ensemble run; writes the outputs listed in the config")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: $ECHO_SIM_THREADS or all cores)")
    p.add_argument("--out-dir", default=None, help="base directory for relative output paths (default: config's directory)")

    p = sub.add_parser("scan", help="E1/E2 amplitudes versus the R1 time")
    p.add_argument("config")
    p.add_argument("--r1", type=_float_list, required=True, help="R1 center times in us, e.g. 15,20,25,30")
    p.add_argument("--hold", choices=("block", "absolute"), default="block",
                   help="block: R2, C1, C2 move with R1 (default); absolute: they stay put")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("predict", help="timing and phase-matching report (no integration)")
    p.add_argument("config")

    p = sub.add_parser("bloch", help="single-atom trajectory with Bloch components")
    p.add_argument("config")
    p.add_argument("--delta", type=float, required=True, help="detuning from line center, kHz")
    p.add_argument("-o", "--output", default=None, help="CSV path (default: stdout)")
    return parser


def _base_dir(args):
    return args.out_dir if args.out_dir is not None else os.path.dirname(os.path.abspath(args.config))


def _metadata(job: SimJob, started: float, command: str) -> dict:
    return {"job_hash": job_hash(job), "version": __version__, "command": command,
            "wall_time": time.perf_counter() - started}


def _windows(job: SimJob, seq, times):
    if job.windows is not None:
        return list(job.windows)
    return default_windows(seq, job.halfwidth, (float(times[0]), float(times[-1])))


def cmd_simulate(args, job: SimJob, out) -> int:
    unsupported = [o for o in job.outputs if o.kind not in ("timeseries", "echoes")]
    if unsupported:
        raise ConfigError([("outputs", f"'{o.kind}' output is not produced by simulate") for o in unsupported])
    started = time.perf_counter()
    seq = job.sequence()
    result = run_ensemble(job.atom, seq, job.grid.build(), job.integrator, args.workers)
    events = detect_echoes(result.times, result.polarization, _windows(job, seq, result.times), job.threshold)
    bundle = ResultBundle(_metadata(job, started, "simulate"), timeseries_table(result), events)
    written = emit_results(bundle, job.outputs, _base_dir(args))
    out.write(render(bundle, "echoes", "csv"))
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_scan(args, job: SimJob, out) -> int:
    started = time.perf_counter()
    rows = scan_rephase_delay(job.atom, job.sequence(), job.grid.build(), args.r1, job.integrator,
                              hold=args.hold, halfwidth=job.halfwidth, threshold=job.threshold,
                              workers=args.workers)
    bundle = ResultBundle(_metadata(job, started, "scan"), scan=rows)
    outputs = [o for o in job.outputs if o.kind == "scan"]
    written = emit_results(bundle, outputs, _base_dir(args))
    out.write(render(bundle, "scan", "csv"))
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _vec(x) -> list[float]:
    return [float(v) for v in x]


def cmd_predict(args, job: SimJob, out) -> int:
    seq = job.sequence()
    report = {"job_hash": job_hash(job), "protocol": seq.protocol_tag, "timing": [], "phase_matching": {}}
    if seq.protocol_tag != "custom":
        for pred in predict_timing(seq, halt_bound=job.halt_bound):
            report["timing"].append({
                "t_d": pred.t_d, "t_r1": pred.t_r1, "t_e1": pred.t_e1, "t_r2": pred.t_r2,
                "t_c1": pred.t_c1, "t_c2": pred.t_c2, "delta_t": pred.delta_t,
                "t_e2": None if pred.t_e2 is None or pred.no_echo else pred.t_e2, "no_echo": pred.no_echo,
            })
        for name, res in sequence_phase_matching(seq).items():
            report["phase_matching"][name] = {
                "k_out": _vec(res.k_out), "omega_out": res.omega_out, "mismatch": res.mismatch,
                "direction": _vec(res.direction), "backward": bool(res.backward),
            }
    out.write(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def bloch_table(job: SimJob, delta: float) -> dict[str, np.ndarray]:
    atom = job.atom.with_detuning(job.atom.delta_opt + delta)
    it = job.integrator
    traj = evolve(ground_state(), job.sequence(), atom, it.t_start, it.t_end, it.dt, it.stride)
    u, v, w = bloch_vector(traj.states)
    return {"t_us": traj.times, "u": u, "v": v, "w": w, "rho11": traj.states[:, 0, 0].real,
            "rho22": traj.states[:, 1, 1].real, "rho33": traj.states[:, 2, 2].real}


def cmd_bloch(args, job: SimJob, out) -> int:
    if not math.isfinite(args.delta):
        raise ConfigError([("--delta", f"must be finite, got {args.delta}")])
    bundle = ResultBundle({"job_hash": job_hash(job), "version": __version__}, bloch=bloch_table(job, args.delta))
    text = render(bundle, "bloch", "csv")
    if args.output:
        atomic_write(args.output, text)
    else:
        out.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "scan": cmd_scan, "predict": cmd_predict, "bloch": cmd_bloch}


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    if args.command is None:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return EXIT_INVALID
    if getattr(args, "workers", None) is not None and args.workers < 0:
        print("apc-echo: error: --workers must be >= 0", file=sys.stderr)
        return EXIT_INVALID

    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = lambda msg, cat, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        try:
            job = load_config(args.config)
        except ConfigError as exc:
            for path, msg in exc.errors:
                print(f"{args.config}: {path}: {msg}" if path else f"{args.config}: {msg}", file=sys.stderr)
            return EXIT_INVALID
        try:
            return COMMANDS[args.command](args, job, out)
        except ConfigError as exc:
            print(f"apc-echo: invalid input: {exc}", file=sys.stderr)
            return EXIT_INVALID
        except (EchoSimError, OSError, FloatingPointError) as exc:
            print(f"apc-echo: run failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
