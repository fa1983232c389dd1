"""Command-line front end.

Every command reads one JSON config (``--config``; defaults when omitted),
writes its outputs into ``--out-dir`` (or ``$PHOTONROUTE_OUT_DIR``, else the
current directory) and records a ``manifest_<command>.json`` holding the
effective config, its hash, the seed, package versions and the checksum of
every output. ``photonroute rerun MANIFEST`` replays a run and checks that the
outputs come out byte-identical.

Exit codes: 0 success, 1 round-trip residual or rerun checksum mismatch,
2 validation error, 3 infeasible or under-determined fit, 4 I/O or parse error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import formats
from .analysis import analyze_stream
from .calibration import PORT2_NEAR_MAX, extinction_ratios, model_extinction_db, predict_sweep
from .config import RunConfig
from .errors import ConfigError, DomainError, FitError, InfeasibleFitError, ParseError
from .mesh import clements_decompose, mesh_reconstruct, routing_fidelity, synthesize_switch
from .source import CH_PORT1, CH_PORT2, CH_REFERENCE, run_experiment
from .xfer import port_powers

EXIT_OK, EXIT_RESIDUAL, EXIT_VALIDATION, EXIT_FIT, EXIT_IO = 0, 1, 2, 3, 4
RESIDUAL_TOL = 1e-8
# exact anchors (port1_max, split_50_50, port_fraction) must be met to this port fraction
FIT_RESIDUAL_TOL = 1e-6
OUT_DIR_ENV = "PHOTONROUTE_OUT_DIR"
MANIFEST_VERSION = 1


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"photonroute": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


class Run:
    """Per-invocation context: effective config, output directory and manifest bookkeeping."""

    def __init__(self, args: argparse.Namespace):
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        self.cfg = cfg.with_overrides(
            seed=getattr(args, "seed", None),
            n_attempts=getattr(args, "attempts", None),
            **self._current_override(args),
        )
        self.out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.args = args
        self.outputs: list[Path] = []
        self.inputs: list[Path] = []

    @staticmethod
    def _current_override(args) -> dict:
        cur = getattr(args, "current", None)
        if not cur:
            return {}
        if args.command == "sweep":
            return {"currents_mA": cur}
        if args.command == "simulate":
            return {"current_mA": cur[-1]}
        return {}

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(p)
        return p

    def model(self):
        m = getattr(self.args, "model", None)
        if m:
            self.inputs.append(Path(m))
            return formats.read_model_json(m)
        return self.cfg.model()

    def write_manifest(self, argv: list[str]) -> Path:
        doc = {
            "manifest_version": MANIFEST_VERSION,
            "command": self.args.command,
            "argv": argv,
            "config_sha256": self.cfg.sha256(),
            "seed": self.cfg.seed,
            "versions": _versions(),
            "inputs": [{"path": str(p.resolve()), "sha256": _sha256_file(p)} for p in self.inputs],
            "outputs": [{"file": p.name, "sha256": _sha256_file(p)} for p in self.outputs],
            "config": self.cfg.to_dict(),
        }
        path = self.out_dir / f"manifest_{self.args.command}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


# -- commands --------------------------------------------------------------------


def cmd_fit(run: Run) -> int:
    model = run.cfg.model()
    worst = max((abs(r.residual) for r in model.calib.residuals if r.kind != PORT2_NEAR_MAX), default=0.0)
    if worst > FIT_RESIDUAL_TOL:
        lines = [f"  {r.kind} @ {r.current_mA} mA: residual {r.residual:.3e}" for r in model.calib.residuals]
        raise InfeasibleFitError(
            f"anchors cannot all be met (worst port-fraction residual {worst:.3e} > {FIT_RESIDUAL_TOL:g}):\n"
            + "\n".join(lines)
        )
    er = model_extinction_db(model.c1, model.c2)
    extra = {
        "extinction_db": list(er),
        "anchor_residuals": [
            {"current_mA": r.current_mA, "kind": r.kind, "residual": r.residual} for r in model.calib.residuals
        ],
    }
    formats.write_model_json(run.path("model.json"), model, extra)
    d = model.to_dict()
    print(f"r1={d['r1']:.6f} r2={d['r2']:.6f} phi0={d['phi0_rad']:.6f} rad c={d['c_rad_per_mA2']:.6g} rad/mA^2")
    print(f"model extinction: port1 {er[0]:.4f} dB, port2 {er[1]:.4f} dB")
    for r in model.calib.residuals:
        print(f"anchor {r.kind} @ {r.current_mA} mA: residual {r.residual:.3e}")
    return EXIT_OK


def cmd_sweep(run: Run) -> int:
    model = run.model()
    curve = predict_sweep(model, run.cfg.sweep_currents())
    formats.write_sweep_csv(run.path("sweep.csv"), curve)
    total = np.asarray(curve.p1) + np.asarray(curve.p2)
    er1, er2 = extinction_ratios(curve)
    summary = {
        "n_points": len(total),
        "extinction_db": [_json_float(er1), _json_float(er2)],
        "total_min": float(total.min()),
        "total_max": float(total.max()),
    }
    run.path("sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{len(total)} points; extinction port1 {er1:.4f} dB, port2 {er2:.4f} dB")
    print(f"total transmission {total.min():.6f} .. {total.max():.6f}")
    return EXIT_OK


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def cmd_simulate(run: Run) -> int:
    cfg = run.cfg
    exp = cfg.experiment(run.model())
    stream = run_experiment(exp, cfg.seed, cfg.n_attempts, workers=run.args.workers, config_hash=cfg.sha256())
    formats.write_timetags(run.path("timetags.csv"), stream)
    c = stream.counts()
    print(
        f"{cfg.n_attempts} attempts at {exp.current_mA} mA, seed {cfg.seed}: "
        f"reference {c[CH_REFERENCE]}, port1 {c[CH_PORT1]}, port2 {c[CH_PORT2]} events"
    )
    return EXIT_OK


def cmd_analyze(run: Run) -> int:
    cfg = run.cfg
    streams = [Path(s) for s in run.args.streams]
    currents = run.args.current or [cfg.data["source"]["current_mA"]] * len(streams)
    if len(currents) != len(streams):
        raise ConfigError(f"{len(streams)} stream files but {len(currents)} --current values")
    model = run.model()
    settings = cfg.analysis_settings()
    period = cfg.experiment(model, 0.0).cycle.period_ns
    rows, report = [], []
    for k, (path, cur) in enumerate(zip(streams, currents)):
        run.inputs.append(path)
        stream = formats.read_timetags(path, period)
        res = analyze_stream(stream, settings)
        tag = f"{k}_" if len(streams) > 1 else ""
        for ch, h in res.histograms.items():
            formats.write_histogram_csv(run.path(f"hist_{tag}ch{ch}.csv"), h.subtract(res.backgrounds[ch]))
        entry = {
            "stream": path.name,
            "current_mA": cur,
            "window": {
                "start_ns": res.window.start_ns,
                "width_ns": res.window.width_ns,
                "captured_fraction": res.window.captured_fraction,
            },
            "background_per_ns": {str(ch): list(bg) for ch, bg in res.backgrounds.items()},
            "areas": {str(ch): {"area": a.area, "sigma": a.sigma, "n_window": a.n_window} for ch, a in res.areas.items()},
            "splitting": None,
        }
        win = res.window
        print(
            f"{path.name}: window [{win.start_ns:.1f}, {win.end_ns:.1f}) ns, "
            f"width {win.width_ns:g} ns captures {win.captured_fraction:.3f} of reference counts"
        )
        if res.estimate is not None:
            est = res.estimate
            s_model = model.fractions(cur)[0]
            pull = 0.0 if est.s1 == s_model else (est.s1 - s_model) / est.sigma
            rows.append((cur, est.s1, est.s2, est.sigma, s_model, pull))
            entry["splitting"] = {"s1": est.s1, "s2": est.s2, "sigma": est.sigma, "model_s1": s_model, "pull": pull}
            print(f"  s1 = {est.s1:.4f} +- {est.sigma:.4f} (model {s_model:.4f}, pull {pull:+.2f})")
        else:
            print("  no positive signal area on ports 1/2; splitting ratio undefined")
        report.append(entry)
    formats.write_report_csv(run.path("splitting.csv"), rows)
    run.path("analysis.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _residual_exit(residual: float) -> int:
    print(f"round-trip residual {residual:.3e}")
    if not residual <= RESIDUAL_TOL:
        print(f"residual exceeds {RESIDUAL_TOL:g}", file=sys.stderr)
        return EXIT_RESIDUAL
    return EXIT_OK


def cmd_decompose(run: Run) -> int:
    path = Path(run.args.matrix)
    run.inputs.append(path)
    u = formats.read_matrix_csv(path)
    prog = clements_decompose(u)
    formats.write_program_csv(run.path("program.csv"), prog)
    print(f"{prog.n} modes, {len(prog.settings)} MZIs in {prog.depth} layers")
    return _residual_exit(float(np.linalg.norm(mesh_reconstruct(prog) - u)))


def cmd_reconstruct(run: Run) -> int:
    path = Path(run.args.program)
    run.inputs.append(path)
    prog = formats.read_program_csv(path)
    u = mesh_reconstruct(prog)
    formats.write_matrix_csv(run.path("matrix.csv"), u)
    # the written file must describe the same matrix
    back = formats.read_matrix_csv(run.outputs[-1])
    return _residual_exit(float(np.linalg.norm(back - u)))


def cmd_route(run: Run) -> int:
    src = run.args.permutation
    if Path(src).is_file():
        run.inputs.append(Path(src))
        perm = formats.parse_permutation(Path(src).read_text(), src)
    else:
        perm = formats.parse_permutation(src)
    prog = synthesize_switch(perm)
    formats.write_program_csv(run.path("program.csv"), prog)
    u = mesh_reconstruct(prog)
    n = len(perm)
    target = np.zeros((n, n))
    target[perm, range(n)] = 1.0
    powers = np.abs(u) ** 2
    for j in range(n):
        row = " ".join(f"{p:.3f}" for p in port_powers(u, j))
        print(f"input {j} -> output {perm[j]}: powers [{row}]")
    print(f"routing fidelity {routing_fidelity(u, perm):.12f}")
    return _residual_exit(float(np.max(np.abs(powers - target))))


def cmd_config(run: Run) -> int:
    print(json.dumps(run.cfg.to_dict(), indent=2, sort_keys=True))
    print(f"# config_sha256={run.cfg.sha256()}", file=sys.stderr)
    return EXIT_OK


def cmd_rerun(args: argparse.Namespace) -> int:
    mpath = Path(args.manifest)
    try:
        man = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(mpath, exc.lineno, exc.msg) from None
    if man.get("manifest_version") != MANIFEST_VERSION:
        raise ParseError(mpath, 1, "not a run manifest")
    out_dir = Path(args.out_dir or mpath.parent / "rerun")
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "config.json"
        cfg_path.write_text(json.dumps(man["config"]))
        code = main([*man["argv"], "--config", str(cfg_path), "--out-dir", str(out_dir)])
    if code != EXIT_OK:
        return code
    bad = [o["file"] for o in man["outputs"] if _sha256_file(out_dir / o["file"]) != o["sha256"]]
    for f in bad:
        print(f"checksum mismatch: {f}", file=sys.stderr)
    print(f"{len(man['outputs']) - len(bad)}/{len(man['outputs'])} outputs byte-identical in {out_dir}")
    return EXIT_RESIDUAL if bad else EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "decompose": cmd_decompose,
    "reconstruct": cmd_reconstruct,
    "route": cmd_route,
    "config": cmd_config,
}


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonroute",
        description="Single-photon MZI routing: device fit, sweeps, time-tag simulation and analysis, mesh programs.",
        epilog="Exit codes: 0 ok, 1 residual/checksum failure, 2 validation, 3 fit failure, 4 I/O or parse error.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config or a run manifest (defaults when omitted)")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or the current directory)")
    common.add_argument("--seed", type=int, help="override the config's master seed (unsigned 64-bit)")
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", help="fitted model JSON from 'fit' (default: fit from the config)")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("fit", parents=[common], help="fit couplers and the heater map; writes model.json")
    p = sub.add_parser("sweep", parents=[common, model], help="model port transmissions vs current; writes sweep.csv")
    p.add_argument("--current", type=float, action="append", metavar="MA", help="sweep only these currents (repeatable)")
    p = sub.add_parser("simulate", parents=[common, model], help="simulate attempts; writes timetags.csv")
    p.add_argument("--current", type=float, action="append", metavar="MA", help="heater current in mA")
    p.add_argument("--attempts", type=int, help="number of attempts (overrides n_attempts)")
    p.add_argument("--workers", "--threads", type=int, default=1, help="worker threads (output is identical for any count)")
    p = sub.add_parser("analyze", parents=[common, model], help="histograms, window, areas and splitting report")
    p.add_argument("streams", nargs="+", help="time-tag CSV files")
    p.add_argument("--current", type=float, action="append", metavar="MA", help="heater current of each stream, in order")
    p = sub.add_parser("decompose", parents=[common], help="unitary matrix CSV -> mesh program CSV")
    p.add_argument("matrix", help="matrix CSV (re,im pairs per entry)")
    p = sub.add_parser("reconstruct", parents=[common], help="mesh program CSV -> matrix CSV")
    p.add_argument("program", help="mesh program CSV")
    p = sub.add_parser("route", parents=[common], help="permutation -> switch program CSV")
    p.add_argument("permutation", help="e.g. '2,0,1' (input j goes to output perm[j]) or a file holding it")
    sub.add_parser("config", parents=[common], help="print the effective config as JSON")
    p = sub.add_parser("rerun", help="replay a run manifest and verify byte-identical outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="where to write the replayed outputs (default: <manifest dir>/rerun)")
    return parser


def _replay_argv(args: argparse.Namespace, argv: list[str]) -> list[str]:
    """argv minus --config/--out-dir/--seed/--attempts (baked into the saved config), inputs made absolute."""
    out, skip = [], False
    strip = {"--config", "--out-dir", "--seed", "--attempts"}
    for tok in argv:
        if skip:
            skip = False
            continue
        key = tok.split("=", 1)[0]
        if key in strip:
            skip = "=" not in tok
            continue
        out.append(tok)
    for attr in ("matrix", "program", "model", "permutation"):
        val = getattr(args, attr, None)
        if val and Path(val).is_file():
            out = [str(Path(val).resolve()) if t == val else t for t in out]
    for s in getattr(args, "streams", None) or []:
        out = [str(Path(s).resolve()) if t == s else t for t in out]
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            return cmd_rerun(args)
        run = Run(args)
        code = COMMANDS[args.command](run)
        if args.command != "config":
            run.write_manifest(_replay_argv(args, argv))
        return code
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ConfigError, DomainError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
