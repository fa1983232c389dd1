"""Text file formats: sweep, time-tag, histogram, splitting-report, mesh-program and matrix CSVs, model JSON.

Floats are written with ``repr`` (shortest string that parses back to the same
double) except where a format fixes the precision:

* sweep CSV: 9 significant digits;
* time-tag CSV: ``t_ns`` with 3 decimals (tags are already whole picoseconds);
* matrix CSV: ``%.17g``.

Readers raise :class:`ParseError` carrying the file name and line number.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import Histogram
from .calibration import SweepCurve
from .errors import ParseError
from .mesh import MeshProgram, MziSetting
from .source import CHANNELS, TimeTagStream
from .xfer import CircuitModel

SWEEP_HEADER = "current_mA,p1,p2"
TIMETAG_HEADER = "channel,attempt,t_ns"
HISTOGRAM_HEADER = "bin_start_ns,counts,sigma"
REPORT_HEADER = "current_mA,s1,s2,sigma,model_s1,pull"
PROGRAM_HEADER = "layer,mode_a,mode_b,theta_rad,phi_ext_rad"


def _write(path, lines: list[str]) -> None:
    Path(path).write_text("\n".join(lines) + "\n")


def _lines(path) -> list[str]:
    try:
        return Path(path).read_text().splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(path, 1, f"not a text file: {exc}") from None


def _fields(path, lineno: int, line: str, n: int) -> list[str]:
    parts = line.split(",")
    if len(parts) != n:
        raise ParseError(path, lineno, f"expected {n} fields, got {len(parts)}")
    return parts


def _float(path, lineno: int, s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {s!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, lineno, f"non-finite value: {s!r}")
    return v


def _int(path, lineno: int, s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ParseError(path, lineno, f"not an integer: {s!r}") from None


def _expect_header(path, lines: list[str], header: str) -> None:
    if not lines or lines[0].strip() != header:
        raise ParseError(path, 1, f"expected header {header!r}")


def _g9(x: float) -> str:
    return f"{x:.9g}"


# -- sweep ---------------------------------------------------------------------


def write_sweep_csv(path, curve: SweepCurve) -> None:
    rows = [SWEEP_HEADER]
    rows += [f"{_g9(i)},{_g9(a)},{_g9(b)}" for i, a, b in zip(curve.current_mA, curve.p1, curve.p2)]
    _write(path, rows)


def read_sweep_csv(path) -> SweepCurve:
    lines = _lines(path)
    _expect_header(path, lines, SWEEP_HEADER)
    cols = [[], [], []]
    for k, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        for col, s in zip(cols, _fields(path, k, line, 3)):
            col.append(_float(path, k, s))
    return SweepCurve(*(np.array(c) for c in cols))


# -- time tags -----------------------------------------------------------------


def write_timetags(path, stream: TimeTagStream) -> None:
    head = f"# seed={stream.seed} attempts={stream.n_attempts} config_sha256={stream.config_sha256}"
    rows = [head, TIMETAG_HEADER]
    rows += [f"{c},{a},{t:.3f}" for c, a, t in zip(stream.channel.tolist(), stream.attempt.tolist(), stream.t_ns.tolist())]
    _write(path, rows)


def _parse_preamble(path, line: str) -> dict[str, str]:
    if not line.startswith("# "):
        raise ParseError(path, 1, "missing '# seed=... attempts=... config_sha256=...' line")
    out = {}
    for tok in line[2:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(path, 1, f"malformed token {tok!r}")
        out[key] = val
    missing = {"seed", "attempts", "config_sha256"} - out.keys()
    if missing:
        raise ParseError(path, 1, f"missing keys {sorted(missing)}")
    return out


def read_timetags(path, period_ns: float | None = None) -> TimeTagStream:
    """Parse a time-tag file; ``period_ns`` (if given) bounds the tag times."""
    lines = _lines(path)
    if not lines:
        raise ParseError(path, 1, "empty file")
    meta = _parse_preamble(path, lines[0])
    seed, n_att = _int(path, 1, meta["seed"]), _int(path, 1, meta["attempts"])
    if not 0 <= seed < 2**64 or n_att < 1:
        raise ParseError(path, 1, "seed must be u64 and attempts >= 1")
    if len(lines) < 2 or lines[1].strip() != TIMETAG_HEADER:
        raise ParseError(path, 2, f"expected header {TIMETAG_HEADER!r}")

    n = len(lines) - 2
    ch = np.empty(n, dtype=np.int8)
    att = np.empty(n, dtype=np.int64)
    t = np.empty(n, dtype=float)
    k = 0
    prev = None
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        c, a, s = _fields(path, lineno, line, 3)
        c, a, tv = _int(path, lineno, c), _int(path, lineno, a), _float(path, lineno, s)
        if c not in CHANNELS:
            raise ParseError(path, lineno, f"unknown channel {c}")
        if not 0 <= a < n_att:
            raise ParseError(path, lineno, f"attempt {a} outside [0, {n_att})")
        if tv < 0 or (period_ns is not None and tv >= period_ns):
            raise ParseError(path, lineno, f"time {tv} ns outside the attempt period")
        key = (a, tv, c)
        if prev is not None and key < prev:
            raise ParseError(path, lineno, "rows not sorted by (attempt, t_ns, channel)")
        prev = key
        ch[k], att[k], t[k] = c, a, tv
        k += 1
    kw = {} if period_ns is None else {"period_ns": float(period_ns)}
    return TimeTagStream(ch[:k], att[:k], t[:k], seed, n_att, meta["config_sha256"], **kw)


# -- histograms and reports ----------------------------------------------------


def write_histogram_csv(path, h: Histogram) -> None:
    sig = np.sqrt(h.variance)
    rows = [HISTOGRAM_HEADER]
    rows += [f"{b!r},{c!r},{s!r}" for b, c, s in zip(h.bin_starts.tolist(), h.counts.tolist(), sig.tolist())]
    _write(path, rows)


def read_histogram_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(bin_start_ns, counts, sigma)`` arrays."""
    lines = _lines(path)
    _expect_header(path, lines, HISTOGRAM_HEADER)
    cols = [[], [], []]
    for k, line in enumerate(lines[1:], start=2):
        if line.strip():
            for col, s in zip(cols, _fields(path, k, line, 3)):
                col.append(_float(path, k, s))
    return tuple(np.array(c) for c in cols)


def write_report_csv(path, rows: Sequence[tuple[float, float, float, float, float, float]]) -> None:
    out = [REPORT_HEADER]
    out += [",".join(repr(float(x)) for x in r) for r in rows]
    _write(path, out)


def read_report_csv(path) -> list[tuple[float, ...]]:
    lines = _lines(path)
    _expect_header(path, lines, REPORT_HEADER)
    out = []
    for k, line in enumerate(lines[1:], start=2):
        if line.strip():
            out.append(tuple(float(s) for s in _fields(path, k, line, 6)))
    return out


# -- mesh programs and matrices -------------------------------------------------


def write_program_csv(path, p: MeshProgram) -> None:
    rows = [PROGRAM_HEADER]
    rows += [f"{s.layer},{s.mode_a},{s.mode_b},{s.theta!r},{s.phi_ext!r}" for s in p.settings]
    rows += [f"output_phase,{m},{ph!r}" for m, ph in enumerate(p.output_phases)]
    _write(path, rows)


def read_program_csv(path) -> MeshProgram:
    lines = _lines(path)
    _expect_header(path, lines, PROGRAM_HEADER)
    settings, phases = [], {}
    for k, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("output_phase,"):
            _, m, ph = _fields(path, k, line, 3)
            phases[_int(path, k, m)] = _float(path, k, ph)
            continue
        layer, a, b, th, phi = _fields(path, k, line, 5)
        layer, a, b = _int(path, k, layer), _int(path, k, a), _int(path, k, b)
        if b != a + 1 or layer < 0 or a < 0:
            raise ParseError(path, k, f"bad cell position layer={layer} modes=({a},{b})")
        settings.append(MziSetting(layer, a, _float(path, k, th), _float(path, k, phi)))
    n = len(phases)
    if sorted(phases) != list(range(n)):
        raise ParseError(path, len(lines), f"output_phase rows must cover modes 0..{n - 1} once each")
    if any(s.mode_b >= n for s in settings):
        raise ParseError(path, len(lines), f"cell outside a {n}-mode mesh")
    return MeshProgram(n, tuple(settings), tuple(phases[m] for m in range(n)))


def write_matrix_csv(path, u: np.ndarray) -> None:
    """One line per row: ``re,im`` for each entry, 17 significant digits."""
    u = np.asarray(u, dtype=complex)
    rows = [",".join(f"{z.real:.17g},{z.imag:.17g}" for z in row) for row in u]
    _write(path, rows)


def read_matrix_csv(path) -> np.ndarray:
    lines = [(k, ln) for k, ln in enumerate(_lines(path), start=1) if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError(path, 1, "empty matrix file")
    n = len(lines)
    out = np.empty((n, n), dtype=complex)
    for i, (k, line) in enumerate(lines):
        vals = [_float(path, k, s) for s in _fields(path, k, line, 2 * n)]
        out[i] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return out


def parse_permutation(text: str, source: str = "<permutation>") -> list[int]:
    """Parse ``"2,0,1"`` (commas and/or whitespace) into a list of ints."""
    toks = text.replace(",", " ").split()
    if not toks:
        raise ParseError(source, 1, "empty permutation")
    return [_int(source, 1, t) for t in toks]


# -- model JSON ----------------------------------------------------------------


def write_model_json(path, model: CircuitModel, extra: dict | None = None) -> None:
    d = {"model": model.to_dict(), **(extra or {})}
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def read_model_json(path) -> CircuitModel:
    try:
        d = json.loads(Path(path).read_text())
        return CircuitModel.from_dict(d["model"])
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    except (KeyError, TypeError) as exc:
        raise ParseError(path, 1, f"missing or bad model field: {exc}") from None
