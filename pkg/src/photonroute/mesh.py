"""Rectangular (Clements) MZI meshes: decomposition, reconstruction and switch synthesis.

Each mesh cell uses the same MZI as :mod:`photonroute.xfer`, preceded by an
external phase on its top input::

    T(theta, phi_ext) = C @ diag(e^{i theta}, 1) @ C @ diag(e^{i phi_ext}, 1)
                      = i e^{i theta/2} [[s e^{i phi_ext},  c],
                                         [c e^{i phi_ext}, -s]]

with ``s = sin(theta/2)``, ``c = cos(theta/2)``. ``theta = pi`` is the bar
state and ``theta = 0`` the cross state. A program applies its cells in
``(layer, mode)`` order and finishes with one output phase per mode.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NonUnitaryError
from .xfer import IDEAL_COUPLER, CouplerSpec, mzi_matrix, unitarity_error, wrap_phase

UNITARY_TOL = 1e-10
# entries of a unitary below this are round-off and treated as exact zeros
_TINY = 1e-14


@dataclass(frozen=True)
class MziSetting:
    layer: int
    mode_a: int
    theta: float
    phi_ext: float

    def __post_init__(self):
        if self.layer < 0 or self.mode_a < 0:
            raise DomainError(f"layer and mode must be non-negative, got {self.layer}, {self.mode_a}")
        object.__setattr__(self, "layer", int(self.layer))
        object.__setattr__(self, "mode_a", int(self.mode_a))
        object.__setattr__(self, "theta", wrap_phase(self.theta))
        object.__setattr__(self, "phi_ext", wrap_phase(self.phi_ext))

    @property
    def mode_b(self) -> int:
        return self.mode_a + 1

    @property
    def mode_pair(self) -> tuple[int, int]:
        return self.mode_a, self.mode_a + 1


@dataclass(frozen=True)
class MeshProgram:
    n: int
    settings: tuple[MziSetting, ...]
    output_phases: tuple[float, ...]

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"mode count must be >= 1, got {self.n}")
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(self, "output_phases", tuple(wrap_phase(p) for p in self.output_phases))
        if len(self.output_phases) != self.n:
            raise DomainError(f"need {self.n} output phases, got {len(self.output_phases)}")
        for s in self.settings:
            if s.mode_b >= self.n:
                raise DomainError(f"MZI on modes {s.mode_pair} outside a {self.n}-mode mesh")

    @property
    def depth(self) -> int:
        return 1 + max((s.layer for s in self.settings), default=-1)


def mzi_cell(theta: float, phi_ext: float, c1: CouplerSpec = IDEAL_COUPLER, c2: CouplerSpec = IDEAL_COUPLER) -> np.ndarray:
    """2x2 matrix of one mesh cell: external phase, then the MZI."""
    m = mzi_matrix(c1, c2, theta)
    m[:, 0] *= cmath.exp(1j * phi_ext)
    return m


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def _null_right(x: complex, y: complex) -> tuple[float, float]:
    """Cell angles whose inverse, applied to columns, zeroes ``x`` in the row ``[x, y]``."""
    if abs(x) <= _TINY:
        return math.pi, 0.0
    if abs(y) <= _TINY:
        return 0.0, 0.0
    theta = 2.0 * math.atan2(abs(y), abs(x))
    phi = cmath.phase(-x / y)
    return theta, phi


def _null_left(x: complex, y: complex) -> tuple[float, float]:
    """Cell angles that, applied to rows, zero ``y`` in the column ``[x, y]``."""
    if abs(y) <= _TINY:
        return math.pi, 0.0
    if abs(x) <= _TINY:
        return 0.0, 0.0
    theta = 2.0 * math.atan2(abs(x), abs(y))
    phi = cmath.phase(y / x)
    return theta, phi


def _factor_cell(v: np.ndarray) -> tuple[complex, complex, float, float]:
    """Write a 2x2 unitary as ``diag(a, b) @ T(theta, phi)``."""
    if abs(v[0, 1]) <= _TINY:
        theta = math.pi
    elif abs(v[0, 0]) <= _TINY:
        theta = 0.0
    else:
        theta = 2.0 * math.atan2(abs(v[0, 0]), abs(v[0, 1]))
    s = math.sin(theta / 2)
    c = 0.0 if theta == math.pi else math.cos(theta / 2)
    g = 1j * cmath.exp(0.5j * theta)
    if c >= s:
        a = v[0, 1] / (g * c)
        if s > 0:
            b = -v[1, 1] / (g * s)
            phi = cmath.phase(v[0, 0] / (a * g * s))
        else:
            b, phi = v[1, 0] / (g * c), 0.0
    else:
        b = -v[1, 1] / (g * s)
        if c > 0:
            a = v[0, 1] / (g * c)
            phi = cmath.phase(v[0, 0] / (a * g * s))
        else:
            a, phi = v[0, 0] / (g * s), 0.0
    return a / abs(a), b / abs(b), theta, phi


def _schedule(cells: Sequence[tuple[int, float, float]], n: int) -> list[MziSetting]:
    """Assign each cell (in optical order) the earliest layer free on both its modes."""
    free = [0] * n
    out = []
    for m, theta, phi in cells:
        layer = max(free[m], free[m + 1])
        # keep the rectangular parity: pair (m, m+1) only in layers of parity m
        if (layer - m) % 2:
            layer += 1
        free[m] = free[m + 1] = layer + 1
        out.append(MziSetting(layer, m, theta, phi))
    out.sort(key=lambda s: (s.layer, s.mode_a))
    return out


def clements_decompose(u: np.ndarray, n: int | None = None) -> MeshProgram:
    """Rectangular-mesh program realising the unitary ``u``.

    Alternates column eliminations (from the right) and row eliminations (from
    the left) along anti-diagonals, then moves the left-hand cells through the
    residual diagonal. Always emits exactly ``n(n-1)/2`` cells; null rotations
    are kept.
    """
    u = np.asarray(u, dtype=complex)
    if n is None:
        n = u.shape[0]
    if n < 1:
        raise DomainError(f"mode count must be >= 1, got {n}")
    if u.shape != (n, n):
        raise DomainError(f"expected a {n}x{n} matrix, got shape {u.shape}")
    dev = unitarity_error(u)
    if dev > UNITARY_TOL:
        raise NonUnitaryError(dev, UNITARY_TOL)

    w = u.copy()
    right: list[tuple[int, float, float]] = []
    left: list[tuple[int, float, float]] = []
    for i in range(1, n):
        if i % 2:
            for j in range(i):
                row, col = n - 1 - j, i - 1 - j
                theta, phi = _null_right(w[row, col], w[row, col + 1])
                t_inv = mzi_cell(theta, phi).conj().T
                w[:, col : col + 2] = w[:, col : col + 2] @ t_inv
                right.append((col, theta, phi))
        else:
            for j in range(1, i + 1):
                row, col = n + j - i - 1, j - 1
                theta, phi = _null_left(w[row - 1, col], w[row, col])
                w[row - 1 : row + 1, :] = mzi_cell(theta, phi) @ w[row - 1 : row + 1, :]
                left.append((row - 1, theta, phi))

    d = np.diag(w).copy()
    moved = []
    for m, theta, phi in reversed(left):
        v = mzi_cell(theta, phi).conj().T @ np.diag(d[m : m + 2])
        a, b, theta2, phi2 = _factor_cell(v)
        d[m], d[m + 1] = a, b
        moved.append((m, theta2, phi2))
    # optical order: right cells as eliminated, then the moved left cells (last eliminated first)
    cells = right + moved
    settings = _schedule(cells, n)
    return MeshProgram(n, tuple(settings), tuple(cmath.phase(x) for x in d))


def _check_layers(p: MeshProgram) -> None:
    seen: dict[int, set[int]] = {}
    for s in p.settings:
        used = seen.setdefault(s.layer, set())
        if s.mode_a in used or s.mode_b in used:
            raise DomainError(f"overlapping MZIs on modes {s.mode_pair} in layer {s.layer}")
        used.update(s.mode_pair)


def _ordered(p: MeshProgram) -> list[int]:
    return sorted(range(len(p.settings)), key=lambda k: (p.settings[k].layer, p.settings[k].mode_a))


def _forward(p: MeshProgram, couplers=None) -> np.ndarray:
    _check_layers(p)
    out = np.eye(p.n, dtype=complex)
    for k in _ordered(p):
        s = p.settings[k]
        c1, c2 = couplers[k] if couplers is not None else (IDEAL_COUPLER, IDEAL_COUPLER)
        cell = mzi_cell(s.theta, s.phi_ext, c1, c2)
        m = s.mode_a
        out[m : m + 2, :] = cell @ out[m : m + 2, :]
    return np.exp(1j * np.asarray(p.output_phases))[:, None] * out


def mesh_reconstruct(p: MeshProgram) -> np.ndarray:
    """Forward product of the program's cells and output phases."""
    return _forward(p)


def synthesize_switch(perm: Sequence[int]) -> MeshProgram:
    """Program routing input ``j`` to output ``perm[j]`` for every mode."""
    perm = [int(x) for x in perm]
    n = len(perm)
    if n < 1 or sorted(perm) != list(range(n)):
        raise DomainError(f"not a permutation of 0..{n - 1}: {perm}")
    p = np.zeros((n, n), dtype=complex)
    p[perm, range(n)] = 1.0
    return clements_decompose(p, n)


def routing_fidelity(u: np.ndarray, perm: Sequence[int]) -> float:
    """Worst-case power reaching the intended output, ``min_j |U[perm[j], j]|^2``."""
    u = np.asarray(u)
    return float(min(abs(u[int(t), j]) ** 2 for j, t in enumerate(perm)))


def degrade_mesh(p: MeshProgram, coupler_error) -> np.ndarray:
    """Reconstruct with imperfect couplers ``r = 0.5 + delta``.

    ``coupler_error`` is a scalar applied to every coupler or an array of shape
    ``(len(p.settings), 2)`` giving (first, second) coupler offsets per cell in
    ``p.settings`` order.
    """
    delta = np.asarray(coupler_error, dtype=float)
    if delta.ndim == 0:
        delta = np.full((len(p.settings), 2), float(delta))
    if delta.shape != (len(p.settings), 2):
        raise DomainError(f"coupler offsets must have shape ({len(p.settings)}, 2), got {delta.shape}")
    couplers = [(CouplerSpec(0.5 + d1), CouplerSpec(0.5 + d2)) for d1, d2 in delta]
    return _forward(p, couplers)
