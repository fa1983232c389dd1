"""Complex transfer matrices for couplers, phase shifters and Mach-Zehnder interferometers.

Convention (used everywhere in the package):

* A directional coupler with power cross-coupling ratio ``r`` is
  ``[[t, i k], [i k, t]]`` with ``t = sqrt(1 - r)`` (bar amplitude, real) and
  ``k = sqrt(r)`` (cross amplitude, carries the factor ``i``).
* The internal phase shifter sits on the top arm (mode 0): ``diag(e^{i phi}, 1)``.
* An MZI is ``C2 @ diag(e^{i phi}, 1) @ C1``. With input on port 1 (mode 0) the
  port-1 power is ``t1^2 t2^2 + k1^2 k2^2 - 2 t1 t2 k1 k2 cos(phi)``, so port 1
  is maximal at ``phi = pi`` (bar state) and minimal at ``phi = 0`` (cross state).
* Insertion loss is a single flat power transmission ``L`` applied as ``sqrt(L) * U``.

Matrices are plain ``numpy`` complex arrays; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import DomainError

if TYPE_CHECKING:
    from .calibration import PhaseCalibration

TWO_PI = 2.0 * math.pi


def wrap_phase(phi: float) -> float:
    """Reduce a phase to ``[0, 2*pi)``."""
    out = math.fmod(float(phi), TWO_PI) + 0.0  # + 0.0 turns -0.0 into 0.0
    if out < 0.0:
        out += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if out >= TWO_PI:
        out = 0.0
    return out


@dataclass(frozen=True)
class CouplerSpec:
    """Directional coupler described by its power cross-coupling ratio ``r``."""

    r: float

    def __post_init__(self):
        r = float(self.r)
        if not (0.0 < r < 1.0) or not math.isfinite(r):
            raise DomainError(f"coupler ratio r must lie in (0, 1), got {self.r!r}")
        object.__setattr__(self, "r", r)

    @property
    def t(self) -> float:
        return math.sqrt(1.0 - self.r)

    @property
    def k(self) -> float:
        return math.sqrt(self.r)


IDEAL_COUPLER = CouplerSpec(0.5)


@dataclass(frozen=True)
class PhaseSetting:
    """Internal MZI phase in radians, stored reduced to ``[0, 2*pi)``."""

    phi: float

    def __post_init__(self):
        if not math.isfinite(float(self.phi)):
            raise DomainError(f"phase must be finite, got {self.phi!r}")
        object.__setattr__(self, "phi", wrap_phase(self.phi))

    def __float__(self) -> float:
        return self.phi


def _as_coupler(c) -> CouplerSpec:
    return c if isinstance(c, CouplerSpec) else CouplerSpec(c)


def coupler_matrix(c: CouplerSpec | float) -> np.ndarray:
    """2x2 coupler matrix ``[[t, i k], [i k, t]]``."""
    c = _as_coupler(c)
    t, k = c.t, c.k
    return np.array([[t, 1j * k], [1j * k, t]], dtype=complex)


def phase_matrix(phi: PhaseSetting | float) -> np.ndarray:
    """Phase shifter on the top arm, ``diag(e^{i phi}, 1)``."""
    return np.diag([np.exp(1j * float(phi)), 1.0 + 0j])


def mzi_matrix(c1: CouplerSpec | float, c2: CouplerSpec | float, phi: PhaseSetting | float) -> np.ndarray:
    """Lossless MZI ``C2 @ diag(e^{i phi}, 1) @ C1``.

    Computed entrywise from the closed form so the result is bit-for-bit the
    same whichever way the product is grouped.
    """
    c1, c2 = _as_coupler(c1), _as_coupler(c2)
    t1, k1, t2, k2 = c1.t, c1.k, c2.t, c2.k
    e = np.exp(1j * float(phi))
    return np.array(
        [
            [t2 * e * t1 - k2 * k1, 1j * (t2 * e * k1 + k2 * t1)],
            [1j * (k2 * e * t1 + t2 * k1), t2 * t1 - k2 * e * k1],
        ],
        dtype=complex,
    )


def mzi_port1_power(c1: CouplerSpec, c2: CouplerSpec, phi: float) -> float:
    """Closed-form port-1 power for light entering port 1 of a lossless MZI."""
    a = c1.t * c2.t
    b = c1.k * c2.k
    return a * a + b * b - 2.0 * a * b * math.cos(phi)


def apply_loss(u: np.ndarray, loss_L: float) -> np.ndarray:
    """Scale a network by a flat power transmission ``loss_L`` in (0, 1]."""
    loss_L = float(loss_L)
    if not (0.0 < loss_L <= 1.0):
        raise DomainError(f"transmission L must lie in (0, 1], got {loss_L!r}")
    return math.sqrt(loss_L) * np.asarray(u, dtype=complex)


def port_powers(u: np.ndarray, input_port: int) -> np.ndarray:
    """Output powers ``|U[j, input_port]|^2`` for unit power in one input."""
    u = np.asarray(u)
    n = u.shape[1]
    if not (0 <= int(input_port) < n):
        raise IndexError(f"input port {input_port} out of range for a {n}-mode network")
    return np.abs(u[:, int(input_port)]) ** 2


def unitarity_error(u: np.ndarray) -> float:
    """``max |U^H U - I|`` (infinity norm over entries)."""
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def embed(block: np.ndarray, n: int, m: int) -> np.ndarray:
    """Embed a 2x2 block acting on modes ``(m, m+1)`` into an ``n``-mode identity."""
    out = np.eye(n, dtype=complex)
    out[m : m + 2, m : m + 2] = block
    return out


def compose(*elements: np.ndarray) -> np.ndarray:
    """Network product in propagation order: the first element acts first."""
    out = np.eye(np.asarray(elements[0]).shape[0], dtype=complex)
    for el in elements:
        out = np.asarray(el) @ out
    return out


@dataclass(frozen=True)
class CircuitModel:
    """The two-coupler MZI device with its heater calibration and flat loss."""

    c1: CouplerSpec
    c2: CouplerSpec
    calib: "PhaseCalibration"
    loss_L: float = 1.0

    def __post_init__(self):
        if not (0.0 < float(self.loss_L) <= 1.0):
            raise DomainError(f"loss_L must lie in (0, 1], got {self.loss_L!r}")

    def matrix(self, current_mA: float) -> np.ndarray:
        """Lossy 2x2 transfer matrix at a heater current."""
        phi = self.calib.phase(current_mA)
        return apply_loss(mzi_matrix(self.c1, self.c2, phi), self.loss_L)

    def fractions(self, current_mA: float) -> tuple[float, float]:
        """Port fractions ``P_i / (P1 + P2)`` at a heater current (input on port 1)."""
        p = port_powers(mzi_matrix(self.c1, self.c2, self.calib.phase(current_mA)), 0)
        s = p[0] + p[1]
        return float(p[0] / s), float(p[1] / s)

    def powers(self, current_mA: float) -> tuple[float, float]:
        """Absolute port transmissions ``L * (P1, P2)`` at a heater current."""
        p = port_powers(self.matrix(current_mA), 0)
        return float(p[0]), float(p[1])

    def to_dict(self) -> dict:
        return {
            "r1": self.c1.r,
            "r2": self.c2.r,
            "phi0_rad": self.calib.phi0,
            "c_rad_per_mA2": self.calib.c,
            "i_max_mA": self.calib.i_max,
            "loss_L": float(self.loss_L),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitModel":
        from .calibration import PhaseCalibration

        return cls(
            CouplerSpec(d["r1"]),
            CouplerSpec(d["r2"]),
            PhaseCalibration(d["phi0_rad"], d["c_rad_per_mA2"], d["i_max_mA"]),
            d.get("loss_L", 1.0),
        )


def extinction_powers(c1: CouplerSpec, c2: CouplerSpec) -> dict[str, tuple[float, float]]:
    """Closed-form (max, min) port powers over a full fringe of a lossless MZI."""
    a, b = c1.t * c2.t, c1.k * c2.k
    c, d = c1.k * c2.t, c1.t * c2.k
    return {"port1": ((a + b) ** 2, (a - b) ** 2), "port2": ((c + d) ** 2, (c - d) ** 2)}


def split_point_phases(c1: CouplerSpec, c2: CouplerSpec) -> Sequence[float]:
    """Phases in ``[0, 2*pi)`` where a lossless MZI splits port-1 input 50/50.

    Empty when the couplers are too unbalanced for an equal split.
    """
    a, b = c1.t * c2.t, c1.k * c2.k
    c, d = c1.k * c2.t, c1.t * c2.k
    cos_phi = (a * a + b * b - c * c - d * d) / (4.0 * a * b)
    if abs(cos_phi) > 1.0:
        return ()
    phi = math.acos(cos_phi)
    return tuple(sorted({wrap_phase(phi), wrap_phase(-phi)}))
